use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use pbit_nqs::estimator::Tfim;
use pbit_nqs::model::{init_params, param_count as count_params, Architecture, ModelParameters, Network};
use pbit_nqs::oracle::{ed_ground_energy, log_brute_marginal, oracle_tfim, spins_of, MAX_ED_SITES};
use pbit_nqs::partition::{partition_graph, staleness_bias_scan, write_scan_csv, ScanSettings};
use pbit_nqs::sampler::{sample_visible, Machine};
use pbit_nqs::trainer::{evaluate as run_evaluation, write_metrics_csv, EvalSettings, Trainer};

use crate::config::{OracleCase, RunConfig};
use crate::CliError;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    config_sha256: String,
    config_file: &'a str,
    outputs: &'a [&'a str],
}

/// Output directory plus the verbatim config it was produced from.
struct RunDir {
    path: PathBuf,
    config_text: String,
}

impl RunDir {
    fn create(cfg: &RunConfig, config_text: String, out: Option<PathBuf>) -> Result<Self, CliError> {
        let path = out
            .or_else(|| cfg.run.output.clone())
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&path)?;
        Ok(Self { path, config_text })
    }

    fn file(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        Ok(BufWriter::new(File::create(self.path.join(name))?))
    }

    /// Copies the config next to the outputs and records its hash, so the
    /// directory alone is enough to rerun.
    fn finish(&self, command: &str, seed: u64, outputs: &[&str]) -> Result<(), CliError> {
        fs::write(self.path.join("config.toml"), &self.config_text)?;
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config_sha256: hex::encode(Sha256::digest(self.config_text.as_bytes())),
            config_file: "config.toml",
            outputs,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(self.path.join("manifest.json"), json + "\n")?;
        Ok(())
    }
}

fn load_checkpoint(path: &Path, expect: Option<(&Network, &str)>) -> Result<(Network, ModelParameters), CliError> {
    let params = ModelParameters::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let net = Network::for_params(&params)?;
    if let Some((want, what)) = expect {
        if want.arch() != net.arch() || want.lattice_len() != net.lattice_len() || want.num_params() != net.num_params() {
            return Err(CliError::Config(format!(
                "checkpoint {} does not match the {what} network ({} L={} with {} parameters)",
                path.display(),
                want.arch().name(),
                want.lattice_len(),
                want.num_params()
            )));
        }
    }
    Ok((net, params))
}

pub fn train(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let (cfg, text) = RunConfig::load(config)?;
    let tc = cfg.training()?;
    let dir = RunDir::create(&cfg, text, out)?;
    let seed = tc.seed;
    let mut trainer = Trainer::new(tc)?;
    let result = trainer.run();
    // Metrics up to the failure are still useful for diagnosis.
    let (params, metrics) = trainer.into_parts();
    write_metrics_csv(&metrics, dir.file("metrics.csv")?)?;
    result?;
    params.save(dir.path.join("checkpoint.json"))?;
    dir.finish("train", seed, &["metrics.csv", "checkpoint.json"])?;
    if let Some(last) = metrics.last() {
        println!(
            "trained {} iterations, final E/N = {:.6} +- {:.1e}",
            metrics.len(),
            last.energy_per_spin,
            last.std_err
        );
    }
    Ok(())
}

pub fn evaluate(config: &Path, out: Option<PathBuf>, checkpoint: &Path) -> Result<(), CliError> {
    let (cfg, text) = RunConfig::load(config)?;
    let tc = cfg.training()?;
    let (net, params) = load_checkpoint(checkpoint, Some((&tc.network()?, "configured")))?;
    let dir = RunDir::create(&cfg, text, out)?;
    let ev = run_evaluation(&net, &params, &tc.hamiltonian()?, &EvalSettings::from_config(&tc))?;
    let mut f = dir.file("evaluation.csv")?;
    writeln!(f, "energy_per_spin,std_err,n_samples")?;
    writeln!(f, "{},{},{}", ev.energy_per_spin, ev.std_err, ev.n_samples)?;
    f.flush()?;
    dir.finish("evaluate", tc.seed, &["evaluation.csv"])?;
    println!("E/N = {:.6} +- {:.1e} ({} samples)", ev.energy_per_spin, ev.std_err, ev.n_samples);
    Ok(())
}

pub fn sample(
    config: &Path,
    out: Option<PathBuf>,
    checkpoint: Option<&Path>,
    count: Option<usize>,
) -> Result<(), CliError> {
    let (cfg, text) = RunConfig::load(config)?;
    let tc = cfg.training()?;
    let configured = tc.network()?;
    let (net, params) = match checkpoint {
        Some(p) => load_checkpoint(p, Some((&configured, "configured")))?,
        None => {
            let params = init_params(&configured, tc.seed);
            (configured, params)
        }
    };
    let dir = RunDir::create(&cfg, text, out)?;
    let machine = Machine::new(&net, &params)?;
    let batch = sample_visible(
        &machine,
        count.unwrap_or(tc.n_samples),
        tc.burn_in,
        tc.sweeps_per_sample,
        tc.seed,
    );
    let mut f = dir.file("samples.txt")?;
    batch.write_visible(&mut f)?;
    f.flush()?;
    dir.finish("sample", tc.seed, &["samples.txt"])?;
    println!("wrote {} samples of {} spins", batch.len(), net.num_visible());
    Ok(())
}

fn case_hamiltonian(case: &OracleCase) -> Result<Tfim, CliError> {
    let sites = match (case.len, case.chain) {
        (Some(l), None) => l * l,
        (None, Some(n)) => n,
        _ => {
            return Err(CliError::Config(format!(
                "oracle case '{}' needs exactly one of L or N",
                case.id
            )))
        }
    };
    if sites == 0 || sites > MAX_ED_SITES {
        return Err(CliError::Config(format!(
            "oracle case '{}' has {sites} sites; exact diagonalization supports 1..={MAX_ED_SITES}",
            case.id
        )));
    }
    let ham = match case.len {
        Some(l) => oracle_tfim(l, case.j, case.gamma)?,
        None => Tfim::from_bonds(sites, (1..sites).map(|i| (i - 1, i)).collect(), case.j, case.gamma)?,
    };
    Ok(ham)
}

pub fn oracle(config: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let (cfg, text) = RunConfig::load(config)?;
    if cfg.oracle.cases.is_empty() {
        return Err(CliError::Config("missing required key oracle.cases".into()));
    }
    // Everything is validated before the first eigensolve.
    let hams = cfg
        .oracle
        .cases
        .iter()
        .map(case_hamiltonian)
        .collect::<Result<Vec<_>, _>>()?;
    let fixture = match &cfg.oracle.marginals {
        Some(m) => {
            let arch: Architecture = m.arch.parse()?;
            let net = match arch {
                Architecture::Frbm => Network::frbm(m.len, m.k1)?,
                Architecture::Dbm => Network::dbm(m.len, m.k1, m.k2)?,
            };
            let params = pbit_nqs::model::uniform_params(&net, m.scale, m.seed);
            Some((net, params))
        }
        None => None,
    };
    let dir = RunDir::create(&cfg, text, out)?;

    let mut f = dir.file("golden.csv")?;
    writeln!(f, "case_id,N,J,gamma,E0")?;
    for (case, ham) in cfg.oracle.cases.iter().zip(&hams) {
        let e0 = ed_ground_energy(ham)?;
        writeln!(f, "{},{},{},{},{:.10}", case.id, ham.num_sites(), case.j, case.gamma, e0)?;
    }
    f.flush()?;

    let mut outputs = vec!["golden.csv"];
    if let Some((net, params)) = fixture {
        let nv = net.num_visible();
        let mut f = dir.file("marginals.csv")?;
        writeln!(f, "v_index,log_marginal")?;
        for x in 0..1usize << nv {
            let lm = log_brute_marginal(&net, &params, &spins_of(x, nv))?;
            writeln!(f, "{x},{lm:.10}")?;
        }
        f.flush()?;
        outputs.push("marginals.csv");
    }
    dir.finish("oracle", cfg.seed(), &outputs)?;
    println!("wrote {} golden energies", hams.len());
    Ok(())
}

pub fn param_count(arch: &str, len: usize, k1: f64, k2: Option<f64>) -> Result<(), CliError> {
    let arch: Architecture = arch.parse()?;
    let k2 = match (arch, k2) {
        (Architecture::Dbm, None) => {
            return Err(CliError::Config("dbm needs both radii k1 and k2".into()));
        }
        (_, k2) => k2.unwrap_or(0.0),
    };
    println!("{}", count_params(arch, len, k1, k2)?);
    Ok(())
}

pub fn partition_scan(config: &Path, out: Option<PathBuf>, checkpoint: &Path) -> Result<(), CliError> {
    let (cfg, text) = RunConfig::load(config)?;
    let tc = cfg.training()?;
    let parts = cfg.partition_count()?;
    let taus = cfg.taus()?;
    let (net, params) = load_checkpoint(checkpoint, Some((&tc.network()?, "configured")))?;
    if net.arch() != Architecture::Frbm {
        return Err(CliError::Config("partition-scan supports rbm networks only".into()));
    }
    let partition = partition_graph(net.graph(), parts, tc.seed)?;
    let dir = RunDir::create(&cfg, text, out)?;
    let mut f = dir.file("partition.txt")?;
    partition.write_dump(&mut f)?;
    f.flush()?;

    let settings = ScanSettings {
        n_samples: cfg.partition.samples.unwrap_or(tc.n_eval),
        burn_in: tc.burn_in,
        bins: tc.bins,
        seed: tc.seed,
    };
    let rows = staleness_bias_scan(&net, &params, &tc.hamiltonian()?, &partition, &taus, &settings)?;
    let mut f = dir.file("scan.csv")?;
    write_scan_csv(&rows, &mut f)?;
    f.flush()?;
    dir.finish("partition-scan", tc.seed, &["partition.txt", "scan.csv"])?;
    println!(
        "P={parts}: cut fraction {:.4}, {} boundary bits per exchange",
        partition.cut_fraction(),
        partition.exchange_bits()
    );
    Ok(())
}
