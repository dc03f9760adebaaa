//! Signed fixed-point emulation of the sampler datapath.
//!
//! The default format is s{6}{3}: one sign bit, six integer bits and three
//! fraction bits in ten-bit two's complement. Conversion rounds to the
//! nearest step with ties away from zero and saturates at the format limits.

use crate::model::ModelParameters;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPointFormat {
    pub integer_bits: u32,
    pub fraction_bits: u32,
}

impl Default for FixedPointFormat {
    fn default() -> Self {
        Self::S6_3
    }
}

impl FixedPointFormat {
    pub const S6_3: Self = Self {
        integer_bits: 6,
        fraction_bits: 3,
    };

    /// Total width including the sign bit.
    pub fn total_bits(&self) -> u32 {
        1 + self.integer_bits + self.fraction_bits
    }

    pub fn step(&self) -> f64 {
        (-(self.fraction_bits as f64)).exp2()
    }

    fn max_code(&self) -> i64 {
        (1i64 << (self.integer_bits + self.fraction_bits)) - 1
    }

    fn min_code(&self) -> i64 {
        -(1i64 << (self.integer_bits + self.fraction_bits))
    }

    pub fn max_value(&self) -> f64 {
        self.max_code() as f64 * self.step()
    }

    pub fn min_value(&self) -> f64 {
        self.min_code() as f64 * self.step()
    }

    /// Integer code of `x`: round half away from zero, then saturate.
    pub fn encode(&self, x: f64) -> i64 {
        if x.is_nan() {
            return 0;
        }
        let scaled = (x / self.step()).round();
        if scaled >= self.max_code() as f64 {
            self.max_code()
        } else if scaled <= self.min_code() as f64 {
            self.min_code()
        } else {
            scaled as i64
        }
    }

    pub fn decode(&self, code: i64) -> f64 {
        code as f64 * self.step()
    }

    pub fn quantize_value(&self, x: f64) -> f64 {
        self.decode(self.encode(x))
    }
}

/// Copy of `params` with every bias and weight snapped to `fmt`.
pub fn quantize(params: &ModelParameters, fmt: FixedPointFormat) -> ModelParameters {
    let mut q = params.clone();
    q.values.iter_mut().for_each(|v| *v = fmt.quantize_value(*v));
    q
}
