//! Uniformly sampled real-valued signals.

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unit {
    Ampere,
    Watt,
    Hertz,
    Dimensionless,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledWaveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub unit: Unit,
}

impl SampledWaveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64, unit: Unit) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(invalid("sample_rate", format!("must be positive, got {sample_rate}")));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(invalid("samples", format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            unit,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}
