use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{invalid, Error, Result};
use crate::laser::{LaserParams, RawLaserTable};
use crate::link::LinkConfig;
use crate::surrogate::SurrogateTrainConfig;

/// Everything a command needs, read from TOML. Every section and key is
/// optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Symbol rates to run, GBd.
    pub symbol_rates_gbd: Vec<f64>,
    pub laser: LaserOverrides,
    pub link: LinkSection,
    pub dataset: DatasetSection,
    pub surrogate: SurrogateSection,
    pub autoencoder: AutoencoderSection,
    pub vnle: VnleSection,
    pub eval: EvalSection,
    pub eye: EyeSection,
    pub li_curve: LiCurveSection,
    pub s21: S21Section,
    /// Directory holding trained checkpoints; `out_dir` when unset.
    pub artifacts_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("out"),
            symbol_rates_gbd: vec![15.0, 20.0, 25.0],
            laser: LaserOverrides::default(),
            link: LinkSection::default(),
            dataset: DatasetSection::default(),
            surrogate: SurrogateSection::default(),
            autoencoder: AutoencoderSection::default(),
            vnle: VnleSection::default(),
            eval: EvalSection::default(),
            eye: EyeSection::default(),
            li_curve: LiCurveSection::default(),
            s21: S21Section::default(),
            artifacts_dir: None,
        }
    }
}

/// Replacements for entries of the laser parameter table.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaserOverrides {
    pub confinement: Option<f64>,
    pub photon_lifetime: Option<f64>,
    pub carrier_lifetime: Option<f64>,
    pub transparency_density: Option<f64>,
    pub gain_cross_section: Option<f64>,
    pub group_index: Option<f64>,
    pub active_volume: Option<f64>,
    pub gain_compression: Option<f64>,
    pub spont_fraction: Option<f64>,
    pub diff_quantum_eff: Option<f64>,
    pub injection_eff: Option<f64>,
    pub linewidth_factor: Option<f64>,
    pub wavelength: Option<f64>,
}

impl LaserOverrides {
    pub fn table(&self) -> RawLaserTable {
        let d = RawLaserTable::default();
        RawLaserTable {
            confinement: self.confinement.unwrap_or(d.confinement),
            photon_lifetime: self.photon_lifetime.unwrap_or(d.photon_lifetime),
            carrier_lifetime: self.carrier_lifetime.unwrap_or(d.carrier_lifetime),
            transparency_density: self.transparency_density.unwrap_or(d.transparency_density),
            gain_cross_section: self.gain_cross_section.unwrap_or(d.gain_cross_section),
            group_index: self.group_index.unwrap_or(d.group_index),
            active_volume: self.active_volume.unwrap_or(d.active_volume),
            gain_compression: self.gain_compression.unwrap_or(d.gain_compression),
            spont_fraction: self.spont_fraction.unwrap_or(d.spont_fraction),
            diff_quantum_eff: self.diff_quantum_eff.unwrap_or(d.diff_quantum_eff),
            injection_eff: self.injection_eff.unwrap_or(d.injection_eff),
            linewidth_factor: self.linewidth_factor.unwrap_or(d.linewidth_factor),
            wavelength: self.wavelength.unwrap_or(d.wavelength),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinkSection {
    /// Bias of the baselines and of the noise calibration point.
    pub i_bias_ma: f64,
    /// Swing of the noise calibration point.
    pub i_pp_ma: f64,
    pub lpf_fraction: f64,
    pub snr_db: f64,
    pub calibration_frames: usize,
}

impl Default for LinkSection {
    fn default() -> Self {
        Self {
            i_bias_ma: 75.0,
            i_pp_ma: 80.0,
            lpf_fraction: 0.9,
            snr_db: 22.0,
            calibration_frames: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// Surrogate training frames of 1024 samples per symbol rate.
    pub frames: usize,
    /// Frames per bias/swing cell of the stratified evaluation set.
    pub eval_per_cell: usize,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self {
            frames: 512,
            eval_per_cell: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateSection {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub lr_floor: f64,
    pub clip_norm: Option<f64>,
    pub loss_ptp_floor_mw: f64,
    pub test_fraction: f64,
}

impl Default for SurrogateSection {
    fn default() -> Self {
        let d = SurrogateTrainConfig::default();
        Self {
            epochs: d.epochs,
            batch: d.batch,
            lr: d.lr,
            lr_floor: d.lr_floor,
            clip_norm: d.clip_norm,
            loss_ptp_floor_mw: d.loss_ptp_floor * 1e3,
            test_fraction: d.test_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderSection {
    pub epochs: usize,
    /// Frames of 512 symbols, split 80/20 into training and validation.
    pub frames: usize,
    pub lr: f64,
    /// Starting bias and swing of the transmitter.
    pub init_bias_ma: f64,
    pub init_pp_ma: f64,
}

impl Default for AutoencoderSection {
    fn default() -> Self {
        Self {
            epochs: 50,
            frames: 2048,
            lr: 1e-3,
            init_bias_ma: 75.0,
            init_pp_ma: 40.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VnleSection {
    pub epochs: usize,
    pub frames: usize,
    pub lr: f64,
}

impl Default for VnleSection {
    fn default() -> Self {
        Self {
            epochs: 30,
            frames: 16,
            lr: 3e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub fit_frames: usize,
    pub test_frames: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            fit_frames: 8,
            test_frames: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EyeSection {
    pub i_bias_ma: f64,
    pub i_pp_ma: f64,
    pub frames: usize,
    pub periods: usize,
    pub amp_bins: usize,
    /// Samples per symbol of the plotted waveform (a divisor of 32).
    pub sps: usize,
}

impl Default for EyeSection {
    fn default() -> Self {
        Self {
            i_bias_ma: 75.0,
            i_pp_ma: 80.0,
            frames: 4,
            periods: 2,
            amp_bins: 64,
            sps: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiCurveSection {
    pub start_ma: f64,
    pub stop_ma: f64,
    pub step_ma: f64,
}

impl Default for LiCurveSection {
    fn default() -> Self {
        Self {
            start_ma: 0.0,
            stop_ma: 100.0,
            step_ma: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct S21Section {
    pub bias_ma: Vec<f64>,
    pub points: usize,
    pub max_ghz: f64,
    /// Modulation depth as a fraction of the bias.
    pub depth: f64,
}

impl Default for S21Section {
    fn default() -> Self {
        Self {
            bias_ma: vec![75.0],
            points: 40,
            max_ghz: 40.0,
            depth: 0.01,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(invalid(name, format!("must be positive, got {v}")));
    }
    Ok(())
}

fn at_least_one(name: &'static str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(invalid(name, "must be at least 1"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file; errors carry the path and, for
    /// syntax errors, the offending line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn laser(&self) -> Result<LaserParams> {
        self.laser.table().derive()
    }

    pub fn symbol_rates(&self) -> Vec<f64> {
        self.symbol_rates_gbd.iter().map(|r| r * 1e9).collect()
    }

    /// Link settings of the noise calibration point at `symbol_rate`.
    pub fn link_at(&self, symbol_rate: f64) -> LinkConfig {
        LinkConfig {
            symbol_rate,
            i_bias: self.link.i_bias_ma * 1e-3,
            i_pp: self.link.i_pp_ma * 1e-3,
            lpf_fraction: self.link.lpf_fraction,
            snr_target_db: self.link.snr_db,
            seed: self.seed,
            ..LinkConfig::default()
        }
    }

    pub fn surrogate_training(&self) -> SurrogateTrainConfig {
        let s = &self.surrogate;
        SurrogateTrainConfig {
            epochs: s.epochs,
            batch: s.batch,
            lr: s.lr,
            lr_floor: s.lr_floor,
            clip_norm: s.clip_norm,
            loss_ptp_floor: s.loss_ptp_floor_mw * 1e-3,
            test_fraction: s.test_fraction,
            seed: self.seed,
            ..SurrogateTrainConfig::default()
        }
    }

    pub fn artifacts(&self) -> PathBuf {
        self.artifacts_dir.clone().unwrap_or_else(|| self.out_dir.clone())
    }

    /// Checks every value before anything runs.
    pub fn validate(&self) -> Result<()> {
        self.laser()?;
        if self.symbol_rates_gbd.is_empty() {
            return Err(invalid("symbol_rates_gbd", "needs at least one rate"));
        }
        for &r in &self.symbol_rates_gbd {
            positive("symbol_rates_gbd", r)?;
            self.link_at(r * 1e9).validate()?;
        }
        let eye = LinkConfig {
            i_bias: self.eye.i_bias_ma * 1e-3,
            i_pp: self.eye.i_pp_ma * 1e-3,
            ..LinkConfig::default()
        };
        eye.validate()?;
        if self.eye.sps == 0 || 32 % self.eye.sps != 0 || self.eye.sps < 2 {
            return Err(invalid("eye.sps", "must be an even divisor of 32"));
        }
        for (name, v) in [
            ("link.calibration_frames", self.link.calibration_frames),
            ("dataset.frames", self.dataset.frames),
            ("dataset.eval_per_cell", self.dataset.eval_per_cell),
            ("surrogate.epochs", self.surrogate.epochs),
            ("surrogate.batch", self.surrogate.batch),
            ("autoencoder.epochs", self.autoencoder.epochs),
            ("autoencoder.frames", self.autoencoder.frames),
            ("vnle.epochs", self.vnle.epochs),
            ("vnle.frames", self.vnle.frames),
            ("eval.fit_frames", self.eval.fit_frames),
            ("eval.test_frames", self.eval.test_frames),
            ("eye.frames", self.eye.frames),
            ("eye.periods", self.eye.periods),
            ("eye.amp_bins", self.eye.amp_bins),
            ("s21.points", self.s21.points),
        ] {
            at_least_one(name, v)?;
        }
        for (name, v) in [
            ("surrogate.lr", self.surrogate.lr),
            ("autoencoder.lr", self.autoencoder.lr),
            ("vnle.lr", self.vnle.lr),
            ("li_curve.step_ma", self.li_curve.step_ma),
            ("s21.max_ghz", self.s21.max_ghz),
            ("s21.depth", self.s21.depth),
        ] {
            positive(name, v)?;
        }
        if !(self.surrogate.lr_floor > 0.0 && self.surrogate.lr_floor <= 1.0) {
            return Err(invalid("surrogate.lr_floor", "must lie in (0, 1]"));
        }
        if !(self.surrogate.loss_ptp_floor_mw >= 0.0) {
            return Err(invalid("surrogate.loss_ptp_floor_mw", "must be non-negative"));
        }
        if !(self.surrogate.test_fraction > 0.0 && self.surrogate.test_fraction < 1.0) {
            return Err(invalid("surrogate.test_fraction", "must lie in (0, 1)"));
        }
        if let Some(c) = self.surrogate.clip_norm {
            positive("surrogate.clip_norm", c)?;
        }
        if !(self.li_curve.start_ma >= 0.0 && self.li_curve.stop_ma > self.li_curve.start_ma) {
            return Err(invalid("li_curve", "need 0 <= start_ma < stop_ma"));
        }
        for &b in &self.s21.bias_ma {
            if !(b > 0.0 && b <= 150.0) {
                return Err(invalid("s21.bias_ma", format!("{b} mA outside (0, 150] mA")));
            }
        }
        let ae = LinkConfig {
            i_bias: self.autoencoder.init_bias_ma * 1e-3,
            i_pp: self.autoencoder.init_pp_ma * 1e-3,
            ..LinkConfig::default()
        };
        ae.validate()?;
        if ae.i_bias <= 0.050 || ae.i_bias >= 0.100 || ae.i_pp <= 0.0 || ae.i_pp >= 0.080 {
            return Err(invalid(
                "autoencoder",
                "initial currents must lie strictly inside their ranges",
            ));
        }
        Ok(())
    }
}
