use rand::Rng;

use crate::dsp::{frame_rng, stochastic_pulse, SymbolSequence, PAM_ORDER, SQUARE_PULSE};
use crate::error::{invalid, Error, Result};
use crate::laser::LaserParams;
use crate::link::{
    drive_current, stream, LinkConfig, ReferenceChannel, BIAS_RANGE, FRAME_LEN, FRAME_SYMBOLS, SWING_RANGE,
};

/// Attempts per frame before a solver failure is reported.
const MAX_ATTEMPTS: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseKind {
    Square,
    Stochastic,
}

impl PulseKind {
    pub fn code(self) -> u32 {
        match self {
            PulseKind::Square => 0,
            PulseKind::Stochastic => 1,
        }
    }

    pub fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(PulseKind::Square),
            1 => Ok(PulseKind::Stochastic),
            _ => Err(Error::Format(format!("unknown pulse code {c}"))),
        }
    }
}

/// One drive/response frame at 2 samples per symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateSample {
    /// Drive current, amperes.
    pub input: Vec<f64>,
    /// Received optical power, watts.
    pub target: Vec<f64>,
    pub i_bias: f64,
    pub i_pp: f64,
    pub pulse: PulseKind,
    pub seed: u64,
    pub index: u64,
}

/// Where a frame's drive settings come from.
#[derive(Debug, Clone, Copy)]
enum DriveDraw {
    Uniform,
    /// Uniform within cell `(bias_decile, swing_decile)` of a 10 x 10 grid.
    Cell(usize, usize),
}

fn draw(rng: &mut impl Rng, range: (f64, f64), cell: Option<usize>) -> f64 {
    let (lo, hi) = range;
    match cell {
        None => rng.gen_range(lo..=hi),
        Some(c) => {
            let w = (hi - lo) / 10.0;
            rng.gen_range(lo + w * c as f64..lo + w * (c + 1) as f64)
        }
    }
}

fn make_frame(channel: &ReferenceChannel, seed: u64, index: u64, how: DriveDraw) -> Result<SurrogateSample> {
    let pulse_kind = if index.is_multiple_of(2) {
        PulseKind::Square
    } else {
        PulseKind::Stochastic
    };
    let mut last_err = None;
    for attempt in 0..MAX_ATTEMPTS {
        let offset = 4 * attempt;
        let mut drive_rng = frame_rng(seed, index, stream::DRIVE + offset);
        let (bc, sc) = match how {
            DriveDraw::Uniform => (None, None),
            DriveDraw::Cell(b, s) => (Some(b), Some(s)),
        };
        let i_bias = draw(&mut drive_rng, BIAS_RANGE, bc);
        let i_pp = draw(&mut drive_rng, SWING_RANGE, sc);
        let pulse = match pulse_kind {
            PulseKind::Square => SQUARE_PULSE.to_vec(),
            PulseKind::Stochastic => stochastic_pulse(&mut frame_rng(seed, index, stream::PULSE + offset)),
        };
        let mut sym_rng = frame_rng(seed, index, stream::SYMBOLS + offset);
        let symbols = SymbolSequence::random(FRAME_SYMBOLS, PAM_ORDER, channel.symbol_rate, &mut sym_rng);
        let cfg = LinkConfig {
            symbol_rate: channel.symbol_rate,
            i_bias,
            i_pp,
            ..LinkConfig::default()
        };
        let input = drive_current(&symbols, &pulse, &cfg)?;
        match channel.propagate(&input, i_bias) {
            Ok(target) => {
                return Ok(SurrogateSample {
                    input,
                    target,
                    i_bias,
                    i_pp,
                    pulse: pulse_kind,
                    seed,
                    index,
                })
            }
            Err(e @ Error::SolverDiverged { .. }) => {
                log::warn!("frame {index} attempt {attempt} diverged: {e}");
                last_err = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one attempt"))
}

/// Frames `first..first + count` of the dataset for `seed`. Each frame is a
/// pure function of `(seed, index)`. Even indices use square pulses, odd
/// indices stochastic ones.
pub fn generate_dataset(
    p: &LaserParams,
    symbol_rate: f64,
    first: u64,
    count: usize,
    seed: u64,
) -> Result<Vec<SurrogateSample>> {
    if count == 0 {
        return Err(invalid("count", "must be at least 1"));
    }
    let channel = ReferenceChannel::new(*p, &LinkConfig::at_rate(symbol_rate))?;
    (first..first + count as u64)
        .map(|i| make_frame(&channel, seed, i, DriveDraw::Uniform))
        .collect()
}

/// `per_cell` frames in each cell of a 10 x 10 grid over the bias and swing
/// ranges, for stratified evaluation.
pub fn generate_stratified(
    p: &LaserParams,
    symbol_rate: f64,
    per_cell: usize,
    seed: u64,
) -> Result<Vec<SurrogateSample>> {
    let channel = ReferenceChannel::new(*p, &LinkConfig::at_rate(symbol_rate))?;
    let mut out = Vec::with_capacity(100 * per_cell);
    let mut index = 0u64;
    for b in 0..10 {
        for s in 0..10 {
            for _ in 0..per_cell {
                out.push(make_frame(&channel, seed, index, DriveDraw::Cell(b, s))?);
                index += 1;
            }
        }
    }
    Ok(out)
}

/// Decile index (0..10) of `v` within `range`.
pub fn decile(v: f64, (lo, hi): (f64, f64)) -> usize {
    (((v - lo) / (hi - lo) * 10.0).floor().max(0.0) as usize).min(9)
}

pub(crate) fn check_frame(s: &SurrogateSample) -> Result<()> {
    if s.input.len() != FRAME_LEN || s.target.len() != FRAME_LEN {
        return Err(Error::LengthMismatch {
            expected: FRAME_LEN,
            actual: s.input.len().min(s.target.len()),
        });
    }
    Ok(())
}
