use crate::diff::{Graph, ParamStore, Tensor, Var};
use crate::dsp::{design_lowpass, equispaced_levels, CLIP_RANGE, LPF_TAPS, PAM_ORDER};
use crate::error::{invalid, Result};
use crate::link::{LinkConfig, BIAS_RANGE, SWING_RANGE};
use crate::surrogate::Weights;

pub(crate) fn weight(g: &mut Graph, store: &ParamStore, name: &str, weights: Weights) -> Result<Var> {
    match weights {
        Weights::Trainable => g.param(store, name),
        Weights::Frozen => g.frozen(store, name),
    }
}

/// `lo + (hi - lo) sigmoid(raw)`: a current that can approach but never reach
/// either bound.
pub fn bounded_current(g: &mut Graph, raw: Var, lo: f64, hi: f64) -> Result<Var> {
    if !(lo < hi) {
        return Err(invalid("bounds", format!("need lo < hi, got [{lo}, {hi}]")));
    }
    let s = g.sigmoid(raw);
    Ok(g.scale_shift(s, hi - lo, lo))
}

/// Plain-number counterpart of [`bounded_current`].
pub fn bounded_value(raw: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * crate::diff::sigmoid(raw)
}

/// Inverse of [`bounded_value`] for a current strictly inside the bounds.
pub fn unbounded_value(current: f64, (lo, hi): (f64, f64)) -> Result<f64> {
    if !(current > lo && current < hi) {
        return Err(invalid("current", format!("{current} outside ({lo}, {hi})")));
    }
    let s = (current - lo) / (hi - lo);
    Ok((s / (1.0 - s)).ln())
}

/// Names of the transmitter parameters in a [`ParamStore`].
pub mod names {
    /// `M x 2` map from a one-hot symbol to its two drive samples.
    pub const MAPPING: &str = "enc.map";
    pub const RAW_BIAS: &str = "enc.raw_bias";
    pub const RAW_SWING: &str = "enc.raw_pp";
}

/// Adds a transmitter starting from square-pulse equispaced 4PAM at the given
/// bias and swing.
pub fn init_encoder(store: &mut ParamStore, i_bias: f64, i_pp: f64) -> Result<()> {
    let levels = equispaced_levels(PAM_ORDER);
    let map: Vec<f64> = levels.iter().flat_map(|&l| [l, l]).collect();
    store.insert(names::MAPPING, Tensor::new(PAM_ORDER, 2, map)?)?;
    store.insert(names::RAW_BIAS, Tensor::scalar(unbounded_value(i_bias, BIAS_RANGE)?))?;
    store.insert(names::RAW_SWING, Tensor::scalar(unbounded_value(i_pp, SWING_RANGE)?))?;
    Ok(())
}

/// Learned bias and swing currents in amperes.
pub fn learned_currents(store: &ParamStore) -> Result<(f64, f64)> {
    let get = |n: &str| {
        store
            .get(n)
            .map(|t| t.item())
            .ok_or_else(|| crate::error::Error::Config(format!("unknown parameter `{n}`")))
    };
    Ok((
        bounded_value(get(names::RAW_BIAS)?, BIAS_RANGE),
        bounded_value(get(names::RAW_SWING)?, SWING_RANGE),
    ))
}

/// `n x M` one-hot rows for `symbols`.
pub fn one_hot(symbols: &[usize], order: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(symbols.len(), order);
    for (r, &s) in symbols.iter().enumerate() {
        if s >= order {
            return Err(invalid("symbols", format!("symbol {s} out of range for order {order}")));
        }
        t.data[r * order + s] = 1.0;
    }
    Ok(t)
}

/// Transmitter low-pass taps at 2 samples per symbol.
pub fn tx_lowpass(symbol_rate: f64) -> Result<Tensor> {
    let cfg = LinkConfig::at_rate(symbol_rate);
    Ok(Tensor::column(design_lowpass(cfg.lpf_cutoff(), cfg.sample_rate())?))
}

/// Drive current (`2n x 1`, amperes) for `symbols`: mapped pulses, low-pass
/// filtered, clipped with a straight-through gradient, scaled by the swing
/// and offset by the bias.
pub fn encode_frame(
    g: &mut Graph,
    store: &ParamStore,
    symbols: &[usize],
    lowpass: &Tensor,
    weights: Weights,
) -> Result<Var> {
    let map = weight(g, store, names::MAPPING, weights)?;
    let raw_bias = weight(g, store, names::RAW_BIAS, weights)?;
    let raw_pp = weight(g, store, names::RAW_SWING, weights)?;
    let order = g.value(map).rows;
    let hot = g.constant(one_hot(symbols, order)?);
    let pulses = g.matmul(hot, map)?;
    let serial = g.reshape(pulses, 2 * symbols.len(), 1)?;
    let taps = g.constant(lowpass.clone());
    let filtered = g.fir(serial, taps, LPF_TAPS / 2)?;
    let clipped = g.clip_straight_through(filtered, CLIP_RANGE.0, CLIP_RANGE.1);
    let i_pp = bounded_current(g, raw_pp, SWING_RANGE.0, SWING_RANGE.1)?;
    let i_bias = bounded_current(g, raw_bias, BIAS_RANGE.0, BIAS_RANGE.1)?;
    let swing = g.mul_scalar(clipped, i_pp)?;
    g.add_scalar(swing, i_bias)
}
