use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::SurrogateSample;
use crate::diff::{Graph, ParamStore, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::laser::{steady_state, LaserParams};
use crate::linalg::{lstsq, Matrix};

/// Rows of the least-squares initialisation are weighted by
/// `ptp^-LS_WEIGHT_EXPONENT` of their frame's target.
const LS_WEIGHT_EXPONENT: f64 = 0.75;

/// Current used to fix the output power scale.
pub const POWER_REF_CURRENT: f64 = 0.095;

/// Shape and scaling of the convolutional-attention surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct CatConfig {
    pub embed_dim: usize,
    pub heads: usize,
    /// Length of the depthwise query/key/value convolutions.
    pub kernel: usize,
    pub blocks: usize,
    pub ff_dim: usize,
    pub seq_len: usize,
    /// Length of the input embedding convolution; 1 is a plain affine map.
    pub input_kernel: usize,
    /// Taps of a linear path from input to output added to the network
    /// output; 0 disables it. The input is extended by repeating its edge
    /// samples, matching a drive that holds its value outside the frame.
    pub skip_taps: usize,
    /// Memory of the quadratic (second-order Volterra) part of the skip
    /// path; 0 disables it.
    pub skip_quad: usize,
    pub current_center: f64,
    pub current_scale: f64,
    /// Power mapped to 1.0, in watts.
    pub power_ref: f64,
}

impl CatConfig {
    pub fn for_laser(p: &LaserParams) -> Result<Self> {
        let power_ref = steady_state(p, POWER_REF_CURRENT)?.photons * p.power_per_photon_density();
        Ok(Self {
            embed_dim: 32,
            heads: 4,
            kernel: 3,
            blocks: 2,
            ff_dim: 64,
            seq_len: crate::link::FRAME_LEN,
            input_kernel: 1,
            skip_taps: 33,
            skip_quad: 9,
            current_center: 0.075,
            current_scale: 0.040,
            power_ref,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(invalid("embed_dim", "must be a positive multiple of heads"));
        }
        if self.kernel.is_multiple_of(2) || self.input_kernel.is_multiple_of(2) {
            return Err(invalid("kernel", "convolution lengths must be odd"));
        }
        if self.skip_taps > 0 && self.skip_taps.is_multiple_of(2)
            || self.skip_quad > 0 && self.skip_quad.is_multiple_of(2)
        {
            return Err(invalid("skip_taps", "skip path lengths must be odd"));
        }
        if self.skip_quad > 0 && self.skip_taps == 0 {
            return Err(invalid("skip_quad", "quadratic skip path needs the linear one"));
        }
        if self.blocks == 0 || self.ff_dim == 0 || self.seq_len == 0 {
            return Err(invalid(
                "blocks",
                "block count, feedforward width and length must be positive",
            ));
        }
        if !(self.current_scale > 0.0 && self.power_ref > 0.0) {
            return Err(invalid("current_scale", "scaling constants must be positive"));
        }
        Ok(())
    }

    pub fn scale_current(&self, i: f64) -> f64 {
        (i - self.current_center) / self.current_scale
    }

    pub fn unscale_current(&self, x: f64) -> f64 {
        x * self.current_scale + self.current_center
    }

    pub fn scale_power(&self, p: f64) -> f64 {
        p / self.power_ref
    }

    pub fn unscale_power(&self, y: f64) -> f64 {
        y * self.power_ref
    }
}

/// Convolutional-attention surrogate: weights plus configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub config: CatConfig,
    pub params: ParamStore,
}

/// Whether the forward pass registers weights as trainable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weights {
    Trainable,
    Frozen,
}

impl Surrogate {
    pub fn init(config: CatConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, f, l) = (config.embed_dim, config.ff_dim, config.seq_len);
        let mut p = ParamStore::new();
        p.insert_normal(
            "embed.w",
            config.input_kernel,
            d,
            1.0 / (config.input_kernel as f64).sqrt(),
            &mut rng,
        )?;
        p.insert("embed.b", Tensor::zeros(1, d))?;
        p.insert_normal("pos", l, d, 0.02, &mut rng)?;
        for b in 0..config.blocks {
            for part in ["q", "k", "v"] {
                p.insert_normal(
                    &format!("block{b}.{part}.w"),
                    config.kernel,
                    d,
                    1.0 / (config.kernel as f64).sqrt(),
                    &mut rng,
                )?;
                p.insert(format!("block{b}.{part}.b"), Tensor::zeros(1, d))?;
            }
            p.insert_glorot(&format!("block{b}.o.w"), d, d, &mut rng)?;
            p.insert(format!("block{b}.o.b"), Tensor::zeros(1, d))?;
            p.insert_glorot(&format!("block{b}.ff1.w"), d, f, &mut rng)?;
            p.insert(format!("block{b}.ff1.b"), Tensor::zeros(1, f))?;
            p.insert_glorot(&format!("block{b}.ff2.w"), f, d, &mut rng)?;
            p.insert(format!("block{b}.ff2.b"), Tensor::zeros(1, d))?;
        }
        // Zero read-out: the network starts as the linear path alone.
        p.insert("out.w", Tensor::zeros(d, 1))?;
        p.insert("out.b", Tensor::zeros(1, 1))?;
        if config.skip_taps > 0 {
            p.insert("skip.taps", Tensor::zeros(config.skip_taps, 1))?;
        }
        if config.skip_quad > 0 {
            p.insert("skip.quad", Tensor::zeros(config.skip_quad, config.skip_quad))?;
        }
        Ok(Self { config, params: p })
    }

    /// Records the forward pass for `current` (an `L x 1` node in amperes)
    /// and returns the predicted optical power (`L x 1`, watts).
    pub fn forward(&self, g: &mut Graph, current: Var, weights: Weights) -> Result<Var> {
        let cfg = &self.config;
        let (l, c) = g.value(current).shape();
        if l != cfg.seq_len || c != 1 {
            return Err(Error::Shape {
                op: "surrogate",
                detail: format!("expected {} x 1 input, got {l} x {c}", cfg.seq_len),
            });
        }
        let w = |g: &mut Graph, name: &str| match weights {
            Weights::Trainable => g.param(&self.params, name),
            Weights::Frozen => g.frozen(&self.params, name),
        };
        let d = cfg.embed_dim;
        let x = g.scale_shift(
            current,
            1.0 / cfg.current_scale,
            -cfg.current_center / cfg.current_scale,
        );

        let ones = g.constant(Tensor::new(1, d, vec![1.0; d])?);
        let spread = g.matmul(x, ones)?;
        let (ew, eb) = (w(g, "embed.w")?, w(g, "embed.b")?);
        let mut h = g.depthwise_conv(spread, ew, eb)?;
        let pos = w(g, "pos")?;
        h = g.add(h, pos)?;

        for b in 0..cfg.blocks {
            let mut qkv = [h; 3];
            for (slot, part) in qkv.iter_mut().zip(["q", "k", "v"]) {
                let cw = w(g, &format!("block{b}.{part}.w"))?;
                let cb = w(g, &format!("block{b}.{part}.b"))?;
                *slot = g.depthwise_conv(h, cw, cb)?;
            }
            let att = g.attention(qkv[0], qkv[1], qkv[2], cfg.heads)?;
            let (ow, ob) = (w(g, &format!("block{b}.o.w"))?, w(g, &format!("block{b}.o.b"))?);
            let att = g.affine(att, ow, ob)?;
            h = g.add(h, att)?;
            let (w1, b1) = (w(g, &format!("block{b}.ff1.w"))?, w(g, &format!("block{b}.ff1.b"))?);
            let (w2, b2) = (w(g, &format!("block{b}.ff2.w"))?, w(g, &format!("block{b}.ff2.b"))?);
            let ff = g.affine(h, w1, b1)?;
            let ff = g.relu(ff);
            let ff = g.affine(ff, w2, b2)?;
            h = g.add(h, ff)?;
            if !g.value(h).is_finite() {
                return Err(Error::NonFinite {
                    stage: format!("surrogate block {b}"),
                });
            }
        }
        let (ow, ob) = (w(g, "out.w")?, w(g, "out.b")?);
        let mut y = g.affine(h, ow, ob)?;
        if cfg.skip_taps > 0 {
            let pad = cfg.skip_taps.max(cfg.skip_quad) / 2;
            let padded = g.pad_edges(x, pad, pad)?;
            let taps = w(g, "skip.taps")?;
            let mut skip = g.fir(padded, taps, cfg.skip_taps / 2)?;
            if cfg.skip_quad > 0 {
                let quad = w(g, "skip.quad")?;
                let (zero, none) = (g.constant(Tensor::scalar(0.0)), g.constant(Tensor::zeros(1, 1)));
                let q = g.volterra(padded, zero, none, quad, cfg.skip_quad / 2)?;
                skip = g.add(skip, q)?;
            }
            let skip = g.slice_rows(skip, pad, l)?;
            y = g.add(y, skip)?;
        }
        Ok(g.scale_shift(y, cfg.power_ref, 0.0))
    }

    /// Least-squares fit of the skip path and output offset to `frames`,
    /// using every `stride`-th sample. Rows are weighted by
    /// `ptp^-0.75` of their frame's target, between plain least squares and
    /// the per-frame NRMSE the model is judged on. Returns the weighted RMS
    /// residual.
    pub fn fit_linear_path(&mut self, frames: &[&SurrogateSample], stride: usize) -> Result<f64> {
        let (taps, quad) = (self.config.skip_taps, self.config.skip_quad);
        if taps == 0 {
            return Err(invalid("skip_taps", "model has no skip path"));
        }
        let stride = stride.max(1);
        let pairs: Vec<(usize, usize)> = (0..quad).flat_map(|a| (a..quad).map(move |b| (a, b))).collect();
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for f in frames {
            let x: Vec<f64> = f.input.iter().map(|&i| self.config.scale_current(i)).collect();
            let (lo, hi) = f
                .target
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
            let ptp = self.config.scale_power(hi - lo);
            if !(ptp > 0.0) {
                continue;
            }
            let wgt = ptp.powf(-LS_WEIGHT_EXPONENT);
            let at = |t: usize, k: usize, delay: usize| {
                x[(t as isize - k as isize + delay as isize).clamp(0, x.len() as isize - 1) as usize]
            };
            for t in (0..x.len()).step_by(stride) {
                let mut row = Vec::with_capacity(1 + taps + pairs.len());
                row.push(wgt);
                row.extend((0..taps).map(|k| wgt * at(t, k, taps / 2)));
                row.extend(
                    pairs
                        .iter()
                        .map(|&(a, b)| wgt * at(t, a, quad / 2) * at(t, b, quad / 2)),
                );
                rows.push(row);
                y.push(wgt * self.config.scale_power(f.target[t]));
            }
        }
        if rows.is_empty() {
            return Err(Error::Degenerate("no frame with a non-constant target".into()));
        }
        let sol = lstsq(&Matrix::from_rows(&rows), &y)?;
        let c = sol.coefficients;
        self.params.get_mut("out.b").expect("present").data[0] = c[0];
        self.params
            .get_mut("skip.taps")
            .expect("present")
            .data
            .copy_from_slice(&c[1..1 + taps]);
        if quad > 0 {
            let grid = &mut self.params.get_mut("skip.quad").expect("present").data;
            for (&(a, b), &v) in pairs.iter().zip(&c[1 + taps..]) {
                if a == b {
                    grid[a * quad + a] = v;
                } else {
                    grid[a * quad + b] = 0.5 * v;
                    grid[b * quad + a] = 0.5 * v;
                }
            }
        }
        Ok(sol.residual_norm / (y.len() as f64).sqrt())
    }

    /// Predicted optical power for one frame of drive current.
    pub fn predict(&self, current: &[f64]) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::column(current.to_vec()));
        let y = self.forward(&mut g, x, Weights::Frozen)?;
        Ok(g.value(y).data.clone())
    }
}
