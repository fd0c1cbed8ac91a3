use std::collections::BTreeMap;

use super::params::ParamStore;
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, Var),
    AddScalar(Var, Var),
    Affine(Var, f64),
    AddConst(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    ClipSt(Var),
    Reshape(Var),
    SliceRows(Var, usize),
    PadEdges(Var, usize),
    Sum(Var),
    Fir {
        x: Var,
        taps: Var,
        delay: usize,
    },
    Volterra {
        u: Var,
        h0: Var,
        h1: Var,
        h2: Var,
        delay: usize,
    },
    DepthwiseConv {
        x: Var,
        w: Var,
        b: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    SoftmaxCe {
        logits: Var,
        targets: Vec<usize>,
        probs: Tensor,
    },
    Nrmse {
        pred: Var,
        target: Tensor,
        ptp: f64,
    },
    Mse {
        pred: Var,
        target: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of values recorded in evaluation order. Each operation appends a node;
/// [`Graph::backward`] walks the tape in reverse.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn scalar_shape(op: &'static str, s: &Tensor) -> Result<()> {
    if s.shape() != (1, 1) {
        return Err(shape_err(op, format!("expected a scalar, got {:?}", s.shape())));
    }
    Ok(())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf that receives a gradient but is not tied to a parameter store.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Trainable leaf copied from `store`. Reusing a name returns the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some((_, v)) = self.params.iter().find(|(n, _)| n == name) {
            return Ok(*v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.push(t, Op::Leaf, true);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// Parameter values from `store` inserted as constants (frozen weights).
    pub fn frozen(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let t = store
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{name}`")))?
            .clone();
        Ok(self.constant(t))
    }

    /// Gradients of the registered parameters, keyed by name.
    pub fn param_grads(&self, grads: &Gradients) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(n, v)| {
                let g = grads.get(*v).cloned().unwrap_or_else(|| self.value(*v).zeros_like());
                (n.clone(), g)
            })
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(shape_err("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let mut out = Tensor::zeros(ta.rows, tb.cols);
        gemm(
            &ta.data,
            ta.shape(),
            false,
            &tb.data,
            tb.shape(),
            false,
            &mut out.data,
            0.0,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Adds a `1 x cols` row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tb.rows != 1 || tb.cols != tx.cols {
            return Err(shape_err("add_bias", format!("{:?} + {:?}", tx.shape(), tb.shape())));
        }
        let mut out = tx.clone();
        for row in out.data.chunks_mut(tb.cols) {
            for (o, bb) in row.iter_mut().zip(&tb.data) {
                *o += bb;
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    /// `x W + b`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        mk: fn(Var, Var) -> Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(op, ta, tb)?;
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        let out = Tensor::new(ta.rows, ta.cols, data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, mk(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul)
    }

    /// Multiplies every element of `x` by the scalar node `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        scalar_shape("mul_scalar", self.value(s))?;
        let k = self.value(s).item();
        let out = self.value(x).map(|v| v * k);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::MulScalar(x, s), rg))
    }

    /// Adds the scalar node `s` to every element of `x`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var> {
        scalar_shape("add_scalar", self.value(s))?;
        let k = self.value(s).item();
        let out = self.value(x).map(|v| v + k);
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::AddScalar(x, s), rg))
    }

    /// `scale * x + shift` with constant coefficients.
    pub fn scale_shift(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(out, Op::Affine(x, scale), rg)
    }

    /// Adds a constant tensor of the same shape.
    pub fn add_const(&mut self, x: Var, c: &Tensor) -> Result<Var> {
        same_shape("add_const", self.value(x), c)?;
        let mut out = self.value(x).clone();
        out.add_assign(c);
        let rg = self.rg(x);
        Ok(self.push(out, Op::AddConst(x), rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        let rg = self.rg(x);
        self.push(out, Op::LeakyRelu(x, slope), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    /// Hard clip to `[lo, hi]` whose backward pass is the identity.
    pub fn clip_straight_through(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(out, Op::ClipSt(x), rg)
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(x);
        if rows * cols != t.len() {
            return Err(shape_err("reshape", format!("{:?} -> ({rows}, {cols})", t.shape())));
        }
        let out = Tensor::new(rows, cols, t.data.clone())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Reshape(x), rg))
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if start + len > t.rows {
            return Err(shape_err("slice_rows", format!("{start}+{len} > {}", t.rows)));
        }
        let data = t.data[start * t.cols..(start + len) * t.cols].to_vec();
        let out = Tensor::new(len, t.cols, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceRows(x, start), rg))
    }

    /// `x` with its first row repeated `before` times above and its last row
    /// repeated `after` times below.
    pub fn pad_edges(&mut self, x: Var, before: usize, after: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rows == 0 {
            return Err(shape_err("pad_edges", "empty input".to_string()));
        }
        let c = t.cols;
        let mut data = Vec::with_capacity((t.rows + before + after) * c);
        for _ in 0..before {
            data.extend_from_slice(&t.data[..c]);
        }
        data.extend_from_slice(&t.data);
        for _ in 0..after {
            data.extend_from_slice(&t.data[t.data.len() - c..]);
        }
        let out = Tensor::new(t.rows + before + after, c, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::PadEdges(x, before), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).data.iter().sum());
        let rg = self.rg(x);
        self.push(out, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale_shift(s, 1.0 / n, 0.0)
    }

    /// FIR filter of an `n x 1` sequence with `k x 1` taps:
    /// `y[t] = sum_j taps[j] x[t - j + delay]`, zero outside the sequence.
    /// `delay = 0` is causal; `delay = (k - 1) / 2` centres an odd filter.
    pub fn fir(&mut self, x: Var, taps: Var, delay: usize) -> Result<Var> {
        let (tx, th) = (self.value(x), self.value(taps));
        if tx.cols != 1 || th.cols != 1 || th.rows == 0 || th.rows > tx.rows {
            return Err(shape_err(
                "fir",
                format!("sequence {:?}, taps {:?}", tx.shape(), th.shape()),
            ));
        }
        let n = tx.rows;
        let mut out = vec![0.0; n];
        for (j, h) in th.data.iter().enumerate() {
            for (t, o) in out.iter_mut().enumerate() {
                let s = t as isize - j as isize + delay as isize;
                if s >= 0 && (s as usize) < n {
                    *o += h * tx.data[s as usize];
                }
            }
        }
        let rg = self.rg(x) || self.rg(taps);
        Ok(self.push(Tensor::column(out), Op::Fir { x, taps, delay }, rg))
    }

    /// Second-order Volterra filter of an `n x 1` sequence with scalar `h0`,
    /// linear taps `h1` (`n1 x 1`) and a full quadratic grid `h2` (`n2 x n2`).
    pub fn volterra(&mut self, u: Var, h0: Var, h1: Var, h2: Var, delay: usize) -> Result<Var> {
        let (tu, t0, t1, t2) = (self.value(u), self.value(h0), self.value(h1), self.value(h2));
        if tu.cols != 1 || t0.shape() != (1, 1) || t1.cols != 1 || t2.rows != t2.cols {
            return Err(shape_err(
                "volterra",
                format!(
                    "u {:?}, h0 {:?}, h1 {:?}, h2 {:?}",
                    tu.shape(),
                    t0.shape(),
                    t1.shape(),
                    t2.shape()
                ),
            ));
        }
        let out = super::volterra::evaluate(&tu.data, t0.item(), &t1.data, &t2.data, t2.rows, delay);
        let rg = [u, h0, h1, h2].iter().any(|v| self.rg(*v));
        Ok(self.push(Tensor::column(out), Op::Volterra { u, h0, h1, h2, delay }, rg))
    }

    /// Per-channel 1-D convolution of `x` (`L x d`) with `w` (`k x d`), centred
    /// and zero padded, plus bias `b` (`1 x d`).
    pub fn depthwise_conv(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        if tw.cols != tx.cols || tb.shape() != (1, tx.cols) {
            return Err(shape_err(
                "depthwise_conv",
                format!("x {:?}, w {:?}, b {:?}", tx.shape(), tw.shape(), tb.shape()),
            ));
        }
        let (l, d, k) = (tx.rows, tx.cols, tw.rows);
        let half = k / 2;
        let mut out = Tensor::zeros(l, d);
        for t in 0..l {
            let row = &mut out.data[t * d..(t + 1) * d];
            row.copy_from_slice(&tb.data);
            for j in 0..k {
                let s = t + j;
                if s < half || s - half >= l {
                    continue;
                }
                let xs = &tx.data[(s - half) * d..(s - half + 1) * d];
                let ws = &tw.data[j * d..(j + 1) * d];
                for c in 0..d {
                    row[c] += ws[c] * xs[c];
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(out, Op::DepthwiseConv { x, w, b }, rg))
    }

    /// Multi-head scaled dot-product attention over all positions. `q`, `k`
    /// and `v` are `L x d`; head `h` uses columns `h*d/H .. (h+1)*d/H`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (tq, tk, tv) = (self.value(q), self.value(k), self.value(v));
        if tq.shape() != tk.shape() || tq.shape() != tv.shape() || heads == 0 || tq.cols % heads != 0 {
            return Err(shape_err(
                "attention",
                format!(
                    "q {:?}, k {:?}, v {:?}, {heads} heads",
                    tq.shape(),
                    tk.shape(),
                    tv.shape()
                ),
            ));
        }
        let (l, d) = tq.shape();
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; heads * l * l];
        let mut out = Tensor::zeros(l, d);
        let mut oh = vec![0.0; l * dh];
        for h in 0..heads {
            let qh = head_slice(tq, h, dh);
            let kh = head_slice(tk, h, dh);
            let vh = head_slice(tv, h, dh);
            let p = &mut probs[h * l * l..(h + 1) * l * l];
            gemm(&qh, (l, dh), false, &kh, (l, dh), true, p, 0.0);
            for row in p.chunks_mut(l) {
                let mx = row.iter().fold(f64::NEG_INFINITY, |m, &s| m.max(s * scale));
                let mut z = 0.0;
                for s in row.iter_mut() {
                    *s = (*s * scale - mx).exp();
                    z += *s;
                }
                for s in row.iter_mut() {
                    *s /= z;
                }
            }
            gemm(p, (l, l), false, &vh, (l, dh), false, &mut oh, 0.0);
            scatter_head(&mut out, &oh, h, dh);
        }
        let rg = self.rg(q) || self.rg(k) || self.rg(v);
        Ok(self.push(out, Op::Attention { q, k, v, heads, probs }, rg))
    }

    /// Row-wise softmax of `logits` (`n x M`) and the mean cross-entropy in
    /// nats against `targets`. Returns the scalar loss node; probabilities are
    /// available through [`Graph::softmax_probs`].
    pub fn softmax_ce(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logits);
        if t.rows != targets.len() || targets.iter().any(|&c| c >= t.cols) {
            return Err(shape_err(
                "softmax_ce",
                format!("logits {:?} for {} targets", t.shape(), targets.len()),
            ));
        }
        let probs = softmax_rows(t);
        let ce = targets
            .iter()
            .enumerate()
            .map(|(r, &c)| -probs.at(r, c).max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / targets.len() as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(ce),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Probabilities cached by a [`Graph::softmax_ce`] node.
    pub fn softmax_probs(&self, loss: Var) -> Option<&Tensor> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxCe { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// RMS error against `target` divided by the target's peak-to-peak range.
    pub fn nrmse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        self.nrmse_loss_floored(pred, target, 0.0)
    }

    /// As [`Graph::nrmse_loss`], dividing by at least `min_ptp` so nearly
    /// constant targets do not dominate a batch.
    pub fn nrmse_loss_floored(&mut self, pred: Var, target: &Tensor, min_ptp: f64) -> Result<Var> {
        same_shape("nrmse_loss", self.value(pred), target)?;
        let (lo, hi) = target
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let ptp = (hi - lo).max(min_ptp);
        if !(ptp > 0.0) {
            return Err(Error::Degenerate(
                "constant target has no peak-to-peak amplitude".into(),
            ));
        }
        let mse = mean_sq_diff(&self.value(pred).data, &target.data);
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(mse.sqrt() / ptp),
            Op::Nrmse {
                pred,
                target: target.clone(),
                ptp,
            },
            rg,
        ))
    }

    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        same_shape("mse_loss", self.value(pred), target)?;
        let mse = mean_sq_diff(&self.value(pred).data, &target.data);
        let rg = self.rg(pred);
        Ok(self.push(
            Tensor::scalar(mse),
            Op::Mse {
                pred,
                target: target.clone(),
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(shape_err(
                "backward",
                format!("loss must be scalar, got {:?}", lt.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Like `accumulate`, but builds the contribution lazily and only when the
    /// target needs it.
    fn acc_with(&self, grads: &mut [Option<Tensor>], v: Var, f: impl FnOnce() -> Tensor) {
        if self.rg(v) {
            let g = f();
            self.accumulate(grads, v, g);
        }
    }

    fn backprop_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                self.acc_with(grads, *a, || {
                    let mut ga = ta.zeros_like();
                    gemm(&g.data, g.shape(), false, &tb.data, tb.shape(), true, &mut ga.data, 0.0);
                    ga
                });
                self.acc_with(grads, *b, || {
                    let mut gb = tb.zeros_like();
                    gemm(&ta.data, ta.shape(), true, &g.data, g.shape(), false, &mut gb.data, 0.0);
                    gb
                });
            }
            Op::AddBias(x, b) => {
                self.acc_with(grads, *x, || g.clone());
                self.acc_with(grads, *b, || {
                    let mut gb = Tensor::zeros(1, g.cols);
                    for row in g.data.chunks(g.cols) {
                        for (o, v) in gb.data.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    gb
                });
            }
            Op::Add(a, b) => {
                self.acc_with(grads, *a, || g.clone());
                self.acc_with(grads, *b, || g.clone());
            }
            Op::Sub(a, b) => {
                self.acc_with(grads, *a, || g.clone());
                self.acc_with(grads, *b, || g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                self.acc_with(grads, *a, || zip_map(g, tb, |gv, y| gv * y));
                self.acc_with(grads, *b, || zip_map(g, ta, |gv, x| gv * x));
            }
            Op::MulScalar(x, s) => {
                let (tx, k) = (val(*x), val(*s).item());
                self.acc_with(grads, *x, || g.map(|v| v * k));
                self.acc_with(grads, *s, || {
                    Tensor::scalar(g.data.iter().zip(&tx.data).map(|(a, b)| a * b).sum())
                });
            }
            Op::AddScalar(x, s) => {
                self.acc_with(grads, *x, || g.clone());
                self.acc_with(grads, *s, || Tensor::scalar(g.data.iter().sum()));
            }
            Op::Affine(x, scale) => self.acc_with(grads, *x, || g.map(|v| v * scale)),
            Op::AddConst(x) | Op::ClipSt(x) => self.acc_with(grads, *x, || g.clone()),
            Op::LeakyRelu(x, slope) => {
                let tx = val(*x);
                self.acc_with(grads, *x, || {
                    zip_map(g, tx, |gv, xv| if xv > 0.0 { gv } else { slope * gv })
                });
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[i].value;
                self.acc_with(grads, *x, || zip_map(g, y, |gv, s| gv * s * (1.0 - s)));
            }
            Op::Reshape(x) => {
                let tx = val(*x);
                self.acc_with(grads, *x, || Tensor {
                    rows: tx.rows,
                    cols: tx.cols,
                    data: g.data.clone(),
                });
            }
            Op::SliceRows(x, start) => {
                let tx = val(*x);
                self.acc_with(grads, *x, || {
                    let mut gx = tx.zeros_like();
                    let off = start * tx.cols;
                    gx.data[off..off + g.len()].copy_from_slice(&g.data);
                    gx
                });
            }
            Op::PadEdges(x, before) => {
                let tx = val(*x);
                self.acc_with(grads, *x, || {
                    let (n, c) = tx.shape();
                    let mut gx = tx.zeros_like();
                    for (r, row) in g.data.chunks(c).enumerate() {
                        let src = r.saturating_sub(*before).min(n - 1);
                        for (o, v) in gx.data[src * c..(src + 1) * c].iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    gx
                });
            }
            Op::Sum(x) => {
                let k = g.item();
                self.acc_with(grads, *x, || val(*x).map(|_| k));
            }
            Op::Fir { x, taps, delay } => {
                let (tx, th) = (val(*x), val(*taps));
                let n = tx.rows;
                let d = *delay as isize;
                self.acc_with(grads, *x, || {
                    let mut gx = vec![0.0; n];
                    for (j, h) in th.data.iter().enumerate() {
                        for (t, gv) in g.data.iter().enumerate() {
                            let s = t as isize - j as isize + d;
                            if s >= 0 && (s as usize) < n {
                                gx[s as usize] += h * gv;
                            }
                        }
                    }
                    Tensor::column(gx)
                });
                self.acc_with(grads, *taps, || {
                    let gh = (0..th.rows)
                        .map(|j| {
                            g.data
                                .iter()
                                .enumerate()
                                .filter_map(|(t, gv)| {
                                    let s = t as isize - j as isize + d;
                                    (s >= 0 && (s as usize) < n).then(|| gv * tx.data[s as usize])
                                })
                                .sum()
                        })
                        .collect();
                    Tensor::column(gh)
                });
            }
            Op::Volterra { u, h0, h1, h2, delay } => {
                let (tu, t1, t2) = (val(*u), val(*h1), val(*h2));
                let vg = super::volterra::backward(&tu.data, &t1.data, &t2.data, t2.rows, *delay, &g.data);
                self.acc_with(grads, *u, || Tensor::column(vg.du));
                self.acc_with(grads, *h0, || Tensor::scalar(g.data.iter().sum()));
                self.acc_with(grads, *h1, || Tensor::column(vg.dh1));
                self.acc_with(grads, *h2, || Tensor {
                    rows: t2.rows,
                    cols: t2.cols,
                    data: vg.dh2,
                });
            }
            Op::DepthwiseConv { x, w, b } => {
                let (tx, tw) = (val(*x), val(*w));
                let (l, d, k) = (tx.rows, tx.cols, tw.rows);
                let half = k / 2;
                let need_x = self.rg(*x);
                let need_w = self.rg(*w);
                let mut gx = if need_x { tx.zeros_like() } else { Tensor::zeros(0, 0) };
                let mut gw = if need_w { tw.zeros_like() } else { Tensor::zeros(0, 0) };
                if need_x || need_w {
                    for t in 0..l {
                        let gr = &g.data[t * d..(t + 1) * d];
                        for j in 0..k {
                            let s = t + j;
                            if s < half || s - half >= l {
                                continue;
                            }
                            let src = (s - half) * d;
                            for c in 0..d {
                                if need_x {
                                    gx.data[src + c] += tw.data[j * d + c] * gr[c];
                                }
                                if need_w {
                                    gw.data[j * d + c] += tx.data[src + c] * gr[c];
                                }
                            }
                        }
                    }
                }
                if need_x {
                    self.accumulate(grads, *x, gx);
                }
                if need_w {
                    self.accumulate(grads, *w, gw);
                }
                self.acc_with(grads, *b, || {
                    let mut gb = Tensor::zeros(1, d);
                    for row in g.data.chunks(d) {
                        for (o, v) in gb.data.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    gb
                });
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (tq, tk, tv) = (val(*q), val(*k), val(*v));
                let (l, d) = tq.shape();
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let mut gq = tq.zeros_like();
                let mut gk = tk.zeros_like();
                let mut gv = tv.zeros_like();
                let mut dp = vec![0.0; l * l];
                let mut tmp = vec![0.0; l * dh];
                for h in 0..*heads {
                    let p = &probs[h * l * l..(h + 1) * l * l];
                    let go = head_slice(g, h, dh);
                    let qh = head_slice(tq, h, dh);
                    let kh = head_slice(tk, h, dh);
                    let vh = head_slice(tv, h, dh);
                    if self.rg(*v) {
                        gemm(p, (l, l), true, &go, (l, dh), false, &mut tmp, 0.0);
                        scatter_head(&mut gv, &tmp, h, dh);
                    }
                    if self.rg(*q) || self.rg(*k) {
                        gemm(&go, (l, dh), false, &vh, (l, dh), true, &mut dp, 0.0);
                        for (drow, prow) in dp.chunks_mut(l).zip(p.chunks(l)) {
                            let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                            for (dv, pv) in drow.iter_mut().zip(prow) {
                                *dv = pv * (*dv - dot) * scale;
                            }
                        }
                        if self.rg(*q) {
                            gemm(&dp, (l, l), false, &kh, (l, dh), false, &mut tmp, 0.0);
                            scatter_head(&mut gq, &tmp, h, dh);
                        }
                        if self.rg(*k) {
                            gemm(&dp, (l, l), true, &qh, (l, dh), false, &mut tmp, 0.0);
                            scatter_head(&mut gk, &tmp, h, dh);
                        }
                    }
                }
                self.accumulate(grads, *q, gq);
                self.accumulate(grads, *k, gk);
                self.accumulate(grads, *v, gv);
            }
            Op::SoftmaxCe { logits, targets, probs } => {
                let k = g.item() / targets.len() as f64;
                self.acc_with(grads, *logits, || {
                    let mut gl = probs.clone();
                    for (r, &c) in targets.iter().enumerate() {
                        gl.data[r * gl.cols + c] -= 1.0;
                    }
                    gl.map(|v| v * k)
                });
            }
            Op::Nrmse { pred, target, ptp } => {
                let tp = val(*pred);
                let rmse = self.nodes[i].value.item() * ptp;
                let n = tp.len() as f64;
                let k = if rmse > 0.0 { g.item() / (n * rmse * ptp) } else { 0.0 };
                self.acc_with(grads, *pred, || zip_map(tp, target, |p, t| k * (p - t)));
            }
            Op::Mse { pred, target } => {
                let tp = val(*pred);
                let k = 2.0 * g.item() / tp.len() as f64;
                self.acc_with(grads, *pred, || zip_map(tp, target, |p, t| k * (p - t)));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax of each row.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for row in out.data.chunks_mut(t.cols) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| f(*x, *y)).collect(),
    }
}

/// Contiguous copy of columns `h*dh..(h+1)*dh`.
fn head_slice(t: &Tensor, h: usize, dh: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(t.rows * dh);
    for row in t.data.chunks(t.cols) {
        out.extend_from_slice(&row[h * dh..(h + 1) * dh]);
    }
    out
}

fn scatter_head(t: &mut Tensor, src: &[f64], h: usize, dh: usize) {
    let cols = t.cols;
    for (row, s) in t.data.chunks_mut(cols).zip(src.chunks(dh)) {
        row[h * dh..(h + 1) * dh].copy_from_slice(s);
    }
}
