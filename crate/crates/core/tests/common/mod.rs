//! Helpers shared by the integration tests.
#![allow(dead_code)]

use dmlink::diff::{gradient_check, Graph, ParamStore, Tensor, Var};
use dmlink::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect(),
    )
    .unwrap()
}

pub fn store_with(entries: &[(&str, Tensor)]) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.insert(*n, t.clone()).unwrap();
    }
    s
}

/// Weighted sum of every output so every output element gets a distinct gradient.
pub fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.value(y).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let w = g.constant(rand_tensor(&mut rng, r, c, 1.0));
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

/// Gradient checks of every registered operation on random instances.
pub fn op_checks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut run = |name: &'static str, store: ParamStore, f: &dyn Fn(&mut Graph, &ParamStore) -> Result<Var>| {
        let r = gradient_check(&store, f, seed).unwrap();
        out.push((name, r.max_rel_error));
    };

    let x = rand_tensor(&mut rng, 5, 4, 1.0);
    let s = store_with(&[
        ("w", rand_tensor(&mut rng, 4, 3, 1.0)),
        ("b", rand_tensor(&mut rng, 1, 3, 1.0)),
    ]);
    run("affine+leaky_relu+softmax_ce", s, &|g, s| {
        let xv = g.constant(x.clone());
        let (w, b) = (g.param(s, "w")?, g.param(s, "b")?);
        let y = g.affine(xv, w, b)?;
        let y = g.leaky_relu(y, 0.01);
        g.softmax_ce(y, &[0, 1, 2, 1, 0])
    });

    let a = rand_tensor(&mut rng, 3, 3, 1.0);
    let s = store_with(&[
        ("a", rand_tensor(&mut rng, 3, 3, 1.0)),
        ("b", rand_tensor(&mut rng, 3, 3, 1.0)),
    ]);
    run("add/sub/mul/sigmoid", s, &|g, s| {
        let (p, q) = (g.param(s, "a")?, g.param(s, "b")?);
        let c = g.constant(a.clone());
        let t = g.add(p, q)?;
        let t = g.mul(t, p)?;
        let t = g.sub(t, c)?;
        let t = g.sigmoid(t);
        let t = g.add_const(t, &a)?;
        let t = g.scale_shift(t, 1.7, -0.2);
        probe(g, t, 2)
    });

    let s = store_with(&[
        ("x", rand_tensor(&mut rng, 8, 1, 1.0)),
        ("k", rand_tensor(&mut rng, 1, 1, 1.0)),
        ("c", rand_tensor(&mut rng, 1, 1, 1.0)),
    ]);
    run("mul_scalar/add_scalar/reshape/slice/pad", s, &|g, s| {
        let (x, k, c) = (g.param(s, "x")?, g.param(s, "k")?, g.param(s, "c")?);
        let y = g.mul_scalar(x, k)?;
        let y = g.add_scalar(y, c)?;
        let y = g.reshape(y, 4, 2)?;
        let y = g.slice_rows(y, 1, 2)?;
        let y = g.pad_edges(y, 2, 3)?;
        let y = g.relu(y);
        probe(g, y, 3)
    });

    let s = store_with(&[
        ("x", rand_tensor(&mut rng, 30, 1, 1.0)),
        ("h", rand_tensor(&mut rng, 5, 1, 1.0)),
    ]);
    run("fir", s, &|g, s| {
        let (x, h) = (g.param(s, "x")?, g.param(s, "h")?);
        let y = g.fir(x, h, 2)?;
        probe(g, y, 4)
    });

    let s = store_with(&[
        ("u", rand_tensor(&mut rng, 25, 1, 1.0)),
        ("h0", rand_tensor(&mut rng, 1, 1, 1.0)),
        ("h1", rand_tensor(&mut rng, 4, 1, 1.0)),
        ("h2", rand_tensor(&mut rng, 3, 3, 1.0)),
    ]);
    run("volterra", s, &|g, s| {
        let u = g.param(s, "u")?;
        let (h0, h1, h2) = (g.param(s, "h0")?, g.param(s, "h1")?, g.param(s, "h2")?);
        let y = g.volterra(u, h0, h1, h2, 1)?;
        probe(g, y, 5)
    });

    let s = store_with(&[
        ("x", rand_tensor(&mut rng, 12, 4, 1.0)),
        ("w", rand_tensor(&mut rng, 3, 4, 1.0)),
        ("b", rand_tensor(&mut rng, 1, 4, 1.0)),
    ]);
    run("depthwise_conv", s, &|g, s| {
        let (x, w, b) = (g.param(s, "x")?, g.param(s, "w")?, g.param(s, "b")?);
        let y = g.depthwise_conv(x, w, b)?;
        probe(g, y, 6)
    });

    let s = store_with(&[
        ("q", rand_tensor(&mut rng, 10, 4, 1.0)),
        ("k", rand_tensor(&mut rng, 10, 4, 1.0)),
        ("v", rand_tensor(&mut rng, 10, 4, 1.0)),
    ]);
    run("attention", s, &|g, s| {
        let (q, k, v) = (g.param(s, "q")?, g.param(s, "k")?, g.param(s, "v")?);
        let y = g.attention(q, k, v, 2)?;
        probe(g, y, 7)
    });

    let t = rand_tensor(&mut rng, 20, 1, 1.0);
    let s = store_with(&[("p", rand_tensor(&mut rng, 20, 1, 1.0))]);
    run("nrmse+mse", s, &|g, s| {
        let p = g.param(s, "p")?;
        let a = g.nrmse_loss(p, &t)?;
        let b = g.mse_loss(p, &t)?;
        let l = g.add(a, b)?;
        Ok(g.mean(l))
    });
    out
}
