//! The reverse-mode engine on a small classifier: gradients checked against
//! finite differences, then a few Adam steps.

use dmlink::diff::{gradient_check, AdamConfig, Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dmlink::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rand = |r: usize, c: usize| Tensor::new(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let x = rand(16, 3)?;
    let labels: Vec<usize> = (0..16).map(|i| usize::from(x.at(i, 0) + x.at(i, 1) > 0.0)).collect();
    let mut store = ParamStore::new();
    store.insert("w1", rand(3, 8)?)?;
    store.insert("b1", Tensor::zeros(1, 8))?;
    store.insert("w2", rand(8, 2)?)?;
    store.insert("b2", Tensor::zeros(1, 2))?;

    let build = |g: &mut Graph, s: &ParamStore| {
        let input = g.constant(x.clone());
        let (w1, b1) = (g.param(s, "w1")?, g.param(s, "b1")?);
        let h = g.affine(input, w1, b1)?;
        let h = g.leaky_relu(h, 0.01);
        let (w2, b2) = (g.param(s, "w2")?, g.param(s, "b2")?);
        let logits = g.affine(h, w2, b2)?;
        g.softmax_ce(logits, &labels)
    };
    let report = gradient_check(&store, build, 1)?;
    println!(
        "max relative gradient error {:.2e} over {} coordinates",
        report.max_rel_error,
        report.checks.len()
    );

    let adam = AdamConfig {
        lr: 0.05,
        ..AdamConfig::default()
    };
    for step in 0..=50 {
        let mut g = Graph::new();
        let loss = build(&mut g, &store)?;
        if step % 10 == 0 {
            println!("step {step}: CE {:.4} nats", g.value(loss).item());
        }
        let grads = g.param_grads(&g.backward(loss)?);
        store.adam_step(&grads, &adam)?;
    }
    Ok(())
}
