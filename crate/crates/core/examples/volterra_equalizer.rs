//! Second-order Volterra equalization of a nonlinear channel with memory,
//! fitted by least squares and compared with a linear fit of equal memory.

use dmlink::diff::{fit_volterra, volterra_apply};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dmlink::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let levels = [-0.5, -1.0 / 6.0, 1.0 / 6.0, 0.5];
    let tx: Vec<f64> = (0..4000).map(|_| levels[rng.gen_range(0..4)]).collect();
    // Linear ISI followed by a memoryless square-law term.
    let rx: Vec<f64> = (0..tx.len())
        .map(|k| {
            let lin = tx[k] + 0.35 * tx.get(k.wrapping_sub(1)).copied().unwrap_or(0.0)
                - 0.1 * tx.get(k + 1).copied().unwrap_or(0.0);
            lin + 0.4 * lin * lin + rng.gen_range(-0.01..0.01)
        })
        .collect();
    let (memory, delay) = (7, 3);
    let train = 0..3000;
    for (label, quad) in [("linear", 0), ("volterra", memory)] {
        let (kernel, _) = fit_volterra(&rx, &tx, memory, quad, delay, train.clone())?;
        let y = volterra_apply(&rx, &kernel, delay);
        let errors = (3000..tx.len())
            .filter(|&k| {
                let nearest = levels
                    .iter()
                    .min_by(|a, b| (*a - y[k]).abs().total_cmp(&(*b - y[k]).abs()));
                nearest != Some(&tx[k])
            })
            .count();
        println!(
            "{label:>8}: {} taps, SER {:.4}",
            kernel.tap_count(),
            errors as f64 / 1000.0
        );
    }
    Ok(())
}
