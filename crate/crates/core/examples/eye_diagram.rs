//! Square-pulse 4PAM through the rate equations at 25 GBd: an ASCII eye of
//! the laser output power and the peak chirp.

use dmlink::dsp::{eye_histogram, frame_rng, SymbolSequence, PAM_ORDER, SQUARE_PULSE};
use dmlink::laser::{instantaneous_chirp, LaserParams};
use dmlink::link::{drive_current, LinkConfig, ReferenceChannel, FRAME_SYMBOLS, WARMUP_SAMPLES};

fn main() -> dmlink::Result<()> {
    let p = LaserParams::default();
    let cfg = LinkConfig::at_rate(25e9);
    let channel = ReferenceChannel::new(p, &cfg)?;
    let mut rng = frame_rng(1, 0, 0);
    let symbols = SymbolSequence::random(FRAME_SYMBOLS, PAM_ORDER, cfg.symbol_rate, &mut rng);
    let current = drive_current(&symbols, &SQUARE_PULSE, &cfg)?;

    let fine = channel.propagate_oversampled(&current, cfg.i_bias)?;
    let chirp = instantaneous_chirp(&p, &fine)?;
    let peak = chirp.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    println!("peak chirp {:.2} GHz over {} fine samples", peak / 1e9, fine.len());

    // The eye is drawn from the oversampled power, before the receive filter.
    let per_symbol = cfg.sps * cfg.oversample;
    let eye = eye_histogram(&fine.samples[WARMUP_SAMPLES * cfg.oversample..], per_symbol, 2, 16)?;
    let max = eye.counts.iter().copied().max().unwrap_or(1) as f64;
    for row in (0..eye.amp_bins).rev() {
        let line: String = (0..eye.time_bins)
            .step_by((eye.time_bins / 64).max(1))
            .map(|t| match eye.count(row, t) as f64 / max {
                0.0 => ' ',
                f if f < 0.3 => '.',
                f if f < 0.7 => 'o',
                _ => '#',
            })
            .collect();
        println!("{:7.3} mW |{line}|", eye.amp_edges[row] * 1e3);
    }
    Ok(())
}
