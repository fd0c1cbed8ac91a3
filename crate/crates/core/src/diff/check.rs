use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Number of randomly chosen parameter coordinates compared.
pub const CHECK_COORDINATES: usize = 32;
/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const GRAD_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateCheck {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub max_rel_error: f64,
    pub checks: Vec<CoordinateCheck>,
}

fn evaluate<F>(store: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    Ok(g.value(loss).item())
}

/// Compares reverse-mode gradients of the scalar built by `build` against
/// central finite differences on randomly drawn parameter coordinates.
pub fn gradient_check<F>(store: &ParamStore, build: F, seed: u64) -> Result<GradientReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut graph = Graph::new();
    let loss = build(&mut graph, store)?;
    let grads = graph.backward(loss)?;
    let param_grads = graph.param_grads(&grads);

    let coords: Vec<(String, usize)> = store
        .iter()
        .flat_map(|(n, t)| (0..t.len()).map(move |i| (n.to_string(), i)))
        .collect();
    if coords.is_empty() {
        return Err(Error::Degenerate("no parameters to check".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<&(String, usize)> = if coords.len() <= CHECK_COORDINATES {
        coords.iter().collect()
    } else {
        (0..CHECK_COORDINATES)
            .map(|_| &coords[rng.gen_range(0..coords.len())])
            .collect()
    };

    let mut checks = Vec::with_capacity(picks.len());
    let mut work = store.clone();
    for (name, index) in picks {
        let base = store.get(name).expect("name from store").data[*index];
        work.get_mut(name).expect("present").data[*index] = base + FD_STEP;
        let up = evaluate(&work, &build)?;
        work.get_mut(name).expect("present").data[*index] = base - FD_STEP;
        let down = evaluate(&work, &build)?;
        work.get_mut(name).expect("present").data[*index] = base;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = param_grads.get(name).map_or(0.0, |g| g.data[*index]);
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
        checks.push(CoordinateCheck {
            name: name.clone(),
            index: *index,
            analytic,
            numeric,
            rel_error,
        });
    }
    let max_rel_error = checks.iter().map(|c| c.rel_error).fold(0.0, f64::max);
    Ok(GradientReport { max_rel_error, checks })
}
