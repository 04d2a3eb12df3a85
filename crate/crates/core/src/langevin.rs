//! Unadjusted Langevin chains
//! `y ← y − (ε²/2) ∇E(y) + ε z`, `z ~ N(0, I)`, started from `N(0, I)`.
//!
//! Chain `i` draws its initial state and all of its noise from the stream
//! `child_seed(seed, i)`, so a batch is reproducible regardless of how the
//! chains are scheduled across threads.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortion::DistortionKind;
use crate::energy_net::Energy;
use crate::error::{check_dim, check_finite, Error, Result};
use crate::rng::{child_seed, rng_from_seed};
use crate::sources::SampleBatch;

/// Any coordinate beyond this magnitude aborts the chain.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainInit {
    #[default]
    StandardNormal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LangevinConfig {
    pub steps: usize,
    pub step_size: f64,
    #[serde(default)]
    pub init: ChainInit,
}

impl LangevinConfig {
    pub fn new(steps: usize, step_size: f64) -> Self {
        LangevinConfig {
            steps,
            step_size,
            init: ChainInit::StandardNormal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("langevin.steps", "must be at least 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("langevin.step_size", "must be positive and finite"));
        }
        Ok(())
    }
}

impl Default for LangevinConfig {
    /// K = 50, ε = 1.2e-2.
    fn default() -> Self {
        LangevinConfig::new(50, 1.2e-2)
    }
}

/// One Langevin update: `y − (ε²/2)·grad + ε·noise`.
pub fn langevin_step(grad: &[f64], y: &[f64], eps: f64, noise: &[f64]) -> Result<Vec<f64>> {
    check_dim(y.len(), grad.len())?;
    check_dim(y.len(), noise.len())?;
    check_finite(grad, "langevin gradient")?;
    check_finite(y, "langevin state")?;
    check_finite(noise, "langevin noise")?;
    if !eps.is_finite() {
        return Err(Error::NonFinite("langevin step size"));
    }
    let mut out = y.to_vec();
    step_in_place(&mut out, grad, eps, noise);
    Ok(out)
}

#[inline]
fn step_in_place(y: &mut [f64], grad: &[f64], eps: f64, noise: &[f64]) {
    let drift = 0.5 * eps * eps;
    for ((yi, g), z) in y.iter_mut().zip(grad).zip(noise) {
        *yi = *yi - drift * g + eps * z;
    }
}

/// Conditioning term of a chain targeting `p(y|x) ∝ exp(-E(y) - βρ(x, y))`.
#[derive(Clone, Copy)]
struct Anchor<'a> {
    xs: &'a SampleBatch,
    beta: f64,
    rho: DistortionKind,
}

/// Chains are advanced in lockstep blocks of this size so the energy can be
/// evaluated for a whole block at once. Block boundaries depend only on the
/// chain index.
const BLOCK: usize = 32;

/// Runs chains `first..first + count`.
fn run_block<E: Energy>(
    energy: &E,
    anchor: Option<Anchor<'_>>,
    cfg: &LangevinConfig,
    seed: u64,
    first: usize,
    count: usize,
) -> Result<Vec<f64>> {
    let dim = energy.dim();
    let mut rngs: Vec<_> = (first..first + count)
        .map(|i| rng_from_seed(child_seed(seed, i as u64)))
        .collect();
    let mut ys = vec![0.0; count * dim];
    match cfg.init {
        ChainInit::StandardNormal => {
            for (y, rng) in ys.chunks_exact_mut(dim).zip(rngs.iter_mut()) {
                y.iter_mut().for_each(|v| *v = StandardNormal.sample(rng));
            }
        }
    }
    let mut ws = energy.workspace();
    let mut values = vec![0.0; count];
    let mut grads = vec![0.0; count * dim];
    let mut noise = vec![0.0; dim];
    for step in 1..=cfg.steps {
        energy.values_and_grads(&ys, &mut ws, &mut values, &mut grads);
        for (c, ((y, g), rng)) in ys
            .chunks_exact_mut(dim)
            .zip(grads.chunks_exact_mut(dim))
            .zip(rngs.iter_mut())
            .enumerate()
        {
            if let Some(a) = anchor {
                a.rho.add_grad_y(a.xs.row(first + c), y, a.beta, g);
            }
            noise.iter_mut().for_each(|z| *z = StandardNormal.sample(rng));
            step_in_place(y, g, cfg.step_size, &noise);
        }
        if let Some(c) = ys
            .chunks_exact(dim)
            .position(|y| y.iter().any(|v| !(v.abs() <= DIVERGENCE_THRESHOLD)))
        {
            return Err(Error::Divergence {
                chain: first + c,
                step,
                threshold: DIVERGENCE_THRESHOLD,
            });
        }
    }
    Ok(ys)
}

fn run_batch<E: Energy>(energy: &E, anchor: Option<Anchor<'_>>, cfg: &LangevinConfig, n: usize, seed: u64) -> Result<SampleBatch> {
    let blocks: Vec<usize> = (0..n).step_by(BLOCK).collect();
    let results: Vec<Result<Vec<f64>>> = blocks
        .into_par_iter()
        .map(|first| run_block(energy, anchor, cfg, seed, first, BLOCK.min(n - first)))
        .collect();
    let mut points = Vec::with_capacity(n * energy.dim());
    for r in results {
        points.extend(r?);
    }
    Ok(SampleBatch {
        points,
        n,
        dim: energy.dim(),
        seed,
        source: None,
    })
}

/// `n` independent chains targeting `q(y) ∝ exp(-E(y))`; returns the final states.
pub fn sample_marginal<E: Energy>(
    energy: &E,
    cfg: &LangevinConfig,
    n: usize,
    seed: u64,
) -> Result<SampleBatch> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    run_batch(energy, None, cfg, n, seed)
}

/// One chain per row of `xs`, targeting `p(y|x_i) ∝ exp(-E(y) - βρ(x_i, y))`.
///
/// With `beta = 0` the chains coincide bit-for-bit with [`sample_marginal`]
/// under the same seed.
pub fn sample_conditional<E: Energy>(
    energy: &E,
    xs: &SampleBatch,
    beta: f64,
    rho: DistortionKind,
    cfg: &LangevinConfig,
    seed: u64,
) -> Result<SampleBatch> {
    cfg.validate()?;
    check_dim(energy.dim(), xs.dim)?;
    if xs.n == 0 {
        return Err(Error::EmptyBatch);
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid("beta", "must be non-negative and finite"));
    }
    let anchor = Anchor { xs, beta, rho };
    run_batch(energy, Some(anchor), cfg, xs.n, seed)
}

#[cfg(test)]
pub(crate) mod test_energies {
    use crate::energy_net::Energy;

    /// `E(y) = ½ curvature ‖y‖²`.
    pub struct Quadratic {
        pub dim: usize,
        pub curvature: f64,
    }

    impl Energy for Quadratic {
        type Workspace = ();

        fn dim(&self) -> usize {
            self.dim
        }

        fn workspace(&self) {}

        fn value_and_grad(&self, y: &[f64], _: &mut (), grad: &mut [f64]) -> f64 {
            for (g, v) in grad.iter_mut().zip(y) {
                *g = self.curvature * v;
            }
            0.5 * self.curvature * y.iter().map(|v| v * v).sum::<f64>()
        }
    }
}
