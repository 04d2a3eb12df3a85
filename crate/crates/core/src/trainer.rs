//! Training loop for the energy `E_θ`.
//!
//! Each iteration draws a source batch, runs one conditional chain per source
//! point and an equally sized batch of marginal chains, and descends
//!
//! ```text
//! ∇_θ L ≈ mean_i ∇_θ E(y_i | cond) − mean_j ∇_θ E(y'_j | marg)
//! ```

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortion::DistortionKind;
use crate::energy_net::{Energy, EnergyNet, MlpConfig, ParamVector};
use crate::error::{check_dim, Error, Result};
use crate::langevin::{sample_conditional, sample_marginal, LangevinConfig};
use crate::rng::{child_seed, stream};
use crate::sources::{SampleBatch, SourceSpec};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam {
        #[serde(default = "default_b1")]
        b1: f64,
        #[serde(default = "default_b2")]
        b2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_b1() -> f64 {
    0.9
}
fn default_b2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            b1: default_b1(),
            b2: default_b2(),
            eps: default_adam_eps(),
        }
    }
}

/// Stop once `|minus_energy_gap| < tolerance` for `patience` consecutive
/// iterations, counted only after `min_iterations`. The gap of a freshly
/// initialised, nearly flat energy is already close to zero, hence the
/// warm-up.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    pub tolerance: f64,
    pub patience: usize,
    pub min_iterations: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        StopRule {
            tolerance: 0.01,
            patience: 50,
            min_iterations: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub langevin: LangevinConfig,
    pub seed: u64,
    pub distortion: DistortionKind,
    /// Rescale the gradient to at most this norm.
    pub clip_grad_norm: Option<f64>,
    pub stop_rule: Option<StopRule>,
    /// Record elapsed time in the history; off keeps histories reproducible.
    pub record_wallclock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 1.0,
            batch_size: 256,
            iterations: 2000,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            langevin: LangevinConfig::default(),
            seed: 0,
            distortion: DistortionKind::SquaredL2,
            clip_grad_norm: None,
            stop_rule: Some(StopRule::default()),
            record_wallclock: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid("train.beta", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("train.batch_size", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("train.learning_rate", "must be non-negative and finite"));
        }
        if let Some(c) = self.clip_grad_norm {
            if !(c > 0.0) {
                return Err(Error::invalid("train.clip_grad_norm", "must be positive"));
            }
        }
        if let Optimizer::Adam { b1, b2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(eps > 0.0) {
                return Err(Error::invalid("train.optimizer", "adam needs b1, b2 in [0, 1) and eps > 0"));
            }
        }
        self.langevin.validate()
    }
}

/// Diagnostics of one training iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub grad_norm: f64,
    /// `mean E(conditional samples) − mean E(marginal samples)`; zero at a
    /// stationary point of the objective.
    pub minus_energy_gap: f64,
    pub mean_energy_conditional: f64,
    pub mean_energy_marginal: f64,
    pub wallclock_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub final_params: ParamVector,
    pub history: Vec<IterRecord>,
    pub stopped_early: bool,
}

const CHUNK: usize = 32;

/// Mean of `∇_θ E` and of `E` over the rows of `batch`. Chunks are summed
/// in a fixed order so the result does not depend on thread scheduling.
fn mean_param_grad(net: &EnergyNet, batch: &SampleBatch) -> (Vec<f64>, f64) {
    let p = net.params().len();
    let partials: Vec<(Vec<f64>, f64)> = batch
        .points
        .par_chunks(CHUNK * batch.dim)
        .map(|rows| {
            let mut ws = net.workspace();
            let mut acc = vec![0.0; p];
            let energy = net.accumulate_grad_params_batch(rows, &mut ws, 1.0, &mut acc);
            (acc, energy)
        })
        .collect();
    let mut total = vec![0.0; p];
    let mut energy = 0.0;
    for (acc, e) in partials {
        total.iter_mut().zip(&acc).for_each(|(t, a)| *t += a);
        energy += e;
    }
    let inv = 1.0 / batch.n as f64;
    total.iter_mut().for_each(|t| *t *= inv);
    (total, energy * inv)
}

/// Gradient estimate together with the mean energies of both sample sets.
pub fn estimate_grad_with_energies(
    net: &EnergyNet,
    y_cond: &SampleBatch,
    y_marg: &SampleBatch,
) -> Result<(ParamVector, f64, f64)> {
    if y_cond.n != y_marg.n {
        return Err(Error::BatchMismatch {
            left: y_cond.n,
            right: y_marg.n,
        });
    }
    if y_cond.n == 0 {
        return Err(Error::EmptyBatch);
    }
    check_dim(net.input_dim(), y_cond.dim)?;
    check_dim(net.input_dim(), y_marg.dim)?;
    let (gc, ec) = mean_param_grad(net, y_cond);
    let (gm, em) = mean_param_grad(net, y_marg);
    let g = gc.iter().zip(&gm).map(|(a, b)| a - b).collect();
    Ok((ParamVector(g), ec, em))
}

/// `mean ∇_θ E(y_cond) − mean ∇_θ E(y_marg)`.
pub fn estimate_grad(net: &EnergyNet, y_cond: &SampleBatch, y_marg: &SampleBatch) -> Result<ParamVector> {
    estimate_grad_with_energies(net, y_cond, y_marg).map(|(g, _, _)| g)
}

/// Optimizer moments carried between iterations.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    optimizer: Optimizer,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, n_params: usize) -> Self {
        OptimizerState {
            optimizer,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// Returns the updated parameters `θ'` for gradient `g` and rate `lr`.
    pub fn apply(&mut self, params: &ParamVector, g: &ParamVector, lr: f64) -> ParamVector {
        self.t += 1;
        let theta = params.as_slice();
        let g = g.as_slice();
        let out = match self.optimizer {
            Optimizer::Sgd => theta.iter().zip(g).map(|(p, gi)| p - lr * gi).collect(),
            Optimizer::Adam { b1, b2, eps } => {
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                theta
                    .iter()
                    .zip(g)
                    .zip(self.m.iter_mut().zip(self.v.iter_mut()))
                    .map(|((p, gi), (m, v))| {
                        *m = b1 * *m + (1.0 - b1) * gi;
                        *v = b2 * *v + (1.0 - b2) * gi * gi;
                        p - lr * (*m / c1) / ((*v / c2).sqrt() + eps)
                    })
                    .collect()
            }
        };
        ParamVector(out)
    }
}

/// One iteration: sample, estimate the gradient, update `net` in place.
pub fn train_step(
    net: &mut EnergyNet,
    opt: &mut OptimizerState,
    source: &SourceSpec,
    cfg: &TrainConfig,
    iteration: usize,
    iter_seed: u64,
) -> Result<IterRecord> {
    let xs = source.sample(cfg.batch_size, child_seed(iter_seed, stream::SOURCE))?;
    let y_cond = sample_conditional(
        &*net,
        &xs,
        cfg.beta,
        cfg.distortion,
        &cfg.langevin,
        child_seed(iter_seed, stream::CONDITIONAL),
    )?;
    let y_marg = sample_marginal(
        &*net,
        &cfg.langevin,
        cfg.batch_size,
        child_seed(iter_seed, stream::MARGINAL),
    )?;
    let (mut g, ec, em) = estimate_grad_with_energies(net, &y_cond, &y_marg)?;
    if !g.is_finite() {
        return Err(Error::NonFiniteGradient { iteration });
    }
    let grad_norm = g.norm();
    if let Some(max) = cfg.clip_grad_norm {
        if grad_norm > max {
            let s = max / grad_norm;
            g.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
    }
    let updated = opt.apply(net.params(), &g, cfg.learning_rate);
    if !updated.is_finite() {
        return Err(Error::NonFiniteGradient { iteration });
    }
    net.set_params(updated)?;
    Ok(IterRecord {
        iteration,
        grad_norm,
        minus_energy_gap: ec - em,
        mean_energy_conditional: ec,
        mean_energy_marginal: em,
        wallclock_ms: 0.0,
    })
}

/// Runs the training loop on an existing net; `net` holds the final parameters.
pub fn train_net(net: &mut EnergyNet, source: &SourceSpec, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    source.validate()?;
    check_dim(source.dim(), net.input_dim())?;
    let mut opt = OptimizerState::new(cfg.optimizer, net.params().len());
    let start = Instant::now();
    let mut history = Vec::with_capacity(cfg.iterations);
    let mut calm = 0;
    let mut stopped_early = false;
    let train_seed = child_seed(cfg.seed, stream::TRAIN);
    for it in 0..cfg.iterations {
        let mut rec = train_step(net, &mut opt, source, cfg, it, child_seed(train_seed, it as u64))?;
        if cfg.record_wallclock {
            rec.wallclock_ms = start.elapsed().as_secs_f64() * 1e3;
        }
        history.push(rec);
        if let Some(rule) = cfg.stop_rule {
            let counted = it + 1 > rule.min_iterations;
            calm = if counted && rec.minus_energy_gap.abs() < rule.tolerance { calm + 1 } else { 0 };
            if calm >= rule.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainRun {
        final_params: net.params().clone(),
        history,
        stopped_early,
    })
}

/// Fresh net from `net_cfg`, trained on `source`.
pub fn train(source: &SourceSpec, net_cfg: &MlpConfig, cfg: &TrainConfig) -> Result<TrainRun> {
    let mut net = EnergyNet::new(net_cfg.clone())?;
    train_net(&mut net, source, cfg)
}

/// CSV columns: iteration, grad_norm, minus_energy_gap, wallclock_ms.
pub fn write_history_csv<W: std::io::Write>(history: &[IterRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["iteration", "grad_norm", "minus_energy_gap", "wallclock_ms"])?;
    for r in history {
        out.write_record([
            r.iteration.to_string(),
            r.grad_norm.to_string(),
            r.minus_energy_gap.to_string(),
            r.wallclock_ms.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[f64], dim: usize) -> SampleBatch {
        SampleBatch::from_rows(rows.to_vec(), dim, 0).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            iterations: 5,
            learning_rate: 1e-2,
            langevin: LangevinConfig::new(10, 0.1),
            seed: 3,
            stop_rule: None,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn identical_batches_give_zero_gradient() {
        let net = EnergyNet::new(MlpConfig::new(2).with_hidden(&[5, 5]).with_seed(1)).unwrap();
        let ys = batch(&[0.1, 0.2, -1.0, 0.5, 2.0, -0.3], 2);
        let g = estimate_grad(&net, &ys, &ys).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_gradient_is_mean_difference() {
        let net = EnergyNet::affine(&[0.7, -1.3], 0.4).unwrap();
        let yc = batch(&[1.0, 2.0, 3.0, 4.0], 2);
        let ym = batch(&[0.0, 1.0, -1.0, 5.0], 2);
        let g = estimate_grad(&net, &yc, &ym).unwrap();
        // means: cond (2, 3), marg (-0.5, 3)
        assert_eq!(g.as_slice(), &[2.5, 0.0, 0.0]);
    }

    #[test]
    fn batch_mismatch_is_an_error() {
        let net = EnergyNet::affine(&[1.0], 0.0).unwrap();
        let err = estimate_grad(&net, &batch(&[1.0, 2.0], 1), &batch(&[1.0], 1)).unwrap_err();
        assert!(matches!(err, Error::BatchMismatch { left: 2, right: 1 }));
    }

    #[test]
    fn sgd_update_by_hand() {
        let mut opt = OptimizerState::new(Optimizer::Sgd, 3);
        let theta = ParamVector(vec![1.0, -2.0, 0.5]);
        let g = ParamVector(vec![0.5, 1.0, -4.0]);
        let out = opt.apply(&theta, &g, 0.1);
        for (got, want) in out.as_slice().iter().zip([0.95, -2.1, 0.9]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = OptimizerState::new(Optimizer::default(), 2);
        let out = opt.apply(&ParamVector(vec![0.0, 0.0]), &ParamVector(vec![3.0, -0.01]), 0.01);
        assert!((out.as_slice()[0] + 0.01).abs() < 1e-9);
        assert!((out.as_slice()[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let source = SourceSpec::ScalarGaussian { mean: 0.0, std: 1.0 };
        let net_cfg = MlpConfig::new(1).with_hidden(&[4]).with_seed(2);
        for optimizer in [Optimizer::Sgd, Optimizer::default()] {
            let cfg = TrainConfig {
                learning_rate: 0.0,
                optimizer,
                ..small_cfg()
            };
            let run = train(&source, &net_cfg, &cfg).unwrap();
            assert_eq!(&run.final_params, EnergyNet::new(net_cfg.clone()).unwrap().params());
        }
    }

    #[test]
    fn zero_iterations() {
        let source = SourceSpec::ScalarGaussian { mean: 0.0, std: 1.0 };
        let net_cfg = MlpConfig::new(1).with_hidden(&[4]).with_seed(2);
        let run = train(&source, &net_cfg, &TrainConfig { iterations: 0, ..small_cfg() }).unwrap();
        assert!(run.history.is_empty());
        assert_eq!(&run.final_params, EnergyNet::new(net_cfg).unwrap().params());
    }

    #[test]
    fn training_is_deterministic() {
        let source = crate::sources::make_vector_gaussian(2, 1).unwrap();
        let net_cfg = MlpConfig::new(2).with_hidden(&[8, 8]).with_seed(5);
        let a = train(&source, &net_cfg, &small_cfg()).unwrap();
        let b = train(&source, &net_cfg, &small_cfg()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.history.len(), 5);
        assert!(a.history.iter().all(|r| r.grad_norm.is_finite() && r.minus_energy_gap.is_finite()));
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_history_csv(&a.history, &mut x).unwrap();
        write_history_csv(&b.history, &mut y).unwrap();
        assert_eq!(x, y);
        assert!(String::from_utf8(x).unwrap().starts_with("iteration,grad_norm,minus_energy_gap,wallclock_ms\n"));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let source = crate::sources::make_paper_gmm();
        let net_cfg = MlpConfig::new(1).with_hidden(&[4]);
        assert!(matches!(
            train(&source, &net_cfg, &small_cfg()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn divergence_propagates() {
        let source = SourceSpec::ScalarGaussian { mean: 0.0, std: 1.0 };
        let net_cfg = MlpConfig::new(1).with_hidden(&[4]);
        // a step this large makes the β-term alone explode
        let cfg = TrainConfig {
            beta: 1e4,
            langevin: LangevinConfig::new(50, 1.0),
            ..small_cfg()
        };
        assert!(matches!(train(&source, &net_cfg, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            TrainConfig { beta: 0.0, ..small_cfg() },
            TrainConfig { batch_size: 0, ..small_cfg() },
            TrainConfig { learning_rate: f64::NAN, ..small_cfg() },
            TrainConfig { langevin: LangevinConfig::new(0, 0.1), ..small_cfg() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn stop_rule_waits_for_warm_up() {
        let src = SourceSpec::ScalarGaussian { mean: 0.0, std: 1.0 };
        let cfg = TrainConfig {
            iterations: 100,
            batch_size: 8,
            learning_rate: 0.0,
            langevin: LangevinConfig::new(2, 0.1),
            stop_rule: Some(StopRule {
                tolerance: 0.01,
                patience: 3,
                min_iterations: 5,
            }),
            ..TrainConfig::default()
        };
        // a zero energy has an exactly zero gap from the first iteration
        let mut net = EnergyNet::affine(&[0.0], 0.0).unwrap();
        let run = train_net(&mut net, &src, &cfg).unwrap();
        assert!(run.stopped_early);
        assert_eq!(run.history.len(), 8);
        let run = train_net(&mut net, &src, &TrainConfig { stop_rule: None, ..cfg }).unwrap();
        assert!(!run.stopped_early);
        assert_eq!(run.history.len(), 100);
    }
}
