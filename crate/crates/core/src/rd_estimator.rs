//! Sample-based estimates of the dual objective, distortion and rate, and the
//! β sweep that turns trained models into an RD curve.
//!
//! With `x_i ~ P_X` and `y_j ~ q_θ`, all three estimates come from the same
//! `N × N` matrix of `−βρ(x_i, y_j)`:
//!
//! ```text
//! L̂ = −mean_i [ LSE_j(−βρ_ij) − ln N ]
//! D̂ =  mean_i [ Σ_j softmin_ij ρ_ij ]
//! R̂ =  L̂ − β D̂
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distortion::DistortionKind;
use crate::energy_net::{EnergyNet, MlpConfig};
use crate::error::{check_dim, Error, Result};
use crate::langevin::{sample_marginal, LangevinConfig};
use crate::rng::{child_seed, stream};
use crate::sources::{SampleBatch, SourceSpec};
use crate::trainer::{train_net, TrainConfig};

/// Rate estimates below this are noise around zero.
pub const NEGATIVE_RATE_TOLERANCE: f64 = -0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RdPoint {
    pub beta: f64,
    /// Nats.
    pub rate: f64,
    pub distortion: f64,
    pub loss_hat: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl RdPoint {
    /// Rate for reports: negative Monte Carlo noise is clamped to zero.
    pub fn reported_rate(&self) -> f64 {
        self.rate.max(0.0)
    }

    /// True when the raw rate is more negative than Monte Carlo noise explains.
    pub fn rate_suspicious(&self) -> bool {
        self.rate < NEGATIVE_RATE_TOLERANCE
    }

    pub fn rate_bits(&self) -> f64 {
        self.rate / std::f64::consts::LN_2
    }
}

fn check_batches(x: &SampleBatch, y: &SampleBatch) -> Result<()> {
    if x.n == 0 || y.n == 0 {
        return Err(Error::EmptyBatch);
    }
    check_dim(x.dim, y.dim)
}

/// Per-row `(LSE_j(−βρ_ij) − ln N_y, softmin-weighted ρ)`.
fn row_terms(x: &[f64], y: &SampleBatch, beta: f64, rho: DistortionKind, buf: &mut Vec<f64>) -> (f64, f64) {
    buf.clear();
    buf.extend(y.rows().map(|yj| rho.eval(x, yj)));
    let mut max = f64::NEG_INFINITY;
    for &r in buf.iter() {
        max = max.max(-beta * r);
    }
    let mut s = 0.0;
    let mut sd = 0.0;
    for &r in buf.iter() {
        let w = (-beta * r - max).exp();
        s += w;
        sd += w * r;
    }
    (max + s.ln() - (y.n as f64).ln(), sd / s)
}

/// Mean over rows of both per-row terms; rows are reduced in index order.
fn terms(x: &SampleBatch, y: &SampleBatch, beta: f64, rho: DistortionKind) -> Result<(f64, f64)> {
    check_batches(x, y)?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid("beta", "must be non-negative and finite"));
    }
    let per_row: Vec<(f64, f64)> = x
        .points
        .par_chunks(x.dim)
        .map_init(Vec::new, |buf, xi| row_terms(xi, y, beta, rho, buf))
        .collect();
    let (mut lse, mut dist) = (0.0, 0.0);
    for (a, b) in per_row {
        lse += a;
        dist += b;
    }
    Ok((-lse / x.n as f64, dist / x.n as f64))
}

/// `L̂ = −(1/N) Σ_i log((1/N) Σ_j exp(−βρ(x_i, y_j)))`, evaluated with
/// log-sum-exp.
pub fn estimate_loss(x: &SampleBatch, y: &SampleBatch, beta: f64, rho: DistortionKind) -> Result<f64> {
    terms(x, y, beta, rho).map(|t| t.0)
}

pub fn estimate_distortion(x: &SampleBatch, y: &SampleBatch, beta: f64, rho: DistortionKind) -> Result<f64> {
    terms(x, y, beta, rho).map(|t| t.1)
}

pub fn estimate_rate(loss_hat: f64, beta: f64, distortion: f64) -> f64 {
    loss_hat - beta * distortion
}

/// All three estimates from one pass over the pair matrix.
pub fn estimate_point(
    x: &SampleBatch,
    y: &SampleBatch,
    beta: f64,
    rho: DistortionKind,
    seed: u64,
) -> Result<RdPoint> {
    let (loss_hat, distortion) = terms(x, y, beta, rho)?;
    Ok(RdPoint {
        beta,
        rate: estimate_rate(loss_hat, beta, distortion),
        distortion,
        loss_hat,
        n_samples: x.n,
        seed,
    })
}

/// Fresh source samples and marginal model samples, then [`estimate_point`].
pub fn evaluate_model(
    net: &EnergyNet,
    source: &SourceSpec,
    beta: f64,
    rho: DistortionKind,
    langevin: &LangevinConfig,
    eval_n: usize,
    seed: u64,
) -> Result<RdPoint> {
    let xs = source.sample(eval_n, child_seed(seed, stream::EVAL_SOURCE))?;
    let ys = sample_marginal(net, langevin, eval_n, child_seed(seed, stream::EVAL_MARGINAL))?;
    estimate_point(&xs, &ys, beta, rho, seed)
}

#[derive(Clone, Debug)]
pub struct SweepFailure {
    pub beta: f64,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct SweepModel {
    pub beta: f64,
    pub net: EnergyNet,
    pub history: Vec<crate::trainer::IterRecord>,
}

#[derive(Clone, Debug, Default)]
pub struct Sweep {
    /// Successful points, sorted by distortion.
    pub points: Vec<RdPoint>,
    pub failures: Vec<SweepFailure>,
    pub models: Vec<SweepModel>,
}

#[derive(Clone, Debug)]
pub struct SweepPlan<'a> {
    pub source: &'a SourceSpec,
    pub net: &'a MlpConfig,
    pub betas: &'a [f64],
    pub train: &'a TrainConfig,
    pub eval_n: usize,
    /// Evaluation budget; the training chains' config when `None`.
    pub eval_langevin: Option<LangevinConfig>,
    pub seed: u64,
}

/// Trains one freshly initialised model per β and evaluates each on
/// `eval_n` fresh samples. Training for β number `k` uses seed
/// `child_seed(train.seed, k)`; evaluation uses streams of `seed` that
/// training never touches.
pub fn rd_sweep(plan: &SweepPlan<'_>) -> Result<Sweep> {
    rd_sweep_with(plan, |_, _| {})
}

/// [`rd_sweep`] with a callback after every β (point or error).
pub fn rd_sweep_with(
    plan: &SweepPlan<'_>,
    mut on_beta: impl FnMut(f64, std::result::Result<&RdPoint, &Error>),
) -> Result<Sweep> {
    if plan.betas.is_empty() {
        return Err(Error::invalid("betas", "need at least one value"));
    }
    if let Some(b) = plan.betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(Error::invalid("betas", format!("{b} is not positive")));
    }
    if plan.eval_n == 0 {
        return Err(Error::invalid("eval_n", "must be at least 1"));
    }
    plan.source.validate()?;
    plan.train.validate()?;
    let mut sweep = Sweep::default();
    for (k, &beta) in plan.betas.iter().enumerate() {
        let cfg = TrainConfig {
            beta,
            seed: child_seed(plan.train.seed, k as u64),
            ..plan.train.clone()
        };
        let eval_seed = child_seed(plan.seed, k as u64);
        let outcome = EnergyNet::new(plan.net.clone()).and_then(|mut net| {
            let run = train_net(&mut net, plan.source, &cfg)?;
            let lc = plan.eval_langevin.unwrap_or(cfg.langevin);
            let point = evaluate_model(&net, plan.source, beta, cfg.distortion, &lc, plan.eval_n, eval_seed)?;
            Ok((point, net, run.history))
        });
        match outcome {
            Ok((point, net, history)) => {
                on_beta(beta, Ok(&point));
                sweep.points.push(point);
                sweep.models.push(SweepModel { beta, net, history });
            }
            Err(e) => {
                on_beta(beta, Err(&e));
                sweep.failures.push(SweepFailure {
                    beta,
                    message: e.to_string(),
                });
            }
        }
    }
    sweep.points.sort_by(|a, b| a.distortion.total_cmp(&b.distortion));
    Ok(sweep)
}

/// CSV columns: beta, rate_nats, distortion, loss_hat, n_samples, seed,
/// oracle_rate_nats (empty when no closed form applies).
pub fn write_rd_points_csv<W: std::io::Write>(
    points: &[RdPoint],
    oracle: impl Fn(f64) -> Option<f64>,
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "beta",
        "rate_nats",
        "distortion",
        "loss_hat",
        "n_samples",
        "seed",
        "oracle_rate_nats",
    ])?;
    for p in points {
        out.write_record([
            p.beta.to_string(),
            p.rate.to_string(),
            p.distortion.to_string(),
            p.loss_hat.to_string(),
            p.n_samples.to_string(),
            p.seed.to_string(),
            oracle(p.distortion).map(|r| r.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub n: usize,
    pub mean_loss: f64,
    pub std_loss: f64,
    /// Set when a single repeat makes the spread meaningless.
    pub degenerate: bool,
}

#[derive(Clone, Debug)]
pub struct ProbePlan<'a> {
    pub source: &'a SourceSpec,
    pub beta: f64,
    pub rho: DistortionKind,
    pub langevin: LangevinConfig,
    pub n_list: &'a [usize],
    pub repeats: usize,
    pub seed: u64,
}

/// Spread of `L̂_N` over independent sample sets for each `N` in `n_list`.
pub fn convergence_probe(net: &EnergyNet, plan: &ProbePlan<'_>) -> Result<Vec<ProbeRow>> {
    if plan.repeats == 0 {
        return Err(Error::invalid("repeats", "must be at least 1"));
    }
    if plan.n_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("n_list", "must be ascending"));
    }
    plan.n_list
        .iter()
        .map(|&n| {
            let base = child_seed(plan.seed, n as u64);
            let losses = (0..plan.repeats)
                .map(|r| {
                    let s = child_seed(base, r as u64);
                    let xs = plan.source.sample(n, child_seed(s, stream::EVAL_SOURCE))?;
                    let ys = sample_marginal(net, &plan.langevin, n, child_seed(s, stream::EVAL_MARGINAL))?;
                    estimate_loss(&xs, &ys, plan.beta, plan.rho)
                })
                .collect::<Result<Vec<f64>>>()?;
            let k = losses.len() as f64;
            let mean = losses.iter().sum::<f64>() / k;
            let std = if losses.len() > 1 {
                (losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
            } else {
                0.0
            };
            Ok(ProbeRow {
                n,
                mean_loss: mean,
                std_loss: std,
                degenerate: losses.len() == 1,
            })
        })
        .collect()
}

pub fn write_probe_csv<W: std::io::Write>(rows: &[ProbeRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["n", "mean_loss", "std_loss", "degenerate"])?;
    for r in rows {
        out.write_record([
            r.n.to_string(),
            r.mean_loss.to_string(),
            r.std_loss.to_string(),
            r.degenerate.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use DistortionKind::{SquaredL2, L1};

    fn batch(rows: &[f64], dim: usize) -> SampleBatch {
        SampleBatch::from_rows(rows.to_vec(), dim, 0).unwrap()
    }

    #[test]
    fn beta_zero() {
        let x = batch(&[0.0, 1.0, 2.5, -1.0], 1);
        let y = batch(&[0.5, -2.0, 3.0, 1.0], 1);
        assert_eq!(estimate_loss(&x, &y, 0.0, SquaredL2).unwrap(), 0.0);
        let mean_all: f64 = x
            .rows()
            .flat_map(|a| y.rows().map(move |b| SquaredL2.eval(a, b)))
            .sum::<f64>()
            / 16.0;
        assert!((estimate_distortion(&x, &y, 0.0, SquaredL2).unwrap() - mean_all).abs() < 1e-12);
        let p = estimate_point(&x, &y, 0.0, SquaredL2, 0).unwrap();
        assert_eq!(p.rate, 0.0);
    }

    #[test]
    fn single_pair() {
        let x = batch(&[0.3, -0.2], 2);
        let y = batch(&[1.0, 0.4], 2);
        let rho = SquaredL2.eval(x.row(0), y.row(0));
        let p = estimate_point(&x, &y, 2.5, SquaredL2, 0).unwrap();
        assert!((p.loss_hat - 2.5 * rho).abs() < 1e-14);
        assert_eq!(p.distortion, rho);
        assert!(p.rate.abs() < 1e-14);
    }

    #[test]
    fn lse_survives_huge_beta() {
        // ρ = 4 and 9 for the two reproduction points
        let x = batch(&[0.0], 1);
        let y = batch(&[2.0, 3.0], 1);
        let l = estimate_loss(&x, &y, 1000.0, SquaredL2).unwrap();
        assert!((l - (4000.0 + std::f64::consts::LN_2)).abs() < 1e-9, "{l}");

        let x = batch(&[0.0, 10.0, -31.0], 1);
        let y = batch(&[31.0, -1.0, 5.0], 1);
        let l = estimate_loss(&x, &y, 1e6, L1).unwrap();
        assert!(l.is_finite());
        assert!(estimate_distortion(&x, &y, 1e6, SquaredL2).unwrap().is_finite());
    }

    #[test]
    fn huge_beta_approaches_nearest_neighbour() {
        let x = batch(&[0.0, 0.0, 1.0, 1.0, -2.0, 0.5], 2);
        let y = batch(&[0.1, 0.0, 1.0, 1.5, -1.0, 1.0], 2);
        let brute: f64 = x
            .rows()
            .map(|a| y.rows().map(|b| SquaredL2.eval(a, b)).fold(f64::INFINITY, f64::min))
            .sum::<f64>()
            / 3.0;
        let d = estimate_distortion(&x, &y, 1e6, SquaredL2).unwrap();
        assert!((d - brute).abs() < 1e-9, "{d} vs {brute}");
    }

    #[test]
    fn empty_batches() {
        let e = SampleBatch::from_rows(vec![], 1, 0).unwrap();
        let y = batch(&[1.0], 1);
        assert!(matches!(estimate_loss(&e, &y, 1.0, L1), Err(Error::EmptyBatch)));
        assert!(matches!(estimate_distortion(&y, &e, 1.0, L1), Err(Error::EmptyBatch)));
    }

    #[test]
    fn rate_helpers() {
        assert_eq!(estimate_rate(3.0, 2.0, 0.5), 2.0);
        let p = RdPoint { beta: 1.0, rate: -0.01, distortion: 1.0, loss_hat: 0.99, n_samples: 1, seed: 0 };
        assert_eq!(p.reported_rate(), 0.0);
        assert!(!p.rate_suspicious());
    }

    #[test]
    fn sweep_rejects_bad_betas() {
        let source = SourceSpec::ScalarGaussian { mean: 0.0, std: 1.0 };
        let net = MlpConfig::new(1).with_hidden(&[4]);
        let train = TrainConfig::default();
        for betas in [&[][..], &[1.0, -2.0][..]] {
            let plan = SweepPlan { source: &source, net: &net, betas, train: &train, eval_n: 10, eval_langevin: None, seed: 0 };
            assert!(matches!(rd_sweep(&plan), Err(Error::InvalidConfig { field: "betas", .. })));
        }
    }

    #[test]
    fn sweep_records_failures() {
        let source = SourceSpec::ScalarGaussian { mean: 0.0, std: 1.0 };
        let net = MlpConfig::new(1).with_hidden(&[4]);
        let train = TrainConfig {
            batch_size: 8,
            iterations: 2,
            langevin: LangevinConfig::new(20, 1.0),
            stop_rule: None,
            ..TrainConfig::default()
        };
        // β = 1e4 with ε = 1 diverges; β = 0.1 does not
        let plan = SweepPlan { source: &source, net: &net, betas: &[0.1, 1e4], train: &train, eval_n: 16, eval_langevin: Some(LangevinConfig::new(5, 0.1)), seed: 0 };
        let sweep = rd_sweep(&plan).unwrap();
        assert_eq!(sweep.points.len(), 1);
        assert_eq!(sweep.failures.len(), 1);
        assert_eq!(sweep.failures[0].beta, 1e4);
        assert!(sweep.failures[0].message.contains("diverged"));
    }

    #[test]
    fn probe_with_one_repeat_is_degenerate() {
        let source = SourceSpec::ScalarGaussian { mean: 0.0, std: 1.0 };
        let net = EnergyNet::new(MlpConfig::new(1).with_hidden(&[4])).unwrap();
        let plan = ProbePlan { source: &source, beta: 1.0, rho: SquaredL2, langevin: LangevinConfig::new(5, 0.1), n_list: &[10, 20], repeats: 1, seed: 4 };
        let rows = convergence_probe(&net, &plan).unwrap();
        assert!(rows.iter().all(|r| r.degenerate && r.std_loss == 0.0));
        assert_eq!(rows, convergence_probe(&net, &plan).unwrap());
        let bad = ProbePlan { n_list: &[20, 10], ..plan };
        assert!(convergence_probe(&net, &bad).is_err());
    }

    fn pair_batches() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
        (1usize..12).prop_flat_map(|n| {
            (
                proptest::collection::vec(-5.0f64..5.0, n),
                proptest::collection::vec(-5.0f64..5.0, n),
                0.0f64..50.0,
            )
        })
    }

    proptest! {
        #[test]
        fn distortion_within_pair_range((xs, ys, beta) in pair_batches()) {
            let x = batch(&xs, 1);
            let y = batch(&ys, 1);
            for rho in [SquaredL2, L1] {
                let all: Vec<f64> = xs.iter().flat_map(|a| ys.iter().map(move |b| rho.eval(&[*a], &[*b]))).collect();
                let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let d = estimate_distortion(&x, &y, beta, rho).unwrap();
                prop_assert!(d >= lo - 1e-12 && d <= hi + 1e-12);
                let p = estimate_point(&x, &y, beta, rho, 0).unwrap();
                prop_assert!((p.loss_hat - (p.rate + beta * p.distortion)).abs() <= 1e-12);
            }
        }

        #[test]
        fn permutation_invariance((xs, ys, beta) in pair_batches(), shift in 0usize..12) {
            let n = xs.len();
            let rot = |v: &[f64]| -> Vec<f64> { (0..n).map(|i| v[(i + shift) % n]).collect() };
            let a = estimate_point(&batch(&xs, 1), &batch(&ys, 1), beta, SquaredL2, 0).unwrap();
            let b = estimate_point(&batch(&rot(&xs), 1), &batch(&rot(&ys), 1), beta, SquaredL2, 0).unwrap();
            prop_assert!((a.loss_hat - b.loss_hat).abs() <= 1e-12 * a.loss_hat.abs().max(1.0));
            prop_assert!((a.distortion - b.distortion).abs() <= 1e-12 * a.distortion.max(1.0));
        }
    }
}
