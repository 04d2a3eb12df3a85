//! Reference RD curves: closed forms for Gaussian and Laplacian sources,
//! reverse water-filling for vector Gaussians, and a discretised
//! Blahut–Arimoto solver for scalar sources.

use serde::{Deserialize, Serialize};

use crate::distortion::DistortionKind;
use crate::error::{Error, Result};
use crate::rd_estimator::RdPoint;
use crate::sources::SourceSpec;

fn check_distortion(d: f64) -> Result<()> {
    if d > 0.0 && d.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid("distortion", format!("must be positive and finite, got {d}")))
    }
}

/// `R(D) = ½ ln(1/D)` for `D ≤ 1`, else 0 (unit-variance Gaussian, squared error).
pub fn gaussian_rd(d: f64) -> Result<f64> {
    gaussian_rd_var(1.0, d)
}

pub fn gaussian_rd_var(var: f64, d: f64) -> Result<f64> {
    check_distortion(d)?;
    Ok(if d <= var { 0.5 * (var / d).ln() } else { 0.0 })
}

/// `R(D) = ln(1/D)` for `D ≤ 1`, else 0 (unit-scale Laplacian, absolute error).
pub fn laplacian_rd(d: f64) -> Result<f64> {
    laplacian_rd_scale(1.0, d)
}

pub fn laplacian_rd_scale(scale: f64, d: f64) -> Result<f64> {
    check_distortion(d)?;
    Ok(if d <= scale { (scale / d).ln() } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaterfillSolution {
    pub lambda: f64,
    pub per_dim_distortion: Vec<f64>,
    /// Nats.
    pub rate: f64,
}

const BISECTION_ITERS: usize = 200;

/// Reverse water-filling: `D_i = min(λ, σ_i²)` with `Σ D_i = D`, found by
/// bisection of λ on `[0, max σ_i²]`.
pub fn vector_gaussian_rd(eigen_vars: &[f64], d: f64) -> Result<WaterfillSolution> {
    check_distortion(d)?;
    if eigen_vars.is_empty() || eigen_vars.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::invalid("eigen_vars", "need at least one positive finite variance"));
    }
    let total: f64 = eigen_vars.iter().sum();
    let max = eigen_vars.iter().cloned().fold(0.0, f64::max);
    if d >= total {
        return Ok(WaterfillSolution {
            lambda: max,
            per_dim_distortion: eigen_vars.to_vec(),
            rate: 0.0,
        });
    }
    let filled = |lambda: f64| eigen_vars.iter().map(|&v| v.min(lambda)).sum::<f64>();
    let (mut lo, mut hi) = (0.0, max);
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..BISECTION_ITERS {
        lambda = 0.5 * (lo + hi);
        let residual = filled(lambda) - d;
        if residual.abs() <= 1e-13 {
            break;
        }
        if residual > 0.0 {
            hi = lambda;
        } else {
            lo = lambda;
        }
    }
    let per_dim: Vec<f64> = eigen_vars.iter().map(|&v| v.min(lambda)).collect();
    let rate = eigen_vars
        .iter()
        .zip(&per_dim)
        .map(|(v, di)| 0.5 * (v / di).ln())
        .sum();
    Ok(WaterfillSolution {
        lambda,
        per_dim_distortion: per_dim,
        rate,
    })
}

/// Closed-form `R(D)` for a source/distortion pair, when one exists.
pub fn reference_rate(source: &SourceSpec, rho: DistortionKind, d: f64) -> Option<f64> {
    match (source, rho) {
        (SourceSpec::ScalarGaussian { std, .. }, DistortionKind::SquaredL2) => gaussian_rd_var(std * std, d).ok(),
        (SourceSpec::ScalarLaplacian { scale }, DistortionKind::L1) => laplacian_rd_scale(*scale, d).ok(),
        (SourceSpec::VectorGaussian { .. }, DistortionKind::SquaredL2) => {
            vector_gaussian_rd(&source.eigen_vars()?, d).ok().map(|s| s.rate)
        }
        _ => None,
    }
}

/// CSV columns: distortion, rate_nats.
pub fn write_curve_csv<W: std::io::Write>(rows: &[(f64, f64)], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["distortion", "rate_nats"])?;
    for (d, r) in rows {
        out.write_record([d.to_string(), r.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// A discrete RD problem: source pmf over `x_grid`, reproduction alphabet
/// `y_grid`, and the row-major `|x| × |y|` distortion matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BaGrid {
    pub x_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
    pub px: Vec<f64>,
    pub rho_matrix: Vec<f64>,
}

/// Default grid size for scalar sources.
pub const BA_GRID_POINTS: usize = 401;
/// Half-width of the default grid, in source standard deviations.
pub const BA_GRID_SPAN_STDS: f64 = 5.0;

impl BaGrid {
    pub fn new(x_grid: Vec<f64>, y_grid: Vec<f64>, px: Vec<f64>, rho: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let rho_matrix = x_grid
            .iter()
            .flat_map(|&x| y_grid.iter().map(move |&y| (x, y)))
            .map(|(x, y)| rho(x, y))
            .collect();
        let grid = BaGrid {
            x_grid,
            y_grid,
            px,
            rho_matrix,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Uniform binary source with Hamming distortion.
    pub fn binary_hamming() -> Self {
        BaGrid::new(vec![0.0, 1.0], vec![0.0, 1.0], vec![0.5, 0.5], |x, y| {
            if x == y {
                0.0
            } else {
                1.0
            }
        })
        .expect("static grid is valid")
    }

    /// Scalar source discretised on `points` uniform nodes over ±`span_stds`
    /// standard deviations; the same nodes serve as reproduction alphabet.
    pub fn scalar(source: &SourceSpec, rho: DistortionKind, points: usize, span_stds: f64) -> Result<Self> {
        source.validate()?;
        if points < 2 {
            return Err(Error::invalid("ba.points", "need at least two grid points"));
        }
        let (center, std, density): (f64, f64, Box<dyn Fn(f64) -> f64>) = match *source {
            SourceSpec::ScalarGaussian { mean, std } => (
                mean,
                std,
                Box::new(move |x: f64| (-0.5 * ((x - mean) / std).powi(2)).exp()),
            ),
            SourceSpec::ScalarLaplacian { scale } => (
                0.0,
                std::f64::consts::SQRT_2 * scale,
                Box::new(move |x: f64| (-x.abs() / scale).exp()),
            ),
            _ => {
                return Err(Error::invalid(
                    "source",
                    "Blahut-Arimoto is only available for scalar sources",
                ))
            }
        };
        let lo = center - span_stds * std;
        let step = 2.0 * span_stds * std / (points - 1) as f64;
        let grid: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
        let weights: Vec<f64> = grid.iter().map(|&x| density(x)).collect();
        let z: f64 = weights.iter().sum();
        let px = weights.iter().map(|w| w / z).collect();
        BaGrid::new(grid.clone(), grid, px, |x, y| rho.eval(&[x], &[y]))
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_grid.is_empty() || self.y_grid.is_empty() {
            return Err(Error::invalid("ba.grid", "grids must be non-empty"));
        }
        if self.px.len() != self.x_grid.len() || self.rho_matrix.len() != self.x_grid.len() * self.y_grid.len() {
            return Err(Error::invalid("ba.grid", "inconsistent grid sizes"));
        }
        if self.px.iter().any(|p| !(*p >= 0.0)) || (self.px.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("ba.px", "must be a probability vector"));
        }
        if self.rho_matrix.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::invalid("ba.rho", "distortions must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaSolution {
    pub point: RdPoint,
    pub q: Vec<f64>,
    pub iterations: usize,
    /// Dual objective `−Σ_x p(x) ln Σ_y q(y) e^{−βρ(x,y)}` before each update.
    pub dual_trace: Vec<f64>,
}

pub const BA_DEFAULT_TOL: f64 = 1e-10;
pub const BA_DEFAULT_MAX_ITERS: usize = 100_000;

/// Blahut–Arimoto from a uniform `q`, alternating
/// `p(y|x) ∝ q(y) e^{−βρ(x,y)}` and `q(y) = Σ_x p(x) p(y|x)` until the
/// max-abs change of `q` drops below `tol`.
pub fn ba_solve(grid: &BaGrid, beta: f64, max_iters: usize, tol: f64) -> Result<BaSolution> {
    grid.validate()?;
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::invalid("beta", "must be non-negative and finite"));
    }
    let nx = grid.x_grid.len();
    let ny = grid.y_grid.len();
    // kernel rows shifted by their minimum distortion so nothing underflows
    let row_min: Vec<f64> = grid
        .rho_matrix
        .chunks_exact(ny)
        .map(|r| r.iter().cloned().fold(f64::INFINITY, f64::min))
        .collect();
    let kernel: Vec<f64> = grid
        .rho_matrix
        .chunks_exact(ny)
        .zip(&row_min)
        .flat_map(|(r, m)| r.iter().map(move |v| (-beta * (v - m)).exp()))
        .collect();

    let mut q = vec![1.0 / ny as f64; ny];
    let mut z = vec![0.0; nx];
    let mut dual_trace: Vec<f64> = Vec::new();
    let normalisers = |q: &[f64], z: &mut [f64]| -> f64 {
        let mut dual = 0.0;
        for i in 0..nx {
            let row = &kernel[i * ny..(i + 1) * ny];
            z[i] = row.iter().zip(q).map(|(k, qj)| k * qj).sum();
            if grid.px[i] > 0.0 {
                dual -= grid.px[i] * (z[i].ln() - beta * row_min[i]);
            }
        }
        dual
    };

    let mut iterations = 0;
    let mut last_change = f64::INFINITY;
    while iterations < max_iters {
        let dual = normalisers(&q, &mut z);
        if let Some(prev) = dual_trace.last() {
            debug_assert!(dual <= prev + 1e-12 * prev.abs().max(1.0), "dual increased: {prev} -> {dual}");
        }
        dual_trace.push(dual);
        let mut q_new = vec![0.0; ny];
        for i in 0..nx {
            if grid.px[i] == 0.0 {
                continue;
            }
            let w = grid.px[i] / z[i];
            let row = &kernel[i * ny..(i + 1) * ny];
            for ((qn, k), qj) in q_new.iter_mut().zip(row).zip(&q) {
                *qn += w * k * qj;
            }
        }
        last_change = q.iter().zip(&q_new).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        q = q_new;
        iterations += 1;
        if last_change < tol {
            break;
        }
    }

    // rate and distortion of the channel induced by the final q
    let dual = normalisers(&q, &mut z);
    let mut distortion = 0.0;
    let mut rate = 0.0;
    for i in 0..nx {
        if grid.px[i] == 0.0 {
            continue;
        }
        let row = &kernel[i * ny..(i + 1) * ny];
        let rho_row = &grid.rho_matrix[i * ny..(i + 1) * ny];
        for j in 0..ny {
            let p_cond = q[j] * row[j] / z[i];
            if p_cond > 0.0 {
                distortion += grid.px[i] * p_cond * rho_row[j];
                rate += grid.px[i] * p_cond * (p_cond / q[j]).ln();
            }
        }
    }
    let point = RdPoint {
        beta,
        rate,
        distortion,
        loss_hat: rate + beta * distortion,
        n_samples: nx,
        seed: 0,
    };
    debug_assert!((point.loss_hat - dual).abs() <= 1e-8 * dual.abs().max(1.0));
    if last_change >= tol {
        return Err(Error::NoConvergence {
            iterations,
            last_change,
            last: Box::new(point),
        });
    }
    Ok(BaSolution {
        point,
        q,
        iterations,
        dual_trace,
    })
}
