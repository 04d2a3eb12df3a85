//! Source distributions `P_X` with seeded samplers.

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::distortion::DistortionKind;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    ScalarGaussian {
        mean: f64,
        std: f64,
    },
    /// Zero-mean Laplace density `exp(-|x|/scale) / (2 scale)`.
    ScalarLaplacian {
        scale: f64,
    },
    /// `N(0, U diag(eigen_stds²) Uᵀ)` with a Haar-random `U` drawn from `basis_seed`.
    VectorGaussian {
        dim: usize,
        eigen_stds: Vec<f64>,
        basis_seed: u64,
    },
    /// Isotropic 2-D components `N(mean_k, component_std² I)`.
    GaussianMixture {
        means: Vec<[f64; 2]>,
        component_std: f64,
        weights: Vec<f64>,
    },
}

/// Standard deviations `2^(-i/10)`, `i = 1..=d`.
pub fn paper_eigen_stds(d: usize) -> Vec<f64> {
    (1..=d).map(|i| 2f64.powf(-(i as f64) / 10.0)).collect()
}

pub fn make_vector_gaussian(d: usize, basis_seed: u64) -> Result<SourceSpec> {
    if d == 0 {
        return Err(Error::invalid("source.dim", "must be at least 1"));
    }
    Ok(SourceSpec::VectorGaussian {
        dim: d,
        eigen_stds: paper_eigen_stds(d),
        basis_seed,
    })
}

/// Three unit-variance components with equal weights, means on a circle of
/// radius 6 at angles 0°, 120° and 240°.
pub fn make_paper_gmm() -> SourceSpec {
    let means = (0..3)
        .map(|k| {
            let angle = 2.0 * std::f64::consts::PI * k as f64 / 3.0;
            [6.0 * angle.cos(), 6.0 * angle.sin()]
        })
        .collect();
    SourceSpec::GaussianMixture {
        means,
        component_std: 1.0,
        weights: vec![1.0 / 3.0; 3],
    }
}

/// Haar-distributed `d × d` orthogonal matrix: Householder QR of a seeded
/// Gaussian matrix with the signs of `diag(R)` folded into `Q`.
pub fn random_orthogonal(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

impl SourceSpec {
    pub fn dim(&self) -> usize {
        match self {
            SourceSpec::ScalarGaussian { .. } | SourceSpec::ScalarLaplacian { .. } => 1,
            SourceSpec::VectorGaussian { dim, .. } => *dim,
            SourceSpec::GaussianMixture { .. } => 2,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SourceSpec::ScalarGaussian { .. } => "scalar_gaussian",
            SourceSpec::ScalarLaplacian { .. } => "scalar_laplacian",
            SourceSpec::VectorGaussian { .. } => "vector_gaussian",
            SourceSpec::GaussianMixture { .. } => "gaussian_mixture",
        }
    }

    /// The distortion used with this source in the reference experiments.
    pub fn default_distortion(&self) -> DistortionKind {
        match self {
            SourceSpec::ScalarLaplacian { .. } => DistortionKind::L1,
            _ => DistortionKind::SquaredL2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SourceSpec::ScalarGaussian { mean, std } => {
                if !mean.is_finite() {
                    return Err(Error::invalid("source.mean", "must be finite"));
                }
                positive("source.std", *std)
            }
            SourceSpec::ScalarLaplacian { scale } => positive("source.scale", *scale),
            SourceSpec::VectorGaussian { dim, eigen_stds, .. } => {
                if *dim == 0 {
                    return Err(Error::invalid("source.dim", "must be at least 1"));
                }
                if eigen_stds.len() != *dim {
                    return Err(Error::invalid(
                        "source.eigen_stds",
                        format!("expected {dim} entries, got {}", eigen_stds.len()),
                    ));
                }
                eigen_stds
                    .iter()
                    .try_for_each(|&s| positive("source.eigen_stds", s))
            }
            SourceSpec::GaussianMixture {
                means,
                component_std,
                weights,
            } => {
                positive("source.component_std", *component_std)?;
                if means.is_empty() || means.len() != weights.len() {
                    return Err(Error::invalid(
                        "source.weights",
                        "need one weight per mean and at least one component",
                    ));
                }
                if means.iter().flatten().any(|m| !m.is_finite()) {
                    return Err(Error::invalid("source.means", "must be finite"));
                }
                if weights.iter().any(|&w| !(w >= 0.0)) {
                    return Err(Error::invalid("source.weights", "must be non-negative"));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::invalid("source.weights", format!("sum to {total}, not 1")));
                }
                Ok(())
            }
        }
    }

    /// Eigenvalues of the covariance, for Gaussian sources.
    pub fn eigen_vars(&self) -> Option<Vec<f64>> {
        match self {
            SourceSpec::ScalarGaussian { std, .. } => Some(vec![std * std]),
            SourceSpec::VectorGaussian { eigen_stds, .. } => {
                Some(eigen_stds.iter().map(|s| s * s).collect())
            }
            _ => None,
        }
    }

    /// The orthogonal basis `U` of a vector Gaussian source.
    pub fn basis(&self) -> Option<DMatrix<f64>> {
        match self {
            SourceSpec::VectorGaussian { dim, basis_seed, .. } => {
                Some(random_orthogonal(*dim, *basis_seed))
            }
            _ => None,
        }
    }

    /// `Σ = U diag(σ²) Uᵀ` of a vector Gaussian source.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        match self {
            SourceSpec::VectorGaussian { eigen_stds, .. } => {
                let u = self.basis()?;
                let vars = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                    eigen_stds.len(),
                    eigen_stds.iter().map(|s| s * s),
                ));
                Some(&u * vars * u.transpose())
            }
            _ => None,
        }
    }

    /// Density of a Gaussian mixture at a 2-D point.
    pub fn mixture_density(&self, x: [f64; 2]) -> Option<f64> {
        match self {
            SourceSpec::GaussianMixture {
                means,
                component_std,
                weights,
            } => {
                let var = component_std * component_std;
                let norm = 1.0 / (2.0 * std::f64::consts::PI * var);
                Some(
                    means
                        .iter()
                        .zip(weights)
                        .map(|(m, w)| {
                            let r2 = (x[0] - m[0]).powi(2) + (x[1] - m[1]).powi(2);
                            w * norm * (-0.5 * r2 / var).exp()
                        })
                        .sum(),
                )
            }
            _ => None,
        }
    }

    /// `n` i.i.d. draws; a pure function of `(self, n, seed)`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleBatch> {
        self.validate()?;
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut rng = rng_from_seed(seed);
        let dim = self.dim();
        let mut points = Vec::with_capacity(n * dim);
        match self {
            SourceSpec::ScalarGaussian { mean, std } => {
                for _ in 0..n {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    points.push(mean + std * z);
                }
            }
            SourceSpec::ScalarLaplacian { scale } => {
                for _ in 0..n {
                    // inverse CDF on u ∈ (-1/2, 1/2)
                    let u: f64 = rng.random::<f64>() - 0.5;
                    let tail = (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE);
                    points.push(-scale * u.signum() * tail.ln());
                }
            }
            SourceSpec::VectorGaussian { eigen_stds, .. } => {
                let u = self.basis().expect("vector gaussian basis");
                let mut z = vec![0.0; dim];
                for _ in 0..n {
                    for (zi, s) in z.iter_mut().zip(eigen_stds) {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        *zi = s * g;
                    }
                    for r in 0..dim {
                        points.push((0..dim).map(|c| u[(r, c)] * z[c]).sum());
                    }
                }
            }
            SourceSpec::GaussianMixture {
                means,
                component_std,
                weights,
            } => {
                for _ in 0..n {
                    let k = pick(weights, rng.random::<f64>());
                    for m in means[k] {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        points.push(m + component_std * z);
                    }
                }
            }
        }
        Ok(SampleBatch {
            points,
            n,
            dim,
            seed,
            source: Some(self.clone()),
        })
    }
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// `n × dim` points stored row-major, with the seed that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub points: Vec<f64>,
    pub n: usize,
    pub dim: usize,
    pub seed: u64,
    /// The generating source; `None` for model samples.
    pub source: Option<SourceSpec>,
}

impl SampleBatch {
    pub fn from_rows(points: Vec<f64>, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 || points.len() % dim != 0 {
            return Err(Error::invalid("batch", "length is not a multiple of the dimension"));
        }
        Ok(SampleBatch {
            n: points.len() / dim,
            points,
            dim,
            seed,
            source: None,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.points.chunks_exact(self.dim)
    }

    /// Per-coordinate sample mean.
    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for r in self.rows() {
            for (a, b) in m.iter_mut().zip(r) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.n as f64);
        m
    }

    /// Per-coordinate (biased) sample variance.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        let mut v = vec![0.0; self.dim];
        for r in self.rows() {
            for ((a, b), mu) in v.iter_mut().zip(r).zip(&m) {
                *a += (b - mu) * (b - mu);
            }
        }
        v.iter_mut().for_each(|a| *a /= self.n as f64);
        v
    }

    /// Writes one CSV row per point with columns `{prefix}_0..{prefix}_{d-1}`.
    pub fn write_csv<W: std::io::Write>(&self, prefix: &str, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record((0..self.dim).map(|i| format!("{prefix}_{i}")))?;
        for r in self.rows() {
            out.write_record(r.iter().map(|v| v.to_string()))?;
        }
        out.flush()?;
        Ok(())
    }
}

/// One row per pair with columns `x_0..x_{d-1}, y_0..y_{d-1}`.
pub fn write_pairs_csv<W: std::io::Write>(xs: &SampleBatch, ys: &SampleBatch, w: W) -> Result<()> {
    if xs.n != ys.n {
        return Err(Error::BatchMismatch {
            left: xs.n,
            right: ys.n,
        });
    }
    crate::error::check_dim(xs.dim, ys.dim)?;
    let mut out = csv::Writer::from_writer(w);
    write_pairs_header(&mut out, xs.dim)?;
    for (x, y) in xs.rows().zip(ys.rows()) {
        out.write_record(x.iter().chain(y).map(|v| v.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

/// The header of [`write_pairs_csv`] alone, for an empty sample set.
pub fn write_pairs_header_csv<W: std::io::Write>(dim: usize, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    write_pairs_header(&mut out, dim)?;
    out.flush()?;
    Ok(())
}

fn write_pairs_header<W: std::io::Write>(out: &mut csv::Writer<W>, dim: usize) -> Result<()> {
    let names = (0..dim).map(|i| format!("x_{i}")).chain((0..dim).map(|i| format!("y_{i}")));
    out.write_record(names)?;
    Ok(())
}
