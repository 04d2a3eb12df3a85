//! The run configuration file (TOML).
//!
//! ```toml
//! output_dir = "out"        # default "out"
//! eval_n = 4000             # evaluation samples per β
//! betas = [0.6, 1, 2, 5]    # default grid depends on the source
//! emit = ["csv", "svg"]
//!
//! [source]                  # the only required table
//! kind = "scalar_gaussian"  # scalar_laplacian | vector_gaussian | gaussian_mixture
//! std = 1.0
//!
//! [net]
//! hidden_widths = [128, 128, 128]
//! activation = "softplus"   # tanh | silu
//!
//! [train]
//! beta = 1.0
//! iterations = 2000
//! langevin = { steps = 50, step_size = 0.012 }
//!
//! [eval_langevin]           # optional; defaults to train.langevin
//! steps = 200
//! step_size = 0.05
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use ebrd::energy_net::{Activation, MlpConfig};
use ebrd::langevin::LangevinConfig;
use ebrd::sources::{make_paper_gmm, paper_eigen_stds, SourceSpec};
use ebrd::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::Failure;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Emit {
    Csv,
    Svg,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub source: SourceSpec,
    pub net: MlpConfig,
    pub train: TrainConfig,
    pub eval_n: usize,
    pub eval_langevin: Option<LangevinConfig>,
    pub betas: Vec<f64>,
    pub output_dir: PathBuf,
    pub emit: BTreeSet<Emit>,
}

pub const DEFAULT_EVAL_N: usize = 4000;

/// Source table as written by users: every parameter has a default except
/// the vector dimension.
#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceConfig {
    ScalarGaussian {
        #[serde(default)]
        mean: f64,
        #[serde(default = "one")]
        std: f64,
    },
    ScalarLaplacian {
        #[serde(default = "one")]
        scale: f64,
    },
    VectorGaussian {
        dim: usize,
        eigen_stds: Option<Vec<f64>>,
        #[serde(default)]
        basis_seed: u64,
    },
    GaussianMixture {
        means: Option<Vec<[f64; 2]>>,
        component_std: Option<f64>,
        weights: Option<Vec<f64>>,
    },
}

fn one() -> f64 {
    1.0
}

impl SourceConfig {
    pub fn into_spec(self) -> SourceSpec {
        match self {
            SourceConfig::ScalarGaussian { mean, std } => SourceSpec::ScalarGaussian { mean, std },
            SourceConfig::ScalarLaplacian { scale } => SourceSpec::ScalarLaplacian { scale },
            SourceConfig::VectorGaussian {
                dim,
                eigen_stds,
                basis_seed,
            } => SourceSpec::VectorGaussian {
                dim,
                eigen_stds: eigen_stds.unwrap_or_else(|| paper_eigen_stds(dim)),
                basis_seed,
            },
            SourceConfig::GaussianMixture {
                means,
                component_std,
                weights,
            } => {
                let SourceSpec::GaussianMixture {
                    means: m0,
                    component_std: s0,
                    weights: w0,
                } = make_paper_gmm()
                else {
                    unreachable!()
                };
                let means = means.unwrap_or(m0);
                let weights = weights.unwrap_or_else(|| {
                    if means.len() == w0.len() {
                        w0
                    } else {
                        vec![1.0 / means.len().max(1) as f64; means.len()]
                    }
                });
                SourceSpec::GaussianMixture {
                    means,
                    component_std: component_std.unwrap_or(s0),
                    weights,
                }
            }
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetConfig {
    input_dim: Option<usize>,
    hidden_widths: Option<Vec<usize>>,
    #[serde(default)]
    activation: Activation,
    #[serde(default)]
    param_seed: u64,
}

/// Default β grid for each source kind.
pub fn default_betas(source: &SourceSpec) -> Vec<f64> {
    match source {
        SourceSpec::ScalarGaussian { .. } => vec![0.6, 1.0, 2.0, 5.0, 10.0],
        SourceSpec::ScalarLaplacian { .. } => vec![1.5, 2.0, 3.0, 5.0, 8.0],
        SourceSpec::VectorGaussian { .. } => vec![0.5, 1.0, 2.0, 4.0, 8.0],
        SourceSpec::GaussianMixture { .. } => vec![1.0, 5.0, 20.0, 50.0],
    }
}

const TOP_LEVEL_KEYS: [&str; 8] = [
    "source",
    "net",
    "train",
    "eval_n",
    "eval_langevin",
    "betas",
    "output_dir",
    "emit",
];

fn section<T: DeserializeOwned>(table: &toml::Table, key: &str) -> Result<Option<T>, Failure> {
    table
        .get(key)
        .map(|v| {
            v.clone()
                .try_into()
                .map_err(|e| Failure::Config(format!("invalid `{key}`: {e}")))
        })
        .transpose()
}

pub fn parse_source(value: &toml::Value) -> Result<SourceSpec, Failure> {
    let cfg: SourceConfig = value
        .clone()
        .try_into()
        .map_err(|e| Failure::Config(format!("invalid `source`: {e}")))?;
    let spec = cfg.into_spec();
    spec.validate().map_err(|e| Failure::Config(format!("invalid `source`: {e}")))?;
    Ok(spec)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Failure> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Failure::Config(format!("config is not valid TOML: {e}")))?;
        if let Some(k) = table.keys().find(|k| !TOP_LEVEL_KEYS.contains(&k.as_str())) {
            return Err(Failure::Config(format!("unknown config field `{k}`")));
        }
        let source = parse_source(
            table
                .get("source")
                .ok_or_else(|| Failure::Config("missing required field `source`".into()))?,
        )?;
        let dim = source.dim();

        let net_cfg: NetConfig = section(&table, "net")?.unwrap_or_default();
        if let Some(d) = net_cfg.input_dim {
            if d != dim {
                return Err(Failure::Config(format!(
                    "invalid `net.input_dim`: {d} does not match the source dimension {dim}"
                )));
            }
        }
        let mut net = MlpConfig::new(dim)
            .with_activation(net_cfg.activation)
            .with_seed(net_cfg.param_seed);
        if let Some(w) = net_cfg.hidden_widths {
            net = net.with_hidden(&w);
        }
        net.validate().map_err(|e| Failure::Config(e.to_string()))?;

        let mut train: TrainConfig = section(&table, "train")?.unwrap_or_default();
        let distortion_given = table
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("distortion"));
        if !distortion_given {
            train.distortion = source.default_distortion();
        }
        train.validate().map_err(|e| Failure::Config(e.to_string()))?;

        let eval_langevin: Option<LangevinConfig> = section(&table, "eval_langevin")?;
        if let Some(l) = &eval_langevin {
            l.validate().map_err(|e| Failure::Config(format!("invalid `eval_langevin`: {e}")))?;
        }
        let eval_n: usize = section(&table, "eval_n")?.unwrap_or(DEFAULT_EVAL_N);
        if eval_n == 0 {
            return Err(Failure::Config("invalid `eval_n`: must be at least 1".into()));
        }
        let betas: Vec<f64> = section(&table, "betas")?.unwrap_or_else(|| default_betas(&source));
        check_betas(&betas)?;
        let output_dir: PathBuf = section(&table, "output_dir")?.unwrap_or_else(|| PathBuf::from("out"));
        let emit: BTreeSet<Emit> = section::<Vec<Emit>>(&table, "emit")?
            .map(|v| v.into_iter().collect())
            .unwrap_or_else(|| [Emit::Csv, Emit::Svg].into());

        Ok(RunConfig {
            source,
            net,
            train,
            eval_n,
            eval_langevin,
            betas,
            output_dir,
            emit,
        })
    }

    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

pub fn check_betas(betas: &[f64]) -> Result<(), Failure> {
    if betas.is_empty() {
        return Err(Failure::Config("invalid `betas`: need at least one value".into()));
    }
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(Failure::Config(format!("invalid `betas`: {b} is not positive")));
    }
    Ok(())
}
