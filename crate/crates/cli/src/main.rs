//! `ebrd`: train energy-based RD models, sweep β, and compare with oracles.

mod config;
mod svg;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ebrd::energy_net::{load_checkpoint, save_checkpoint};
use ebrd::io::write_atomic;
use ebrd::oracles::{self, ba_solve, reference_rate, BaGrid};
use ebrd::rd_estimator::{convergence_probe, rd_sweep_with, write_probe_csv, write_rd_points_csv, ProbePlan};
use ebrd::rng::{child_seed, stream};
use ebrd::sources::{make_paper_gmm, make_vector_gaussian, write_pairs_csv, write_pairs_header_csv};
use ebrd::trainer::write_history_csv;
use ebrd::{sample_conditional, train_net, DistortionKind, EnergyNet, RdPoint, SourceSpec, SweepPlan};

use config::{Emit, RunConfig};
use svg::{Mark, Plot, Series};

/// Why a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Exit 2: the request itself is malformed.
    Config(String),
    /// Exit 1: the run started and failed.
    Runtime(anyhow::Error),
}

impl From<ebrd::Error> for Failure {
    fn from(e: ebrd::Error) -> Self {
        match e {
            ebrd::Error::InvalidConfig { .. } | ebrd::Error::DimensionMismatch { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(name = "ebrd", version, about = "Rate-distortion estimation with energy-based models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model at a single β; writes a checkpoint and history.csv.
    Train(TrainArgs),
    /// Train and evaluate one model per β; writes rd_points.csv.
    Sweep(SweepArgs),
    /// Closed-form (or Blahut-Arimoto) reference curve.
    Oracle(OracleArgs),
    /// Blahut-Arimoto on a discretised scalar or binary source.
    Ba(BaArgs),
    /// Draw one conditional sample y ~ p(y|x) per source draw x.
    SampleConditional(SampleArgs),
    /// Spread of the loss estimate across sample sizes.
    ProbeConvergence(ProbeArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `emit`, e.g. `--emit csv,svg`.
    #[arg(long, value_delimiter = ',')]
    emit: Option<Vec<Emit>>,
    /// Report rates in bits instead of nats (summaries and plots; CSV stays in nats).
    #[arg(long)]
    bits: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    eval_n: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceKind {
    Gaussian,
    Laplacian,
    VectorGaussian,
    Gmm,
    /// Uniform bits with Hamming distortion (Blahut-Arimoto only).
    Binary,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Closed,
    Ba,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    /// Overrides the config source with a default-parameter source of this kind.
    #[arg(long)]
    source: Option<SourceKind>,
    /// Dimension for `--source vector-gaussian`.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Explicit covariance spectrum for `--source vector-gaussian` (sets the dimension).
    #[arg(long, value_delimiter = ',')]
    eigen_vars: Option<Vec<f64>>,
    /// Distortion levels; a default grid when omitted.
    #[arg(long, value_delimiter = ',')]
    distortions: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "closed")]
    method: Method,
    #[command(flatten)]
    ba: BaOptions,
}

#[derive(Args, Clone)]
struct BaOptions {
    /// Slopes for Blahut-Arimoto.
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long, default_value_t = oracles::BA_GRID_POINTS)]
    points: usize,
    /// Grid half-width in source standard deviations.
    #[arg(long, default_value_t = oracles::BA_GRID_SPAN_STDS)]
    span: f64,
    #[arg(long, default_value_t = oracles::BA_DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = oracles::BA_DEFAULT_MAX_ITERS)]
    max_iters: usize,
}

#[derive(Args)]
struct BaArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    source: Option<SourceKind>,
    #[command(flatten)]
    ba: BaOptions,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    common: Common,
    /// Defaults to `<output_dir>/model.ebrd`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    /// Defaults to `train.beta`.
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "100,400,1600")]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    repeats: usize,
    #[arg(long)]
    beta: Option<f64>,
}

const CHECKPOINT_NAME: &str = "model.ebrd";

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Ba(a) => cmd_ba(a),
        Command::SampleConditional(a) => cmd_sample_conditional(a),
        Command::ProbeConvergence(a) => cmd_probe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_run(common: &Common) -> Result<RunConfig, Failure> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("missing --config (the run configuration holds the `source`)".into()))?;
    let mut cfg = RunConfig::load(path)?;
    apply_common(&mut cfg, common);
    Ok(cfg)
}

fn apply_common(cfg: &mut RunConfig, common: &Common) {
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(e) = &common.emit {
        cfg.emit = e.iter().copied().collect();
    }
}

fn out_dir(common: &Common, cfg: Option<&RunConfig>) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.map(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn emit_set(common: &Common, cfg: Option<&RunConfig>) -> BTreeSet<Emit> {
    match (&common.emit, cfg) {
        (Some(e), _) => e.iter().copied().collect(),
        (None, Some(c)) => c.emit.clone(),
        (None, None) => [Emit::Csv].into(),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(Failure::Runtime)
}

fn write_output(path: &Path, render: impl FnOnce(&mut Vec<u8>) -> ebrd::Result<()>) -> Result<(), Failure> {
    let mut buf = Vec::new();
    render(&mut buf).map_err(|e| Failure::Runtime(e.into()))?;
    write_atomic(path, &buf)
        .with_context(|| format!("cannot write {}", path.display()))
        .map_err(Failure::Runtime)
}

fn write_svg(path: &Path, plot: &Plot) -> Result<(), Failure> {
    write_output(path, |buf| {
        buf.extend_from_slice(plot.render().as_bytes());
        Ok(())
    })
}

fn rate_unit(bits: bool) -> (&'static str, f64) {
    if bits {
        ("bits", 1.0 / std::f64::consts::LN_2)
    } else {
        ("nats", 1.0)
    }
}

/// Oracle curve for a source/distortion pair, sampled for plotting.
fn oracle_curve(source: &SourceSpec, rho: DistortionKind, d_lo: f64, d_hi: f64) -> Option<(String, Vec<(f64, f64)>)> {
    let label = match (source, rho) {
        (SourceSpec::ScalarGaussian { .. }, DistortionKind::SquaredL2) => "Gaussian oracle",
        (SourceSpec::ScalarLaplacian { .. }, DistortionKind::L1) => "Laplacian oracle",
        (SourceSpec::VectorGaussian { .. }, DistortionKind::SquaredL2) => "water-filling oracle",
        _ => return None,
    };
    let n = 200;
    let pts = (0..=n)
        .map(|i| d_lo + (d_hi - d_lo) * i as f64 / n as f64)
        .filter(|d| *d > 0.0)
        .filter_map(|d| reference_rate(source, rho, d).map(|r| (d, r)))
        .collect();
    Some((label.to_string(), pts))
}

/// Distortion at which each reference curve reaches zero rate.
fn zero_rate_distortion(source: &SourceSpec, rho: DistortionKind) -> f64 {
    match (source, rho) {
        (SourceSpec::ScalarGaussian { std, .. }, _) => std * std,
        (SourceSpec::ScalarLaplacian { scale }, _) => *scale,
        (s, _) => s.eigen_vars().map(|v| v.iter().sum()).unwrap_or(1.0),
    }
}

fn cmd_train(args: TrainArgs) -> CmdResult {
    let mut cfg = load_run(&args.common)?;
    if let Some(b) = args.beta {
        cfg.train.beta = b;
    }
    if let Some(it) = args.iterations {
        cfg.train.iterations = it;
    }
    cfg.train.validate()?;
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;

    let mut net = EnergyNet::new(cfg.net.clone())?;
    eprintln!(
        "training {} source at beta = {} for up to {} iterations",
        cfg.source.kind_name(),
        cfg.train.beta,
        cfg.train.iterations
    );
    let run = train_net(&mut net, &cfg.source, &cfg.train)
        .map_err(|e| Failure::Runtime(anyhow!(e).context("training failed")))?;

    let ckpt = dir.join(CHECKPOINT_NAME);
    save_checkpoint(&net, &ckpt).map_err(|e| Failure::Runtime(anyhow!(e).context("cannot write checkpoint")))?;
    if cfg.emit.contains(&Emit::Csv) {
        write_output(&dir.join("history.csv"), |b| write_history_csv(&run.history, b))?;
    }
    if cfg.emit.contains(&Emit::Svg) {
        let plot = Plot {
            title: format!("training at beta = {}", cfg.train.beta),
            x_label: "iteration".into(),
            y_label: "mean E(y|x) - mean E(y)".into(),
            series: vec![Series {
                label: "energy gap".into(),
                color: "steelblue",
                mark: Mark::Line,
                data: run
                    .history
                    .iter()
                    .map(|r| (r.iteration as f64, r.minus_energy_gap))
                    .collect(),
            }],
            equal_aspect: false,
        };
        write_svg(&dir.join("history.svg"), &plot)?;
    }
    let last = run.history.last();
    println!(
        "iterations={} stopped_early={} final_energy_gap={} checkpoint={}",
        run.history.len(),
        run.stopped_early,
        last.map(|r| r.minus_energy_gap).unwrap_or(f64::NAN),
        ckpt.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> CmdResult {
    let mut cfg = load_run(&args.common)?;
    if let Some(b) = args.betas {
        config::check_betas(&b)?;
        cfg.betas = b;
    }
    if let Some(it) = args.iterations {
        cfg.train.iterations = it;
    }
    if let Some(n) = args.eval_n {
        cfg.eval_n = n;
    }
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;
    let rho = cfg.train.distortion;
    let source = cfg.source.clone();
    let oracle = |d: f64| reference_rate(&source, rho, d);
    let (unit, scale) = rate_unit(args.common.bits);
    let csv_path = dir.join("rd_points.csv");
    let write_csv = cfg.emit.contains(&Emit::Csv);

    // rewrite the CSV after every β so a late failure keeps earlier points
    let mut done: Vec<RdPoint> = Vec::new();
    let mut write_err: Option<Failure> = None;
    let plan = SweepPlan {
        source: &cfg.source,
        net: &cfg.net,
        betas: &cfg.betas,
        train: &cfg.train,
        eval_n: cfg.eval_n,
        eval_langevin: cfg.eval_langevin,
        seed: cfg.train.seed,
    };
    let sweep = rd_sweep_with(&plan, |beta, res| match res {
        Ok(p) => {
            eprintln!(
                "beta={beta}: R={:.4} {unit} D={:.4}{}",
                p.reported_rate() * scale,
                p.distortion,
                if p.rate_suspicious() { " (negative rate estimate)" } else { "" }
            );
            done.push(*p);
            if write_csv && write_err.is_none() {
                let mut sorted = done.clone();
                sorted.sort_by(|a, b| a.distortion.total_cmp(&b.distortion));
                if let Err(e) = write_output(&csv_path, |b| write_rd_points_csv(&sorted, oracle, b)) {
                    write_err = Some(e);
                }
            }
        }
        Err(e) => eprintln!("beta={beta}: failed: {e}"),
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    if write_csv {
        write_output(&csv_path, |b| write_rd_points_csv(&sweep.points, oracle, b))?;
    }
    let models = dir.join("models");
    ensure_dir(&models)?;
    for (k, m) in sweep.models.iter().enumerate() {
        let path = models.join(format!("beta_{k:02}_{}.ebrd", m.beta));
        save_checkpoint(&m.net, &path).map_err(|e| Failure::Runtime(anyhow!(e).context("cannot write checkpoint")))?;
    }

    if cfg.emit.contains(&Emit::Svg) {
        let d_max = sweep.points.iter().map(|p| p.distortion).fold(0.0, f64::max);
        let d_min = sweep.points.iter().map(|p| p.distortion).fold(f64::INFINITY, f64::min);
        let d_zero = zero_rate_distortion(&cfg.source, rho);
        let lo = (0.8 * d_min).min(0.05 * d_zero).max(1e-6);
        let hi = (1.1 * d_max).max(1.05 * d_zero);
        let mut series = Vec::new();
        if let Some((label, curve)) = oracle_curve(&cfg.source, rho, lo, hi) {
            series.push(Series {
                label,
                color: "black",
                mark: Mark::Line,
                data: curve.into_iter().map(|(d, r)| (d, r * scale)).collect(),
            });
        }
        series.push(Series {
            label: "EBRD estimate".into(),
            color: "crimson",
            mark: Mark::Points { radius: 4.0 },
            data: sweep.points.iter().map(|p| (p.distortion, p.reported_rate() * scale)).collect(),
        });
        let plot = Plot {
            title: format!("{} source, {} distortion", cfg.source.kind_name(), rho.name()),
            x_label: "distortion D".into(),
            y_label: format!("rate R ({unit})"),
            series,
            equal_aspect: false,
        };
        write_svg(&dir.join("rd_curve.svg"), &plot)?;
    }

    println!("beta,rate_{unit},distortion");
    for p in &sweep.points {
        println!("{},{},{}", p.beta, p.reported_rate() * scale, p.distortion);
    }
    if !sweep.failures.is_empty() {
        let mut msg = format!("{} of {} betas failed", sweep.failures.len(), cfg.betas.len());
        for f in &sweep.failures {
            let _ = write!(msg, "; beta={}: {}", f.beta, f.message);
        }
        return Err(Failure::Runtime(anyhow!(msg)));
    }
    Ok(())
}

fn flag_source(kind: SourceKind, dim: usize) -> Result<Option<SourceSpec>, Failure> {
    Ok(match kind {
        SourceKind::Gaussian => Some(SourceSpec::ScalarGaussian { mean: 0.0, std: 1.0 }),
        SourceKind::Laplacian => Some(SourceSpec::ScalarLaplacian { scale: 1.0 }),
        SourceKind::VectorGaussian => Some(make_vector_gaussian(dim, 0)?),
        SourceKind::Gmm => Some(make_paper_gmm()),
        SourceKind::Binary => None,
    })
}

/// The source named by a flag takes precedence over the config file.
fn resolve_source(
    common: &Common,
    kind: Option<SourceKind>,
    dim: usize,
) -> Result<(Option<SourceSpec>, DistortionKind, Option<RunConfig>), Failure> {
    let cfg = match &common.config {
        Some(_) => Some(load_run(common)?),
        None => None,
    };
    match (kind, &cfg) {
        (Some(k), _) => {
            let s = flag_source(k, dim)?;
            let rho = s.as_ref().map(|s| s.default_distortion()).unwrap_or(DistortionKind::L1);
            Ok((s, rho, cfg))
        }
        (None, Some(c)) => Ok((Some(c.source.clone()), c.train.distortion, cfg)),
        (None, None) => Err(Failure::Config("missing `source`: pass --source or --config".into())),
    }
}

fn cmd_oracle(args: OracleArgs) -> CmdResult {
    if let Method::Ba = args.method {
        return cmd_ba(BaArgs {
            common: args.common,
            source: args.source,
            ba: args.ba,
        });
    }
    let (mut source, rho, cfg) = resolve_source(&args.common, args.source, args.dim)?;
    if let Some(vars) = &args.eigen_vars {
        match &mut source {
            Some(SourceSpec::VectorGaussian { dim, eigen_stds, .. }) => {
                *dim = vars.len();
                *eigen_stds = vars.iter().map(|v| v.sqrt()).collect();
                source.as_ref().expect("set above").validate()?;
            }
            _ => return Err(Failure::Config("`eigen_vars` applies to vector_gaussian sources only".into())),
        }
    }
    let source = source.ok_or_else(|| Failure::Config("no closed-form oracle for `source` binary; use `ba`".into()))?;
    if reference_rate(&source, rho, 0.5).is_none() {
        return Err(Failure::Config(format!(
            "no closed-form oracle for `source` {} with {} distortion",
            source.kind_name(),
            rho.name()
        )));
    }
    let ds = match args.distortions {
        Some(ds) => ds,
        None => {
            let d0 = zero_rate_distortion(&source, rho);
            (1..=40).map(|i| d0 * i as f64 / 40.0).collect()
        }
    };
    if let Some(d) = ds.iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Failure::Config(format!("invalid `distortions`: {d} is not positive")));
    }
    let rows: Vec<(f64, f64)> = ds
        .iter()
        .map(|&d| (d, reference_rate(&source, rho, d).expect("checked above")))
        .collect();

    let mut text = Vec::new();
    oracles::write_curve_csv(&rows, &mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    if args.common.out.is_some() || cfg.is_some() {
        let dir = out_dir(&args.common, cfg.as_ref());
        ensure_dir(&dir)?;
        let emit = emit_set(&args.common, cfg.as_ref());
        if emit.contains(&Emit::Csv) {
            write_output(&dir.join("oracle.csv"), |b| oracles::write_curve_csv(&rows, b))?;
        }
        if emit.contains(&Emit::Svg) {
            let (unit, scale) = rate_unit(args.common.bits);
            let plot = Plot {
                title: format!("{} source, {} distortion", source.kind_name(), rho.name()),
                x_label: "distortion D".into(),
                y_label: format!("rate R ({unit})"),
                series: vec![Series {
                    label: "oracle".into(),
                    color: "black",
                    mark: Mark::Line,
                    data: rows.iter().map(|(d, r)| (*d, r * scale)).collect(),
                }],
                equal_aspect: false,
            };
            write_svg(&dir.join("oracle.svg"), &plot)?;
        }
    }
    Ok(())
}

fn cmd_ba(args: BaArgs) -> CmdResult {
    let (source, rho, cfg) = resolve_source(&args.common, args.source, 1)?;
    let grid = match &source {
        None => BaGrid::binary_hamming(),
        Some(s) if s.dim() == 1 => BaGrid::scalar(s, rho, args.ba.points, args.ba.span)?,
        Some(s) => {
            return Err(Failure::Config(format!(
                "Blahut-Arimoto needs a scalar or binary `source`, got {} (dimension {})",
                s.kind_name(),
                s.dim()
            )))
        }
    };
    let betas = args.ba.betas.clone().unwrap_or_else(|| vec![1.0]);
    config::check_betas(&betas)?;

    let mut rows = Vec::new();
    let mut unconverged = Vec::new();
    for &beta in &betas {
        match ba_solve(&grid, beta, args.ba.max_iters, args.ba.tol) {
            Ok(sol) => rows.push((sol.point, sol.iterations, true)),
            Err(ebrd::Error::NoConvergence { iterations, last, .. }) => {
                unconverged.push(beta);
                rows.push((*last, iterations, false));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let render = |buf: &mut Vec<u8>| -> ebrd::Result<()> {
        use std::io::Write;
        writeln!(buf, "beta,rate_nats,distortion,loss_hat,iterations,converged")?;
        for (p, it, ok) in &rows {
            writeln!(buf, "{},{},{},{},{},{}", p.beta, p.rate, p.distortion, p.loss_hat, it, ok)?;
        }
        Ok(())
    };
    let mut text = Vec::new();
    render(&mut text)?;
    print!("{}", String::from_utf8_lossy(&text));
    if args.common.out.is_some() || cfg.is_some() {
        let dir = out_dir(&args.common, cfg.as_ref());
        ensure_dir(&dir)?;
        if emit_set(&args.common, cfg.as_ref()).contains(&Emit::Csv) {
            write_output(&dir.join("ba.csv"), render)?;
        }
    }
    if !unconverged.is_empty() {
        return Err(Failure::Runtime(anyhow!(
            "Blahut-Arimoto did not reach tol {} within {} iterations for beta {:?}; last iterates reported",
            args.ba.tol,
            args.ba.max_iters,
            unconverged
        )));
    }
    Ok(())
}

fn load_model(checkpoint: Option<&PathBuf>, cfg: &RunConfig) -> Result<EnergyNet, Failure> {
    let path = checkpoint
        .cloned()
        .unwrap_or_else(|| cfg.output_dir.join(CHECKPOINT_NAME));
    let net = load_checkpoint(&path).map_err(|e| match e {
        ebrd::Error::Io(io) => Failure::Config(format!("cannot read checkpoint {}: {io}", path.display())),
        other => Failure::Config(format!("invalid checkpoint {}: {other}", path.display())),
    })?;
    if net.input_dim() != cfg.source.dim() {
        return Err(Failure::Config(format!(
            "checkpoint dimension {} does not match `source` dimension {}",
            net.input_dim(),
            cfg.source.dim()
        )));
    }
    Ok(net)
}

fn cmd_sample_conditional(args: SampleArgs) -> CmdResult {
    let cfg = load_run(&args.common)?;
    let net = load_model(args.checkpoint.as_ref(), &cfg)?;
    let beta = args.beta.unwrap_or(cfg.train.beta);
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Failure::Config(format!("invalid `beta`: {beta}")));
    }
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;
    let path = dir.join("samples.csv");
    let dim = cfg.source.dim();
    if args.n == 0 {
        write_output(&path, |b| write_pairs_header_csv(dim, b))?;
        println!("n=0 samples={}", path.display());
        return Ok(());
    }
    let seed = cfg.train.seed;
    let langevin = cfg.eval_langevin.unwrap_or(cfg.train.langevin);
    let xs = cfg.source.sample(args.n, child_seed(seed, stream::SOURCE))?;
    let ys = sample_conditional(
        &net,
        &xs,
        beta,
        cfg.train.distortion,
        &langevin,
        child_seed(seed, stream::CONDITIONAL),
    )?;
    if cfg.emit.contains(&Emit::Csv) {
        write_output(&path, |b| write_pairs_csv(&xs, &ys, b))?;
    }
    if cfg.emit.contains(&Emit::Svg) {
        let proj = |b: &ebrd::SampleBatch| -> Vec<(f64, f64)> {
            b.rows().map(|r| (r[0], if r.len() > 1 { r[1] } else { 0.0 })).collect()
        };
        let plot = if dim == 1 {
            Plot {
                title: format!("conditional samples at beta = {beta}"),
                x_label: "x".into(),
                y_label: "y".into(),
                series: vec![Series {
                    label: "(x, y) pairs".into(),
                    color: "crimson",
                    mark: Mark::Points { radius: 1.5 },
                    data: xs.rows().zip(ys.rows()).map(|(x, y)| (x[0], y[0])).collect(),
                }],
                equal_aspect: true,
            }
        } else {
            Plot {
                title: format!("source and conditional samples at beta = {beta}"),
                x_label: "coordinate 0".into(),
                y_label: "coordinate 1".into(),
                series: vec![
                    Series {
                        label: "x ~ source".into(),
                        color: "steelblue",
                        mark: Mark::Points { radius: 1.5 },
                        data: proj(&xs),
                    },
                    Series {
                        label: "y ~ p(y|x)".into(),
                        color: "crimson",
                        mark: Mark::Points { radius: 1.5 },
                        data: proj(&ys),
                    },
                ],
                equal_aspect: true,
            }
        };
        write_svg(&dir.join("samples.svg"), &plot)?;
    }
    let msd = xs
        .rows()
        .zip(ys.rows())
        .map(|(x, y)| x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        / xs.n as f64;
    println!("n={} mean_sq_displacement={msd} samples={}", xs.n, path.display());
    Ok(())
}

fn cmd_probe(args: ProbeArgs) -> CmdResult {
    let cfg = load_run(&args.common)?;
    let net = load_model(args.checkpoint.as_ref(), &cfg)?;
    let beta = args.beta.unwrap_or(cfg.train.beta);
    let plan = ProbePlan {
        source: &cfg.source,
        beta,
        rho: cfg.train.distortion,
        langevin: cfg.eval_langevin.unwrap_or(cfg.train.langevin),
        n_list: &args.n_list,
        repeats: args.repeats,
        seed: cfg.train.seed,
    };
    let rows = convergence_probe(&net, &plan)?;
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;
    if cfg.emit.contains(&Emit::Csv) {
        write_output(&dir.join("probe.csv"), |b| write_probe_csv(&rows, b))?;
    }
    if cfg.emit.contains(&Emit::Svg) {
        let plot = Plot {
            title: format!("loss estimate spread at beta = {beta}"),
            x_label: "log10 N".into(),
            y_label: "std of loss estimate".into(),
            series: vec![Series {
                label: "std".into(),
                color: "steelblue",
                mark: Mark::Points { radius: 4.0 },
                data: rows.iter().map(|r| ((r.n as f64).log10(), r.std_loss)).collect(),
            }],
            equal_aspect: false,
        };
        write_svg(&dir.join("probe.svg"), &plot)?;
    }
    println!("n,mean_loss,std_loss");
    for r in &rows {
        println!("{},{},{}", r.n, r.mean_loss, r.std_loss);
    }
    Ok(())
}
