use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ebrd::oracles::{laplacian_rd, vector_gaussian_rd};
use ebrd::sources::paper_eigen_stds;

fn ebrd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ebrd"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ebrd-cli-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const SMALL: &str = r#"
eval_n = 200
[net]
hidden_widths = [8]
[train]
iterations = 20
batch_size = 32
learning_rate = 0.01
langevin = { steps = 10, step_size = 0.05 }
"#;

fn write_config(dir: &Path, source: &str, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    let text = format!("output_dir = {:?}\n{extra}\n{SMALL}\n[source]\n{source}\n", dir.join("out"));
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}

const GAUSSIAN: &str = "kind = \"scalar_gaussian\"";

#[test]
fn train_writes_checkpoint_and_history() {
    let dir = scratch("train");
    let cfg = write_config(&dir, GAUSSIAN, "");
    let out = run(ebrd().args(["train", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(0));
    assert!(dir.join("out/model.ebrd").exists());
    let (header, rows) = csv_rows(&dir.join("out/history.csv"));
    assert_eq!(header, ["iteration", "grad_norm", "minus_energy_gap", "wallclock_ms"]);
    assert!(!rows.is_empty() && rows.len() <= 20);
}

#[test]
fn missing_source_is_a_config_error() {
    let dir = scratch("nosource");
    let path = dir.join("run.toml");
    std::fs::write(&path, SMALL).unwrap();
    let out = run(ebrd().args(["train", "--config"]).arg(&path));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("source"));
}

#[test]
fn bad_field_is_named() {
    let dir = scratch("badfield");
    let cfg = write_config(&dir, "kind = \"scalar_gaussian\"\nstd = 0.0", "");
    let out = run(ebrd().args(["train", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("source"));
}

#[test]
fn training_is_deterministic() {
    let dir = scratch("determinism");
    let cfg = write_config(&dir, GAUSSIAN, "");
    let history = |sub: &str| {
        let o = dir.join(sub);
        let out = run(ebrd().args(["train", "--seed", "7", "--config"]).arg(&cfg).arg("--out").arg(&o));
        assert!(out.status.success());
        (
            std::fs::read(o.join("history.csv")).unwrap(),
            std::fs::read(o.join("model.ebrd")).unwrap(),
        )
    };
    assert_eq!(history("a"), history("b"));
}

#[test]
fn sweep_rows_satisfy_bookkeeping_identity() {
    let dir = scratch("sweep");
    let cfg = write_config(&dir, GAUSSIAN, "betas = [0.6, 1, 2, 5]");
    let out = run(ebrd().args(["sweep", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(0));
    let (header, rows) = csv_rows(&dir.join("out/rd_points.csv"));
    assert_eq!(
        header,
        ["beta", "rate_nats", "distortion", "loss_hat", "n_samples", "seed", "oracle_rate_nats"]
    );
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let f = |i: usize| r[i].parse::<f64>().unwrap();
        let (beta, rate, d, loss) = (f(0), f(1), f(2), f(3));
        assert!((loss - (rate + beta * d)).abs() <= 1e-12 * loss.abs().max(1.0), "{r:?}");
        assert_eq!(r[4], "200");
    }
    assert!(dir.join("out/rd_curve.svg").exists());
    assert_eq!(std::fs::read_dir(dir.join("out/models")).unwrap().count(), 4);
}

#[test]
fn vector_sweep_plot_shows_waterfilling_curve() {
    let dir = scratch("vector");
    let cfg = write_config(&dir, "kind = \"vector_gaussian\"\ndim = 2", "betas = [1.0]");
    let out = run(ebrd().args(["sweep", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(0));
    let svg = std::fs::read_to_string(dir.join("out/rd_curve.svg")).unwrap();
    assert!(svg.contains("water-filling oracle"));
    assert!(svg.contains("<polyline"));
}

#[test]
fn laplacian_sweep_oracle_column() {
    let dir = scratch("laplace");
    let cfg = write_config(&dir, "kind = \"scalar_laplacian\"", "betas = [1.5, 3.0]\nemit = [\"csv\"]");
    let out = run(ebrd().args(["sweep", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(0));
    let (_, rows) = csv_rows(&dir.join("out/rd_points.csv"));
    assert_eq!(rows.len(), 2);
    for r in rows {
        let d: f64 = r[2].parse().unwrap();
        let oracle: f64 = r[6].parse().unwrap();
        assert_eq!(oracle, laplacian_rd(d).unwrap());
    }
    assert!(!dir.join("out/rd_curve.svg").exists());
}

#[test]
fn failing_beta_keeps_partial_results() {
    let dir = scratch("partial");
    let path = dir.join("run.toml");
    let text = format!(
        "output_dir = {:?}\nbetas = [0.5, 10000.0]\neval_n = 100\n[net]\nhidden_widths = [4]\n\
         [train]\niterations = 5\nbatch_size = 16\nlangevin = {{ steps = 10, step_size = 1.0 }}\n\
         [source]\nkind = \"scalar_gaussian\"\n",
        dir.join("out")
    );
    std::fs::write(&path, text).unwrap();
    let out = run(ebrd().args(["sweep", "--config"]).arg(&path));
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
    let (_, rows) = csv_rows(&dir.join("out/rd_points.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "0.5");
}

#[test]
fn oracle_gaussian_rows() {
    let out = run(ebrd().args(["oracle", "--source", "gaussian", "--distortions", "0.25,1.0"]));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], 0.25);
    assert!((rows[0][1] - 0.6931).abs() < 1e-4);
    assert_eq!(rows[1], [1.0, 0.0]);
}

#[test]
fn oracle_vector_gaussian_matches_waterfilling() {
    let out = run(ebrd().args(["oracle", "--source", "vector-gaussian", "--dim", "2", "--distortions", "0.6"]));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<f64> = text.lines().nth(1).unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    let vars: Vec<f64> = paper_eigen_stds(2).iter().map(|s| s * s).collect();
    assert_eq!(row[1], vector_gaussian_rd(&vars, 0.6).unwrap().rate);

    let out = run(ebrd().args(["oracle", "--source", "vector-gaussian", "--eigen-vars", "1,0.5", "--distortions", "0.6"]));
    let text = String::from_utf8(out.stdout).unwrap();
    let rate: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!((rate - 0.8574).abs() < 1e-4);
}

#[test]
fn oracle_writes_files_with_out() {
    let dir = scratch("oracle-out");
    let out = run(ebrd()
        .args(["oracle", "--source", "laplacian", "--emit", "csv,svg", "--out"])
        .arg(&dir));
    assert!(out.status.success());
    let (header, rows) = csv_rows(&dir.join("oracle.csv"));
    assert_eq!(header, ["distortion", "rate_nats"]);
    assert_eq!(rows.len(), 40);
    assert!(dir.join("oracle.svg").exists());
}

#[test]
fn ba_binary_hamming() {
    let beta = 3f64.ln().to_string();
    let out = run(ebrd().args(["ba", "--source", "binary", "--betas", &beta]));
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    let rate: f64 = row[1].parse().unwrap();
    let d: f64 = row[2].parse().unwrap();
    assert!((d - 0.25).abs() < 1e-3);
    assert!((rate - 0.1308).abs() < 1e-3);
    assert_eq!(row[5], "true");

    let out = run(ebrd().args(["oracle", "--method", "ba", "--source", "binary", "--betas", &beta]));
    assert!(out.status.success());
}

#[test]
fn unsupported_combinations_exit_2() {
    for args in [
        vec!["ba", "--source", "vector-gaussian"],
        vec!["oracle", "--method", "ba", "--source", "gmm"],
        vec!["oracle", "--source", "gmm"],
        vec!["oracle", "--source", "binary"],
        vec!["oracle"],
    ] {
        let out = run(ebrd().args(&args));
        assert_eq!(out.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn ba_non_convergence_exits_1_with_last_iterate() {
    let dir = scratch("ba-noconv");
    let out = run(ebrd()
        .args(["ba", "--source", "gaussian", "--betas", "1", "--max-iters", "5", "--points", "51", "--out"])
        .arg(&dir));
    assert_eq!(out.status.code(), Some(1));
    let (_, rows) = csv_rows(&dir.join("ba.csv"));
    assert_eq!(rows[0][4], "5");
    assert_eq!(rows[0][5], "false");
}

fn trained_model(dir: &Path, source: &str) -> PathBuf {
    let cfg = write_config(dir, source, "");
    let out = run(ebrd().args(["train", "--config"]).arg(&cfg));
    assert!(out.status.success());
    cfg
}

#[test]
fn sample_conditional_outputs() {
    let dir = scratch("samples");
    let cfg = trained_model(&dir, "kind = \"vector_gaussian\"\ndim = 2");

    let out = run(ebrd().args(["sample-conditional", "--n", "0", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(dir.join("out/samples.csv")).unwrap(), "x_0,x_1,y_0,y_1\n");

    let sample = || {
        let out = run(ebrd().args(["sample-conditional", "--n", "50", "--seed", "3", "--config"]).arg(&cfg));
        assert!(out.status.success());
        std::fs::read(dir.join("out/samples.csv")).unwrap()
    };
    let a = sample();
    assert_eq!(a, sample());
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 51);
    assert!(dir.join("out/samples.svg").exists());
}

#[test]
fn sample_conditional_dimension_mismatch() {
    let dir = scratch("mismatch");
    trained_model(&dir, GAUSSIAN);
    let other = dir.join("other.toml");
    std::fs::write(
        &other,
        format!("output_dir = {:?}\n[source]\nkind = \"vector_gaussian\"\ndim = 2\n", dir.join("out")),
    )
    .unwrap();
    let out = run(ebrd().args(["sample-conditional", "--n", "5", "--config"]).arg(&other));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension"));
}

#[test]
fn probe_writes_one_row_per_n() {
    let dir = scratch("probe");
    let cfg = trained_model(&dir, GAUSSIAN);
    let out = run(ebrd()
        .args(["probe-convergence", "--n-list", "10,40", "--repeats", "3", "--config"])
        .arg(&cfg));
    assert_eq!(out.status.code(), Some(0));
    let (header, rows) = csv_rows(&dir.join("out/probe.csv"));
    assert_eq!(header, ["n", "mean_loss", "std_loss", "degenerate"]);
    assert_eq!(rows.len(), 2);
}

#[test]
fn high_beta_gmm_reconstructs_its_input() {
    let dir = scratch("gmm");
    let path = dir.join("gmm.toml");
    let text = format!(
        r#"output_dir = {:?}
[source]
kind = "gaussian_mixture"
[net]
hidden_widths = [32, 32]
[train]
beta = 50.0
iterations = 600
batch_size = 128
learning_rate = 3e-3
stop_rule = {{ min_iterations = 600 }}
langevin = {{ steps = 300, step_size = 0.08 }}
"#,
        dir.join("out")
    );
    std::fs::write(&path, text).unwrap();
    assert_eq!(run(ebrd().args(["train", "--config"]).arg(&path)).status.code(), Some(0));
    let out = run(ebrd()
        .args(["sample-conditional", "--n", "2000", "--config"])
        .arg(&path));
    assert_eq!(out.status.code(), Some(0));

    let (header, rows) = csv_rows(&dir.join("out/samples.csv"));
    assert_eq!(header, ["x_0", "x_1", "y_0", "y_1"]);
    assert_eq!(rows.len(), 2000);
    let msd = rows
        .iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().map(|s| s.parse().unwrap()).collect();
            (v[0] - v[2]).powi(2) + (v[1] - v[3]).powi(2)
        })
        .sum::<f64>()
        / rows.len() as f64;
    assert!(msd <= 0.05, "mean squared displacement {msd}");
}
