//! End-to-end tests of the `dircs` binary: file formats, determinism,
//! exit codes, and the socket server/worker pair as real processes.

use std::fs;
use std::path::Path;
use std::process::{Command, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dircs"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

const SMALL_CONF: &str = "\
p = 4
m = 3
n = 30
allocation = equal
theta_max = pi/8
rho = 0.3
channels = 0.1:0.75, 0.2:0.125
lambda = 0.8
lambda_grid = 0.4,0.8
alpha = 0.05
rounds = 40
epochs = 3
seed = 99
";

#[test]
fn gen_is_deterministic_and_creates_all_files() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "small.conf", SMALL_CONF);
    for out in ["a", "b"] {
        let status = bin()
            .args(["gen", "--config"])
            .arg(&conf)
            .args(["--out"])
            .arg(tmp.path().join(out))
            .status()
            .unwrap();
        assert!(status.success());
    }
    for j in 0..3 {
        let fa = fs::read(tmp.path().join("a").join(format!("node_{j}.csv"))).unwrap();
        let fb = fs::read(tmp.path().join("b").join(format!("node_{j}.csv"))).unwrap();
        assert_eq!(fa, fb, "node {j} files differ across identical seeds");
    }
    let ta = fs::read(tmp.path().join("a/truth.csv")).unwrap();
    let tb = fs::read(tmp.path().join("b/truth.csv")).unwrap();
    assert_eq!(ta, tb);
    // Generated truths satisfy the pairwise similarity bound.
    let truths = dircs::datagen::read_truth_csv(&tmp.path().join("a/truth.csv")).unwrap();
    let family: Vec<_> = truths.into_iter().map(|(_, t)| t.beta).collect();
    let min_cos = dircs::datagen::min_pairwise_abs_cos(&family).unwrap();
    assert!(
        min_cos >= (std::f64::consts::FRAC_PI_8).cos() - 1e-12,
        "pairwise |cos| {min_cos}"
    );
    // A different seed changes the bytes.
    let status = bin()
        .args(["gen", "--config"])
        .arg(&conf)
        .args(["--seed", "100", "--out"])
        .arg(tmp.path().join("c"))
        .status()
        .unwrap();
    assert!(status.success());
    let tc = fs::read(tmp.path().join("c/truth.csv")).unwrap();
    assert_ne!(ta, tc);
}

#[test]
fn run_methods_emit_results_and_traces() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "small.conf", SMALL_CONF);
    let data = tmp.path().join("data");
    assert!(bin()
        .args(["gen", "--config"])
        .arg(&conf)
        .args(["--out"])
        .arg(&data)
        .status()
        .unwrap()
        .success());
    for method in ["sls", "pls", "dir", "cir"] {
        let out = tmp.path().join(format!("out_{method}"));
        let status = bin()
            .args(["run", "--config"])
            .arg(&conf)
            .args(["--data"])
            .arg(&data)
            .args(["--method", method, "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "method {method} failed");
        let results = fs::read_to_string(out.join("results.csv")).unwrap();
        let mut lines = results.lines();
        assert_eq!(
            lines.next().unwrap(),
            "scenario_id,rep,node_id,method,lambda,l2_error,abs_cosine,improved"
        );
        assert_eq!(lines.count(), 3, "one row per node for {method}");
        let has_trace = out.join("trace.csv").exists();
        assert_eq!(has_trace, method == "dir" || method == "cir");
        if has_trace {
            let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
            assert!(trace.starts_with("round,objective,comm_scalars,wall_ms\n"));
            let diag = fs::read_to_string(out.join("diagnostics.csv")).unwrap();
            assert!(diag.starts_with("node_id,corrected_ls_residual\n"));
            assert_eq!(diag.lines().count(), 1 + 3);
        }
    }
}

#[test]
fn reserved_method_and_bad_config_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "small.conf", SMALL_CONF);
    let data = tmp.path().join("data");
    assert!(bin()
        .args(["gen", "--config"])
        .arg(&conf)
        .args(["--out"])
        .arg(&data)
        .status()
        .unwrap()
        .success());
    // Reserved method id: config-class failure.
    let status = bin()
        .args(["run", "--config"])
        .arg(&conf)
        .args(["--data"])
        .arg(&data)
        .args(["--method", "drd", "--out"])
        .arg(tmp.path().join("drd"))
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
    // Unknown key reports the line and exits 2.
    let bad = write_config(tmp.path(), "bad.conf", "p = 4\nbanana = 1\n");
    let out = bin()
        .args(["gen", "--config"])
        .arg(&bad)
        .args(["--out"])
        .arg(tmp.path().join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
}

#[test]
fn tune_emits_report() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "small.conf", SMALL_CONF);
    let data = tmp.path().join("data");
    assert!(bin()
        .args(["gen", "--config"])
        .arg(&conf)
        .args(["--out"])
        .arg(&data)
        .status()
        .unwrap()
        .success());
    let out = tmp.path().join("tuned");
    let status = bin()
        .args(["tune", "--config"])
        .arg(&conf)
        .args(["--data"])
        .arg(&data)
        .args(["--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let report = fs::read_to_string(out.join("tune.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "lambda,rounds,val_accuracy,is_chosen"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows.iter().filter(|r| r.ends_with(",1")).count(), 1);
}

#[test]
fn sweep_emits_rows_and_aggregate() {
    let tmp = tempfile::tempdir().unwrap();
    let plan = write_config(
        tmp.path(),
        "plan.conf",
        "p = 4\nm = 3\nn = 30\ntheta_max = pi/8\nrounds = 30\nepochs = 3\nseed = 5\n\
         sweep = n\nsweep_values = 30,40\nreplications = 2\nmethods = dir,sls\n",
    );
    let out = tmp.path().join("sweep");
    let status = bin()
        .args(["sweep", "--plan"])
        .arg(&plan)
        .args(["--threads", "2", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let rows = fs::read_to_string(out.join("rows.csv")).unwrap();
    // 2 scenarios x 2 reps x 3 nodes x 2 methods data rows plus header.
    assert_eq!(rows.lines().count(), 1 + 2 * 2 * 3 * 2);
    let agg = fs::read_to_string(out.join("aggregate.csv")).unwrap();
    assert!(agg.starts_with(
        "scenario_id,method,nodes,mean_l2_error,mean_abs_cosine,q1_abs_cosine,median_abs_cosine,q3_abs_cosine,improved_ratio"
    ));
    // Aggregates: one row per (scenario, method).
    assert_eq!(agg.lines().count(), 1 + 2 * 2);
}

#[test]
fn serve_and_node_processes_agree_with_in_memory_run() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path(), "small.conf", SMALL_CONF);
    let data = tmp.path().join("data");
    assert!(bin()
        .args(["gen", "--config"])
        .arg(&conf)
        .args(["--out"])
        .arg(&data)
        .status()
        .unwrap()
        .success());

    // Reference in-memory run.
    let mem_out = tmp.path().join("mem");
    assert!(bin()
        .args(["run", "--config"])
        .arg(&conf)
        .args(["--data"])
        .arg(&data)
        .args(["--method", "dir", "--out"])
        .arg(&mem_out)
        .status()
        .unwrap()
        .success());

    // Socket run: server plus three worker processes.
    let sock_out = tmp.path().join("sock");
    let port = 47311;
    let mut server = bin()
        .args(["serve", "--config"])
        .arg(&conf)
        .args(["--data"])
        .arg(&data)
        .args(["--bind", &format!("127.0.0.1:{port}"), "--out"])
        .arg(&sock_out)
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    std::thread::sleep(std::time::Duration::from_millis(300));
    let workers: Vec<_> = (0..3)
        .map(|j| {
            bin()
                .args(["node", "--config"])
                .arg(&conf)
                .args(["--data"])
                .arg(&data)
                .args([
                    "--node-id",
                    &j.to_string(),
                    "--connect",
                    &format!("127.0.0.1:{port}"),
                ])
                .stdout(Stdio::null())
                .spawn()
                .unwrap()
        })
        .collect();
    let server_status = server.wait().unwrap();
    assert!(server_status.success());
    for mut w in workers {
        assert!(w.wait().unwrap().success());
    }

    let mem = fs::read_to_string(mem_out.join("results.csv")).unwrap();
    let sock = fs::read_to_string(sock_out.join("results.csv")).unwrap();
    // Identical evaluations, bit for bit, modulo the scenario id column.
    let strip = |s: &str| -> Vec<String> {
        s.lines()
            .skip(1)
            .map(|l| l.split_once(',').unwrap().1.to_string())
            .collect()
    };
    assert_eq!(strip(&mem), strip(&sock));
}

#[test]
fn check_subcommand_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["check", "--out"])
        .arg(tmp.path())
        .stdout(Stdio::null())
        .status()
        .unwrap();
    assert!(status.success());
    let csv = fs::read_to_string(tmp.path().join("checks.csv")).unwrap();
    assert!(csv.starts_with("check,instances,max_deviation,status,seed"));
    assert!(csv.contains("report-only"));
}
