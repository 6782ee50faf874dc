use std::path::Path;
use std::process::{Command, Output};

use tt_complete::diagnostics::relative_error;
use tt_complete::tt::load_container;

fn ttc(args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ttc"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "ttc {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

#[test]
fn gen_init_complete_diag_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = p(d, "cfg.json");
    std::fs::write(
        &cfg,
        r#"{"shape":[12,12,12],"ranks":[2,2],"n":5000,"seed":4,"rel_change_tol":1e-6}"#,
    )
    .unwrap();
    ttc(&[
        "gen",
        "--config",
        &cfg,
        "--truth",
        &p(d, "truth.ttc"),
        "--obs",
        &p(d, "obs.txt"),
    ]);

    ttc(&[
        "init",
        "--config",
        &cfg,
        "--obs",
        &p(d, "obs.txt"),
        "--out",
        &p(d, "t0.ttc"),
        "--report",
        &p(d, "report.json"),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p(d, "report.json")).unwrap()).unwrap();
    assert_eq!(report["stages"].as_array().unwrap().len(), 2);
    assert!(report["nu_hat"].as_f64().unwrap() >= 1.0);

    let out = ttc(&[
        "complete",
        "--config",
        &cfg,
        "--obs",
        &p(d, "obs.txt"),
        "--init",
        &p(d, "t0.ttc"),
        "--truth",
        &p(d, "truth.ttc"),
        "--trace",
        &p(d, "trace.csv"),
        "--out",
        &p(d, "est.ttc"),
    ]);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let reported = summary["relative_error"].as_f64().unwrap();
    let truth = load_container(p(d, "truth.ttc")).unwrap();
    let est = load_container(p(d, "est.ttc")).unwrap();
    assert!((relative_error(&est, &truth).unwrap() - reported).abs() < 1e-12);
    assert!(reported < 1e-3, "{reported}");
    let trace = std::fs::read_to_string(p(d, "trace.csv")).unwrap();
    assert!(trace.starts_with("iter,f,grad_norm,rel_change,trim_count,wall_ms,rel_err\n"));

    let out = ttc(&[
        "diag",
        "--tensor",
        &p(d, "est.ttc"),
        "--reference",
        &p(d, "truth.ttc"),
    ]);
    let diag: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(diag["ranks"], serde_json::json!([2, 2]));
    assert!(diag["spikiness"].as_f64().unwrap() >= 1.0);
}

#[test]
fn complete_without_init_and_naive_init() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = ["--shape", "10,10,10", "--ranks", "2,2", "--n", "3000"];
    let mut args = vec!["gen", "--truth", "", "--obs", ""];
    let (truth, obs) = (p(d, "truth.ttc"), p(d, "obs.txt"));
    args[2] = &truth;
    args[4] = &obs;
    args.extend(common);
    ttc(&args);
    let naive = p(d, "naive.ttc");
    ttc(&[
        "init",
        "--naive-init",
        "--ranks",
        "2,2",
        "--obs",
        &obs,
        "--out",
        &naive,
    ]);
    assert_eq!(load_container(&naive).unwrap().ranks().as_slice(), &[2, 2]);
    let est = p(d, "est.ttc");
    ttc(&["complete", "--ranks", "2,2", "--obs", &obs, "--out", &est]);
    let err = relative_error(
        &load_container(&est).unwrap(),
        &load_container(&truth).unwrap(),
    )
    .unwrap();
    assert!(err < 1e-2, "{err}");
}

#[test]
fn ttsvd_of_a_full_listing_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // write every entry of a rank-(1,2) tensor
    let mut text = String::from("# shape 3 4 2\n");
    for i in 0..3 {
        for j in 0..4 {
            for k in 0..2 {
                let v = (i + 1) as f64 * ((j as f64) + (k as f64) * (j * j) as f64 + 0.5);
                text.push_str(&format!("{i} {j} {k} {v:?}\n"));
            }
        }
    }
    let input = p(d, "full.txt");
    std::fs::write(&input, text).unwrap();
    let out = ttc(&[
        "ttsvd",
        "--input",
        &input,
        "--ranks",
        "1,2",
        "--out",
        &p(d, "t.ttc"),
    ]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["relative_error"].as_f64().unwrap() < 1e-12);
}

#[test]
fn phase_grid_csv_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |name: &str| {
        let out = p(d, name);
        ttc(&[
            "phase",
            "--dims",
            "8",
            "--ns",
            "0,1500",
            "--trials",
            "2",
            "--jobs",
            "2",
            "--max-iters",
            "100",
            "--out",
            &out,
        ]);
        std::fs::read_to_string(out).unwrap()
    };
    let strip = |csv: String| -> Vec<String> {
        csv.lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(8);
                f.join(",")
            })
            .collect()
    };
    let a = run("a.csv");
    assert!(a.starts_with("d,ranks,n,trial,seed,iters,rel_err,success,wall_ms,init_rel_err\n"));
    assert_eq!(a.lines().count(), 5);
    assert_eq!(strip(a), strip(run("b.csv")));
}

#[test]
fn sweep_convergence_and_bench_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sweep = p(d, "sweep.csv");
    ttc(&[
        "ranksweep",
        "--dims",
        "8",
        "--rank-list",
        "1,1;2,2",
        "--ns",
        "1500",
        "--trials",
        "1",
        "--out",
        &sweep,
    ]);
    let text = std::fs::read_to_string(&sweep).unwrap();
    assert!(text.contains(",1x1,") && text.contains(",2x2,"));

    let conv = p(d, "conv.csv");
    ttc(&[
        "convergence",
        "--shape",
        "8,8,8",
        "--ranks",
        "2,2",
        "--n",
        "1500",
        "--out",
        &conv,
    ]);
    let text = std::fs::read_to_string(&conv).unwrap();
    assert!(text.lines().next().unwrap().ends_with(",rel_err"));

    let bench = p(d, "bench.csv");
    ttc(&[
        "bench", "--dims", "8,10", "--ns", "1500", "--trials", "1", "--out", &bench,
    ]);
    let text = std::fs::read_to_string(&bench).unwrap();
    assert!(text.starts_with("d,ranks,n,trial,seed,iters,init_ms,total_ms,per_iter_ms,rel_err\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn bad_input_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_ttc"))
        .args(["phase", "--trials", "0"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("trials"));
    let out = Command::new(env!("CARGO_BIN_EXE_ttc"))
        .args(["diag", "--tensor", "/nonexistent.ttc"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
