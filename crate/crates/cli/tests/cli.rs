use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const TRUTH: &str = r#"{"weights":[0.5,0.5],"means":[[-2.0,0.0],[2.0,0.0]],
  "covariances":[[[1.0,0.2],[0.2,0.8]],[[1.0,0.2],[0.2,0.8]]],"seed":11}"#;
const SWAPPED: &str = r#"{"weights":[0.5,0.5],"means":[[2.0,0.0],[-2.0,0.0]],
  "covariances":[[[1.0,0.2],[0.2,0.8]],[[1.0,0.2],[0.2,0.8]]],"seed":11}"#;

fn lrvb(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrvb"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = lrvb(args, dir);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("truth.json"), TRUTH).unwrap();
    fs::write(dir.path().join("swapped.json"), SWAPPED).unwrap();
    let p = dir.path().to_path_buf();
    (dir, p)
}

fn data_lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(String::from)
        .collect()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn simulate_paper_regime_is_deterministic() {
    let (_t, d) = setup();
    ok(&["simulate", "--config", "truth.json", "--n", "10000", "--seed", "4", "--out", "a.csv"], &d);
    ok(&["simulate", "--config", "truth.json", "--n", "10000", "--seed", "4", "--out", "b.csv"], &d);
    let a = data_lines(&d.join("a.csv"));
    assert_eq!(a.len(), 10_001);
    assert_eq!(a[0], "x1,x2");
    assert!(a[1..].iter().all(|l| l.split(',').count() == 2));
    assert_eq!(a, data_lines(&d.join("b.csv")));
    assert_eq!(data_lines(&d.join("truth-assignments.csv")).len(), 10_001);
    let head = fs::read_to_string(d.join("a.csv")).unwrap();
    let prov: Value = serde_json::from_str(head.lines().next().unwrap().strip_prefix("# ").unwrap()).unwrap();
    assert_eq!(prov["layout"]["alpha_dim"], 20);
    assert_eq!(prov["config_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn invalid_inputs_exit_with_validation_code() {
    let (_t, d) = setup();
    let out = lrvb(&["simulate", "--config", "truth.json", "--n", "0", "--out", "x.csv"], &d);
    assert_eq!(out.status.code(), Some(2));
    fs::write(d.join("bad.json"), "{\"weights\": [1.0]").unwrap();
    let out = lrvb(&["simulate", "--config", "bad.json", "--n", "5", "--out", "x.csv"], &d);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
    assert_eq!(lrvb(&["fit", "--data", "missing.csv", "--k", "2", "--out", "s.json"], &d).status.code(), Some(2));
    assert_eq!(lrvb(&["mvn-demo", "--rho", "1.5"], &d).status.code(), Some(2));
    assert_eq!(lrvb(&["no-such-command"], &d).status.code(), Some(2));
}

#[test]
fn unconverged_fit_exits_numerical_and_warns_downstream() {
    let (_t, d) = setup();
    ok(&["simulate", "--config", "truth.json", "--n", "300", "--out", "data.csv"], &d);
    let out = lrvb(&["fit", "--data", "data.csv", "--k", "2", "--max-iter", "1", "--out", "s.json"], &d);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(json(&d.join("s.json"))["report"]["converged"], false);
    ok(&["lrvb", "--state", "s.json", "--data", "data.csv", "--out", "l.json"], &d);
    let warnings = json(&d.join("l.json"))["provenance"]["warnings"].clone();
    assert!(warnings[0].as_str().unwrap().contains("did not converge"));
}

#[test]
fn pipeline_end_to_end() {
    let (_t, d) = setup();
    ok(&["simulate", "--config", "truth.json", "--n", "10000", "--out", "data.csv"], &d);
    ok(&["fit", "--data", "data.csv", "--init", "truth", "--truth", "truth.json", "--out", "state.json"], &d);
    let state = json(&d.join("state.json"));
    assert_eq!(state["report"]["converged"], true);
    assert_eq!(state["provenance"]["layout"]["n"], 10_000);

    ok(&["lrvb", "--state", "state.json", "--data", "data.csv", "--out", "lrvb.json"], &d);
    let l = json(&d.join("lrvb.json"));
    let (lr, mf) = (floats(&l["lrvb_sd"]), floats(&l["mfvb_sd"]));
    assert_eq!(lr.len(), 20);
    assert!(lr.iter().zip(&mf).all(|(a, b)| *a >= b * (1.0 - 1e-9)));

    ok(
        &["gibbs", "--data", "data.csv", "--init", "truth.json", "--iters", "300", "--burn", "50", "--out", "gibbs.json"],
        &d,
    );
    let refused = lrvb(&["compare", "--gibbs", "gibbs.json", "--lrvb", "lrvb.json", "--out", "compare.csv"], &d);
    assert_eq!(refused.status.code(), Some(2));
    ok(&["compare", "--gibbs", "gibbs.json", "--lrvb", "lrvb.json", "--out", "compare.csv", "--force"], &d);
    let rows = data_lines(&d.join("compare.csv"));
    assert_eq!(rows[0], "statistic,gibbs_sd,gibbs_se,mfvb_sd,lrvb_sd,gibbs_cov_offdiag,lrvb_cov_offdiag");
    assert_eq!(rows.len(), 21);
    assert_eq!(rows[1].split(',').nth(5).unwrap().split(';').count(), 19);
    assert_eq!(data_lines(&d.join("compare-pairs.csv")).len(), 1 + 20 * 19 / 2);
}

#[test]
fn influence_table_shape() {
    let (_t, d) = setup();
    ok(&["simulate", "--config", "truth.json", "--n", "40", "--out", "data.csv"], &d);
    ok(&["fit", "--data", "data.csv", "--k", "2", "--out", "state.json"], &d);
    ok(
        &["influence", "--state", "state.json", "--data", "data.csv", "--out", "inf.csv", "--directional-out", "dir.csv"],
        &d,
    );
    assert_eq!(data_lines(&d.join("inf.csv")).len(), 1 + 20 * 40 * 2);
    assert_eq!(data_lines(&d.join("dir.csv")).len(), 1 + 40 * 2);
    ok(
        &["influence", "--state", "state.json", "--data", "data.csv", "--out", "inf2.csv", "--second-order"],
        &d,
    );
    assert_eq!(data_lines(&d.join("inf2.csv")).len(), 1 + 20 * 40 * 5);
    let bad = lrvb(
        &["influence", "--state", "state.json", "--data", "data.csv", "--out", "x.csv", "--prefactor", "nope"],
        &d,
    );
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn component_swap_permutes_sds() {
    let (_t, d) = setup();
    ok(&["simulate", "--config", "truth.json", "--n", "2000", "--out", "data.csv"], &d);
    for (truth, out) in [("truth.json", "a"), ("swapped.json", "b")] {
        let state = format!("{out}.json");
        ok(&["fit", "--data", "data.csv", "--init", "truth", "--truth", truth, "--out", &state], &d);
        ok(&["lrvb", "--state", &state, "--data", "data.csv", "--out", &format!("{out}-lrvb.json")], &d);
    }
    let a = json(&d.join("a-lrvb.json"));
    let b = json(&d.join("b-lrvb.json"));
    let labels: Vec<String> = a["labels"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().into()).collect();
    let (sa, sb) = (floats(&a["lrvb_sd"]), floats(&b["lrvb_sd"]));
    let swap = |l: &str| {
        if l.starts_with("log_pi") {
            l.replace("[0]", "[x]").replace("[1]", "[0]").replace("[x]", "[1]")
        } else {
            let (name, rest) = l.split_once('[').unwrap();
            let (k, tail) = rest.split_once(']').unwrap();
            format!("{name}[{}]{tail}", 1 - k.parse::<usize>().unwrap())
        }
    };
    for (i, l) in labels.iter().enumerate() {
        let j = labels.iter().position(|m| *m == swap(l)).unwrap();
        assert!((sa[i] - sb[j]).abs() < 1e-6 * sa[i], "{l}");
    }
}

#[test]
fn scaling_sweep_rows() {
    let (_t, d) = setup();
    let stdout = ok(
        &["scaling", "--axis", "n", "--values", "1000,10000,100000", "--skip-gibbs", "--out", "scaling.csv"],
        &d,
    );
    assert!(stdout.contains("slope"));
    let rows = data_lines(&d.join("scaling.csv"));
    assert_eq!(rows.len(), 4);
    assert!(rows[0].starts_with("axis,value,lrvb_seconds,gibbs_seconds_to_1000_ess"));
    let secs: Vec<f64> = rows[1..].iter().map(|r| r.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(secs.windows(2).all(|w| w[0] < w[1]), "{secs:?}");
}

#[test]
fn scaling_with_gibbs() {
    let (_t, d) = setup();
    ok(
        &["scaling", "--axis", "p", "--values", "1,2", "--n", "500", "--gibbs-iters", "200", "--gibbs-burn", "20", "--out", "s.csv"],
        &d,
    );
    let rows = data_lines(&d.join("s.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows[1].split(',').nth(3).unwrap().parse::<f64>().unwrap() > 0.0);
}

#[test]
fn mvn_demo_table() {
    let (_t, d) = setup();
    let stdout = ok(&["mvn-demo", "--out", "mvn.csv"], &d);
    assert!(stdout.contains("0.19000000"));
    let rows = data_lines(&d.join("mvn.csv"));
    assert_eq!(rows.len(), 3);
    let lr: f64 = rows[1].split(',').nth(3).unwrap().parse().unwrap();
    assert!((lr - 1.0).abs() < 1e-10);
    fs::write(
        d.join("t.json"),
        r#"{"mu":[0,0,0],"sigma":[[2,0.5,0],[0.5,1,0.3],[0,0.3,1.5]],"partition":[[0,1],[2]]}"#,
    )
    .unwrap();
    let stdout = ok(&["mvn-demo", "--config", "t.json"], &d);
    assert!(stdout.contains("1.50000000"));
    fs::write(d.join("u.json"), r#"{"mu":[0,0],"sigma":[[1,0],[0,1]],"partition":[[0]]}"#).unwrap();
    assert_eq!(lrvb(&["mvn-demo", "--config", "u.json"], &d).status.code(), Some(2));
}
