use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lmlc::cli::ReportFile;
use lmlc::model::ModelKind;
use tempfile::TempDir;

const TABLE: &str = "a,b,c,d\n30,12,8,4\n10,80,20,6\n5,22,90,12\n3,5,14,70\n";

fn lmlc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmlc"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let w = |name: &str, body: &str| fs::write(dir.path().join(name), body).unwrap();
    w("t.csv", TABLE);
    w("qs.json", r#"{"kind": "qs", "I": 4}"#);
    w("oqs.json", r#"{"kind": "oqs", "I": 4}"#);
    w("s.json", r#"{"kind": "symmetry", "I": 4, "sampling": {"scheme": "multinomial"}}"#);
    w("sat.json", r#"{"kind": "saturated", "I": 4}"#);
    w("mh.json", r#"{"kind": "mh", "I": 4}"#);
    dir
}

fn report(dir: &Path, name: &str) -> ReportFile {
    ReportFile::read(&dir.join(name)).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn fit_writes_a_report() {
    let dir = workspace();
    let o = lmlc(dir.path(), &["fit", "--table", "t.csv", "--model", "s.json", "--lambda2", "0", "--out", "r.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("converged true"));
    let r = report(dir.path(), "r.json");
    assert_eq!(r.command, "fit");
    assert_eq!(r.input.counts.iter().sum::<u64>(), 391);
    let f = &r.fit[0];
    assert!(f.converged);
    // (n_12 + n_21) / 2
    assert!((f.m_hat[1] - 11.0).abs() < 1e-6);
    assert_eq!(f.theta.len(), 10);
}

#[test]
fn gof_degrees_of_freedom_follow_the_model() {
    let dir = workspace();
    for (spec, df) in [("qs.json", 3), ("oqs.json", 5), ("s.json", 6), ("mh.json", 3)] {
        let o = lmlc(
            dir.path(),
            &["gof", "--table", "t.csv", "--model", spec, "--lambda1", "1", "--lambda2", "0", "--alpha", "0.05", "--out", "g.json"],
        );
        assert!(o.status.success(), "{spec}: {}", stderr(&o));
        let r = report(dir.path(), "g.json");
        let m = &r.model[0];
        assert_eq!(m.k - m.t + m.r, df, "{spec}");
        assert_eq!(r.test[0].df, df, "{spec}");
        assert_eq!(r.test[0].reject, r.test[0].statistic > r.test[0].critical_value);
    }
}

#[test]
fn reports_round_trip_at_full_precision() {
    let dir = workspace();
    let o = lmlc(dir.path(), &["gof", "--table", "t.csv", "--model", "mh.json", "--lambda2", "2/3", "--out", "g.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("g.json")).unwrap();
    let r = ReportFile::from_json(&text).unwrap();
    assert_eq!(r.input.lambda2, Some(2.0 / 3.0));
    assert_eq!(r.to_json().unwrap(), text);
    assert!(text.contains("6.6666666666666663e-1"));
}

#[test]
fn nested_and_sequence() {
    let dir = workspace();
    let o = lmlc(dir.path(), &["nested", "--table", "t.csv", "--model", "qs.json", "--model2", "s.json", "--out", "n.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(dir.path(), "n.json");
    assert_eq!(r.test[0].df, 3);
    assert_eq!(r.fit.len(), 2);

    let o = lmlc(dir.path(), &["nested", "--table", "t.csv", "--model", "s.json", "--model2", "qs.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not nested"));

    let o = lmlc(
        dir.path(),
        &["sequence", "--table", "t.csv", "--model", "sat.json", "oqs.json", "s.json", "--form", "s", "--lambda1", "0", "--lambda2", "0", "--out", "q.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let o2 = lmlc(dir.path(), &["sequence", "--table", "t.csv", "--model", "sat.json", "s.json", "--form", "s"]);
    assert_eq!(o2.status.code(), Some(1));
    let r = report(dir.path(), "q.json");
    let seq = r.sequence.unwrap();
    assert!((seq.per_test_level - (1.0 - 0.95f64.sqrt())).abs() < 1e-12);
    assert!(seq.b_star >= 1 && seq.b_star <= 3);
    assert_eq!(r.model.iter().map(|m| m.kind).collect::<Vec<_>>(), [
        ModelKind::Saturated,
        ModelKind::OrdinalQuasiSymmetry,
        ModelKind::Symmetry
    ]);
}

#[test]
fn custom_model_from_matrices() {
    let dir = workspace();
    let sub = dir.path().join("custom");
    fs::create_dir(&sub).unwrap();
    // Independence in a 2 × 2 table, Poisson sampling.
    fs::write(sub.join("x.csv"), "1,0,0\n1,0,1\n1,1,0\n1,1,1\n").unwrap();
    fs::write(
        sub.join("m.json"),
        r#"{"kind": "custom", "sampling": {"scheme": "poisson"}, "custom": {"design_csv": "x.csv"}}"#,
    )
    .unwrap();
    fs::write(dir.path().join("two.csv"), "10,20\n30,40\n").unwrap();
    let o = lmlc(dir.path(), &["gof", "--table", "two.csv", "--model", "custom/m.json", "--out", "c.json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r = report(dir.path(), "c.json");
    assert_eq!(r.test[0].df, 1);
    // Independence fit: row total × column total / N.
    assert!((r.fit[0].m_hat[0] - 30.0 * 40.0 / 100.0).abs() < 1e-6);
}

#[test]
fn exit_codes() {
    let dir = workspace();
    fs::write(dir.path().join("ragged.csv"), "1,2\n3\n").unwrap();
    fs::write(dir.path().join("small.csv"), "1,2,3\n4,5,6\n7,8,9\n").unwrap();

    let o = lmlc(dir.path(), &["fit", "--table", "ragged.csv", "--model", "s.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("row 2"), "{}", stderr(&o));

    let o = lmlc(dir.path(), &["fit", "--table", "small.csv", "--model", "s.json"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = lmlc(dir.path(), &["gof", "--table", "t.csv"]);
    assert_eq!(o.status.code(), Some(2));
    let o = lmlc(dir.path(), &["gof", "--table", "t.csv", "--model", "s.json", "--lambda1", "two"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reproduce_fixture_probabilities() {
    let dir = workspace();
    let o = lmlc(dir.path(), &["reproduce", "--what", "table1", "--out", "t1.json"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("max deviation"));
    let t = report(dir.path(), "t1.json").table1.unwrap();
    assert!(t.max_deviation_s < 5e-5 && t.max_deviation_mh < 5e-5);
    assert!((t.from_theta_s.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

fn write_config(dir: &Path) -> PathBuf {
    let p = dir.join("sim.json");
    fs::write(
        &p,
        r#"{"n_grid": [150], "R": 60, "alpha": 0.05, "lambda1_grid": [0, "2/3"],
            "lambda2_grid": [0], "master_seed": 11,
            "strategies": ["Unconditional43", "ConditionalOQS_44_45"], "power_points": [3, 9]}"#,
    )
    .unwrap();
    p
}

#[test]
fn simulate_is_deterministic_across_workers() {
    let dir = workspace();
    write_config(dir.path());
    let a = lmlc(dir.path(), &["simulate", "sim.json", "--workers", "1", "--out", "a.json"]);
    let b = lmlc(dir.path(), &["simulate", "sim.json", "--workers", "3", "--out", "b.json"]);
    assert!(a.status.success() && b.status.success(), "{}", stderr(&a));
    let (ra, rb) = (report(dir.path(), "a.json"), report(dir.path(), "b.json"));
    let (sa, sb) = (ra.simulation.unwrap(), rb.simulation.unwrap());
    assert_eq!(sa.sizes, sb.sizes);
    assert_eq!(sa.powers, sb.powers);
    assert_eq!(sa.sizes.len(), 4);
    assert_eq!(sa.powers.len(), 8);

    let c = lmlc(dir.path(), &["simulate", "sim.json", "--seed", "12", "--out", "c.json"]);
    assert!(c.status.success());
    assert_ne!(report(dir.path(), "c.json").simulation.unwrap().sizes, sa.sizes);
}

#[test]
fn reproduce_size_table_subset() {
    let dir = workspace();
    let o = lmlc(
        dir.path(),
        &["reproduce", "--what", "table2", "--n", "100", "--R", "40", "--lambda1", "-0.5", "1", "--lambda2", "0", "--out", "t2.json"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let sim = report(dir.path(), "t2.json").simulation.unwrap();
    assert_eq!(sim.sizes.len(), 2 * 3);
    assert!(sim.sizes.iter().all(|e| e.n == 100 && e.lambda2 == 0.0));
    assert!(stdout(&o).contains("ConditionalQS_30_42"));
}
