use std::path::Path;
use std::process::{Command, Output};

fn scorelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scorelab")).args(args).output().unwrap()
}

fn write_config(dir: &Path, extra: &str) -> String {
    let text = format!(
        r#"seed = 5
[generator]
name = "sine"
[schedule]
sigma_data = 0.1
t0 = 0.01
T = 1.0
[mc]
n_data = 200
tail_draws = 2000
derivative_points = 5
construction_points = 300
{extra}"#
    );
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_config_is_a_configuration_error() {
    let o = scorelab(&["--config", "/nonexistent/cfg.toml", "tails"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn malformed_config_reports_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.toml");
    std::fs::write(&p, "seed = 1\n[generator]\nname = \"sine\"\n[schedule]\nsigma_data = \"x\"\n").unwrap();
    let o = scorelab(&["--config", p.to_str().unwrap(), "tails"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn tails_and_analytic_check_pass_and_append_records() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("out");
    for cmd in ["tails", "analytic-check"] {
        let o = scorelab(&["--config", &cfg, "--out", out.to_str().unwrap(), "--threads", "1", cmd]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", stderr(&o));
    }
    let csv = std::fs::read_to_string(out.join("records.csv")).unwrap();
    assert!(csv.starts_with("config_hash,seed,metric"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("config_hash")).count(), 1);
    assert!(csv.lines().count() >= 8);
    assert_eq!(std::fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("config-")).count(), 1);
}

#[test]
fn audit_fails_on_understated_holder_constant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let text = std::fs::read_to_string(&cfg).unwrap().replace("name = \"sine\"", "name = \"sine\"\nholder = 3.9");
    std::fs::write(&cfg, text).unwrap();
    let o = scorelab(&["--config", &cfg, "--out", dir.path().join("o").to_str().unwrap(), "audit"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("NO"));
}

#[test]
fn rates_rejects_the_oracle_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let o = scorelab(&["--config", &cfg, "--out", dir.path().to_str().unwrap(), "rates"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("slope is undefined"), "{}", stderr(&o));
}

#[test]
fn oracle_eval_and_construct_write_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = dir.path().join("o");
    let o = scorelab(&["--config", &cfg, "--out", out.to_str().unwrap(), "oracle-eval", "--grid", "5", "--times", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let names: Vec<String> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    let grid = names.iter().find(|n| n.starts_with("oracle-eval-")).unwrap();
    let text = std::fs::read_to_string(out.join(grid)).unwrap();
    assert_eq!(text.lines().count(), 11);

    // the sine generator with small sigma_data violates the smallness condition
    let o = scorelab(&["--config", &cfg, "--out", out.to_str().unwrap(), "construct", "--eps", "0.3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("smallness"), "{}", stderr(&o));
}

#[test]
fn train_then_sample_from_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let extra = "[estimator]\nkind = \"trained\"\nn = 200\n[estimator.train]\nn_epochs = 2\nhidden = [8, 8]\n[sampler]\nn_samples = 300\nn_steps = 20\n";
    let cfg = write_config(dir.path(), extra);
    let out = dir.path().join("o");
    let o = scorelab(&["--config", &cfg, "--out", out.to_str().unwrap(), "train"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let model = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.file_name().unwrap().to_string_lossy().starts_with("model-"))
        .unwrap();
    let o = scorelab(&["--config", &cfg, "--out", out.to_str().unwrap(), "sample", "--model", model.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o2 = scorelab(&["--config", &cfg, "--out", out.to_str().unwrap(), "end-to-end", "--model", model.to_str().unwrap()]);
    assert_eq!(o2.status.code(), Some(0), "{}", stderr(&o2));
}

#[test]
fn help_lists_every_subcommand() {
    let o = scorelab(&["--help"]);
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in [
        "oracle-eval",
        "construct",
        "verify-constructions",
        "train",
        "vincent",
        "sample",
        "end-to-end",
        "rates",
        "tails",
        "analytic-check",
        "audit",
    ] {
        assert!(text.contains(cmd), "{cmd}");
    }
}
