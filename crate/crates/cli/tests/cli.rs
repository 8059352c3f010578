use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lanerisk")).current_dir(dir).args(args).output().expect("spawn lanerisk")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("error: "), "{stderr}");
    stderr
}

fn lines(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

/// Default dataset plus one-epoch weights, shared by the tests that only read them.
fn fixture() -> &'static Path {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli_fixture");
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        ok(&dir, &["gen-data"]);
        ok(&dir, &["train", "--epochs", "1"]);
        ok(&dir, &["simulate"]);
        dir
    })
}

#[test]
fn gen_data_velocity_grid_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), &["gen-data", "--v-step", "1.0"]);
    assert_eq!(out.trim(), "31 paths, 682 samples, 409 train, 273 test");
    assert_eq!(lines(&tmp.path().join("data/train.csv")).len(), 410);
    let out = ok(tmp.path(), &["gen-data", "--v-min", "20", "--v-max", "20", "--out", "single"]);
    assert!(out.starts_with("1 paths, 22 samples"), "{out}");
}

#[test]
fn gen_data_seed_changes_only_the_order() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["gen-data", "--v-step", "1.0", "--out", "a"]);
    ok(tmp.path(), &["gen-data", "--v-step", "1.0", "--out", "b", "--seed", "8"]);
    let (a, b) = (lines(&tmp.path().join("a/train.csv")), lines(&tmp.path().join("b/train.csv")));
    assert_eq!(a.len(), b.len());
    assert_ne!(a, b);
}

#[test]
fn train_writes_one_log_row_per_iteration() {
    let dir = fixture();
    let log = lines(&dir.join("out/train_log.csv"));
    assert_eq!(log[0], "iteration,epoch,batch_rmse");
    assert_eq!(log.len(), 31);
    assert!(dir.join("out/weights.bin").is_file());
}

#[test]
fn eval_writes_samples_and_histogram() {
    let dir = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("eval");
    let summary = ok(
        dir,
        &["eval", "--weights", "out/weights.bin", "--data", "data", "--out", out.to_str().unwrap()],
    );
    assert!(summary.starts_with("2649 test samples, overall RMSE "), "{summary}");
    let samples = lines(&out.join("eval_samples.csv"));
    assert_eq!(samples[0], "sample,source_v,split_x,rmse");
    assert_eq!(samples.len(), 2650);
    let hist = lines(&out.join("eval_histogram.csv"));
    assert_eq!(hist.len(), 31);
    let binned: usize = hist[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    let overflow = summary
        .split('(')
        .nth(1)
        .map_or(0, |s| s.split_whitespace().next().unwrap().parse::<usize>().unwrap());
    assert_eq!(binned + overflow, 2649);
}

#[test]
fn eval_rejects_an_empty_test_split() {
    let dir = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    fs::create_dir_all(&data).unwrap();
    fs::copy(dir.join("data/train.csv"), data.join("train.csv")).unwrap();
    let header = lines(&dir.join("data/test.csv")).remove(0);
    fs::write(data.join("test.csv"), header + "\n").unwrap();
    let weights = dir.join("out/weights.bin");
    err(tmp.path(), &["eval", "--weights", weights.to_str().unwrap(), "--data", "data"]);
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn missing_inputs_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(err(tmp.path(), &["train"]).contains("run gen-data first"));
    assert!(err(tmp.path(), &["simulate"]).contains("run train first"));
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn simulate_logs_one_row_per_step() {
    let dir = fixture();
    let log = lines(&dir.join("out/sim_log.csv"));
    assert_eq!(log.len(), 12);
    assert!(log[0].starts_with("step,t,ev_x,ev_y"));
    assert_eq!(lines(&dir.join("out/predictions.csv")).len(), 1 + 11 * 11);

    let tmp = tempfile::tempdir().unwrap();
    let weights = dir.join("out/weights.bin");
    let summary = ok(tmp.path(), &["simulate", "--weights", weights.to_str().unwrap(), "--steps", "1"]);
    assert!(summary.starts_with("1 steps"), "{summary}");
    assert_eq!(lines(&tmp.path().join("out/sim_log.csv")).len(), 2);
}

#[test]
fn plot_draws_predictions_and_markers() {
    let dir = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let log = dir.join("out/sim_log.csv");
    let pred = dir.join("out/predictions.csv");
    ok(tmp.path(), &["plot", "--log", log.to_str().unwrap(), "--pred", pred.to_str().unwrap()]);
    let svg = fs::read_to_string(tmp.path().join("out/scenario.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches(r#"class="prediction""#).count(), 11);
    assert_eq!(svg.matches(r#"class="marker ev""#).count(), 4);
    assert_eq!(svg.matches(r#"class="marker tv""#).count(), 4);
    assert_eq!(svg.matches(r#"class="trajectory "#).count(), 2);
}

#[test]
fn plot_rejects_empty_and_malformed_logs() {
    let dir = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let pred = dir.join("out/predictions.csv");
    let mut rows = lines(&dir.join("out/sim_log.csv"));

    fs::write(tmp.path().join("empty.csv"), format!("{}\n", rows[0])).unwrap();
    let msg = err(tmp.path(), &["plot", "--log", "empty.csv", "--pred", pred.to_str().unwrap()]);
    assert!(msg.contains("no data rows"), "{msg}");

    rows[3] = rows[3].replacen(',', ",oops,", 1);
    fs::write(tmp.path().join("bad.csv"), rows.join("\n") + "\n").unwrap();
    let msg = err(tmp.path(), &["plot", "--log", "bad.csv", "--pred", pred.to_str().unwrap()]);
    assert!(msg.contains("row 3"), "{msg}");
    assert!(!tmp.path().join("out").exists());
}

#[test]
fn config_file_is_strict_and_applied() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("typo.toml"), "[corpus]\nv_stepp = 1.0\n").unwrap();
    let msg = err(tmp.path(), &["--config", "typo.toml", "gen-data"]);
    assert!(msg.contains("v_stepp"), "{msg}");

    fs::write(tmp.path().join("bad.toml"), "[corpus]\nv_min = 50.0\n").unwrap();
    err(tmp.path(), &["--config", "bad.toml", "gen-data"]);
    assert!(!tmp.path().join("data").exists());

    fs::write(tmp.path().join("good.toml"), "[corpus]\nv_step = 1.0\n[paths]\ndata_dir = \"corpus\"\n").unwrap();
    let out = ok(tmp.path(), &["--config", "good.toml", "gen-data"]);
    assert!(out.starts_with("31 paths"), "{out}");
    assert!(tmp.path().join("corpus/train.csv").is_file());
}

#[test]
fn mismatched_model_shape_is_rejected() {
    let dir = fixture();
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("small.toml"), "[model]\nencoder_hidden = 8\n").unwrap();
    let weights = dir.join("out/weights.bin");
    let msg = err(tmp.path(), &["--config", "small.toml", "simulate", "--weights", weights.to_str().unwrap()]);
    assert!(msg.contains("config expects"), "{msg}");
}
