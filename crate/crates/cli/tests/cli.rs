use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dccl_core::config::ExperimentConfig;
use dccl_core::harness;
use tempfile::TempDir;

fn dccl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dccl")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"
name = "tiny"
seeds = [0]
[dataset]
per_domain_class = 8
[optimizer]
steps = 20
eval_every = 10
[anchor]
steps = 20
"#;

fn write_config(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const DUMP_HEADER: &str = "# dccl-dump v1 dim=1 classes=1 domains=1\n";

#[test]
fn toy_reports_both_domains() {
    let o = dccl(&["toy", "--variant", "weak"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "variant: weak\nd1 accuracy: 100.00%\nd2 accuracy: 0.00%\n");
    let o = dccl(&["toy", "--variant", "aggressive"]);
    assert_eq!(stdout(&o), "variant: aggressive\nd1 accuracy: 100.00%\nd2 accuracy: 100.00%\n");
}

#[test]
fn toy_runs_on_one_sample_per_class() {
    assert!(dccl(&["toy", "--variant", "weak", "--n", "1"]).status.success());
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    assert_eq!(dccl(&["toy", "--variant", "medium"]).status.code(), Some(1));
    assert_eq!(dccl(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(dccl(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_config_names_the_path() {
    let o = dccl(&["train", "/nonexistent/experiment.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("/nonexistent/experiment.toml"), "{}", stderr(&o));
}

#[test]
fn unknown_key_names_the_key_path() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "bad.toml", "[optimizer]\nsteps = 10\nlearning_rate = 0.1\n");
    let o = dccl(&["train", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("optimizer"), "{}", stderr(&o));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_two_with_the_step() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "hot.toml", &TINY.replace("steps = 20\neval_every", "lr = 1e300\nsteps = 20\neval_every"));
    let o = dccl(&["train", s(&cfg), "--out", s(&dir.path().join("runs"))]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("step"), "{}", stderr(&o));
}

#[test]
fn erm_table_matches_the_harness() {
    let dir = TempDir::new().unwrap();
    let cfg_path = write_config(&dir, "erm.toml", TINY);
    let out = dir.path().join("runs");
    let o = dccl(&["train", s(&cfg_path), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = ExperimentConfig::load(&cfg_path).unwrap();
    let data = cfg.dataset.generate().unwrap();
    let table = harness::train_table(&cfg, &data, None).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(stdout(&o), format!("{}\n{}", table.to_text(), table.to_csv()));
    assert_eq!(std::fs::read_to_string(out.join("tiny/table.csv")).unwrap(), table.to_csv());
}

#[test]
fn ablate_creates_one_directory_per_row_and_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "grid.toml", &TINY.replace("seeds = [0]", "seeds = [0, 1, 2]"));
    let out = dir.path().join("runs");
    let o = dccl(&["ablate", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let exp = out.join("tiny");
    let mut dirs = 0;
    for row in std::fs::read_dir(&exp).unwrap() {
        let row = row.unwrap().path();
        if row.is_dir() && row.file_name().unwrap() != "anchor" {
            dirs += std::fs::read_dir(&row).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
        }
    }
    assert_eq!(dirs, 30);
    assert_eq!(std::fs::read_to_string(exp.join("table.csv")).unwrap().lines().count(), 11);
}

#[test]
fn collinear_fixture_scores_zero() {
    let dir = TempDir::new().unwrap();
    let dump = write_config(&dir, "line.dump", &format!("{DUMP_HEADER}0,0,0,0\n1,0,0,1\n2,0,0,3\n"));
    let csv = dir.path().join("report.csv");
    let o = dccl(&["connectivity", s(&dump), "--out", s(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = std::fs::read_to_string(&csv).unwrap();
    let row = report.lines().nth(1).unwrap();
    let fields: Vec<f64> = row.split(',').skip(3).map(|v| v.parse().unwrap()).collect();
    assert_eq!(fields[0], 2.0);
    assert_eq!(fields[1], 2.0);
    assert_eq!(fields[3], 0.0);
}

#[test]
fn malformed_dump_reports_the_line() {
    let dir = TempDir::new().unwrap();
    let dump = write_config(&dir, "bad.dump", &format!("{DUMP_HEADER}0,0,0,0\n1,0,zero,1\n"));
    let o = dccl(&["connectivity", s(&dump)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn empty_dump_fails() {
    let dir = TempDir::new().unwrap();
    let empty = write_config(&dir, "empty.dump", "");
    assert!(!dccl(&["connectivity", s(&empty)]).status.success());
    let header_only = write_config(&dir, "header.dump", DUMP_HEADER);
    assert!(!dccl(&["connectivity", s(&header_only)]).status.success());
}

#[test]
fn anchor_dump_feeds_connectivity() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "tiny.toml", TINY);
    let ckpt = dir.path().join("anchor.txt");
    let dump = dir.path().join("anchor.dump");
    assert!(dccl(&["anchor", s(&cfg), "--out", s(&ckpt)]).status.success());
    let o = dccl(&["dump-embeddings", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--out", s(&dump)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&dump).unwrap();
    let data = ExperimentConfig::load(&cfg).unwrap().dataset.generate().unwrap();
    assert_eq!(text.lines().count(), data.len() + 1);
    let o = dccl(&["connectivity", s(&dump), "--mode", "per-domain"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("mean"));
}

#[test]
fn dimension_mismatch_names_both_dimensions() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "tiny.toml", TINY);
    let wide = write_config(&dir, "wide.toml", &TINY.replace("per_domain_class = 8", "per_domain_class = 8\ndim = 5"));
    let ckpt = dir.path().join("anchor.txt");
    assert!(dccl(&["anchor", s(&cfg), "--out", s(&ckpt)]).status.success());
    let o = dccl(&["dump-embeddings", "--checkpoint", s(&ckpt), "--config", s(&wide), "--out", s(&dir.path().join("x.dump"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("dimension 2") && err.contains("dimension 5"), "{err}");
}

#[test]
fn corrupted_checkpoint_fails() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "tiny.toml", TINY);
    let ckpt = dir.path().join("anchor.txt");
    assert!(dccl(&["anchor", s(&cfg), "--out", s(&ckpt)]).status.success());
    let text = std::fs::read_to_string(&ckpt).unwrap();
    let pos = text.rfind(|c: char| c.is_ascii_digit()).unwrap();
    let mut bytes = text.into_bytes();
    bytes[pos] = if bytes[pos] == b'7' { b'3' } else { b'7' };
    std::fs::write(&ckpt, &bytes).unwrap();
    let o = dccl(&["dump-embeddings", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--out", s(&dir.path().join("x.dump"))]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    std::fs::write(&ckpt, "not a checkpoint\n").unwrap();
    let o = dccl(&["dump-embeddings", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--out", s(&dir.path().join("x.dump"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gen_data_round_trips_through_dump_embeddings() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(&dir, "tiny.toml", TINY);
    let data = dir.path().join("data.txt");
    let ckpt = dir.path().join("anchor.txt");
    assert!(dccl(&["gen-data", s(&cfg), "--out", s(&data)]).status.success());
    assert!(dccl(&["anchor", s(&cfg), "--out", s(&ckpt)]).status.success());
    let (a, b) = (dir.path().join("a.dump"), dir.path().join("b.dump"));
    assert!(dccl(&["dump-embeddings", "--checkpoint", s(&ckpt), "--config", s(&cfg), "--out", s(&a)]).status.success());
    assert!(dccl(&["dump-embeddings", "--checkpoint", s(&ckpt), "--data", s(&data), "--out", s(&b)]).status.success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = dir.path().join("c.dump");
    let o = dccl(&["dump-embeddings", "--checkpoint", s(&ckpt), "--data", s(&data), "--exclude-domain", "1", "--out", s(&c)]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&c).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(1) != Some("1")));
}
