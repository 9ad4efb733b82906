use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use nerxfer::pipeline::parse_metrics_block;
use tempfile::TempDir;

fn nerxfer(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nerxfer"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = nerxfer(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn metric(stdout: &str, key: &str) -> String {
    let block = parse_metrics_block(stdout);
    block.get(key).unwrap_or_else(|| panic!("no `{key}` in {block:?}")).clone()
}

/// The bundled task with frequency tables, lexicon, projection and a short-trained source model.
struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        ok(d, &["synth", "--small", "--out", "task"]);
        ok(d, &["stats", "--corpus", "task/source_corpus.txt", "--out", "s.stats"]);
        ok(d, &["stats", "--corpus", "task/target_corpus.txt", "--out", "t.stats"]);
        ok(d, &["lexicon", "--source-stats", "s.stats", "--target-stats", "t.stats", "--out", "lex.txt"]);
        ok(d, &["project", "--source-emb", "task/source.vec", "--target-emb", "task/target.vec", "--lexicon", "lex.txt", "--out", "z.bin"]);
        ok(d, &["--max-epochs", "2", "train-source", "--train", "task/source_train.conll", "--emb", "task/source.vec", "--out", "src.ck"]);
        Self { dir }
    }

    fn path(&self) -> &Path {
        self.dir.path()
    }

    fn transfer(&self, extra: &[&str], out: &str) -> String {
        let mut args = vec![
            "--max-epochs", "2", "transfer", "--source", "src.ck", "--source-emb", "task/source.vec",
            "--projection", "z.bin", "--target-emb", "task/target.vec", "--train", "task/target_train.conll",
            "--out", out,
        ];
        args.extend_from_slice(extra);
        ok(self.path(), &args)
    }
}

#[test]
fn help_and_version_exit_zero() {
    let d = PathBuf::from(".");
    assert_eq!(nerxfer(&d, &["--help"]).status.code(), Some(0));
    assert_eq!(nerxfer(&d, &["--version"]).status.code(), Some(0));
}

#[test]
fn validation_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(nerxfer(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(nerxfer(d, &["stats", "--corpus", "missing.txt", "--out", "x"]).status.code(), Some(1));
    assert_eq!(nerxfer(d, &["--set", "novalue", "synth", "--out", "t"]).status.code(), Some(1));
    std::fs::write(d.join("bad.cfg"), "this line has no equals sign\n").unwrap();
    assert_eq!(nerxfer(d, &["--config", "bad.cfg", "synth", "--out", "t"]).status.code(), Some(1));
}

#[test]
fn runtime_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("corpus.txt"), "a b c\n").unwrap();
    std::fs::create_dir(d.join("occupied")).unwrap();
    let out = nerxfer(d, &["stats", "--corpus", "corpus.txt", "--out", "occupied"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn workflow_end_to_end() {
    let ws = Workspace::new();
    let d = ws.path();

    // An out-of-range ψ is rejected before any training.
    let bad = nerxfer(d, &[
        "transfer", "--source", "src.ck", "--source-emb", "task/source.vec", "--projection", "z.bin",
        "--target-emb", "task/target.vec", "--train", "task/target_train.conll", "--out", "t.ck", "--psi", "1.5",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(!d.join("t.ck").exists());

    // Frozen base layers: evaluating the same checkpoint twice gives identical metrics.
    let report = ws.transfer(&["--psi", "0.0"], "frozen.ck");
    assert_eq!(metric(&report, "psi"), "0");
    let eval = ["evaluate", "--model", "frozen.ck", "--emb", "task/target.vec", "--data", "task/target_train.conll"];
    let first = parse_metrics_block(&ok(d, &eval));
    let second = parse_metrics_block(&ok(d, &eval));
    assert_eq!(first, second);
    assert!(first.contains_key("data.f1"));

    // The grid search reports every candidate and keeps the best one.
    let report = ws.transfer(&["--psi-grid", "0.2,0.6,1.0"], "grid.ck");
    let scores: Vec<(f64, f64)> = ["0.2", "0.6", "1"]
        .iter()
        .map(|p| (p.parse().unwrap(), metric(&report, &format!("grid.{p}")).parse().unwrap()))
        .collect();
    let best = scores.iter().cloned().fold((f64::NAN, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    assert_eq!(metric(&report, "psi").parse::<f64>().unwrap(), best.0);
    assert!(report.lines().any(|l| l.trim_start().starts_with("psi") && l.contains("dev F1")));

    // Tagging raw text yields one CoNLL line per token.
    std::fs::write(d.join("raw.txt"), "the first line\n\nsecond line\n").unwrap();
    ok(d, &["tag", "--model", "grid.ck", "--emb", "task/target.vec", "--input", "raw.txt", "--out", "tagged.conll"]);
    let tagged = std::fs::read_to_string(d.join("tagged.conll")).unwrap();
    let rows: Vec<&str> = tagged.lines().filter(|l| !l.trim().is_empty()).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows[0].starts_with("the "));

    // Baselines produce checkpoints that evaluate with the target table.
    for method in ["init-frozen", "init-finetune", "mult-init"] {
        let out = format!("{method}.ck");
        let report = ok(d, &[
            "--max-epochs", "1", "baseline", "--method", method, "--source", "src.ck",
            "--source-emb", "task/source.vec", "--target-emb", "task/source.vec",
            "--source-train", "task/source_train.conll", "--train", "task/target_train.conll",
            "--out", &out, "--lambda", "0.5",
        ]);
        assert_eq!(metric(&report, "method"), method);
        ok(d, &["evaluate", "--model", &out, "--emb", "task/source.vec", "--data", "task/target_train.conll"]);
    }
    let missing = nerxfer(d, &[
        "baseline", "--method", "mult-init", "--source-emb", "task/source.vec",
        "--train", "task/target_train.conll", "--out", "m.ck",
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn gradient_projection_matches_closed_form_on_bundled_fixture() {
    let ws = Workspace::new();
    let d = ws.path();
    let base = ["project", "--source-emb", "task/source.vec", "--target-emb", "task/target.vec", "--lexicon", "lex.txt"];
    let exact = ok(d, &[&base[..], &["--out", "zc.bin", "--closed-form"]].concat());
    // Run descent to convergence: the default epoch budget and stopping tolerance
    // are too loose for this ill-conditioned fixture.
    let sgd = ok(d, &[
        &["--set", "projection_epochs=200000", "--set", "projection_rel_tol=1e-15"][..],
        &base[..],
        &["--out", "zs.bin"],
    ]
    .concat());
    let exact: f64 = metric(&exact, "loss").parse().unwrap();
    let sgd: f64 = metric(&sgd, "loss").parse().unwrap();
    assert!(exact > 0.0);
    assert!((sgd - exact).abs() <= 1e-6 * exact, "descent {sgd} vs closed form {exact}");
}
