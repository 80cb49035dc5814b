use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use msda::corpus::{DomainDataset, Example, Label};
use msda::synthetic::{disjoint_pair, identical_pair};

fn msda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msda"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = msda(args);
    assert!(
        out.status.success(),
        "msda {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &Path, name: &str, d: &DomainDataset) -> String {
    let path = dir.join(name);
    d.write(std::fs::File::create(&path).unwrap()).unwrap();
    path.display().to_string()
}

/// Synthetic source/target files; returns `(source, target, terms)` paths.
fn synth(dir: &Path) -> (String, String, String) {
    ok(&["synth", "--out", dir.to_str().unwrap()]);
    let p = |f: &str| dir.join(f).display().to_string();
    (p("source.txt"), p("target.txt"), p("terms.tsv"))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Table rows as field lists, header excluded.
fn rows(stdout: &str) -> Vec<Vec<String>> {
    stdout
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(str::to_owned).collect())
        .collect()
}

#[test]
fn training_is_deterministic_and_models_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt, terms) = synth(dir.path());
    let inputs = [format!("{src}=source"), format!("{tgt}=target")];
    let model = |name: &str| {
        let out = dir.path().join(name);
        let stdout = ok(&[
            "train",
            "--input",
            &inputs[0],
            "--input",
            &inputs[1],
            "--terms",
            &terms,
            "--p",
            "0.5",
            "--layers",
            "2",
            "--out",
            s(&out),
        ]);
        assert!(stdout.contains("train_seconds\t"));
        assert!(stdout.contains("blockwise\tfalse"));
        out
    };
    let (a, b) = (model("a.msda"), model("b.msda"));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let loaded = msda::format::load_stack(&a).unwrap();
    assert_eq!(loaded.layer_count(), 2);
    let again = dir.path().join("again.msda");
    msda::format::save_stack(&again, &loaded).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&again).unwrap());

    let transformed = dir.path().join("t.txt");
    let stdout = ok(&[
        "transform",
        "--model",
        s(&a),
        "--terms",
        &terms,
        "--input",
        &inputs[1],
        "--out",
        s(&transformed),
    ]);
    assert!(stdout.contains("examples\t1500"));
    let text = std::fs::read_to_string(&transformed).unwrap();
    assert_eq!(text.lines().count(), 1500);
    let first = text.lines().next().unwrap();
    assert_eq!(first.split(' ').count(), 1 + 3 * 200);
}

#[test]
fn adapt_reports_both_representations() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt, _) = synth(dir.path());
    let report = dir.path().join("report.tsv");
    let stdout = ok(&[
        "adapt",
        "--input",
        &format!("{src}=source"),
        "--input",
        &format!("{tgt}=target"),
        "--source",
        "source",
        "--target",
        "target",
        "--p",
        "0.7",
        "--layers",
        "1",
        "--representation",
        "both",
        "--c-grid",
        "0.01,1",
        "--report",
        s(&report),
    ]);
    assert_eq!(std::fs::read_to_string(&report).unwrap(), stdout);
    let rows = rows(&stdout);
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row.len(), 11);
        assert_eq!(row[0], "source->target");
        for field in &row[1..9] {
            field.parse::<f64>().expect("numeric field");
        }
    }
    assert_eq!(rows[0][9], "NA");
    assert_eq!((rows[1][9].as_str(), rows[1][10].as_str()), ("0.7", "1"));
    let ratio = |r: &Vec<String>| r[4].parse::<f64>().unwrap();
    assert!(ratio(&rows[1]) < ratio(&rows[0]));
}

#[test]
fn adapt_without_p_and_layers_cross_validates() {
    let dir = tempfile::tempdir().unwrap();
    let (src, tgt, _) = synth(dir.path());
    let out = msda(&[
        "adapt",
        "--input",
        &format!("{src}=source"),
        "--input",
        &format!("{tgt}=target"),
        "--source",
        "source",
        "--target",
        "target",
        "--p-grid",
        "0.3,0.9",
        "--layers",
        "1",
        "--c-grid",
        "0.01",
    ]);
    assert!(out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.starts_with("p\tlayers\tcv_error\tc\n"), "{stderr}");
    let selected = stderr.lines().last().unwrap().to_owned();
    let row = &rows(&String::from_utf8(out.stdout).unwrap())[0];
    assert_eq!(
        selected,
        format!("selected\tp = {}\tlayers = {}", row[9], row[10])
    );
}

#[test]
fn pad_separates_identical_and_disjoint_domains() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = identical_pair(400, 100, 20, 3);
    let same = write(dir.path(), "same.txt", &a);
    let stdout = ok(&[
        "pad",
        "--input",
        &format!("{same}=a"),
        "--input",
        &format!("{same}=b"),
        "--source",
        "a",
        "--target",
        "b",
        "--representation",
        "raw",
    ]);
    let row = &rows(&stdout)[0];
    assert_eq!(row[0], "a:b");
    assert!(row[1].parse::<f64>().unwrap().abs() <= 0.2, "{stdout}");
    assert_eq!(row[2], "NA");

    let (x, y) = disjoint_pair(200, 50, 20, 4);
    let (x, y) = (
        write(dir.path(), "x.txt", &x),
        write(dir.path(), "y.txt", &y),
    );
    let stdout = ok(&[
        "pad",
        "--input",
        &format!("{x}=x"),
        "--input",
        &format!("{y}=y"),
        "--source",
        "x",
        "--target",
        "y",
        "--layers",
        "1",
    ]);
    let row = &rows(&stdout)[0];
    assert!(row[1].parse::<f64>().unwrap() >= 1.8, "{stdout}");
    row[2].parse::<f64>().expect("msda PAD printed beside raw");
}

#[test]
fn wide_vocabularies_switch_to_blockwise() {
    let dir = tempfile::tempdir().unwrap();
    // 8100 distinct terms, each in a few documents
    let examples = (0..900)
        .map(|j: usize| Example {
            features: (0..12)
                .map(|k| ((j * 9 + k) % 8100, 1.0 + (k % 3) as f64))
                .collect(),
            label: Some(if j.is_multiple_of(2) {
                Label::Positive
            } else {
                Label::Negative
            }),
        })
        .collect();
    let path = write(dir.path(), "wide.txt", &DomainDataset::new("w", examples));
    let out = dir.path().join("wide.msda");
    let stdout = ok(&[
        "train",
        "--input",
        &format!("{path}=w"),
        "--r",
        "20",
        "--layers",
        "2",
        "--out",
        s(&out),
    ]);
    assert!(stdout.contains("features\t8100"), "{stdout}");
    assert!(stdout.contains("blockwise\ttrue"));
    assert!(stdout.contains("output_dim\t8140"));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let (src, _, _) = synth(dir.path());
    let vocab_out = dir.path().join("v.tsv");
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "inputs = [\"{src}=source\"]\nmax_features = 10\nout = \"{}\"\n",
            vocab_out.display()
        ),
    )
    .unwrap();
    assert!(ok(&["vocab", "--config", s(&cfg)]).contains("terms\t10"));
    assert!(ok(&["vocab", "--config", s(&cfg), "--max-features", "25"]).contains("terms\t25"));
    assert_eq!(
        std::fs::read_to_string(&vocab_out).unwrap().lines().count(),
        25
    );
}

#[test]
fn failures_exit_nonzero_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "+1 1:2\n+1 oops\n").unwrap();
    let out_path: PathBuf = dir.path().join("never.msda");
    let out = msda(&[
        "train",
        "--input",
        &format!("{}=d", bad.display()),
        "--out",
        s(&out_path),
    ]);
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("bad.txt:2"), "{stderr}");
    assert!(!out_path.exists());

    let (src, _, _) = synth(dir.path());
    let out = msda(&[
        "adapt",
        "--input",
        &format!("{src}=source"),
        "--source",
        "source",
        "--target",
        "elsewhere",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("elsewhere"));

    assert!(
        !msda(&["train", "--input", "missing.txt=m", "--out", s(&out_path)])
            .status
            .success()
    );
    assert!(!msda(&["train", "--p", "2", "--input", "x=y"])
        .status
        .success());
    assert!(dir.path().read_dir().unwrap().all(|e| {
        let name = e.unwrap().file_name();
        !name.to_string_lossy().starts_with(".tmp")
    }));
}
