use std::path::Path;
use std::process::{Command, Output};

use cnpkit::cli::config::{ExperimentConfig, SizeSpec};
use cnpkit::io::pgm::read_pgm;
use cnpkit::model::checkpoint;
use cnpkit::Error;

fn cnpkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cnpkit")).args(args).output().unwrap()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map(|it| {
            it.map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
                .collect()
        })
        .unwrap_or_default();
    names.sort();
    names
}

#[test]
fn parses_sections_comments_and_defaults() {
    let c = ExperimentConfig::parse(
        "# comment\n[model]\nhidden = 32\n; other comment\n\n[train]\nsteps=7\nlearning_rate = 5e-4\n",
    )
    .unwrap();
    assert_eq!(c.get::<usize>("model", "hidden").unwrap(), 32);
    assert_eq!(c.get::<usize>("train", "steps").unwrap(), 7);
    assert_eq!(c.get::<f64>("train", "learning_rate").unwrap(), 5e-4);
    assert_eq!(c.get::<usize>("model", "repr_dim").unwrap(), 128);
    assert_eq!(c.raw("task", "kind"), "curve");
}

#[test]
fn rejects_unknown_keys_sections_and_malformed_lines() {
    for text in [
        "[model]\nhiden = 3\n",
        "[modle]\nhidden = 3\n",
        "hidden = 3\n",
        "[model]\nhidden\n",
    ] {
        assert!(
            matches!(ExperimentConfig::parse(text), Err(Error::Config { .. })),
            "{text}"
        );
    }
    let c = ExperimentConfig::parse("[model]\nhidden = many\n").unwrap();
    assert!(c.get::<usize>("model", "hidden").is_err());
}

#[test]
fn overrides_replace_values() {
    let mut c = ExperimentConfig::default();
    c.apply_override("train.steps=12").unwrap();
    c.apply_override("eval.context_sizes = 5,90%,full").unwrap();
    assert_eq!(c.get::<usize>("train", "steps").unwrap(), 12);
    assert_eq!(
        c.list::<SizeSpec>("eval", "context_sizes").unwrap(),
        vec![SizeSpec::Count(5), SizeSpec::Fraction(0.9), SizeSpec::Full]
    );
    assert!(c.apply_override("train.stepz=1").is_err());
    assert!(c.apply_override("steps=1").is_err());
    assert!(c.apply_override("train.steps").is_err());
}

#[test]
fn snapshot_round_trips() {
    let mut c = ExperimentConfig::default();
    c.apply_override("task.kind=image").unwrap();
    c.apply_override("model.hidden=16").unwrap();
    let again = ExperimentConfig::parse(&c.to_ini()).unwrap();
    assert_eq!(again.to_ini(), c.to_ini());
    assert_eq!(again.raw("task", "kind"), "image");
}

#[test]
fn size_specs_resolve_against_totals() {
    assert_eq!(SizeSpec::Fraction(0.9).resolve(784), Some(706));
    assert_eq!(SizeSpec::Count(100).resolve(50), Some(50));
    assert_eq!(SizeSpec::Full.resolve(784), Some(784));
    assert_eq!(SizeSpec::Random.resolve(784), None);
    assert!("0%".parse::<SizeSpec>().is_err());
    assert!("abc".parse::<SizeSpec>().is_err());
}

#[test]
fn missing_config_exits_nonzero() {
    let out = cnpkit(&["train", "--config", "/nonexistent/run.ini"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/run.ini"));
    let out = cnpkit(&["train", "--set", "model.bogus=1"]);
    assert!(!out.status.success());
    let out = cnpkit(&["frobnicate"]);
    assert!(!out.status.success());
}

#[test]
fn selftest_passes() {
    let out = cnpkit(&["selftest", "--seed", "3"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{text}");
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 6);
}

#[test]
fn curve_run_end_to_end_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let ini = dir.path().join("run.ini");
    std::fs::write(
        &ini,
        "[model]\nrepr_dim = 8\nhidden = 8\n[task]\npoints = 12\n[train]\nsteps = 4\nbatch_size = 2\neval_every = 2\neval_tasks = 4\n[eval]\ntasks = 4\ncontext_sizes = 3,full\n",
    )
    .unwrap();
    let mut snapshots = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let set = format!("io.out_dir={}", out_dir.display());
        let out = cnpkit(&["train", "--config", ini.to_str().unwrap(), "--set", &set, "--seed", "5"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(
            files_in(&out_dir),
            vec!["config.resolved.ini", "metrics.csv", "model.cnpk", "train_log.csv"]
        );
        snapshots.push(out_dir);
    }
    let read = |d: &Path, f: &str| std::fs::read(d.join(f)).unwrap();
    for f in ["model.cnpk", "metrics.csv", "train_log.csv"] {
        assert!(read(&snapshots[0], f) == read(&snapshots[1], f), "{f} differs");
    }
    let snap = |d: &Path| {
        let text = String::from_utf8(read(d, "config.resolved.ini")).unwrap();
        text.lines()
            .filter(|l| !l.starts_with("out_dir"))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(snap(&snapshots[0]), snap(&snapshots[1]));
    // The snapshot alone reproduces the run.
    let snap = snapshots[0].join("config.resolved.ini");
    let c = dir.path().join("c");
    let set = format!("io.out_dir={}", c.display());
    assert!(cnpkit(&["train", "--config", snap.to_str().unwrap(), "--set", &set])
        .status
        .success());
    assert_eq!(read(&snapshots[0], "model.cnpk"), read(&c, "model.cnpk"));

    let set = format!("io.out_dir={}", snapshots[0].display());
    let out = cnpkit(&["eval", "--config", ini.to_str().unwrap(), "--set", &set, "--seed", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = String::from_utf8(read(&snapshots[0], "eval.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("CNP,3,")));
    assert!(csv.lines().any(|l| l.starts_with("GP,full,")));
    assert!(csv.lines().any(|l| l.starts_with("kNN(k=1),3,")));

    // Sampling needs a latent checkpoint.
    let out = cnpkit(&[
        "sample",
        "--config",
        ini.to_str().unwrap(),
        "--set",
        &set,
        "--n-context",
        "1",
        "--out",
        dir.path().join("s").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}

#[test]
fn image_completion_writes_valid_pgms() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("img");
    let common = [
        "--set",
        "task.kind=image",
        "--set",
        "task.glyph_classes=4",
        "--set",
        "task.glyph_per_class=3",
        "--set",
        "task.glyph_size=10",
        "--set",
        "task.test_images=4",
        "--set",
        "model.repr_dim=8",
        "--set",
        "model.hidden=8",
        "--set",
        "train.steps=2",
        "--set",
        "train.batch_size=1",
        "--set",
        "train.eval_tasks=2",
    ];
    let dir_set = format!("io.out_dir={}", out_dir.display());
    let with = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend_from_slice(&common);
        args.extend_from_slice(&["--set", &dir_set]);
        args.extend_from_slice(extra);
        cnpkit(&args)
    };
    assert!(with("train", &[]).status.success());
    let prefix = dir.path().join("done");
    let out = with(
        "complete",
        &[
            "--n-context",
            "20",
            "--mode",
            "active",
            "--scale",
            "3",
            "--out",
            prefix.to_str().unwrap(),
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("sigma scale"));
    let mean = read_pgm(&dir.path().join("done_mean.pgm")).unwrap();
    assert_eq!((mean.height, mean.width), (30, 30));
    for suffix in ["_context.pgm", "_sigma.pgm"] {
        let im = read_pgm(&dir.path().join(format!("done{suffix}"))).unwrap();
        assert_eq!((im.height, im.width), (10, 10));
    }
    let sigma = read_pgm(&dir.path().join("done_sigma.pgm")).unwrap();
    assert_eq!(sigma.pixels.iter().copied().fold(0.0, f64::max), 1.0);

    // A failing command leaves no output files behind.
    let bad = dir.path().join("bad");
    let out = with("complete", &["--n-context", "101", "--out", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(!files_in(dir.path()).iter().any(|f| f.starts_with("bad")));

    let out = with(
        "eval",
        &[
            "--set",
            "eval.tasks=2",
            "--set",
            "eval.gp_fit_images=2",
            "--set",
            "eval.gp_fit_pixels=30",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("eval.csv")).unwrap();
    assert!(table.starts_with("method,mode,context_label,context_size,mse\n"));
    assert!(table.lines().any(|l| l.starts_with("CNP,ordered,10,")));
    assert!(checkpoint::load(&out_dir.join("model.cnpk")).is_ok());
}

#[test]
fn latent_and_classifier_commands() {
    let dir = tempfile::tempdir().unwrap();
    let latent_dir = dir.path().join("latent");
    let set = format!("io.out_dir={}", latent_dir.display());
    let image = [
        "--set",
        "task.kind=image",
        "--set",
        "task.glyph_classes=4",
        "--set",
        "task.glyph_per_class=3",
        "--set",
        "task.glyph_size=9",
        "--set",
        "task.test_images=4",
        "--set",
        "model.variant=latent",
        "--set",
        "model.z_dim=4",
        "--set",
        "model.repr_dim=8",
        "--set",
        "model.hidden=8",
        "--set",
        "train.steps=2",
        "--set",
        "train.eval_tasks=2",
        "--set",
        &set,
    ];
    let run = |cmd: &str, extra: &[&str]| {
        let mut args = vec![cmd];
        args.extend_from_slice(&image);
        args.extend_from_slice(extra);
        cnpkit(&args)
    };
    assert!(run("train", &[]).status.success());
    let prefix = dir.path().join("s");
    let out = run(
        "sample",
        &["--n-context", "3", "--draws", "3", "--out", prefix.to_str().unwrap()],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("variance across draws"));
    for j in 0..3 {
        assert!(read_pgm(&dir.path().join(format!("s_draw{j}.pgm"))).is_ok());
    }

    let class_dir = dir.path().join("cls");
    let set = format!("io.out_dir={}", class_dir.display());
    let classes = [
        "--set",
        "task.kind=classification",
        "--set",
        "model.variant=classifier",
        "--set",
        "task.glyph_classes=12",
        "--set",
        "task.glyph_per_class=12",
        "--set",
        "task.glyph_size=8",
        "--set",
        "task.train_classes=6",
        "--set",
        "model.repr_dim=8",
        "--set",
        "model.hidden=8",
        "--set",
        "train.steps=2",
        "--set",
        "train.eval_tasks=2",
        "--set",
        "eval.episodes=5",
        "--set",
        &set,
    ];
    let mut args = vec!["train"];
    args.extend_from_slice(&classes);
    let out = cnpkit(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    args[0] = "classify";
    let out = cnpkit(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("5-way 1-shot") && text.contains("5-way 5-shot"), "{text}");
    args.extend_from_slice(&["--set", "eval.ways=3"]);
    assert!(!cnpkit(&args).status.success());
}
