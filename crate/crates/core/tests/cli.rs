use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use drivegaze::dataset::{decode_image, decode_map, load_dataset};
use drivegaze::episode::ActivityLabel;

const NET: [&str; 4] = ["--net-size", "32x32", "--coarse-size", "8x8"];

fn drivegaze(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drivegaze"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = drivegaze(args);
    assert!(
        out.status.success(),
        "drivegaze {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = drivegaze(args);
    assert!(!out.status.success(), "drivegaze {args:?} unexpectedly succeeded");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(!stderr.trim().is_empty(), "no diagnostic for {args:?}");
    stderr
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    v
}

fn gen_small(dir: &Path, extra: &[&str]) -> PathBuf {
    let ds = dir.join("ds");
    let mut args = vec!["gen", "--out", s(&ds), "--size", "32x32"];
    args.extend_from_slice(extra);
    ok(&args);
    ds
}

#[test]
fn maps_writes_one_valid_map_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("d");
    ok(&["gen", "--seed", "0", "--frames", "500", "--out", s(&ds)]);
    ok(&["maps", "--in", s(&ds)]);
    let maps = files_in(&ds.join("ep_0000").join("maps"));
    assert_eq!(maps.len(), 500);
    for path in maps {
        let map = decode_map(&fs::read(&path).unwrap(), s(&path)).unwrap();
        assert_eq!(map.dims(), (64, 64));
        if !map.is_empty() {
            assert!((map.sum() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn soft_mask_with_unit_lambda_reproduces_the_frames() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_small(dir.path(), &["--frames", "60"]);
    ok(&[
        "mask",
        "--in",
        s(&ds),
        "--mode",
        "soft",
        "--lambda",
        "1.0",
        "--source",
        "fixation",
    ]);
    let episode = ds.join("ep_0000");
    let masked = files_in(&episode.join("masked").join("soft"));
    assert_eq!(masked.len(), 60);
    for path in masked {
        let original = episode.join("images").join(path.file_name().unwrap());
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(&original).unwrap(),
            "{}",
            path.display()
        );
    }
}

#[test]
fn full_pipeline_emits_five_agent_rows() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_small(
        dir.path(),
        &["--frames", "100", "--episodes", "3", "--test-episodes", "1"],
    );
    let gaze = dir.path().join("gaze.ckpt");
    let mut args = vec!["train-gaze", "--in", s(&ds), "--out", s(&gaze), "--steps", "10"];
    args.extend_from_slice(&NET);
    ok(&args);
    let mut args = vec!["precompute", "--in", s(&ds), "--checkpoint", s(&gaze)];
    args.extend_from_slice(&NET);
    ok(&args);
    ok(&["mask", "--in", s(&ds), "--mode", "hard"]);
    let mut models = Vec::new();
    for variant in ["raw", "hard", "soft", "baseline", "dual"] {
        let ckpt = dir.path().join(format!("{variant}.ckpt"));
        ok(&[
            "train-agent",
            "--in",
            s(&ds),
            "--variant",
            variant,
            "--out",
            s(&ckpt),
            "--steps",
            "5",
        ]);
        models.push(format!("{variant}={}", ckpt.display()));
    }
    let tsv = dir.path().join("agents.tsv");
    let mut args = vec!["eval-agent", "--in", s(&ds), "--tsv", s(&tsv)];
    for m in &models {
        args.extend_from_slice(&["--model", m]);
    }
    let table = ok(&args);
    let rows: Vec<&str> = table.lines().skip(1).collect();
    assert_eq!(rows.len(), 5, "{table}");
    for (row, variant) in rows.iter().zip(["raw", "hard", "soft", "baseline", "dual"]) {
        let cols: Vec<&str> = row.split_whitespace().collect();
        assert_eq!(cols[0], variant);
        assert_eq!(cols[1], "100");
        assert!(cols[2].parse::<f64>().unwrap() >= 0.0 && cols[3].parse::<f64>().unwrap() >= 0.0);
    }
    let tsv = fs::read_to_string(&tsv).unwrap();
    assert_eq!(tsv.lines().count(), 6);
    assert!(tsv.lines().all(|l| l.split('\t').count() == 4));
}

#[test]
fn eval_gaze_reconciles_overall_and_driving_counts() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_small(
        dir.path(),
        &["--frames", "300", "--episodes", "2", "--test-episodes", "1"],
    );
    let gaze = dir.path().join("gaze.ckpt");
    let mut args = vec!["train-gaze", "--in", s(&ds), "--out", s(&gaze), "--steps", "10"];
    args.extend_from_slice(&NET);
    ok(&args);
    let tsv = dir.path().join("gaze.tsv");
    let mut args = vec!["eval-gaze", "--in", s(&ds), "--checkpoint", s(&gaze), "--tsv", s(&tsv)];
    args.extend_from_slice(&NET);
    let table = ok(&args);
    assert!(table.contains("overall") && table.contains("driving"), "{table}");

    let dataset = load_dataset(&ds).unwrap();
    let test = &dataset.episodes[1].episode;
    let driving = test.frames.iter().filter(|f| f.label == ActivityLabel::Driving).count();
    assert_eq!(test.len() - driving, (300.0f64 * 0.327).round() as usize);
    let tsv = fs::read_to_string(&tsv).unwrap();
    for model in ["gaze-net", "center-prior"] {
        let row = |split: &str| -> Vec<String> {
            tsv.lines()
                .find(|l| l.starts_with(&format!("{model}\t{split}\t")))
                .unwrap()
                .split('\t')
                .map(String::from)
                .collect()
        };
        let (overall, driving_row) = (row("overall"), row("driving"));
        assert_eq!(overall[2].parse::<usize>().unwrap(), test.len());
        assert_eq!(driving_row[2].parse::<usize>().unwrap(), driving);
        assert_ne!(overall[3], driving_row[3]);
    }
}

#[test]
fn outputs_do_not_depend_on_job_count() {
    let dir = tempfile::tempdir().unwrap();
    let ds = gen_small(dir.path(), &["--frames", "80"]);
    let mut ckpts = Vec::new();
    for jobs in ["1", "3"] {
        let ckpt = dir.path().join(format!("gaze{jobs}.ckpt"));
        let mut args = vec![
            "--jobs",
            jobs,
            "train-gaze",
            "--in",
            s(&ds),
            "--out",
            s(&ckpt),
            "--steps",
            "6",
        ];
        args.extend_from_slice(&NET);
        ok(&args);
        ckpts.push(fs::read(&ckpt).unwrap());
    }
    assert_eq!(ckpts[0], ckpts[1]);

    let other = dir.path().join("again");
    ok(&[
        "--jobs",
        "2",
        "gen",
        "--out",
        s(&other),
        "--size",
        "32x32",
        "--frames",
        "80",
    ]);
    for name in ["manifest.txt", "gaze.txt", "controls.txt", "extrinsics.txt"] {
        let a = fs::read(ds.join("ep_0000").join(name)).unwrap();
        assert_eq!(a, fs::read(other.join("ep_0000").join(name)).unwrap(), "{name}");
    }
    let img = fs::read(other.join("ep_0000/images/frame_000042.ppm")).unwrap();
    assert_eq!(img, fs::read(ds.join("ep_0000/images/frame_000042.ppm")).unwrap());
    assert_eq!(decode_image(&img).unwrap().width(), 32);
}

#[test]
fn dry_run_validates_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let stdout = ok(&["--dry-run", "gen", "--out", s(&out)]);
    assert!(stdout.contains("dry run"));
    assert!(!out.exists());
    let err = fails(&["--dry-run", "gen", "--out", s(&out), "--traffic-fraction", "1.5"]);
    assert!(err.contains("error"), "{err}");
    let err = fails(&[
        "--dry-run",
        "mask",
        "--in",
        s(dir.path()),
        "--mode",
        "soft",
        "--lambda",
        "2",
    ]);
    assert!(err.contains("lambda") || err.contains("λ"), "{err}");
}

#[test]
fn errors_exit_nonzero_with_a_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    fails(&["maps", "--in", s(&dir.path().join("missing"))]);
    fails(&["gen", "--out", s(dir.path()), "--size", "32by32"]);
    fails(&["gen", "--out", s(dir.path()), "--bogus"]);
    fails(&["mask", "--in", s(dir.path()), "--mode", "blurry"]);
    fails(&[
        "train-agent",
        "--in",
        s(dir.path()),
        "--variant",
        "triple",
        "--out",
        "x",
    ]);
    fails(&["eval-agent", "--in", s(dir.path()), "--model", "raw"]);
    let err = fails(&["maps", "--in", s(dir.path())]);
    assert!(err.starts_with("error:"), "{err}");
    let ds = gen_small(dir.path(), &["--frames", "40"]);
    let err = fails(&["mask", "--in", s(&ds), "--mode", "hard"]);
    assert!(err.contains("precompute"), "{err}");
    let junk = dir.path().join("junk.ckpt");
    fs::write(&junk, b"not a checkpoint").unwrap();
    let mut args = vec!["eval-gaze", "--in", s(&ds), "--checkpoint", s(&junk)];
    args.extend_from_slice(&NET);
    fails(&args);
}

#[test]
fn help_documents_every_flag_and_default() {
    let subcommands = [
        "gen",
        "maps",
        "precompute",
        "mask",
        "train-gaze",
        "train-agent",
        "eval-gaze",
        "eval-agent",
        "eval-series",
    ];
    for sub in subcommands {
        let help = ok(&[sub, "--help"]);
        let mut lines = help.lines().peekable();
        while let Some(line) = lines.next() {
            let trimmed = line.trim_start();
            let is_flag = trimmed.starts_with("--")
                || (trimmed.starts_with('-')
                    && trimmed.len() > 1
                    && trimmed.as_bytes()[1] != b'-'
                    && trimmed.contains(", --"));
            if !is_flag || trimmed.starts_with("-h, --help") || trimmed.starts_with("-V") {
                continue;
            }
            let inline = trimmed.split_once("  ").map(|(_, rest)| rest.trim()).unwrap_or("");
            let description = if inline.is_empty() {
                lines.peek().map(|l| l.trim()).unwrap_or("")
            } else {
                inline
            };
            assert!(
                !description.is_empty() && !description.starts_with('-'),
                "{sub}: {trimmed} has no description"
            );
        }
    }
    for (sub, flag, default) in [
        ("gen", "--traffic-fraction", "[default: 0.327]"),
        ("gen", "--frames", "[default: 500]"),
        ("mask", "--lambda", "[default: 0.3]"),
        ("eval-gaze", "--epsilon", "[default: 0.0000001]"),
        ("train-agent", "--task-weights", "[default: 0.5,0.2,0.2,0.1]"),
        ("train-gaze", "--net-size", "[default: 64x64]"),
        ("eval-series", "--every", "[default: 100]"),
    ] {
        let help = ok(&[sub, "--help"]);
        assert!(help.contains(flag) && help.contains(default), "{sub} {flag}: {help}");
    }
}
