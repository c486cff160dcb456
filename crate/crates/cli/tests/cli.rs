use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ricodec_cli::RunReport;

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small grid so the binary runs fast.
fn config(dir: &Path) -> PathBuf {
    let p = dir.join("small.cfg");
    std::fs::write(&p, "rows = 32\ncols = 512\nelev_min_deg = -24.8\nelev_max_deg = 2.0\nrange_max_m = 120\n").unwrap();
    p
}

fn ricodec(dir: &Path, args: &[&str]) -> Output {
    let cfg = config(dir);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ricodec"));
    cmd.args(args);
    if matches!(args[0], "encode" | "rd-curve" | "ablation" | "stream-sim") {
        cmd.arg("--config").arg(cfg);
    }
    cmd.output().unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn report(path: &Path) -> RunReport {
    RunReport::read_csv(std::fs::File::open(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn encode_then_decode_ten_frames() {
    let dir = scratch("ten_frames");
    let stream = dir.join("a.dcmp");
    let frames = dir.join("out");
    ok(ricodec(&dir, &["encode", "--synthetic", "10", "--pose-source", "icp", "-o", s(&stream)]));
    let bytes = std::fs::read(&stream).unwrap();
    assert_eq!(&bytes[..4], b"DCMP");
    let text = ok(ricodec(&dir, &["decode", s(&stream), "-o", s(&frames)]));
    assert!(text.contains("decoded 10 frames"), "{text}");
    let mut files: Vec<_> = std::fs::read_dir(&frames).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert_eq!(files.len(), 10);
    for f in &files {
        let len = std::fs::metadata(f).unwrap().len();
        assert!(len > 0 && len % 16 == 0, "{f:?} has {len} bytes");
    }
    let info = ok(ricodec(&dir, &["info", s(&stream)]));
    assert!(info.contains("10"), "{info}");
}

#[test]
fn schedule_switches_target_at_frame_five() {
    let dir = scratch("schedule");
    let sched = dir.join("sched.csv");
    std::fs::write(&sched, "frame_index,target_bpp\n0,1.0\n5,2.0\n").unwrap();
    let csv = dir.join("r.csv");
    ok(ricodec(
        &dir,
        &["encode", "--synthetic", "10", "--pose-source", "file", "--schedule", s(&sched), "-o", s(&dir.join("s.dcmp")), "--report", s(&csv)],
    ));
    let r = report(&csv);
    assert_eq!(r.rows.len(), 10);
    for row in &r.rows {
        let want = if row.index < 5 { 1.0 } else { 2.0 };
        assert_eq!(row.target_bpp, Some(want), "frame {}", row.index);
    }
    let mean = |a: usize, b: usize| r.rows[a..b].iter().map(|x| x.bpp).sum::<f64>() / (b - a) as f64;
    assert!(mean(5, 10) > mean(0, 5));
}

#[test]
fn missing_pose_file_is_a_config_error() {
    let dir = scratch("missing_poses");
    let out = ricodec(
        &dir,
        &["encode", "--synthetic", "3", "--pose-source", "file", "--poses", s(&dir.join("nope.txt")), "-o", s(&dir.join("x.dcmp"))],
    );
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope.txt"), "{err}");
}

#[test]
fn runs_are_byte_identical() {
    let dir = scratch("determinism");
    let mut outputs = Vec::new();
    for k in 0..2 {
        let (stream, csv) = (dir.join(format!("{k}.dcmp")), dir.join(format!("{k}.csv")));
        ok(ricodec(
            &dir,
            &["encode", "--synthetic", "6", "--seed", "4", "--pose-source", "icp", "--target-bpp", "1.5", "-o", s(&stream), "--report", s(&csv)],
        ));
        outputs.push((std::fs::read(&stream).unwrap(), std::fs::read(&csv).unwrap()));
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn single_frame_peak_equals_average() {
    let dir = scratch("single_frame");
    let csv = dir.join("r.csv");
    ok(ricodec(&dir, &["stream-sim", "--synthetic", "1", "--target-bpp", "1.5", "--report", s(&csv)]));
    let a = report(&csv).aggregates();
    assert_eq!(a.frames, 1);
    assert!(a.e_r.is_some());
    assert_eq!(a.e_r, a.peak_be);
}

#[test]
fn natural_rate_as_target_gives_small_error() {
    let dir = scratch("natural_rate");
    // Constant-Q first, then the same stream at its own mean rate.
    let qfree = dir.join("q.csv");
    ok(ricodec(&dir, &["encode", "--synthetic", "8", "--pose-source", "file", "--q", "0.05", "-o", s(&dir.join("q.dcmp")), "--report", s(&qfree)]));
    let natural = report(&qfree).aggregates().mean_bpp;
    let csv = dir.join("t.csv");
    ok(ricodec(
        &dir,
        &["stream-sim", "--synthetic", "8", "--pose-source", "file", "--target-bpp", &natural.to_string(), "--report", s(&csv)],
    ));
    let e = report(&csv).aggregates().e_r.unwrap();
    assert!(e < 0.05, "e_R = {e} at natural rate {natural}");
}

#[test]
fn rd_curve_needs_three_steps() {
    let dir = scratch("rd_two");
    let out = ricodec(&dir, &["rd-curve", "--synthetic", "2", "--qs", "0.05,0.1"]);
    assert!(!out.status.success());
    let csv = dir.join("rd.csv");
    ok(ricodec(&dir, &["rd-curve", "--synthetic", "2", "--qs", "0.02,0.05,0.1", "--report", s(&csv)]));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn steps_take_three_targets() {
    let dir = scratch("steps");
    let csv = dir.join("r.csv");
    ok(ricodec(&dir, &["stream-sim", "--synthetic", "10", "--steps", "1.0,2.0,1.5", "--report", s(&csv)]));
    let t: Vec<_> = report(&csv).rows.iter().map(|r| r.target_bpp.unwrap()).collect();
    assert_eq!(t, [1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 1.5, 1.5, 1.5]);
    assert!(!ricodec(&dir, &["stream-sim", "--synthetic", "3", "--steps", "1.0,2.0"]).status.success());
}

#[test]
fn ablation_is_repeatable() {
    let dir = scratch("ablation");
    let mut runs = Vec::new();
    for k in 0..2 {
        let csv = dir.join(format!("{k}.csv"));
        ok(ricodec(&dir, &["ablation", "--synthetic", "2", "--pose-source", "file", "--bpps", "1.5", "--report", s(&csv)]));
        runs.push(std::fs::read_to_string(&csv).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    assert_eq!(runs[0].lines().count(), 4);
}
