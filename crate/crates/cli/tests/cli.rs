use std::path::Path;
use std::process::{Command, Output};

fn beamtrim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_beamtrim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path) {
    ok(&beamtrim(&[
        "simulate", "--scene", "corridor", "--frames", "8", "--length", "7", "--ramp-frames", "4", "--seed", "3", "--out", p(dir),
    ]));
}

#[test]
fn simulate_run_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim);
    for f in ["000000.bin", "000007.bin", "ground_truth.txt", "times.txt", "sensor.conf", "scene.txt"] {
        assert!(sim.join(f).exists(), "missing {f}");
    }

    let out = tmp.path().join("run");
    let conf = sim.join("sensor.conf");
    let stdout = ok(&beamtrim(&["--config", p(&conf), "run", p(&sim), "--out", p(&out)]));
    assert!(stdout.contains("mean processing time"));
    assert_eq!(stdout.lines().filter(|l| l.starts_with(char::is_numeric)).count(), 8);

    let poses = out.join("poses.txt");
    let report = ok(&beamtrim(&["eval", p(&poses), p(&sim.join("ground_truth.txt")), "--segment", "5"]));
    let row = report.lines().nth(1).unwrap();
    assert!(!row.contains("NaN"), "{row}");
    let mu: f64 = row.split('\t').nth(3).unwrap().trim_start_matches("μ ").parse().unwrap();
    assert!(mu < 1.0, "{row}");

    let svg = tmp.path().join("traj.svg");
    ok(&beamtrim(&["plot-traj", p(&poses), p(&sim.join("ground_truth.txt")), "--out", p(&svg)]));
    assert!(std::fs::read_to_string(&svg).unwrap().contains("<svg"));
}

#[test]
fn run_is_bit_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate(&sim);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&beamtrim(&["run", p(&sim), "--variant", "bl", "--out", p(&a)]));
    ok(&beamtrim(&["run", p(&sim), "--variant", "bl", "--out", p(&b)]));
    assert_eq!(std::fs::read(a.join("poses.txt")).unwrap(), std::fs::read(b.join("poses.txt")).unwrap());
}

#[test]
fn eval_of_identical_files_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let poses = tmp.path().join("gt.txt");
    let text: String = (0..30).map(|i| format!("1 0 0 {} 0 1 0 0 0 0 1 0\n", i as f64 * 10.0)).collect();
    std::fs::write(&poses, text).unwrap();
    let stdout = ok(&beamtrim(&["eval", p(&poses), p(&poses)]));
    assert!(stdout.contains("μ 0.000\tσ 0.000"), "{stdout}");
}

#[test]
fn failed_run_leaves_no_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let scans = tmp.path().join("scans");
    std::fs::create_dir(&scans).unwrap();
    std::fs::write(scans.join("000000.bin"), [0u8; 32]).unwrap();
    // 17 bytes is not a whole number of records
    std::fs::write(scans.join("000001.bin"), [0u8; 17]).unwrap();
    let out = tmp.path().join("out");
    let res = beamtrim(&["run", p(&scans), "--out", p(&out)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error:"));
    assert!(!out.exists());
}

#[test]
fn bad_config_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("bad.conf");
    std::fs::write(&conf, "voxel_size = -1\n").unwrap();
    let res = beamtrim(&["--config", p(&conf), "eval", "a", "b"]);
    assert!(!res.status.success());
}

#[test]
fn bench_rejectors_writes_table_and_plot() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("bench");
    let stdout = ok(&beamtrim(&[
        "bench-rejectors", "--trials", "2", "--level", "0.1,1", "--rejector", "dst", "--rejector", "geom+trim", "--out",
        p(&out),
    ]));
    assert_eq!(stdout.lines().count(), 3);
    assert!(stdout.contains("geom+trim"));
    assert!(out.join("bench.tsv").exists() && out.join("bench.svg").exists());
}
