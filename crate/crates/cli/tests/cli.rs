use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_momentum-lab"))
}

fn run_with(dir: &Path, args: &[&str], config: Option<&str>) -> Output {
    let mut cmd = bin();
    if let Some(text) = config {
        let path = dir.join("config.toml");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.args(args).arg("--out").arg(dir.join("out")).output().unwrap()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().to_string()).collect()
}

#[test]
fn rates_row_matches_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(dir.path(), &["rates"], Some("potential = \"tilted_double_well\"\ntau = 0.1\ns = [0.05]\nalpha = [0.9]\n"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/rates.csv")).unwrap();
    let lambda: f64 = column(&csv, "lambda")[0].parse().unwrap();
    assert!((lambda - 0.168).abs() < 2e-3, "{lambda}");
    let manifest = fs::read_to_string(dir.path().join("out/manifest.toml")).unwrap();
    let hash = column(&csv, "config_hash")[0].clone();
    assert!(manifest.contains(&hash) && manifest.contains("wall_time_s"));
}

#[test]
fn empty_ensemble_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(dir.path(), &["simulate"], Some("potential = \"quadratic\"\nn_traj = 0\nx0 = [1.0]\n"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_keys_and_missing_config_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(dir.path(), &["rates"], Some("potential = \"quadratic\"\nlearning_rate = 0.1\n"));
    assert_eq!(out.status.code(), Some(2));
    let out = run_with(dir.path(), &["rates"], None);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with(dir.path(), &["rates"], Some("potential = \"tilted_double_well\"\ntau = 0.0\n"));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn spectral_quadratic_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "potential = \"quadratic\"\ntheta = 0.5\ns = [0.04]\nalpha = [0.6666666666666666]\nnx = 100\nnv = 100\n";
    let out = run_with(dir.path(), &["spectral", "--quiet"], Some(cfg));
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let csv = fs::read_to_string(dir.path().join("out/spectral_summary.csv")).unwrap();
    let zeta1: f64 = column(&csv, "zeta1")[0].parse().unwrap();
    assert!((zeta1 / 0.29289 - 1.0).abs() < 0.03, "{zeta1}");
}

#[test]
fn simulate_is_byte_reproducible_and_hash_tracks_config() {
    let cfg = "potential = \"quadratic\"\ns = [0.05]\nalpha = [0.5]\nschemes = [\"sgd\", \"sgdm\"]\nn_traj = 50\nn_steps = 200\nrecord_every = 20\nx0 = [1.0]\nseed = 4\n";
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert!(run_with(a.path(), &["simulate"], Some(cfg)).status.success());
    assert!(run_with(b.path(), &["simulate"], Some(cfg)).status.success());
    for f in ["trajectories.csv", "fits.csv"] {
        assert_eq!(fs::read(a.path().join("out").join(f)).unwrap(), fs::read(b.path().join("out").join(f)).unwrap());
    }
    let c = tempfile::tempdir().unwrap();
    assert!(run_with(c.path(), &["simulate", "--seed", "5"], Some(cfg)).status.success());
    let h = |d: &Path| column(&fs::read_to_string(d.join("out/fits.csv")).unwrap(), "config_hash")[0].clone();
    assert_ne!(h(a.path()), h(c.path()));
    assert!(!a.path().join("out/fits.tmp").exists());
}

#[test]
fn thread_count_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.toml");
    fs::write(&path, "potential = \"tilted_double_well\"\n").unwrap();
    let out = bin().env("MOMENTUM_LAB_THREADS", "2").arg("morse").arg("--config").arg(&path).arg("--out").arg(dir.path().join("out")).output().unwrap();
    assert!(out.status.success());
    let manifest = fs::read_to_string(dir.path().join("out/manifest.toml")).unwrap();
    assert!(manifest.contains("threads = 2"), "{manifest}");
    let cps = fs::read_to_string(dir.path().join("out/critical_points.csv")).unwrap();
    assert_eq!(cps.lines().count(), 4);
    assert!(cps.contains("separating"));
}

#[test]
fn certify_prints_margins() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "potential = \"quadratic\"\ns = [0.04]\nalpha = [0.6666666666666666]\nnx = 64\nnv = 64\n";
    let out = run_with(dir.path(), &["certify"], Some(cfg));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.matches("margin_").count(), 8);
    assert!(text.contains("lambda_lower <= zeta1: true"));
}

#[test]
fn reproduce_tables() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_with(dir.path(), &["reproduce", "figure3"], None).status.success());
    let csv = fs::read_to_string(dir.path().join("out/figure3.csv")).unwrap();
    let m: f64 = column(&csv, "beta_multiplier")[2].parse().unwrap();
    assert!((m - 99.5).abs() < 1e-12);

    assert!(run_with(dir.path(), &["reproduce", "section32"], None).status.success());
    let csv = fs::read_to_string(dir.path().join("out/section32.csv")).unwrap();
    assert_eq!(&column(&csv, "pass")[..2], &["true", "true"]);

    assert!(run_with(dir.path(), &["reproduce", "ratio-demo"], None).status.success());
    let csv = fs::read_to_string(dir.path().join("out/ratio_demo.csv")).unwrap();
    let s = column(&csv, "s");
    let alpha = column(&csv, "alpha");
    let ratio = column(&csv, "sgdm_over_sgd");
    for k in 0..s.len() {
        let (s, a, r): (f64, f64, f64) = (s[k].parse().unwrap(), alpha[k].parse().unwrap(), ratio[k].parse().unwrap());
        if (a - 1.0 / 3.0).abs() < 1e-12 {
            assert!((r / (4.0 * s.sqrt()) - 1.0).abs() < 1e-12);
        }
    }
}
