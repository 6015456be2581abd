use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn mpemba(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpemba"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn with_config(dir: &TempDir, text: &str) -> String {
    let path = dir.path().join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn comment_value(text: &str, key: &str) -> String {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("# {key} = ")))
        .unwrap_or_else(|| panic!("missing `{key}` in\n{text}"))
        .to_string()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn default_relax_reports_the_crossover() {
    let text = stdout(&mpemba(&["relax"]));
    assert!(text.starts_with("t,p_hot,p_cold,p_eq,d_hot,d_cold\n"));
    let t_star: f64 = comment_value(&text, "t_star").parse().unwrap();
    assert!((t_star - 1.367_154_164).abs() < 1e-6, "{t_star}");
}

#[test]
fn no_state_dependence_means_no_inversion() {
    let dir = TempDir::new().unwrap();
    let cfg = with_config(&dir, "alpha = 0.0\n");
    let text = stdout(&mpemba(&["relax", "--config", &cfg]));
    assert_eq!(comment_value(&text, "t_star"), "none (no inversion)");
}

#[test]
fn two_steps_give_two_rows() {
    let dir = TempDir::new().unwrap();
    let cfg = with_config(&dir, "t_steps = 2\n");
    let text = stdout(&mpemba(&["relax", "--config", &cfg]));
    let rows = text.lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(rows, 3);
}

#[test]
fn lambda_relax_has_per_level_columns() {
    let text = stdout(&mpemba(&["relax", "--model", "lambda"]));
    assert!(text.starts_with(
        "t,p_hot_1,p_hot_2,p_hot_3,p_cold_1,p_cold_2,p_cold_3,p_eq_1,p_eq_2,p_eq_3,d_hot,d_cold\n"
    ));
    assert_eq!(comment_value(&text, "norm"), "euclidean");
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = TempDir::new().unwrap();
    for text in [
        "bogus_key = 1\n",
        "t_steps = 1\n",
        "temperature = -0.5\n",
        "alpha = -10.0\n",
    ] {
        let cfg = with_config(&dir, text);
        let out = mpemba(&["relax", "--config", &cfg]);
        assert_eq!(out.status.code(), Some(2), "{text}");
    }
    let out = mpemba(&["protocol"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn qfi_outputs_both_modes() {
    let text = stdout(&mpemba(&["qfi"]));
    assert!(text.starts_with("t,F_hot,F_cold,F_eq,gain_log10\n"));
    let dir = TempDir::new().unwrap();
    let cfg = with_config(&dir, "qfi_mode = \"surface\"\np0_points = 3\nt_steps = 4\n");
    let text = stdout(&mpemba(&["qfi", "--config", &cfg]));
    assert_eq!(text.lines().count(), 1 + 3 * 4);
    assert!(text.starts_with("p0,t,F\n"));
}

#[test]
fn theorem_records() {
    let text = stdout(&mpemba(&["theorem"]));
    assert!(text.contains("model = qubit"));
    assert!(text.contains("hypothesis = monotone_variation"));
    let dir = TempDir::new().unwrap();
    let cfg = with_config(
        &dir,
        "model = \"lambda\"\np_hot = [0.2, 0.2, 0.6]\np_cold = [0.6, 0.3, 0.1]\n",
    );
    let text = stdout(&mpemba(&["theorem", "--config", &cfg]));
    assert!(text.contains("hypothesis = strong_cancellation"));
}

#[test]
fn noiseless_protocol_recovers_the_temperature() {
    let dir = TempDir::new().unwrap();
    let cfg = with_config(&dir, "noiseless = true\nt_true = 0.5\nt_steps = 41\n");
    let out_dir = dir.path().join("out");
    stdout(&mpemba(&[
        "protocol",
        "--config",
        &cfg,
        "--output",
        out_dir.to_str().unwrap(),
    ]));
    let estimate = read(&out_dir, "estimate.csv");
    for line in estimate.lines().skip(1) {
        let t_hat: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!((t_hat - 0.5).abs() < 1e-8, "{line}");
    }
    let manifest = read(&out_dir, "manifest.txt");
    assert_eq!(manifest.matches("= ok").count(), 4, "{manifest}");
}

#[test]
fn seeded_protocol_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = with_config(&dir, "t_steps = 21\nshots = 2000\n");
    let run = |name: &str, seed: &str| {
        let out_dir = dir.path().join(name);
        stdout(&mpemba(&[
            "protocol",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--output",
            out_dir.to_str().unwrap(),
        ]));
        [
            "calibration.csv",
            "inversion_map.csv",
            "fisher_map.csv",
            "estimate.csv",
        ]
        .map(|f| read(&out_dir, f))
    };
    let a = run("a", "11");
    assert_eq!(a, run("b", "11"));
    assert_ne!(a, run("c", "12"));
    let sequential = dir.path().join("seq");
    stdout(&mpemba(&[
        "protocol",
        "--sequential",
        "--config",
        &cfg,
        "--seed",
        "11",
        "--output",
        sequential.to_str().unwrap(),
    ]));
    assert_eq!(read(&sequential, "fisher_map.csv"), a[2]);
}
