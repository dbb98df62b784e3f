use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
version = 1
master_seed = 11
repetitions = 2
target_class = 1

[subject.data]
kind = "clusters"
n_classes = 4
dim = 5
samples_per_class = [120]
separation = 1.0
spread = 1.0
seed = 5

[subject.split]
fractions = [0.5, 0.1, 0.2, 0.2]
seed = 6

[subject.drift]
target_class = 1
train_fraction_of_class = 0.2
repair_fraction_of_class = 0.5
seed = 7

[subject.training]
hidden = [8]
epochs = 20
learning_rate = 0.05
batch_size = 16
seed = 8

[swarm]
n_iterations = 10

[[grid]]
variant = "neg_ratio"
alpha = 8.0
pi = true
target_lw = 3
n_pos = 60
n_particles = 6

[[grid]]
variant = "both_ratios"
alpha = 4.0
pi = false
n_g = 8
n_pos = 60
n_particles = 6
"#;

fn neurepair(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_neurepair"))
        .current_dir(dir)
        .arg("--config")
        .arg("exp.toml")
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("exp.toml"), CONFIG).unwrap();

    assert!(stdout(&neurepair(dir, &["gen-data", "--out", "data.csv"])).contains("480 samples"));
    neurepair(dir, &["drift", "--data", "data.csv", "--out", "splits"]);
    neurepair(dir, &["train", "--splits", "splits", "--out", "model.json"]);
    assert!(dir.join("model.json").exists());

    neurepair(
        dir,
        &[
            "localize",
            "--model",
            "model.json",
            "--splits",
            "splits",
            "--out",
            "loc.csv",
        ],
    );
    let loc = std::fs::read_to_string(dir.join("loc.csv")).unwrap();
    assert_eq!(loc.lines().count(), 4, "{loc}");

    let repair = stdout(&neurepair(
        dir,
        &[
            "repair",
            "--model",
            "model.json",
            "--splits",
            "splits",
            "--out",
            "run",
            "--grid-index",
            "1",
        ],
    ));
    assert!(repair.contains("status"), "{repair}");
    for f in ["run.json", "model.json", "trace.csv", "localized.csv"] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }

    let eval = stdout(&neurepair(
        dir,
        &[
            "evaluate",
            "--model",
            "run/model.json",
            "--data",
            "data.csv",
            "--out",
            "eval.json",
        ],
    ));
    assert!(eval.contains("over 480 samples"), "{eval}");
    assert!(dir.join("eval.csv").exists());

    neurepair(dir, &["sweep", "--out", "sweep"]);
    let runs = std::fs::read_to_string(dir.join("sweep/runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 5);
    assert!(dir.join("sweep/subject/model.json").exists());

    neurepair(dir, &["report", "--sweep-dir", "sweep", "--out", "again"]);
    for f in [
        "runs.csv",
        "config_means.csv",
        "min_regression.csv",
        "long.csv",
        "summary.json",
    ] {
        let a = std::fs::read(dir.join("sweep").join(f)).unwrap();
        let b = std::fs::read(dir.join("again").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn seed_override_changes_generated_data() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("exp.toml"), CONFIG).unwrap();
    neurepair(dir, &["gen-data", "--out", "a.csv"]);
    neurepair(dir, &["gen-data", "--out", "b.csv"]);
    neurepair(dir, &["--seed", "99", "gen-data", "--out", "c.csv"]);
    let read = |f: &str| std::fs::read(dir.join(f)).unwrap();
    assert_eq!(read("a.csv"), read("b.csv"));
    assert_ne!(read("a.csv"), read("c.csv"));
}

#[test]
fn bad_config_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("exp.toml"), "version = 2\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_neurepair"))
        .current_dir(tmp.path())
        .args(["--config", "exp.toml", "gen-data", "--out", "x.csv"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
