use std::path::Path;
use std::process::{Command, Output};

use flexframe::compare::CsvTable;

fn flexframe(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flexframe"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const DUMBBELL: &str = r#"
[model]
recipe = "dumbbell:side=100,m1=0.001,m2=0.001,m3=0.001,stiffness=1000"

[solver]
dt = 1e-4
t_end = 0.01
n_flex_modes = 3
damping_ratio = 0.02

[markers]
reference = 0
p = 1
q = 2

[[loads]]
node = 1
direction = [0.0, 0.0, 1.0]
magnitude = 2.0

[output]
nodes = [0, 1, 2]
"#;

const RIGID_PLATE: &str = r#"
[solver]
dt = 1e-4
t_end = 1e-3

[rigid]
mass = 0.0093
com = [0.0, 0.0, 5.0]
inertia_principal = [5.4839, 2112.7024, 2117.7732]

[[loads]]
point = [-500.0, 0.0, 10.0]
direction = [1.0, 0.0, 1.0]
magnitude = 50.0
"#;

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

#[test]
fn simulate_writes_trajectory_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", DUMBBELL);
    let out = flexframe(&["simulate", "--config", "run.toml", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let frame = CsvTable::read(&dir.path().join("res/frame.csv")).unwrap();
    assert_eq!(frame.column("time_s").unwrap().len(), 101);
    let manifest = std::fs::read_to_string(dir.path().join("res/manifest.toml")).unwrap();
    assert!(manifest.contains("schema_version = 1"));
    assert!(manifest.contains("length = \"mm\""));
}

#[test]
fn zero_duration_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", DUMBBELL);
    let out = flexframe(
        &["--quiet", "simulate", "--config", "run.toml", "--out", "res", "--t-end", "0"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let nodes = CsvTable::read(&dir.path().join("res/nodes.csv")).unwrap();
    assert_eq!(nodes.column("time_s").unwrap(), vec![0.0]);
}

#[test]
fn unloaded_body_stays_at_rest() {
    let dir = tempfile::tempdir().unwrap();
    let text = DUMBBELL.replace("magnitude = 2.0", "magnitude = 0.0");
    write(dir.path(), "run.toml", &text);
    let out = flexframe(&["--quiet", "simulate", "--config", "run.toml", "--out", "res"], dir.path());
    assert!(out.status.success());
    let frame = CsvTable::read(&dir.path().join("res/frame.csv")).unwrap();
    for c in ["omega_body_x1", "omega_body_x2", "omega_body_x3", "rotvec_global_x2", "origin_global_x3"] {
        assert!(frame.column(c).unwrap().iter().all(|v| *v == 0.0), "{c}");
    }
    let modal = CsvTable::read(&dir.path().join("res/modal.csv")).unwrap();
    assert!(modal.column("q_modal_m7").unwrap().iter().all(|v| *v == 0.0));
}

#[test]
fn input_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "bad_model.toml", "format = \"flexframe-model\"\nversion = 1\n[[nodes");
    let out = flexframe(&["modes", "--model", "bad_model.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad_model.toml"), "{err}");

    // Rigid run with neither a model nor explicit properties.
    let no_props = RIGID_PLATE.split("[rigid]").next().unwrap().to_string();
    write(dir.path(), "rigid.toml", &no_props);
    let out = flexframe(&["rigid", "--config", "rigid.toml", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    write(dir.path(), "bogus.toml", &DUMBBELL.replace("[solver]", "[solver]\nstep = 3"));
    let out = flexframe(&["simulate", "--config", "bogus.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn rigid_run_reports_published_angular_acceleration() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "rigid.toml", RIGID_PLATE);
    let out = flexframe(&["--quiet", "rigid", "--config", "rigid.toml", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let frame = CsvTable::read(&dir.path().join("res/frame.csv")).unwrap();
    let alpha2 = frame.column("alpha_body_x2").unwrap()[0];
    assert!((alpha2 - 8.4510).abs() < 1e-6 * 8.4510, "{alpha2}");
    assert!(!dir.path().join("res/modal.csv").exists());
}

#[test]
fn compare_exit_codes_and_failing_column() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "run.toml", DUMBBELL);
    let out = flexframe(&["--quiet", "simulate", "--config", "run.toml", "--out", "res"], dir.path());
    assert!(out.status.success());

    let same = flexframe(
        &["compare", "res/frame.csv", "res/frame.csv", "--max-abs", "0", "--out", "cmp"],
        dir.path(),
    );
    assert_eq!(same.status.code(), Some(0));
    assert!(dir.path().join("cmp/compare.json").exists());

    // Perturb one column of a copy.
    let text = std::fs::read_to_string(dir.path().join("res/frame.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let header: Vec<&str> = lines[0].split(',').collect();
    let col = header.iter().position(|c| *c == "omega_body_x1").unwrap();
    let mut fields: Vec<String> = lines[5].split(',').map(String::from).collect();
    let v: f64 = fields[col].parse().unwrap();
    fields[col] = (v + 1.0).to_string();
    lines[5] = fields.join(",");
    write(dir.path(), "perturbed.csv", &(lines.join("\n") + "\n"));

    let diff = flexframe(
        &["compare", "perturbed.csv", "res/frame.csv", "--max-abs", "1e-3"],
        dir.path(),
    );
    assert_eq!(diff.status.code(), Some(1));
    let table = String::from_utf8_lossy(&diff.stdout);
    let failing: Vec<&str> = table.lines().filter(|l| l.ends_with("  FAIL")).collect();
    assert_eq!(failing.len(), 1, "{table}");
    assert!(failing[0].contains("omega_body_x1"));

    let missing = flexframe(&["compare", "res/frame.csv", "res/nodes.csv"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn modes_of_axial_pair_match_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = flexframe(
        &[
            "modes",
            "--recipe",
            "axial-pair:length=50,mass=0.002,stiffness=800",
            "--n-flex",
            "4",
            "--out",
            "m",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(dir.path().join("m/modes.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    let f: Vec<f64> = rows.iter().map(|r| r[1].parse().unwrap()).collect();
    assert_eq!(&rows[5][2], "flexible");
    // Five rigid modes for the collinear pair, one axial mode.
    assert_eq!(f.len(), 6);
    let expected = (2.0 * 800.0 / 0.002f64).sqrt() / (2.0 * std::f64::consts::PI);
    assert!((f[5] - expected).abs() < 1e-8 * expected, "{} vs {expected}", f[5]);
}
