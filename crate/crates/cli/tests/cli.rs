use std::path::{Path, PathBuf};
use std::process::Command;

use neural_material::pipeline::{read_records, LearningState, Observation, Summary};
use neural_material::simulator::Trajectory;

const BIN: &str = env!("CARGO_BIN_EXE_neural-material");

// Small and fast: a 1x1x4 bar, a few dozen frames, short training.
fn config(nominal_young: f64, magnitude: f64, gravity: bool) -> String {
    format!(
        r#"
name = "tiny"
seed = 3
[mesh]
kind = "bar"
cells = [1, 1, 4]
size = [0.04, 0.04, 0.16]
density = 1000.0
[truth]
kind = "corotational"
young = 1.0
poisson = 0.4
[nominal]
kind = "corotational"
young = {nominal_young}
poisson = 0.4
[scenario]
motion = "bend"
magnitude = {magnitude}
frames = 30
gravity = {gravity}
[[tests]]
name = "diag"
motion = "bend"
magnitude = {magnitude}
direction = [1.0, 1.0, 0.0]
[learning]
max_outer = 2
constraint_points = 3
[learning.training]
epochs = 20
patience = 20
"#,
        gravity = if gravity { "[0.0, -9.81, 0.0]" } else { "[0.0, 0.0, 0.0]" }
    )
}

struct Case {
    _dir: tempfile::TempDir,
    cfg: PathBuf,
    out: PathBuf,
}

impl Case {
    fn new(text: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, text).unwrap();
        let out = dir.path().join("out");
        Case { _dir: dir, cfg, out }
    }

    fn run(&self, cmd: &str, extra: &[&str]) -> std::process::Output {
        Command::new(BIN)
            .arg(cmd)
            .arg("--config")
            .arg(&self.cfg)
            .arg("--out")
            .arg(&self.out)
            .args(extra)
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn ok(&self, cmd: &str, extra: &[&str]) {
        let o = self.run(cmd, extra);
        assert!(o.status.success(), "{cmd} failed: {}", String::from_utf8_lossy(&o.stderr));
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn gen_truth_writes_trajectory_and_observation() {
    let c = Case::new(&config(0.5, 0.05, true));
    c.ok("gen-truth", &[]);
    let traj = Trajectory::read_csv(&c.file("truth.csv")).unwrap();
    assert_eq!(traj.len(), 30);
    assert_eq!(traj.num_verts(), 20);
    let obs = Observation::load(&c.file("observation.json")).unwrap();
    assert_eq!(obs.frames(), 30);
    assert!(!obs.observed.is_empty() && obs.observed.len() < 20);
    assert!(c.file("test_diag.csv").exists());
}

#[test]
fn gen_truth_is_byte_identical_on_rerun() {
    let c = Case::new(&config(0.5, 0.05, true));
    c.ok("gen-truth", &["--seed", "11"]);
    let a = (read(&c.file("truth.csv")), read(&c.file("observation.json")));
    c.ok("gen-truth", &["--seed", "11"]);
    assert_eq!(a, (read(&c.file("truth.csv")), read(&c.file("observation.json"))));
}

#[test]
fn zero_perturbation_without_gravity_stays_at_rest() {
    let c = Case::new(&config(0.5, 0.0, false));
    c.ok("gen-truth", &[]);
    let traj = Trajectory::read_csv(&c.file("truth.csv")).unwrap();
    let rest = neural_material::mesh::generate_bar(1, 1, 4, [0.04, 0.04, 0.16], 1000.0).unwrap().rest_positions();
    // The SVD at the identity is exact only to roundoff.
    for f in &traj.frames {
        let dev = f.iter().zip(&rest).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 1e-12 * 0.16, "{dev}");
    }
}

#[test]
fn validation_errors_exit_with_two_and_name_the_field() {
    let c = Case::new(&config(0.5, 0.05, true).replace("poisson = 0.4\n[nominal]", "poisson = 0.4\nshear = 1.0\n[nominal]"));
    let o = c.run("gen-truth", &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("truth") && err.contains("shear"), "{err}");

    let c = Case::new(&config(0.5, 0.05, true).replace("density = 1000.0", "density = 0.0"));
    let o = c.run("gen-truth", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("mesh.density"));
}

#[test]
fn missing_inputs_are_runtime_failures() {
    let c = Case::new(&config(0.5, 0.05, true));
    let o = c.run("eval", &[]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));
}

#[test]
fn nominal_equal_to_truth_stops_after_one_iteration() {
    let c = Case::new(&config(1.0, 0.05, true));
    c.ok("gen-truth", &[]);
    c.ok("learn", &[]);
    let s: Summary = serde_json::from_slice(&read(&c.file("summary.json"))).unwrap();
    assert_eq!(s.iterations, 1);
    assert!(s.err_learning < 1e-9, "{}", s.err_learning);
    assert!(!c.file("network.json").exists());
}

#[test]
fn full_command_chain() {
    let c = Case::new(&config(0.5, 0.05, true));
    c.ok("gen-truth", &[]);
    c.ok("learn", &[]);
    let records = read_records(&c.file("records.jsonl")).unwrap();
    assert_eq!(records.len(), 2);
    assert!(records[0].update.is_some() && records[1].update.is_none());
    let s: Summary = serde_json::from_slice(&read(&c.file("summary.json"))).unwrap();
    assert_eq!((s.vertices, s.elements, s.frames), (20, 24, 30));
    assert_eq!(s.baseline_learning, records[0].error);

    c.ok("resim", &[]);
    assert_eq!(Trajectory::read_csv(&c.file("resim.csv")).unwrap().len(), 30);

    c.ok("eval", &[]);
    let s: Summary = serde_json::from_slice(&read(&c.file("summary.json"))).unwrap();
    assert_eq!(s.tests.len(), 1);
    assert_eq!(s.tests[0].name, "diag");

    c.ok("export", &[]);
    let names = ["errors_train.csv", "errors_diag.csv", "vertex_errors_train.csv", "vertex_errors_diag.csv", "loss_curve.csv"];
    let first: Vec<Vec<u8>> = names.iter().map(|n| read(&c.file(&format!("export/{n}")))).collect();
    c.ok("export", &[]);
    let second: Vec<Vec<u8>> = names.iter().map(|n| read(&c.file(&format!("export/{n}")))).collect();
    assert_eq!(first, second, "export must be idempotent");

    // The per-frame curve peaks at the eval table's test error.
    let text = String::from_utf8(first[1].clone()).unwrap();
    let peak = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!((peak - s.tests[0].learned).abs() <= 1e-12 * peak.max(1.0), "{peak} vs {}", s.tests[0].learned);

    let curve = String::from_utf8(first[4].clone()).unwrap();
    assert_eq!(curve.lines().count(), 3);
}

#[test]
fn export_of_an_exact_model_is_all_zero() {
    let c = Case::new(&config(1.0, 0.05, true));
    c.ok("gen-truth", &[]);
    c.ok("learn", &[]);
    c.ok("export", &["--frames", "0,10"]);
    let text = String::from_utf8(read(&c.file("export/errors_train.csv"))).unwrap();
    for line in text.lines().skip(1) {
        for v in line.split(',').skip(1) {
            assert_eq!(v.parse::<f64>().unwrap(), 0.0, "{line}");
        }
    }
    let field = String::from_utf8(read(&c.file("export/vertex_errors_train.csv"))).unwrap();
    assert_eq!(field.lines().count(), 1 + 2 * 20);
}

#[test]
fn interrupted_learning_resumes_to_the_same_result() {
    let full = Case::new(&config(0.5, 0.05, true));
    full.ok("gen-truth", &[]);
    full.ok("learn", &[]);
    let want: LearningState = serde_json::from_slice(&read(&full.file("state.json"))).unwrap();

    // Simulate an interruption after the first iteration by truncating the
    // checkpoint, then resume.
    let part = Case::new(&config(0.5, 0.05, true));
    part.ok("gen-truth", &[]);
    let mut cut = want.clone();
    cut.records.truncate(1);
    cut.finished = false;
    cut.best = None;
    cut.best_iteration = 1;
    cut.best_error = want.records[0].error;
    std::fs::write(part.file("state.json"), serde_json::to_string(&cut).unwrap()).unwrap();
    part.ok("learn", &[]);
    let got: LearningState = serde_json::from_slice(&read(&part.file("state.json"))).unwrap();

    assert_eq!(got.current, want.current);
    assert_eq!(got.best, want.best);
    assert_eq!(got.best_iteration, want.best_iteration);
    assert_eq!(got.records.len(), want.records.len());
    for (a, b) in got.records.iter().zip(&want.records) {
        assert_eq!(a.error, b.error);
        assert_eq!(a.update, b.update);
    }
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = neural_material::config::RunConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            cfg.validate().unwrap();
            let mesh = cfg.build_mesh().unwrap();
            assert_eq!((mesh.num_verts(), mesh.num_elements()), (81, 192), "{}", path.display());
            seen += 1;
        }
    }
    assert_eq!(seen, 2);
}
