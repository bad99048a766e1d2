use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use neural_material::config::RunConfig;
use neural_material::mesh::TetMesh;
use neural_material::neural::Mlp;
use neural_material::pipeline::{
    evaluate, read_records, resimulate, run_learning_from, write_records, EvalRow, LearningState, Observation, Summary,
};
use neural_material::simulator::{per_frame_errors, MaterialModel, Trajectory};
use neural_material::Error;

#[derive(Parser)]
#[command(name = "neural-material", version, about = "Learn neural material corrections from sparse trajectories")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the ground truth and write the observation.
    GenTruth(Common),
    /// Run (or resume) the learning loop.
    Learn(Common),
    /// Re-simulate the training trajectory with the learned and nominal models.
    Resim(Common),
    /// Error table on the training and test trajectories.
    Eval(Common),
    /// Plot data: per-frame and per-vertex errors, loss curve.
    Export {
        #[command(flatten)]
        common: Common,
        /// Frames for the per-vertex error field (default: each curve's peak).
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
}

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    mesh: TetMesh,
}

impl Run {
    fn open(c: &Common) -> Result<Self, Error> {
        let mut cfg = RunConfig::load(&c.config)?;
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        let out = c
            .out
            .clone()
            .or_else(|| cfg.output.clone())
            .unwrap_or_else(|| PathBuf::from("out").join(&cfg.name));
        std::fs::create_dir_all(&out)?;
        let mesh = cfg.build_mesh()?;
        Ok(Run { cfg, out, mesh })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn require(&self, name: &str, hint: &str) -> Result<PathBuf, Error> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{} not found; run `{hint}` first", p.display()),
            )))
        }
    }

    fn net(&self) -> Result<Option<Mlp>, Error> {
        let state = self.require("state.json", "learn")?;
        Ok(load_state(&state)?.best)
    }

    /// Training trajectory first, then the configured tests.
    fn references(&self) -> Result<Vec<(String, Trajectory)>, Error> {
        let mut refs = vec![("train".to_string(), Trajectory::read_csv(&self.require("truth.csv", "gen-truth")?)?)];
        for t in &self.cfg.tests {
            let p = self.require(&format!("test_{}.csv", t.name), "gen-truth")?;
            refs.push((t.name.clone(), Trajectory::read_csv(&p)?));
        }
        Ok(refs)
    }
}

fn load_state(path: &Path) -> Result<LearningState, Error> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

fn write_atomic(path: &Path, text: &str) -> Result<(), Error> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn gen_truth(run: &Run) -> Result<(), Error> {
    let sim = run.cfg.sim_config();
    let truth = run.cfg.truth_model(&run.mesh)?;
    let scenario = run.cfg.scenario();
    let traj = scenario.simulate(&run.mesh, &truth, &sim)?;
    traj.write_csv(&run.path("truth.csv"))?;
    let obs = Observation::from_trajectory(&traj, &scenario.immobilized(&run.mesh), &run.cfg.observed(&run.mesh)?)?;
    obs.save(&run.path("observation.json"))?;
    for t in &run.cfg.tests {
        run.cfg
            .test_scenario(t)
            .simulate(&run.mesh, &truth, &sim)?
            .write_csv(&run.path(&format!("test_{}.csv", t.name)))?;
    }
    std::fs::write(run.path("config.toml"), run.cfg.to_toml_string()?)?;
    println!(
        "{} vertices, {} elements, {} frames, {} observed -> {}",
        run.mesh.num_verts(),
        run.mesh.num_elements(),
        traj.len(),
        obs.observed.len(),
        run.out.display()
    );
    Ok(())
}

fn learn(run: &Run) -> Result<(), Error> {
    let obs = Observation::load(&run.require("observation.json", "gen-truth")?)?;
    let lcfg = run.cfg.learning_config()?;
    let sim = run.cfg.sim_config();
    let state_path = run.path("state.json");
    let state = if state_path.exists() {
        let s = load_state(&state_path)?;
        log::info!("resuming after {} completed iterations", s.records.len());
        s
    } else {
        LearningState::default()
    };
    let previous: f64 = state.records.iter().map(|r| r.wall_time).sum();
    let records_path = run.path("records.jsonl");
    let t0 = Instant::now();
    let outcome = run_learning_from(&run.mesh, &obs, &lcfg, &sim, state, &mut |s| {
        let r = s.records.last().expect("checkpoint after an iteration");
        log::info!("iteration {}: error {:.3}% of size", r.iteration, r.error);
        write_atomic(&state_path, &serde_json::to_string(s)?)?;
        write_records(&records_path, &s.records)
    })?;
    if let Some(net) = &outcome.net {
        net.save(&run.path("network.json"))?;
    }
    let summary = Summary {
        case: run.cfg.name.clone(),
        vertices: run.mesh.num_verts(),
        elements: run.mesh.num_elements(),
        frames: obs.frames(),
        iterations: outcome.records.len(),
        best_iteration: outcome.best_iteration,
        err_learning: outcome.best_error,
        baseline_learning: outcome.records.first().map_or(f64::NAN, |r| r.error),
        tests: Vec::new(),
        wall_time_hours: (previous + t0.elapsed().as_secs_f64()) / 3600.0,
    };
    write_atomic(&run.path("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "{} iterations, best {:.3}% at iteration {} (nominal {:.3}%)",
        summary.iterations, summary.err_learning, summary.best_iteration, summary.baseline_learning
    );
    Ok(())
}

fn resim(run: &Run) -> Result<(), Error> {
    let net = run.net()?;
    let reference = Trajectory::read_csv(&run.require("truth.csv", "gen-truth")?)?;
    let sim = run.cfg.sim_config();
    let nominal = run.cfg.nominal_params()?;
    let fixed = run.cfg.scenario().immobilized(&run.mesh);
    resimulate(&run.mesh, &MaterialModel::neural(nominal, net)?, &sim, &reference, &fixed)?.write_csv(&run.path("resim.csv"))?;
    resimulate(&run.mesh, &MaterialModel::truth(nominal), &sim, &reference, &fixed)?.write_csv(&run.path("resim_nominal.csv"))?;
    println!("wrote resim.csv and resim_nominal.csv to {}", run.out.display());
    Ok(())
}

fn eval(run: &Run) -> Result<(), Error> {
    let net = run.net()?;
    let rows = evaluate(
        &run.mesh,
        run.cfg.nominal_params()?,
        net.as_ref(),
        &run.cfg.sim_config(),
        &run.references()?,
        &run.cfg.scenario().immobilized(&run.mesh),
    )?;
    write_atomic(&run.path("eval.json"), &serde_json::to_string_pretty(&rows)?)?;
    let summary_path = run.path("summary.json");
    if summary_path.exists() {
        let mut s: Summary = serde_json::from_str(&std::fs::read_to_string(&summary_path)?)?;
        s.tests = rows.iter().filter(|r| r.name != "train").cloned().collect();
        write_atomic(&summary_path, &serde_json::to_string_pretty(&s)?)?;
    }
    println!("{}", format_table(&rows));
    Ok(())
}

fn format_table(rows: &[EvalRow]) -> String {
    let mut s = format!("{:<16} {:>10} {:>10}\n", "trajectory", "learned %", "nominal %");
    for r in rows {
        writeln!(s, "{:<16} {:>10.3} {:>10.3}", r.name, r.learned, r.baseline).unwrap();
    }
    s.trim_end().to_string()
}

fn export(run: &Run, frames: &[usize]) -> Result<(), Error> {
    let net = run.net()?;
    let sim = run.cfg.sim_config();
    let nominal = run.cfg.nominal_params()?;
    let fixed = run.cfg.scenario().immobilized(&run.mesh);
    let learned = MaterialModel::neural(nominal, net)?;
    let plain = MaterialModel::truth(nominal);
    let dir = run.path("export");
    std::fs::create_dir_all(&dir)?;
    let all: Vec<usize> = (0..run.mesh.num_verts()).collect();
    let size = run.mesh.object_size();
    for (name, reference) in run.references()? {
        let a = resimulate(&run.mesh, &learned, &sim, &reference, &fixed)?;
        let b = resimulate(&run.mesh, &plain, &sim, &reference, &fixed)?;
        let ea = per_frame_errors(&reference, &a, &run.mesh, &all)?;
        let eb = per_frame_errors(&reference, &b, &run.mesh, &all)?;
        let mut csv = String::from("frame,max_learned,mean_learned,max_nominal,mean_nominal\n");
        for (j, (x, y)) in ea.iter().zip(&eb).enumerate() {
            writeln!(csv, "{j},{:.17e},{:.17e},{:.17e},{:.17e}", x.0, x.1, y.0, y.1).unwrap();
        }
        std::fs::write(dir.join(format!("errors_{name}.csv")), csv)?;

        let picks: Vec<usize> = if frames.is_empty() {
            let peak = ea.iter().enumerate().max_by(|p, q| p.1 .0.total_cmp(&q.1 .0)).map_or(0, |p| p.0);
            vec![peak]
        } else {
            frames.to_vec()
        };
        let mut csv = String::from("frame,vertex,x,y,z,error_learned,error_nominal\n");
        for &j in &picks {
            if j >= reference.len() {
                return Err(Error::invalid(format!("frame {j} out of range for `{name}` ({} frames)", reference.len())));
            }
            let (r, fa, fb) = (&reference.frames[j], &a.frames[j], &b.frames[j]);
            for v in 0..run.mesh.num_verts() {
                let d = |f: &[f64]| (0..3).map(|c| (f[3 * v + c] - r[3 * v + c]).powi(2)).sum::<f64>().sqrt() * 100.0 / size;
                writeln!(
                    csv,
                    "{j},{v},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                    r[3 * v],
                    r[3 * v + 1],
                    r[3 * v + 2],
                    d(fa),
                    d(fb)
                )
                .unwrap();
            }
        }
        std::fs::write(dir.join(format!("vertex_errors_{name}.csv")), csv)?;
    }

    let records = read_records(&run.require("records.jsonl", "learn")?)?;
    let mut csv = String::from("iteration,error,control_force_norm,physics_norm,training_loss\n");
    for r in &records {
        let u = r.update.as_ref();
        let field = |f: fn(&neural_material::pipeline::UpdateRecord) -> f64| u.map_or(String::new(), |u| format!("{:.17e}", f(u)));
        writeln!(
            csv,
            "{},{:.17e},{},{},{}",
            r.iteration,
            r.error,
            field(|u| u.control_force_norm),
            field(|u| u.physics_norm),
            field(|u| u.training_loss)
        )
        .unwrap();
    }
    std::fs::write(dir.join("loss_curve.csv"), csv)?;
    println!("wrote plot data to {}", dir.display());
    Ok(())
}

fn dispatch(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::GenTruth(c) => gen_truth(&Run::open(&c)?),
        Cmd::Learn(c) => learn(&Run::open(&c)?),
        Cmd::Resim(c) => resim(&Run::open(&c)?),
        Cmd::Eval(c) => eval(&Run::open(&c)?),
        Cmd::Export { common, frames } => export(&Run::open(&common)?, &frames),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::InvalidInput(_) | Error::InvalidMaterial(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
