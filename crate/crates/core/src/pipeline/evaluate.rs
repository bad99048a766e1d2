use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::learning::IterationRecord;
use crate::error::{Error, Result};
use crate::materials::MaterialParams;
use crate::mesh::TetMesh;
use crate::neural::Mlp;
use crate::simulator::{max_vertex_error, simulate, MaterialModel, SimConfig, SimState, Trajectory};

/// Re-simulates `reference` from its first frame (and first velocity, if
/// stored) with `model`.
pub fn resimulate(mesh: &TetMesh, model: &MaterialModel, sim: &SimConfig, reference: &Trajectory, immobilized: &[usize]) -> Result<Trajectory> {
    let x = reference.frames[0].clone();
    let v = reference
        .velocities
        .as_ref()
        .map_or_else(|| vec![0.0; x.len()], |vs| vs[0].clone());
    simulate(mesh, model, &SimState { x, v, t: 0.0 }, sim, immobilized, reference.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub name: String,
    /// Max vertex error (% of size) of the learned material.
    pub learned: f64,
    /// Same for the nominal model alone.
    pub baseline: f64,
}

/// Learned and nominal-only errors against each reference trajectory, all
/// started from the reference's initial state.
pub fn evaluate(
    mesh: &TetMesh,
    nominal: MaterialParams,
    net: Option<&Mlp>,
    sim: &SimConfig,
    references: &[(String, Trajectory)],
    immobilized: &[usize],
) -> Result<Vec<EvalRow>> {
    let learned = MaterialModel::neural(nominal, net.cloned())?;
    let plain = MaterialModel::truth(nominal);
    references
        .iter()
        .map(|(name, reference)| {
            let a = resimulate(mesh, &learned, sim, reference, immobilized)?;
            let b = resimulate(mesh, &plain, sim, reference, immobilized)?;
            Ok(EvalRow {
                name: name.clone(),
                learned: max_vertex_error(reference, &a, mesh)?,
                baseline: max_vertex_error(reference, &b, mesh)?,
            })
        })
        .collect()
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub case: String,
    pub vertices: usize,
    pub elements: usize,
    pub frames: usize,
    /// Outer iterations executed.
    pub iterations: usize,
    pub best_iteration: usize,
    /// Learning (reconstruction) error, % of size.
    pub err_learning: f64,
    pub baseline_learning: f64,
    pub tests: Vec<EvalRow>,
    pub wall_time_hours: f64,
}

pub fn write_records(path: &Path, records: &[IterationRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r)?)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<IterationRecord>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::materials::{GradientMode, MaterialKind};
    use crate::mesh::generate_bar;
    use crate::pipeline::{Motion, Scenario};

    #[test]
    fn identical_models_give_zero_error() {
        let mesh = generate_bar(1, 1, 3, [0.08, 0.08, 0.24], 1e6).unwrap();
        let p = MaterialParams::new(MaterialKind::Corotational, 5e9, 0.43).unwrap();
        let sim = SimConfig {
            gradient: GradientMode::Analytic,
            ..SimConfig::default()
        };
        let sc = Scenario::new(Motion::Bend, 0.05).with_frames(20);
        let reference = sc.simulate(&mesh, &MaterialModel::truth(p), &sim).unwrap();
        let rows = evaluate(&mesh, p, None, &sim, &[("bend".into(), reference.clone())], &sc.immobilized(&mesh)).unwrap();
        assert_eq!(rows[0].learned, 0.0);
        assert_eq!(rows[0].baseline, 0.0);

        let soft = MaterialParams::new(MaterialKind::Corotational, 2.5e9, 0.43).unwrap();
        let rows = evaluate(&mesh, soft, None, &sim, &[("bend".into(), reference)], &sc.immobilized(&mesh)).unwrap();
        assert!(rows[0].baseline > 0.1);
        assert_eq!(rows[0].learned, rows[0].baseline);
    }

    #[test]
    fn records_round_trip() {
        let recs = vec![IterationRecord {
            iteration: 1,
            error: 3.25,
            update: None,
            wall_time: 0.5,
        }];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.jsonl");
        write_records(&p, &recs).unwrap();
        assert_eq!(read_records(&p).unwrap(), recs);
    }
}
