use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::TetMesh;

/// Uniformly sampled position frames (flattened 3N vectors).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub h: f64,
    pub frames: Vec<Vec<f64>>,
    pub velocities: Option<Vec<Vec<f64>>>,
}

impl Trajectory {
    pub fn new(h: f64, frames: Vec<Vec<f64>>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("trajectory time step must be > 0, got {h}")));
        }
        let Some(first) = frames.first() else {
            return Err(Error::invalid("trajectory has no frames"));
        };
        let n = first.len();
        if n % 3 != 0 || frames.iter().any(|f| f.len() != n) {
            return Err(Error::ShapeMismatch("trajectory frames must share one 3N length".into()));
        }
        Ok(Trajectory {
            h,
            frames,
            velocities: None,
        })
    }

    pub fn with_velocities(h: f64, frames: Vec<Vec<f64>>, velocities: Vec<Vec<f64>>) -> Result<Self> {
        let mut t = Self::new(h, frames)?;
        if velocities.len() != t.frames.len() {
            return Err(Error::ShapeMismatch("velocity frame count differs".into()));
        }
        t.velocities = Some(velocities);
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_verts(&self) -> usize {
        self.frames.first().map_or(0, |f| f.len() / 3)
    }

    /// First `count` frames.
    pub fn truncated(&self, count: usize) -> Trajectory {
        Trajectory {
            h: self.h,
            frames: self.frames[..count.min(self.len())].to_vec(),
            velocities: self.velocities.as_ref().map(|v| v[..count.min(v.len())].to_vec()),
        }
    }

    /// `h=<h>,n=<verts>` header, then one frame per row at 17 significant
    /// digits (bit-exact on read back).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "h={:.16e},n={}", self.h, self.num_verts()).unwrap();
        for f in &self.frames {
            for (i, v) in f.iter().enumerate() {
                if i > 0 {
                    s.push(',');
                }
                write!(s, "{v:.16e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let bad = |line: usize, m: String| Error::Parse {
            file: path.to_path_buf(),
            message: format!("line {line}: {m}"),
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))?;
        let mut h = None;
        let mut n = None;
        for field in header.split(',') {
            match field.trim().split_once('=') {
                Some(("h", v)) => h = v.parse::<f64>().ok(),
                Some(("n", v)) => n = v.parse::<usize>().ok(),
                _ => return Err(bad(1, format!("unexpected header field `{field}`"))),
            }
        }
        let (h, n) = match (h, n) {
            (Some(h), Some(n)) => (h, n),
            _ => return Err(bad(1, "header must be `h=<value>,n=<verts>`".into())),
        };
        let mut frames = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: std::result::Result<Vec<f64>, _> = line.split(',').map(|t| t.trim().parse::<f64>()).collect();
            let row = row.map_err(|e| bad(i + 2, e.to_string()))?;
            if row.len() != 3 * n {
                return Err(bad(i + 2, format!("expected {} values, found {}", 3 * n, row.len())));
            }
            frames.push(row);
        }
        Trajectory::new(h, frames)
    }
}

fn check_pair(a: &Trajectory, b: &Trajectory, mesh: &TetMesh) -> Result<()> {
    if a.len() != b.len() || a.h != b.h {
        return Err(Error::ShapeMismatch(format!(
            "trajectories differ in frames ({} vs {}) or step ({} vs {})",
            a.len(),
            b.len(),
            a.h,
            b.h
        )));
    }
    if a.num_verts() != mesh.num_verts() || b.num_verts() != mesh.num_verts() {
        return Err(Error::ShapeMismatch("trajectory vertex count differs from mesh".into()));
    }
    Ok(())
}

/// Per-frame `(max, mean)` vertex distance over `verts`, in % of object size.
pub fn per_frame_errors(a: &Trajectory, b: &Trajectory, mesh: &TetMesh, verts: &[usize]) -> Result<Vec<(f64, f64)>> {
    check_pair(a, b, mesh)?;
    let size = mesh.object_size();
    Ok(a.frames
        .iter()
        .zip(&b.frames)
        .map(|(fa, fb)| {
            let d: Vec<f64> = verts
                .iter()
                .map(|&v| {
                    let s: f64 = (0..3).map(|c| (fa[3 * v + c] - fb[3 * v + c]).powi(2)).sum();
                    s.sqrt()
                })
                .collect();
            let max = d.iter().copied().fold(0.0, f64::max);
            let mean = if d.is_empty() { 0.0 } else { d.iter().sum::<f64>() / d.len() as f64 };
            (100.0 * max / size, 100.0 * mean / size)
        })
        .collect())
}

/// Maximum vertex distance over all frames as a percentage of the rest
/// bounding-box diagonal.
pub fn max_vertex_error(a: &Trajectory, b: &Trajectory, mesh: &TetMesh) -> Result<f64> {
    let all: Vec<usize> = (0..mesh.num_verts()).collect();
    max_vertex_error_subset(a, b, mesh, &all)
}

pub fn max_vertex_error_subset(a: &Trajectory, b: &Trajectory, mesh: &TetMesh, verts: &[usize]) -> Result<f64> {
    Ok(per_frame_errors(a, b, mesh, verts)?.into_iter().map(|e| e.0).fold(0.0, f64::max))
}
