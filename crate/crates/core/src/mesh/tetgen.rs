use std::fmt::Write as _;
use std::path::Path;

use super::TetMesh;
use crate::error::{Error, Result};
use crate::numerics::Vec3;

fn data_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(n, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (n + 1, l.split_whitespace().collect()))
    })
}

fn parse_err(file: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        message: format!("line {line}: {msg}"),
    }
}

fn num<T: std::str::FromStr>(file: &Path, line: usize, tok: Option<&&str>) -> Result<T> {
    let tok = tok.ok_or_else(|| parse_err(file, line, "missing field"))?;
    tok.parse().map_err(|_| parse_err(file, line, format!("cannot parse `{tok}`")))
}

/// Reads a TetGen `.node` / `.ele` pair. Indexing is 0- or 1-based as
/// announced by the first vertex index in the `.node` file.
pub fn read_tetgen(node_path: &Path, ele_path: &Path, density: f64) -> Result<TetMesh> {
    let node_text = std::fs::read_to_string(node_path)?;
    let mut lines = data_lines(&node_text);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(node_path, 0, "empty file"))?;
    let count: usize = num(node_path, hl, header.first())?;
    let dim: usize = num(node_path, hl, header.get(1))?;
    if dim != 3 {
        return Err(parse_err(node_path, hl, format!("dimension {dim} unsupported")));
    }
    let mut verts = Vec::with_capacity(count);
    let mut base = None;
    for (ln, toks) in lines.take(count) {
        let idx: usize = num(node_path, ln, toks.first())?;
        let b = *base.get_or_insert(idx);
        if b > 1 {
            return Err(parse_err(node_path, ln, "first vertex index must be 0 or 1"));
        }
        if idx != verts.len() + b {
            return Err(parse_err(node_path, ln, format!("vertex index {idx} out of sequence")));
        }
        verts.push(Vec3::new(
            num(node_path, ln, toks.get(1))?,
            num(node_path, ln, toks.get(2))?,
            num(node_path, ln, toks.get(3))?,
        ));
    }
    if verts.len() != count {
        return Err(parse_err(node_path, 0, format!("expected {count} vertices, found {}", verts.len())));
    }
    let base = base.unwrap_or(0);

    let ele_text = std::fs::read_to_string(ele_path)?;
    let mut lines = data_lines(&ele_text);
    let (hl, header) = lines.next().ok_or_else(|| parse_err(ele_path, 0, "empty file"))?;
    let count: usize = num(ele_path, hl, header.first())?;
    let per: usize = num(ele_path, hl, header.get(1))?;
    if per != 4 {
        return Err(parse_err(ele_path, hl, format!("{per}-node elements unsupported")));
    }
    let mut tets = Vec::with_capacity(count);
    for (ln, toks) in lines.take(count) {
        let mut t = [0usize; 4];
        for (s, slot) in t.iter_mut().enumerate() {
            let raw: usize = num(ele_path, ln, toks.get(s + 1))?;
            *slot = raw
                .checked_sub(base)
                .ok_or_else(|| parse_err(ele_path, ln, format!("index {raw} below base {base}")))?;
        }
        tets.push(t);
    }
    if tets.len() != count {
        return Err(parse_err(ele_path, 0, format!("expected {count} elements, found {}", tets.len())));
    }
    TetMesh::build_precomputed(verts, tets, density)
}

/// Writes 0-based `.node` / `.ele` files.
pub fn write_tetgen(mesh: &TetMesh, node_path: &Path, ele_path: &Path) -> Result<()> {
    let mut s = format!("{} 3 0 0\n", mesh.num_verts());
    for (i, p) in mesh.rest().iter().enumerate() {
        writeln!(s, "{i} {:.17e} {:.17e} {:.17e}", p.x, p.y, p.z).unwrap();
    }
    std::fs::write(node_path, s)?;
    let mut s = format!("{} 4 0\n", mesh.num_elements());
    for (e, t) in mesh.tets().iter().enumerate() {
        writeln!(s, "{e} {} {} {} {}", t[0], t[1], t[2], t[3]).unwrap();
    }
    std::fs::write(ele_path, s)?;
    Ok(())
}
