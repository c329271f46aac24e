//! Run artifacts: legacy-VTK text fields per level, a JSON mesh manifest,
//! and CSV probe lines sampled from the finest covering level.
//!
//! A level is a union of patches but a structured-points file wants one box,
//! so each file spans the level's bounding box with a `coverage` mask
//! marking the nodes the level actually carries. Values print with 17
//! significant digits, which round-trips f64 exactly; `read_vtk` is the
//! writer's inverse and exists mostly so tests can say so.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{Hierarchy, NodeField};

use super::config::ProbeSpec;

/// A field with one entry per hierarchy level, named for output.
pub struct NamedField {
    pub name: String,
    pub per_level: Vec<NodeField>,
}

impl NamedField {
    pub fn new(name: impl Into<String>, per_level: Vec<NodeField>) -> Self {
        NamedField { name: name.into(), per_level }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct ManifestLevel {
    index: usize,
    spacing: [f64; 3],
    domain: [[i64; 3]; 2],
    patches: Vec<[[i64; 3]; 2]>,
    nodes: usize,
    file: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    dim: usize,
    phys_lo: [f64; 3],
    phys_hi: [f64; 3],
    fields: Vec<&'a str>,
    levels: Vec<ManifestLevel>,
}

/// Writes one VTK file per level plus `manifest.json`; returns every path
/// written. Every field must carry one entry per hierarchy level.
pub fn write_fields(hier: &Hierarchy, fields: &[NamedField], dir: &Path) -> Result<Vec<PathBuf>> {
    for f in fields {
        if f.per_level.len() != hier.levels.len() {
            return Err(Error::Parameter(format!(
                "field `{}` has {} levels, hierarchy has {}",
                f.name,
                f.per_level.len(),
                hier.levels.len()
            )));
        }
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    for m in 0..hier.levels.len() {
        let path = dir.join(format!("level_{m}.vtk"));
        fs::write(&path, vtk_level_text(hier, fields, m)).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    let manifest = Manifest {
        dim: hier.dim,
        phys_lo: hier.phys_lo,
        phys_hi: hier.phys_hi,
        fields: fields.iter().map(|f| f.name.as_str()).collect(),
        levels: hier
            .levels
            .iter()
            .enumerate()
            .map(|(m, lev)| ManifestLevel {
                index: m,
                spacing: lev.spacing,
                domain: [lev.domain.lo, lev.domain.hi],
                patches: lev.patches.iter().map(|b| [b.lo, b.hi]).collect(),
                nodes: lev.num_nodes(),
                file: format!("level_{m}.vtk"),
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    written.push(path);
    Ok(written)
}

fn vtk_level_text(hier: &Hierarchy, fields: &[NamedField], m: usize) -> String {
    let lev = &hier.levels[m];
    let dim = hier.dim;
    // Bounding box of the level's region; inactive axes collapse to one node.
    let mut lo = [i64::MAX; 3];
    let mut hi = [i64::MIN; 3];
    for b in lev.region.boxes() {
        for d in 0..3 {
            lo[d] = lo[d].min(b.lo[d]);
            hi[d] = hi[d].max(b.hi[d]);
        }
    }
    let n: [i64; 3] = std::array::from_fn(|d| hi[d] - lo[d] + 1);
    let total = (n[0] * n[1] * n[2]) as usize;
    let origin = hier.node_pos(m, lo);
    let spacing: [f64; 3] = std::array::from_fn(|d| if d < dim { lev.spacing[d] } else { 1.0 });

    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "elastamr level {m}");
    s.push_str("ASCII\nDATASET STRUCTURED_POINTS\n");
    let _ = writeln!(s, "DIMENSIONS {} {} {}", n[0], n[1], n[2]);
    let _ = writeln!(s, "ORIGIN {:.17e} {:.17e} {:.17e}", origin[0], origin[1], origin[2]);
    let _ = writeln!(s, "SPACING {:.17e} {:.17e} {:.17e}", spacing[0], spacing[1], spacing[2]);
    let _ = writeln!(s, "POINT_DATA {total}");
    let _ = writeln!(s, "FIELD FieldData {}", fields.len() + 1);

    let _ = writeln!(s, "coverage 1 {total} double");
    for_each_bb_node(lo, hi, |p| {
        let covered = lev.region.contains(p);
        let _ = writeln!(s, "{:.17e}", if covered { 1.0 } else { 0.0 });
    });
    for f in fields {
        let fl = &f.per_level[m];
        let _ = writeln!(s, "{} {} {total} double", f.name, fl.ncomp);
        for_each_bb_node(lo, hi, |p| {
            for c in 0..fl.ncomp {
                if c > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{:.17e}", fl.at(p, c).unwrap_or(0.0));
            }
            s.push('\n');
        });
    }
    s
}

// VTK point order: x varies fastest, z slowest.
fn for_each_bb_node(lo: [i64; 3], hi: [i64; 3], mut f: impl FnMut([i64; 3])) {
    for k in lo[2]..=hi[2] {
        for j in lo[1]..=hi[1] {
            for i in lo[0]..=hi[0] {
                f([i, j, k]);
            }
        }
    }
}

/// One structured-points file as written by `write_fields`.
#[derive(Debug)]
pub struct VtkGrid {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    /// `(name, components, values)`, tuples in x-fastest node order.
    pub arrays: Vec<(String, usize, Vec<f64>)>,
}

/// Reads a file produced by `write_fields`. Not a general VTK reader: it
/// accepts exactly the structured-points subset the writer emits.
pub fn read_vtk(path: &Path) -> Result<VtkGrid> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |why: &str| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{}: {why}", path.display()),
        ))
    };
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 9 || !lines[0].starts_with("# vtk") {
        return Err(bad("missing VTK header"));
    }
    if lines[2] != "ASCII" || lines[3] != "DATASET STRUCTURED_POINTS" {
        return Err(bad("not an ASCII structured-points dataset"));
    }
    fn triple<T: std::str::FromStr>(line: &str, tag: &str) -> Option<[T; 3]> {
        let rest = line.strip_prefix(tag)?;
        let mut it = rest.split_whitespace().map(|w| w.parse::<T>().ok());
        let out = [it.next()??, it.next()??, it.next()??];
        it.next().is_none().then_some(out)
    }
    let dims: [usize; 3] = triple(lines[4], "DIMENSIONS").ok_or_else(|| bad("bad DIMENSIONS"))?;
    let origin: [f64; 3] = triple(lines[5], "ORIGIN").ok_or_else(|| bad("bad ORIGIN"))?;
    let spacing: [f64; 3] = triple(lines[6], "SPACING").ok_or_else(|| bad("bad SPACING"))?;
    let total: usize = lines[7]
        .strip_prefix("POINT_DATA ")
        .and_then(|w| w.parse().ok())
        .ok_or_else(|| bad("bad POINT_DATA"))?;
    if total != dims[0] * dims[1] * dims[2] {
        return Err(bad("POINT_DATA count does not match DIMENSIONS"));
    }
    let narrays: usize = lines[8]
        .strip_prefix("FIELD FieldData ")
        .and_then(|w| w.parse().ok())
        .ok_or_else(|| bad("bad FIELD header"))?;

    let mut arrays = Vec::with_capacity(narrays);
    let mut cursor = 9;
    for _ in 0..narrays {
        let header = lines.get(cursor).ok_or_else(|| bad("truncated array header"))?;
        let words: Vec<&str> = header.split_whitespace().collect();
        if words.len() != 4 || words[3] != "double" {
            return Err(bad("malformed array header"));
        }
        let name = words[0].to_string();
        let ncomp: usize = words[1].parse().map_err(|_| bad("bad component count"))?;
        let count: usize = words[2].parse().map_err(|_| bad("bad tuple count"))?;
        if count != total {
            return Err(bad("array length does not match POINT_DATA"));
        }
        cursor += 1;
        let mut vals = Vec::with_capacity(count * ncomp);
        for row in 0..count {
            let line = lines.get(cursor + row).ok_or_else(|| bad("truncated array data"))?;
            for w in line.split_whitespace() {
                vals.push(w.parse::<f64>().map_err(|_| bad("bad value"))?);
            }
        }
        if vals.len() != count * ncomp {
            return Err(bad("wrong number of values in array"));
        }
        cursor += count;
        arrays.push((name, ncomp, vals));
    }
    Ok(VtkGrid { dims, origin, spacing, arrays })
}

/// Multilinear sample of one level's field. `None` when the level does not
/// carry the whole interpolation cell around `x`. Samples landing on a node
/// (to within a relative 1e-12) collapse to that node, so points on a
/// level's rim are readable without the cell beyond it.
fn sample_level(hier: &Hierarchy, m: usize, f: &NodeField, x: [f64; 3]) -> Option<Vec<f64>> {
    let lev = &hier.levels[m];
    let dim = hier.dim;
    let mut nodes = [[(0i64, 0.0f64); 2]; 3];
    let mut counts = [1usize; 3];
    for d in 0..3 {
        if d >= dim {
            nodes[d][0] = (0, 1.0);
            continue;
        }
        let s = (x[d] - hier.phys_lo[d]) / lev.spacing[d];
        let (lo, hi) = (lev.domain.lo[d] as f64, lev.domain.hi[d] as f64);
        if s < lo - 1e-9 || s > hi + 1e-9 {
            return None;
        }
        let s = s.clamp(lo, hi);
        let i0 = (s.floor() as i64).clamp(lev.domain.lo[d], lev.domain.hi[d] - 1);
        let t = s - i0 as f64;
        if t <= 1e-12 {
            nodes[d][0] = (i0, 1.0);
        } else if t >= 1.0 - 1e-12 {
            nodes[d][0] = (i0 + 1, 1.0);
        } else {
            nodes[d][0] = (i0, 1.0 - t);
            nodes[d][1] = (i0 + 1, t);
            counts[d] = 2;
        }
    }
    let mut out = vec![0.0; f.ncomp];
    for a in 0..counts[0] {
        for b in 0..counts[1] {
            for c in 0..counts[2] {
                let (ia, wa) = nodes[0][a];
                let (jb, wb) = nodes[1][b];
                let (kc, wc) = nodes[2][c];
                let w = wa * wb * wc;
                for (comp, o) in out.iter_mut().enumerate() {
                    *o += w * f.at([ia, jb, kc], comp)?;
                }
            }
        }
    }
    Some(out)
}

/// Composite sample at `x`: the finest level carrying the interpolation
/// cell wins, matching how the composite solution is read everywhere else.
pub fn sample_composite(hier: &Hierarchy, per_level: &[NodeField], x: [f64; 3]) -> Result<Vec<f64>> {
    for m in (0..per_level.len()).rev() {
        if let Some(v) = sample_level(hier, m, &per_level[m], x) {
            return Ok(v);
        }
    }
    Err(Error::Parameter(format!("sample point {x:?} lies outside the domain")))
}

/// Samples every field along the probe line and writes one CSV row per
/// sample: arclength, position, then each component of each field (columns
/// `name` or `name_<c>`).
pub fn write_probe(
    hier: &Hierarchy,
    fields: &[NamedField],
    probe: &ProbeSpec,
    path: &Path,
) -> Result<PathBuf> {
    if probe.samples < 2 {
        return Err(Error::Config(format!(
            "probe `{}` needs at least 2 samples, got {}",
            probe.name, probe.samples
        )));
    }
    for (what, x) in [("start", probe.start), ("end", probe.end)] {
        for d in 0..hier.dim {
            if x[d] < hier.phys_lo[d] - 1e-12 || x[d] > hier.phys_hi[d] + 1e-12 {
                return Err(Error::Config(format!(
                    "probe `{}`: {what} point {x:?} lies outside the domain",
                    probe.name
                )));
            }
        }
    }
    for f in fields {
        if f.per_level.len() != hier.levels.len() {
            return Err(Error::Parameter(format!(
                "field `{}` has {} levels, hierarchy has {}",
                f.name,
                f.per_level.len(),
                hier.levels.len()
            )));
        }
    }

    let mut s = String::new();
    s.push_str("arclength,x,y,z");
    for f in fields {
        let nc = f.per_level[0].ncomp;
        if nc == 1 {
            let _ = write!(s, ",{}", f.name);
        } else {
            for c in 0..nc {
                let _ = write!(s, ",{}_{c}", f.name);
            }
        }
    }
    s.push('\n');

    for k in 0..probe.samples {
        let t = k as f64 / (probe.samples - 1) as f64;
        let mut x = [0.0f64; 3];
        let mut arc2 = 0.0;
        for d in 0..3 {
            x[d] = probe.start[d] + t * (probe.end[d] - probe.start[d]);
            arc2 += (x[d] - probe.start[d]).powi(2);
        }
        let _ = write!(s, "{:.17e},{:.17e},{:.17e},{:.17e}", arc2.sqrt(), x[0], x[1], x[2]);
        for f in fields {
            for v in sample_composite(hier, &f.per_level, x)? {
                let _ = write!(s, ",{v:.17e}");
            }
        }
        s.push('\n');
    }
    fs::write(path, s).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}
