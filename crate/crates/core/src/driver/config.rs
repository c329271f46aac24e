//! Line-oriented run configuration.
//!
//! The format is `section.key = value`, one pair per line, with `#` starting
//! a comment. Every key has a default except `case.kind`, and unknown keys
//! are rejected so a typo cannot silently fall back to a default. Probe
//! lines (`probe.<name> = x0 y0 z0 x1 y1 z1 samples`) may appear any number
//! of times as long as the names differ.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mg::{CycleKind, SolverConfig};
use crate::problems::{EshelbyParams, FractureParams, GridSpec, PhaseFieldParams};

/// Which bundled problem a run exercises.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CaseKind {
    Eshelby,
    Fracture,
    Microstructure,
    /// Isotropic block whose body force is chosen so the displacement is a
    /// known trigonometric field; exists to measure discretization error.
    Manufactured,
}

impl CaseKind {
    pub fn name(self) -> &'static str {
        match self {
            CaseKind::Eshelby => "eshelby",
            CaseKind::Fracture => "fracture",
            CaseKind::Microstructure => "microstructure",
            CaseKind::Manufactured => "manufactured",
        }
    }
}

/// A straight sample line through the domain.
#[derive(Clone, Debug)]
pub struct ProbeSpec {
    pub name: String,
    pub start: [f64; 3],
    pub end: [f64; 3],
    pub samples: usize,
}

/// Microstructure-case knobs beyond the phase-field constants: how the
/// Voronoi seeding is drawn, how long the boundaries relax before loading,
/// and the shear applied for the elastic solve.
#[derive(Clone, Copy, Debug)]
pub struct MicroParams {
    pub phase: PhaseFieldParams,
    pub n_grains: usize,
    pub n_order: usize,
    /// Explicit evolution steps before the elastic solve.
    pub steps: usize,
    /// Time step as a fraction of the explicit stability bound.
    pub dt_factor: f64,
    /// Shear displacement imposed on the top face.
    pub shear: f64,
}

impl Default for MicroParams {
    fn default() -> Self {
        MicroParams {
            phase: PhaseFieldParams::default(),
            n_grains: 10,
            n_order: 10,
            steps: 20,
            dt_factor: 0.8,
            shear: 0.1,
        }
    }
}

/// Material constants of the manufactured-solution case.
#[derive(Clone, Copy, Debug)]
pub struct ManufacturedParams {
    pub e: f64,
    pub nu: f64,
}

impl Default for ManufacturedParams {
    fn default() -> Self {
        ManufacturedParams { e: 210.0, nu: 0.3 }
    }
}

/// Everything a run needs. `parse_config` builds one from text; the command
/// line may override the output directory, level budget, and seed afterwards.
#[derive(Clone)]
pub struct CaseConfig {
    pub kind: CaseKind,
    pub seed: u64,
    /// Where to write fields, probes, and the report; `None` keeps the run
    /// in memory.
    pub out_dir: Option<PathBuf>,
    pub grid: GridSpec,
    pub solver: SolverConfig,
    pub eshelby: EshelbyParams,
    pub fracture: FractureParams,
    pub micro: MicroParams,
    pub manufactured: ManufacturedParams,
    pub probes: Vec<ProbeSpec>,
}

// The fracture block can carry a boundary-value closure, so Debug is a
// summary, not a dump.
impl std::fmt::Debug for CaseConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CaseConfig")
            .field("kind", &self.kind)
            .field("seed", &self.seed)
            .field("grid", &self.grid)
            .field("probes", &self.probes.len())
            .finish_non_exhaustive()
    }
}

impl CaseConfig {
    /// Defaults for `kind`: desk-scale grids sized so the default feature
    /// widths stay resolvable at the deepest level.
    pub fn new(kind: CaseKind) -> Self {
        let grid = match kind {
            CaseKind::Eshelby => GridSpec::new(3, 32, 3),
            CaseKind::Fracture => GridSpec::new(2, 32, 3),
            CaseKind::Microstructure => GridSpec::new(2, 32, 2),
            CaseKind::Manufactured => GridSpec::new(2, 32, 0),
        };
        CaseConfig {
            kind,
            seed: 0,
            out_dir: None,
            grid,
            solver: SolverConfig::default(),
            eshelby: EshelbyParams::default(),
            fracture: FractureParams::default(),
            micro: MicroParams::default(),
            manufactured: ManufacturedParams::default(),
            probes: Vec::new(),
        }
    }

    /// Checks everything the parser can know without building the problem;
    /// geometry-versus-resolution checks stay with the problem builders.
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let s = &self.solver;
        if !(s.tol_rel > 0.0) {
            return Err(Error::Config(format!("solver.tol_rel must be positive, got {}", s.tol_rel)));
        }
        if !(s.damping > 0.0 && s.damping <= 1.0) {
            return Err(Error::Config(format!("solver.damping must lie in (0, 1], got {}", s.damping)));
        }
        if s.max_cycles == 0 || s.smoothing_ops_per_level == 0 || s.jacobi_per_smoothing_op == 0 {
            return Err(Error::Config("solver cycle and sweep counts must be at least 1".into()));
        }
        let m = &self.micro;
        if m.n_grains == 0 || m.n_order == 0 || m.n_order > m.n_grains {
            return Err(Error::Config(format!(
                "micro.n_order must lie in 1..=micro.n_grains, got {} of {}",
                m.n_order, m.n_grains
            )));
        }
        if !(m.dt_factor > 0.0 && m.dt_factor <= 1.0) {
            return Err(Error::Config(format!("micro.dt_factor must lie in (0, 1], got {}", m.dt_factor)));
        }
        for p in &self.probes {
            if p.samples < 2 {
                return Err(Error::Config(format!(
                    "probe `{}` needs at least 2 samples, got {}",
                    p.name, p.samples
                )));
            }
            for v in p.start.iter().chain(p.end.iter()) {
                if !v.is_finite() {
                    return Err(Error::Config(format!("probe `{}` has a non-finite endpoint", p.name)));
                }
            }
        }
        Ok(())
    }
}

fn bad_value(line: usize, key: &str, v: &str, want: &str) -> Error {
    Error::Config(format!("line {line}: key `{key}`: cannot parse `{v}` as {want}"))
}

/// The raw key/value pairs of one file, with source lines for error
/// reporting. Keys are consumed as they are recognized; leftovers are
/// unknown keys.
struct Raw {
    entries: BTreeMap<String, (usize, String)>,
}

impl Raw {
    fn parse(text: &str) -> Result<Raw> {
        let mut entries = BTreeMap::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw_line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {line}: expected `section.key = value`, got `{body}`"
                )));
            };
            let key = k.trim().to_string();
            let value = v.trim().to_string();
            if !key.split_once('.').is_some_and(|(s, n)| !s.is_empty() && !n.is_empty()) {
                return Err(Error::Config(format!("line {line}: key `{key}` must look like section.key")));
            }
            if value.is_empty() {
                return Err(Error::Config(format!("line {line}: key `{key}` has an empty value")));
            }
            if let Some((first, _)) = entries.get(&key) {
                return Err(Error::Config(format!(
                    "duplicate key `{key}` on lines {first} and {line}"
                )));
            }
            entries.insert(key, (line, value));
        }
        Ok(Raw { entries })
    }

    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key)
    }

    /// Overwrites `dst` when `key` is present; absent keys keep the default.
    fn scalar<T: FromStr>(&mut self, key: &str, dst: &mut T) -> Result<()> {
        if let Some((line, v)) = self.take(key) {
            *dst = v.parse().map_err(|_| bad_value(line, key, &v, "a number"))?;
        }
        Ok(())
    }

    fn floats<const N: usize>(&mut self, key: &str, dst: &mut [f64; N]) -> Result<()> {
        if let Some((line, v)) = self.take(key) {
            let parts: Vec<&str> = v.split_whitespace().collect();
            if parts.len() != N {
                return Err(Error::Config(format!(
                    "line {line}: key `{key}`: expected {N} numbers, got {}",
                    parts.len()
                )));
            }
            for (d, p) in dst.iter_mut().zip(parts) {
                *d = p.parse().map_err(|_| bad_value(line, key, p, "a number"))?;
            }
        }
        Ok(())
    }
}

pub fn parse_config(text: &str) -> Result<CaseConfig> {
    let mut raw = Raw::parse(text)?;

    let Some((kind_line, kind_text)) = raw.take("case.kind") else {
        return Err(Error::Config("missing required key `case.kind`".into()));
    };
    let kind = match kind_text.as_str() {
        "eshelby" => CaseKind::Eshelby,
        "fracture" => CaseKind::Fracture,
        "microstructure" => CaseKind::Microstructure,
        "manufactured" => CaseKind::Manufactured,
        other => {
            return Err(Error::Config(format!(
                "line {kind_line}: unknown value `{other}` for case.kind \
                 (eshelby|fracture|microstructure|manufactured)"
            )))
        }
    };
    let mut cfg = CaseConfig::new(kind);

    raw.scalar("case.seed", &mut cfg.seed)?;
    if let Some((_, v)) = raw.take("case.out") {
        cfg.out_dir = Some(PathBuf::from(v));
    }

    raw.scalar("mesh.dim", &mut cfg.grid.dim)?;
    raw.scalar("mesh.base_cells", &mut cfg.grid.base_cells)?;
    raw.scalar("mesh.max_levels", &mut cfg.grid.max_levels)?;
    raw.scalar("mesh.ghost_width", &mut cfg.grid.mesh.ghost_width)?;
    raw.scalar("mesh.blocking_factor", &mut cfg.grid.mesh.blocking_factor)?;
    raw.scalar("mesh.buffer", &mut cfg.grid.mesh.buffer)?;
    raw.scalar("mesh.max_patch_cells", &mut cfg.grid.mesh.max_patch_cells)?;

    if let Some((line, v)) = raw.take("solver.cycle") {
        cfg.solver.cycle = match v.as_str() {
            "F" | "f" => CycleKind::F,
            "V" | "v" => CycleKind::V,
            other => {
                return Err(Error::Config(format!(
                    "line {line}: unknown value `{other}` for solver.cycle (F|V)"
                )))
            }
        };
    }
    raw.scalar("solver.tol_rel", &mut cfg.solver.tol_rel)?;
    raw.scalar("solver.max_cycles", &mut cfg.solver.max_cycles)?;
    raw.scalar("solver.smoothing_ops", &mut cfg.solver.smoothing_ops_per_level)?;
    raw.scalar("solver.jacobi_per_op", &mut cfg.solver.jacobi_per_smoothing_op)?;
    raw.scalar("solver.damping", &mut cfg.solver.damping)?;
    raw.scalar("solver.bottom_sweeps", &mut cfg.solver.bottom_sweeps)?;

    raw.floats("eshelby.radii", &mut cfg.eshelby.radii)?;
    raw.floats("eshelby.eigenstrain", &mut cfg.eshelby.eigenstrain)?;
    raw.scalar("eshelby.e", &mut cfg.eshelby.e)?;
    raw.scalar("eshelby.nu", &mut cfg.eshelby.nu)?;
    raw.scalar("eshelby.diffuse_width", &mut cfg.eshelby.diffuse_width)?;
    raw.scalar("eshelby.half_extent", &mut cfg.eshelby.half_extent)?;
    raw.scalar("eshelby.tag_threshold", &mut cfg.eshelby.tag_threshold)?;

    raw.scalar("fracture.a", &mut cfg.fracture.a)?;
    raw.scalar("fracture.t", &mut cfg.fracture.t)?;
    raw.scalar("fracture.eps", &mut cfg.fracture.eps)?;
    raw.scalar("fracture.g_c", &mut cfg.fracture.g_c)?;
    raw.scalar("fracture.modulus_floor", &mut cfg.fracture.modulus_floor)?;
    raw.scalar("fracture.half_extent", &mut cfg.fracture.half_extent)?;
    raw.scalar("fracture.e", &mut cfg.fracture.e)?;
    raw.scalar("fracture.nu", &mut cfg.fracture.nu)?;
    raw.scalar("fracture.sigma_inf", &mut cfg.fracture.sigma_inf)?;
    raw.scalar("fracture.tag_threshold", &mut cfg.fracture.tag_threshold)?;

    raw.scalar("micro.n_grains", &mut cfg.micro.n_grains)?;
    raw.scalar("micro.n_order", &mut cfg.micro.n_order)?;
    raw.scalar("micro.steps", &mut cfg.micro.steps)?;
    raw.scalar("micro.dt_factor", &mut cfg.micro.dt_factor)?;
    raw.scalar("micro.shear", &mut cfg.micro.shear)?;
    raw.scalar("micro.mobility", &mut cfg.micro.phase.mobility)?;
    raw.scalar("micro.mu_c", &mut cfg.micro.phase.mu_c)?;
    raw.scalar("micro.gamma", &mut cfg.micro.phase.gamma)?;
    raw.scalar("micro.gb_width", &mut cfg.micro.phase.gb_width)?;
    raw.scalar("micro.gb_energy", &mut cfg.micro.phase.gb_energy)?;
    raw.scalar("micro.c11", &mut cfg.micro.phase.c11)?;
    raw.scalar("micro.c12", &mut cfg.micro.phase.c12)?;
    raw.scalar("micro.c44", &mut cfg.micro.phase.c44)?;
    raw.scalar("micro.tag_threshold", &mut cfg.micro.phase.tag_threshold)?;

    raw.scalar("manufactured.e", &mut cfg.manufactured.e)?;
    raw.scalar("manufactured.nu", &mut cfg.manufactured.nu)?;

    let probe_keys: Vec<String> =
        raw.entries.keys().filter(|k| k.starts_with("probe.")).cloned().collect();
    for key in probe_keys {
        let (line, v) = raw.take(&key).unwrap();
        let name = key["probe.".len()..].to_string();
        let parts: Vec<&str> = v.split_whitespace().collect();
        if parts.len() != 7 {
            return Err(Error::Config(format!(
                "line {line}: key `{key}`: expected `x0 y0 z0 x1 y1 z1 samples`, got {} values",
                parts.len()
            )));
        }
        let mut ends = [0.0f64; 6];
        for (d, p) in ends.iter_mut().zip(&parts[..6]) {
            *d = p.parse().map_err(|_| bad_value(line, &key, p, "a number"))?;
        }
        let samples: usize =
            parts[6].parse().map_err(|_| bad_value(line, &key, parts[6], "a sample count"))?;
        cfg.probes.push(ProbeSpec {
            name,
            start: [ends[0], ends[1], ends[2]],
            end: [ends[3], ends[4], ends[5]],
            samples,
        });
    }

    // Anything left over is a key this program has never heard of.
    if let Some((key, (line, _))) = raw.entries.iter().min_by_key(|(_, (l, _))| *l) {
        return Err(Error::Config(format!("line {line}: unknown key `{key}`")));
    }

    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_applies_defaults() {
        let cfg = parse_config("case.kind = eshelby\n").unwrap();
        assert_eq!(cfg.kind, CaseKind::Eshelby);
        assert_eq!(cfg.grid.dim, 3);
        assert_eq!(cfg.grid.base_cells, 32);
        assert_eq!(cfg.grid.max_levels, 3);
        assert_eq!(cfg.solver.max_cycles, 200);
        assert_eq!(cfg.seed, 0);
        assert!(cfg.probes.is_empty());
        assert!(cfg.out_dir.is_none());
    }

    #[test]
    fn comments_blanks_and_overrides_parse() {
        let text = "\n# header comment\n\
                    case.kind = fracture   # trailing comment\n\
                    case.seed = 7\n\
                    mesh.base_cells = 48\n\
                    solver.cycle = V\n\
                    fracture.eps = 0.05\n\
                    probe.crack = 1.0 0 0  4 0 0  33\n";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.kind, CaseKind::Fracture);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.grid.base_cells, 48);
        assert_eq!(cfg.grid.dim, 2);
        assert!(matches!(cfg.solver.cycle, CycleKind::V));
        assert_eq!(cfg.fracture.eps, 0.05);
        assert_eq!(cfg.probes.len(), 1);
        assert_eq!(cfg.probes[0].name, "crack");
        assert_eq!(cfg.probes[0].start, [1.0, 0.0, 0.0]);
        assert_eq!(cfg.probes[0].samples, 33);
    }

    #[test]
    fn unknown_cycle_value_is_rejected() {
        let err = parse_config("case.kind = eshelby\nsolver.cycle = W\n").unwrap_err();
        assert!(err.to_string().contains("unknown value"), "{err}");
    }

    #[test]
    fn duplicate_keys_name_both_lines() {
        let err = parse_config("case.kind = eshelby\nmesh.dim = 2\n\nmesh.dim = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lines 2 and 4"), "{msg}");
        assert!(msg.contains("mesh.dim"), "{msg}");
    }

    #[test]
    fn unknown_keys_name_line_and_key() {
        let err = parse_config("case.kind = eshelby\nmesh.dims = 3\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2") && msg.contains("mesh.dims"), "{msg}");
    }

    #[test]
    fn bad_values_name_line_and_key() {
        let err = parse_config("case.kind = eshelby\n\nsolver.tol_rel = tight\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("solver.tol_rel"), "{msg}");
    }

    #[test]
    fn malformed_configs_are_rejected() {
        assert!(parse_config("mesh.dim = 2\n").is_err());
        assert!(parse_config("case.kind = dam\n").is_err());
        assert!(parse_config("case.kind = eshelby\njust words\n").is_err());
        assert!(parse_config("case.kind = eshelby\nnodot = 3\n").is_err());
        assert!(parse_config("case.kind = eshelby\nmesh.dim =\n").is_err());
        assert!(parse_config("case.kind = eshelby\nprobe.p = 0 0 0 1 1\n").is_err());
        assert!(parse_config("case.kind = eshelby\nprobe.p = 0 0 0 1 1 1 1\n").is_err());
        assert!(parse_config("case.kind = eshelby\nmicro.n_order = 99\n").is_err());
        assert!(parse_config("case.kind = eshelby\nsolver.damping = 1.5\n").is_err());
    }
}
