//! Case orchestration: parse a config, build the problem, solve, and write
//! the report, fields, and probes.
//!
//! `run_case` is the one entry point the command line needs. It returns a
//! [`RunReport`] whether or not the solver reached tolerance (`converged`
//! says which); hard failures such as divergence or degenerate setups come
//! back as errors tagged with the case name. Solver wall time is measured
//! inside the solve alone, so setup and output costs never pollute the
//! speedup numbers.

mod config;
mod output;

pub use config::{parse_config, CaseConfig, CaseKind, ManufacturedParams, MicroParams, ProbeSpec};
pub use output::{read_vtk, sample_composite, write_fields, write_probe, NamedField, VtkGrid};

use std::f64::consts::PI;
use std::fs;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{build_hierarchy, transfer, Hierarchy, NodeField};
use crate::mg::ConvergenceReport;
use crate::op::{self, BcFace, BcKind, BcSpec, OperatorContext};
use crate::problems::{
    build_polycrystal_problem, eshelby_indicator, evolve_phase_field, free_energy, notch_indicator,
    setup_eshelby, setup_notch, shear_load, voronoi_init, GridSpec, Problem,
};
use crate::tensor::{make_isotropic, Modulus};

/// What one run produced: convergence behavior, mesh economy, and the paths
/// of anything written. Serialized as `report.json` when the run has an
/// output directory.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub case: String,
    pub dim: usize,
    pub seed: u64,
    pub nodes_per_level: Vec<usize>,
    pub total_nodes: usize,
    /// Share of refinement-level nodes on a coarse/fine interface.
    pub cf_boundary_fraction: f64,
    /// Node count of a uniform grid at the finest spacing present.
    pub uniform_equivalent_nodes: usize,
    /// `uniform_equivalent_nodes / total_nodes`; the mesh-economy half of
    /// the AMR speedup story (the time half is hardware-bound).
    pub node_ratio: f64,
    /// Time inside the multigrid solve, excluding setup and output.
    pub solve_seconds: f64,
    /// Relative max-norm displacement error; present only when the case has
    /// an exact solution (manufactured).
    pub error_max_rel: Option<f64>,
    /// Discrete free energy of the relaxed microstructure, when applicable.
    pub free_energy: Option<f64>,
    /// File names written into the output directory.
    pub outputs: Vec<String>,
    pub convergence: ConvergenceReport,
}

/// Re-tags an error with the case that produced it, preserving the variant
/// so exit-code mapping still sees configuration errors as such.
fn with_case(kind: CaseKind, e: Error) -> Error {
    let t = kind.name();
    match e {
        Error::Config(m) => Error::Config(format!("{t}: {m}")),
        Error::Mesh(m) => Error::Mesh(format!("{t}: {m}")),
        Error::StaleGhosts(m) => Error::StaleGhosts(format!("{t}: {m}")),
        Error::Parameter(m) => Error::Parameter(format!("{t}: {m}")),
        Error::Numerical(m) => Error::Numerical(format!("{t}: {m}")),
        Error::Io(m) => Error::Io(std::io::Error::new(m.kind(), format!("{t}: {m}"))),
        Error::NotConverged { .. } => e,
    }
}

struct BuiltCase {
    problem: Problem,
    /// Case-specific output fields beyond the solved ones (indicator or
    /// order parameters).
    extra: Vec<NamedField>,
    free_energy: Option<f64>,
    /// Exact displacement, when the case has one.
    exact: Option<Box<dyn Fn([f64; 3], usize) -> f64>>,
}

/// Samples a closure of position onto every level, for output alongside the
/// solved fields.
fn sampled_field(
    hier: &Hierarchy,
    name: &str,
    ncomp: usize,
    f: impl Fn([f64; 3], usize) -> f64 + Sync,
) -> NamedField {
    let per_level = (0..hier.levels.len())
        .map(|m| {
            NodeField::from_fn_on(&hier.levels[m].patches, hier.dim, ncomp, 0, &|i| {
                hier.node_pos(m, i)
            }, &f)
        })
        .collect();
    NamedField::new(name, per_level)
}

/// An isotropic unit box whose body force makes the displacement the
/// gradient of `prod_d sin(pi x_d)`; every face holds the exact values. Runs
/// on the base level alone since the point is measuring discretization
/// error, which needs a uniform grid to be clean.
fn setup_manufactured(
    p: &ManufacturedParams,
    grid: &GridSpec,
) -> Result<(Problem, impl Fn([f64; 3], usize) -> f64 + Copy + Sync)> {
    grid.validate()?;
    let dim = grid.dim;
    let modulus = make_isotropic(p.e, p.nu)?;
    let Modulus::Isotropic { lambda, mu } = modulus else { unreachable!() };
    let packed = modulus.to_packed();
    let uex = move |x: [f64; 3], c: usize| {
        if c >= dim {
            return 0.0;
        }
        let mut v = PI * (PI * x[c]).cos();
        for d in 0..dim {
            if d != c {
                v *= (PI * x[d]).sin();
            }
        }
        v
    };
    // With u = grad(prod sin), div u and the vector Laplacian are both
    // -dim*pi^2 u, so div sigma = -(lambda + 2 mu) dim pi^2 u.
    let scale = (lambda + 2.0 * mu) * dim as f64 * PI * PI;
    let hier = build_hierarchy(dim, [0.0; 3], [1.0; 3], [grid.base_cells; 3], grid.mesh)?;
    let ghost = hier.params.ghost_width;
    let ctx = {
        let lev = &hier.levels[0];
        let mod_field = NodeField::uniform_on(&lev.patches, dim, ghost, &packed);
        let e0 = NodeField::uniform_on(&lev.patches, dim, ghost, &[0.0; 6]);
        let body = NodeField::from_fn_on(&lev.patches, dim, dim, ghost, &|i| {
            hier.node_pos(0, i)
        }, &move |x, c| scale * uex(x, c));
        let face = || BcFace::new(BcKind::Displacement, move |x| [uex(x, 0), uex(x, 1), uex(x, 2)]);
        let bcs = BcSpec::new((0..dim).map(|_| [face(), face()]).collect())?;
        OperatorContext::new(lev, hier.phys_lo, mod_field, e0, body, bcs)?
    };
    Ok((Problem { hierarchy: hier, contexts: vec![ctx] }, uex))
}

fn build_case(cfg: &CaseConfig) -> Result<BuiltCase> {
    match cfg.kind {
        CaseKind::Eshelby => {
            let problem = setup_eshelby(&cfg.eshelby, &cfg.grid)?;
            let a = cfg.eshelby.quadric();
            let w = cfg.eshelby.diffuse_width;
            let ind = sampled_field(&problem.hierarchy, "indicator", 1, move |x, _| {
                eshelby_indicator(&a, w, x)
            });
            Ok(BuiltCase { problem, extra: vec![ind], free_energy: None, exact: None })
        }
        CaseKind::Fracture => {
            let problem = setup_notch(&cfg.fracture, &cfg.grid)?;
            let p = cfg.fracture.clone();
            let ind =
                sampled_field(&problem.hierarchy, "notch", 1, move |x, _| notch_indicator(&p, x));
            Ok(BuiltCase { problem, extra: vec![ind], free_energy: None, exact: None })
        }
        CaseKind::Microstructure => {
            let g = &cfg.grid;
            let hier =
                build_hierarchy(g.dim, [0.0; 3], [1.0; 3], [g.base_cells; 3], g.mesh)?;
            let m = &cfg.micro;
            let mut state =
                voronoi_init(&m.phase, m.n_grains, m.n_order, cfg.seed, hier, g.max_levels)?;
            if m.steps > 0 && m.phase.mobility > 0.0 {
                let dt = m.dt_factor * state.stable_dt();
                evolve_phase_field(&mut state, dt, m.steps)?;
            }
            let fe = free_energy(&state)?;
            let problem = build_polycrystal_problem(&mut state, &shear_load(g.dim, m.shear))?;
            let eta = NamedField::new("eta", state.eta);
            Ok(BuiltCase { problem, extra: vec![eta], free_energy: Some(fe), exact: None })
        }
        CaseKind::Manufactured => {
            let (problem, uex) = setup_manufactured(&cfg.manufactured, &cfg.grid)?;
            let dim = problem.hierarchy.dim;
            let exact_field = sampled_field(&problem.hierarchy, "u_exact", dim, uex);
            Ok(BuiltCase {
                problem,
                extra: vec![exact_field],
                free_energy: None,
                exact: Some(Box::new(uex)),
            })
        }
    }
}

/// Relative max-norm displacement error over every valid node of every
/// level. Shared-face duplicates carry identical values, so visiting them
/// twice cannot change a max.
fn max_error_rel(
    hier: &Hierarchy,
    us: &[NodeField],
    exact: &dyn Fn([f64; 3], usize) -> f64,
) -> f64 {
    let mut emax = 0.0f64;
    let mut umax = 0.0f64;
    for (m, u) in us.iter().enumerate() {
        for store in u.patches() {
            let vb = store.valid;
            for p in vb.iter() {
                let x = hier.node_pos(m, p);
                for c in 0..u.ncomp {
                    let e = exact(x, c);
                    emax = emax.max((store.get(p, c) - e).abs());
                    umax = umax.max(e.abs());
                }
            }
        }
    }
    emax / umax.max(f64::MIN_POSITIVE)
}

pub fn run_case(cfg: &CaseConfig) -> Result<RunReport> {
    let tag = |e| with_case(cfg.kind, e);
    cfg.validate().map_err(tag)?;
    let built = build_case(cfg).map_err(tag)?;
    let problem = &built.problem;
    let hier = &problem.hierarchy;
    let nl = hier.levels.len();

    let mut solver = problem.solver(cfg.solver).map_err(tag)?;
    let conv = solver.solve().map_err(tag)?;

    // Pull the solution out and refill ghosts coarse-first so stress can
    // differentiate right up to every patch edge.
    let mut us: Vec<NodeField> = (0..nl).map(|m| solver.u(m).clone()).collect();
    for m in 0..nl {
        let (done, rest) = us.split_at_mut(m);
        let parent = if m == 0 { None } else { Some((&done[m - 1], &hier.levels[m - 1])) };
        transfer::fill_ghost(&mut rest[0], &hier.levels[m], parent).map_err(tag)?;
    }

    let mut stress_lv = Vec::with_capacity(nl);
    let mut vm_lv = Vec::with_capacity(nl);
    for m in 0..nl {
        let st = op::stress(&problem.contexts[m], &us[m]).map_err(tag)?;
        vm_lv.push(op::von_mises(&st));
        stress_lv.push(st);
    }

    let error_max_rel = built.exact.as_ref().map(|f| max_error_rel(hier, &us, f.as_ref()));

    let mut fields = vec![
        NamedField::new("displacement", us),
        NamedField::new("stress", stress_lv),
        NamedField::new("von_mises", vm_lv),
    ];
    fields.extend(built.extra);

    let nodes_per_level: Vec<usize> = hier.levels.iter().map(|l| l.num_nodes()).collect();
    let total_nodes = hier.total_nodes();
    let finest = hier.finest();
    let uniform_equivalent_nodes: usize = (0..hier.dim)
        .map(|d| (((hier.levels[0].domain.extent(d) - 1) as usize) << finest) + 1)
        .product();

    let mut outputs = Vec::new();
    if let Some(dir) = &cfg.out_dir {
        for path in write_fields(hier, &fields, dir).map_err(tag)? {
            outputs.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
        for probe in &cfg.probes {
            let path = dir.join(format!("probe_{}.csv", probe.name));
            let path = write_probe(hier, &fields, probe, &path).map_err(tag)?;
            outputs.push(path.file_name().unwrap().to_string_lossy().into_owned());
        }
    }

    let report = RunReport {
        case: cfg.kind.name().to_string(),
        dim: hier.dim,
        seed: cfg.seed,
        nodes_per_level,
        total_nodes,
        cf_boundary_fraction: conv.amr_stats.cf_boundary_fraction,
        uniform_equivalent_nodes,
        node_ratio: uniform_equivalent_nodes as f64 / total_nodes as f64,
        solve_seconds: conv.wall_time.as_secs_f64(),
        error_max_rel,
        free_energy: built.free_energy,
        outputs,
        convergence: conv,
    };
    if let Some(dir) = &cfg.out_dir {
        let path = dir.join("report.json");
        let text = serde_json::to_string_pretty(&report).expect("report serializes");
        fs::write(&path, text)
            .map_err(|e| tag(Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))))?;
    }
    Ok(report)
}
