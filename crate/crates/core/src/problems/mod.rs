//! The bundled model problems: a diffuse ellipsoidal inclusion, a mollified
//! notch under far-field tension, and a Voronoi-seeded polycrystal whose
//! grain boundaries relax by multiphase-field evolution before loading.
//!
//! Each setup yields a [`Problem`]: an AMR hierarchy refined around the
//! feature of interest plus one operator context per level, ready to hand to
//! the multigrid solver. Feature geometry enters only through smooth
//! indicator fields, so the same gradient-tagging regrid path serves all
//! three problems.

pub mod eshelby;
pub mod fracture;
pub mod polycrystal;

pub use eshelby::{eshelby_indicator, setup_eshelby, EshelbyParams};
pub use fracture::{
    center_crack_k1, lefm_sigma22, notch_indicator, setup_notch, uniaxial_tension, FractureParams,
};
pub use polycrystal::{
    build_polycrystal_problem, chemical_force, evolve_phase_field, free_energy, shear_load,
    voronoi_init, PhaseFieldParams, PhaseFieldState,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{build_hierarchy, tags, Hierarchy, Level, MeshParams, NodeField};
use crate::mg::{self, MgSolver, SolverConfig};
use crate::op::{self, OperatorContext};

/// Grid sizing shared by the problem builders: an isotropic base grid over a
/// cubic (square) domain plus a refinement budget.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    /// Base-level cells per axis.
    pub base_cells: usize,
    /// Refinement levels the builder may add above the base.
    pub max_levels: usize,
    pub mesh: MeshParams,
}

impl GridSpec {
    pub fn new(dim: usize, base_cells: usize, max_levels: usize) -> Self {
        GridSpec { dim, base_cells, max_levels, mesh: MeshParams::default() }
    }

    /// Node spacing of the deepest level this spec can produce.
    pub fn finest_spacing(&self, phys_extent: f64) -> f64 {
        phys_extent / self.base_cells as f64 / (1u64 << self.max_levels) as f64
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 1 || self.dim > 3 {
            return Err(Error::Config(format!("dim must be 1..=3, got {}", self.dim)));
        }
        if self.base_cells < 4 {
            return Err(Error::Config(format!(
                "base grid of {} cells is too coarse",
                self.base_cells
            )));
        }
        Ok(())
    }
}

/// A refined hierarchy together with the elasticity operator on every level.
pub struct Problem {
    pub hierarchy: Hierarchy,
    pub contexts: Vec<OperatorContext>,
}

// Contexts hold boundary-value closures, so Debug is a summary, not a dump.
impl std::fmt::Debug for Problem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Problem")
            .field("levels", &self.hierarchy.levels.len())
            .field("nodes", &self.hierarchy.total_nodes())
            .finish_non_exhaustive()
    }
}

impl Problem {
    /// Right-hand sides induced by eigenstrain, body force, and boundary
    /// values, one per level.
    pub fn rhs(&self) -> Result<Vec<NodeField>> {
        self.contexts.iter().map(op::homogeneous_rhs).collect()
    }

    /// A multigrid solver with right-hand sides installed. The problem keeps
    /// its contexts so stress can be evaluated from the solution afterwards.
    pub fn solver(&self, config: SolverConfig) -> Result<MgSolver> {
        let rhs = self.rhs()?;
        let (levels, ops, base) = mg::elastic_stack(&self.hierarchy, self.contexts.clone())?;
        let mut solver = MgSolver::new(levels, ops, base, config)?;
        for (k, r) in rhs.iter().enumerate() {
            solver.set_rhs(k, r);
        }
        Ok(solver)
    }
}

/// Deepens the hierarchy around an analytically known scalar field: sample
/// it on the finest level, tag where the scaled gradient exceeds
/// `threshold`, cluster tags into patches, and repeat until the level budget
/// or the tags run out.
pub(crate) fn refine_on_indicator(
    hier: &mut Hierarchy,
    max_levels: usize,
    threshold: f64,
    f: &(impl Fn([f64; 3]) -> f64 + Sync),
) -> Result<()> {
    let dim = hier.dim;
    while hier.finest() < max_levels {
        let m = hier.finest();
        let (patches, fine_domain, fine_spacing) = {
            let lev = &hier.levels[m];
            let field = NodeField::from_fn_on(
                &lev.patches,
                dim,
                1,
                1,
                &|i| hier.node_pos(m, i),
                &|x, _| f(x),
            );
            let tagged = tags::tag_by_gradient(&field, lev, threshold)?;
            let mut spacing = lev.spacing;
            for s in spacing.iter_mut().take(dim) {
                *s *= 0.5;
            }
            (tags::regrid(lev, &tagged, &hier.params), lev.domain.refine(), spacing)
        };
        if patches.is_empty() {
            break;
        }
        hier.levels.push(Level::new(dim, m + 1, fine_spacing, fine_domain, patches));
    }
    hier.check_nesting()
}

/// Base hierarchy over the centered cube `[-half_extent, half_extent]^dim`.
pub(crate) fn centered_base(grid: &GridSpec, half_extent: f64) -> Result<Hierarchy> {
    grid.validate()?;
    if !(half_extent > 0.0) {
        return Err(Error::Config(format!("domain half-extent must be positive, got {half_extent}")));
    }
    let mut lo = [0.0; 3];
    let mut hi = [0.0; 3];
    let mut cells = [0usize; 3];
    for d in 0..grid.dim {
        lo[d] = -half_extent;
        hi[d] = half_extent;
        cells[d] = grid.base_cells;
    }
    build_hierarchy(grid.dim, lo, hi, cells, grid.mesh)
}
