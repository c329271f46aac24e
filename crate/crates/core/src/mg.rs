//! Geometric multigrid on the composite node-centered hierarchy.
//!
//! The solver runs one unified cycle over two kinds of levels. Refinement
//! levels carry full solutions: descending restricts the smoothed solution
//! and rewrites the coarse right-hand side so the coarse problem reproduces
//! the fine residual where the grids overlap (full approximation storage),
//! and ascending adds back the interpolated coarse increment. Below the
//! coarsest refinement level the full domain is coarsened by factors of two
//! until a floor size, and those sub-levels run plain residual correction.
//! Coarse/fine boundary ghosts are interpolated once per level visit and
//! then held fixed through relaxation, so every relaxation and residual row
//! sees Dirichlet data at the interface; the restriction stencil reaching
//! one node past the fine region (where the zero-extended residual lives)
//! is what makes the two-grid interface stencil come out consistent without
//! any flux correction.
//!
//! Sub-level operators are re-discretizations on averaged-down coefficients,
//! not Galerkin products; with a node-centered full-weight restriction that
//! is the cheaper choice and relaxation tolerates the difference.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::transfer::{self, ExchangePlan};
use crate::mesh::{epsilon_interior, Hierarchy, IBox, Idx, Level, NodeField, RegionSet};
use crate::op::{self, BcSpec, NodeClass, OperatorContext};
use crate::tensor::NMOD;

/// What a level-resident operator must expose to relaxation and residual
/// evaluation. `apply` is the pure matrix action: boundary condition values
/// and eigenstrain loads live in the right-hand side, never in here.
pub trait StencilOperator: Send + Sync {
    fn ncomp(&self) -> usize;
    fn apply(&self, u: &NodeField) -> Result<NodeField>;
    fn diagonal(&self) -> Result<NodeField>;
    fn classify(&self, p: Idx) -> NodeClass;
}

impl StencilOperator for OperatorContext {
    fn ncomp(&self) -> usize {
        self.dim
    }

    fn apply(&self, u: &NodeField) -> Result<NodeField> {
        op::apply_linear(self, u)
    }

    fn diagonal(&self) -> Result<NodeField> {
        op::diagonal(self)
    }

    fn classify(&self, p: Idx) -> NodeClass {
        op::classify(&self.domain, &self.region, &self.bcs, p)
    }
}

/// Scalar 2/4/6-point Laplacian with identity rows on the physical boundary.
/// The elasticity operator shares none of its code, which is the point: the
/// interface identities and smoother behavior can be checked on a stencil
/// small enough to expand by hand.
pub struct ScalarLaplacian {
    pub dim: usize,
    pub spacing: [f64; 3],
    pub domain: IBox,
    pub patches: Vec<IBox>,
    pub region: RegionSet,
    bcs: BcSpec,
}

impl ScalarLaplacian {
    pub fn new(level: &Level) -> Self {
        let dim = level.region.dim();
        ScalarLaplacian {
            dim,
            spacing: level.spacing,
            domain: level.domain,
            patches: level.patches.clone(),
            region: level.region.clone(),
            bcs: BcSpec::clamped(dim),
        }
    }
}

impl StencilOperator for ScalarLaplacian {
    fn ncomp(&self) -> usize {
        1
    }

    fn apply(&self, u: &NodeField) -> Result<NodeField> {
        u.require_ghosts("laplacian apply")?;
        assert_eq!(u.num_patches(), self.patches.len());
        let mut out = NodeField::zeros_on(&self.patches, self.dim, 1, u.ghost);
        let stores = u.patches();
        let (dim, dom, h) = (self.dim, self.domain, self.spacing);
        out.par_patches_mut().enumerate().for_each(|(pi, po)| {
            let up = &stores[pi];
            let vb = po.valid;
            for p in vb.iter() {
                let on_face = (0..dim).any(|d| p[d] == dom.lo[d] || p[d] == dom.hi[d]);
                let v = if on_face {
                    up.get(p, 0)
                } else {
                    let mut acc = 0.0;
                    for d in 0..dim {
                        let mut pm = p;
                        pm[d] -= 1;
                        let mut pp = p;
                        pp[d] += 1;
                        acc += (up.get(pp, 0) - 2.0 * up.get(p, 0) + up.get(pm, 0))
                            / (h[d] * h[d]);
                    }
                    acc
                };
                po.set(p, 0, v);
            }
        });
        out.set_ghosts_filled(false);
        Ok(out)
    }

    fn diagonal(&self) -> Result<NodeField> {
        let mut out = NodeField::zeros_on(&self.patches, self.dim, 1, 0);
        let (dim, dom, h) = (self.dim, self.domain, self.spacing);
        out.par_patches_mut().for_each(|po| {
            let vb = po.valid;
            for p in vb.iter() {
                let on_face = (0..dim).any(|d| p[d] == dom.lo[d] || p[d] == dom.hi[d]);
                let v = if on_face {
                    1.0
                } else {
                    (0..dim).map(|d| -2.0 / (h[d] * h[d])).sum()
                };
                po.set(p, 0, v);
            }
        });
        Ok(out)
    }

    fn classify(&self, p: Idx) -> NodeClass {
        op::classify(&self.domain, &self.region, &self.bcs, p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CycleKind {
    V,
    F,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub cycle: CycleKind,
    /// Smoothing operations per level and cycle, split half before the
    /// coarse visit and half after.
    pub smoothing_ops_per_level: usize,
    /// Jacobi sweeps that make up one smoothing operation.
    pub jacobi_per_smoothing_op: usize,
    pub damping: f64,
    /// Jacobi sweeps on the coarsest sub-level instead of a direct solve.
    pub bottom_sweeps: usize,
    pub tol_rel: f64,
    pub max_cycles: usize,
    /// Interface overlap the restriction may reach past a fine region; ghost
    /// frames are one wider so one-sided boundary stencils stay inside.
    pub ghost_n: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            cycle: CycleKind::F,
            smoothing_ops_per_level: 4,
            jacobi_per_smoothing_op: 2,
            damping: 2.0 / 3.0,
            bottom_sweeps: 32,
            tol_rel: 1e-6,
            max_cycles: 200,
            ghost_n: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.smoothing_ops_per_level == 0
            || self.jacobi_per_smoothing_op == 0
            || self.bottom_sweeps == 0
            || self.max_cycles == 0
            || self.ghost_n == 0
        {
            return Err(Error::Parameter(
                "solver sweep, cycle, and ghost counts must all be at least 1".into(),
            ));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Parameter(format!(
                "damping {} outside (0, 1]",
                self.damping
            )));
        }
        if !(self.tol_rel > 0.0 && self.tol_rel.is_finite()) {
            return Err(Error::Parameter(format!(
                "relative tolerance {} must be positive and finite",
                self.tol_rel
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AmrStats {
    /// Valid node counts per refinement level, coarsest first.
    pub nodes_per_level: Vec<usize>,
    /// Share of all refinement-level nodes sitting on a coarse/fine
    /// interface (region rim away from the physical boundary).
    pub cf_boundary_fraction: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceReport {
    /// Composite max-norm residuals: entry 0 is the initial residual, then
    /// one entry per completed cycle.
    pub residual_history: Vec<f64>,
    /// Ratios between successive end-of-cycle residuals.
    pub convergence_factors: Vec<f64>,
    pub cycles: usize,
    pub converged: bool,
    pub wall_time: Duration,
    pub amr_stats: AmrStats,
}

/// Damped Jacobi sweeps over every valid node. Each sweep refreshes the
/// same-level ghost overlap against a frozen copy of the action, so the
/// update order cannot matter; interface ghosts are left exactly as the
/// coarse level interpolated them.
pub fn smooth(
    op: &dyn StencilOperator,
    plan: &ExchangePlan,
    u: &mut NodeField,
    rhs: &NodeField,
    diag: &NodeField,
    sweeps: usize,
    damping: f64,
) -> Result<()> {
    for _ in 0..sweeps {
        plan.apply(u);
        u.set_ghosts_filled(true);
        let au = op.apply(u)?;
        jacobi_update(u, &au, rhs, diag, damping);
    }
    Ok(())
}

fn jacobi_update(u: &mut NodeField, au: &NodeField, rhs: &NodeField, diag: &NodeField, damping: f64) {
    let aus = au.patches();
    let rs = rhs.patches();
    let ds = diag.patches();
    u.par_patches_mut().enumerate().for_each(|(pi, up)| {
        let (a, r, d) = (&aus[pi], &rs[pi], &ds[pi]);
        let nc = up.ncomp();
        let vb = up.valid;
        for p in vb.iter() {
            for c in 0..nc {
                let v = up.get(p, c) + damping * (r.get(p, c) - a.get(p, c)) / d.get(p, c);
                up.set(p, c, v);
            }
        }
    });
    u.set_ghosts_filled(false);
}

/// One solver level: its mesh footprint, operator, and solution state.
struct LevelState {
    level: Level,
    op: Box<dyn StencilOperator>,
    plan: ExchangePlan,
    diag: NodeField,
    /// Nodes not covered by the next finer refinement level; where the
    /// composite residual is measured.
    uncovered: RegionSet,
    u: NodeField,
    saved: NodeField,
    rhs_orig: NodeField,
    rhs_eff: NodeField,
}

pub struct MgSolver {
    pub config: SolverConfig,
    dim: usize,
    ghost: i64,
    /// Position of refinement level 0 in the stack; everything below it is a
    /// full-domain coarsening running residual correction.
    base: usize,
    stack: Vec<LevelState>,
}

impl MgSolver {
    pub fn new(
        levels: Vec<Level>,
        ops: Vec<Box<dyn StencilOperator>>,
        base: usize,
        config: SolverConfig,
    ) -> Result<Self> {
        config.validate()?;
        if levels.is_empty() || levels.len() != ops.len() || base >= levels.len() {
            return Err(Error::Parameter(format!(
                "level stack of {} meshes, {} operators, base index {}",
                levels.len(),
                ops.len(),
                base
            )));
        }
        let dim = levels[0].region.dim();
        let ghost = (config.ghost_n + 1) as i64;
        let n = levels.len();
        let mut stack = Vec::with_capacity(n);
        for (level, op) in levels.into_iter().zip(ops) {
            let plan = ExchangePlan::build(&level, dim, ghost);
            let diag = op.diagonal()?;
            let nc = op.ncomp();
            let u = NodeField::zeros(&level, dim, nc, ghost);
            let saved = NodeField::zeros(&level, dim, nc, ghost);
            let rhs_orig = NodeField::zeros(&level, dim, nc, 0);
            let rhs_eff = NodeField::zeros(&level, dim, nc, 0);
            stack.push(LevelState {
                level,
                op,
                plan,
                diag,
                uncovered: RegionSet::from_boxes(dim, &[]),
                u,
                saved,
                rhs_orig,
                rhs_eff,
            });
        }
        for m in 0..n {
            stack[m].uncovered = if m + 1 < n {
                stack[m].level.region.subtract(&stack[m + 1].level.region.coarsen())
            } else {
                stack[m].level.region.clone()
            };
        }
        Ok(MgSolver { config, dim, ghost, base, stack })
    }

    pub fn num_refinement_levels(&self) -> usize {
        self.stack.len() - self.base
    }

    pub fn level(&self, k: usize) -> &Level {
        &self.stack[self.base + k].level
    }

    pub fn u(&self, k: usize) -> &NodeField {
        &self.stack[self.base + k].u
    }

    pub fn u_mut(&mut self, k: usize) -> &mut NodeField {
        &mut self.stack[self.base + k].u
    }

    /// Install the right-hand side for refinement level `k`. Values are
    /// copied node by node, so the source may use any ghost width.
    pub fn set_rhs(&mut self, k: usize, rhs: &NodeField) {
        let st = &mut self.stack[self.base + k];
        assert_eq!(rhs.ncomp, st.rhs_orig.ncomp);
        assert_eq!(rhs.num_patches(), st.rhs_orig.num_patches());
        let src = rhs.patches();
        st.rhs_orig.par_patches_mut().enumerate().for_each(|(pi, dp)| {
            let sp = &src[pi];
            let (vb, nc) = (dp.valid, dp.ncomp());
            for p in vb.iter() {
                for c in 0..nc {
                    dp.set(p, c, sp.get(p, c));
                }
            }
        });
        st.rhs_eff.copy_values_from(&st.rhs_orig);
    }

    fn pre_sweeps(&self) -> usize {
        self.config.smoothing_ops_per_level.div_ceil(2) * self.config.jacobi_per_smoothing_op
    }

    fn post_sweeps(&self) -> usize {
        (self.config.smoothing_ops_per_level / 2) * self.config.jacobi_per_smoothing_op
    }

    /// Refresh every ghost of `u` on stack level `m`: same-level overlap
    /// always, interface ghosts from the level below when there is one.
    fn fill_level_ghosts(&mut self, m: usize) -> Result<()> {
        if m > self.base {
            let (lo, hi) = self.stack.split_at_mut(m);
            let coarse = &lo[m - 1];
            transfer::fill_ghost(
                &mut hi[0].u,
                &hi[0].level,
                Some((&coarse.u, &coarse.level)),
            )
        } else {
            let st = &mut self.stack[m];
            st.plan.apply(&mut st.u);
            st.u.set_ghosts_filled(true);
            Ok(())
        }
    }

    fn exchange_u(&mut self, m: usize) {
        let st = &mut self.stack[m];
        st.plan.apply(&mut st.u);
        st.u.set_ghosts_filled(true);
    }

    fn smooth_level(&mut self, m: usize, sweeps: usize) -> Result<()> {
        let st = &mut self.stack[m];
        smooth(
            st.op.as_ref(),
            &st.plan,
            &mut st.u,
            &st.rhs_eff,
            &st.diag,
            sweeps,
            self.config.damping,
        )
    }

    /// rhs_eff - A u on valid nodes, zero past the level footprint. The
    /// same-level exchange makes ghost overlap hold true residuals while
    /// interface ghosts keep the zero extension the restriction expects.
    fn residual(&self, m: usize) -> Result<NodeField> {
        let st = &self.stack[m];
        let au = st.op.apply(&st.u)?;
        let mut res = NodeField::zeros(&st.level, self.dim, st.u.ncomp, self.ghost);
        let aus = au.patches();
        let rs = st.rhs_eff.patches();
        res.par_patches_mut().enumerate().for_each(|(pi, rp)| {
            let (a, r) = (&aus[pi], &rs[pi]);
            let (vb, nc) = (rp.valid, rp.ncomp());
            for p in vb.iter() {
                for c in 0..nc {
                    rp.set(p, c, r.get(p, c) - a.get(p, c));
                }
            }
        });
        st.plan.apply(&mut res);
        res.set_ghosts_filled(true);
        Ok(res)
    }

    fn descend(&mut self, m: usize) -> Result<()> {
        self.fill_level_ghosts(m)?;
        self.smooth_level(m, self.pre_sweeps())?;
        self.exchange_u(m);
        let res = self.residual(m)?;
        if m > self.base {
            // Full-solution transfer: the coarse level continues the fine
            // solution, and its right-hand side is rewritten where the
            // restriction reaches so that coarse residual equals restricted
            // fine residual there.
            {
                let (lo, hi) = self.stack.split_at_mut(m);
                transfer::restrict_solution(&hi[0].u, &hi[0].level, &mut lo[m - 1].u)?;
            }
            {
                let st = &mut self.stack[m - 1];
                st.saved.copy_values_from(&st.u);
            }
            self.fill_level_ghosts(m - 1)?;
            let au = {
                let st = &self.stack[m - 1];
                st.op.apply(&st.u)?
            };
            let mut rres =
                NodeField::zeros(&self.stack[m - 1].level, self.dim, res.ncomp, 0);
            transfer::restrict_solution(&res, &self.stack[m].level, &mut rres)?;
            let targets = transfer::restriction_targets(&self.stack[m].level);
            let st = &mut self.stack[m - 1];
            st.rhs_eff.copy_values_from(&st.rhs_orig);
            let aus = au.patches();
            let rrs = rres.patches();
            st.rhs_eff.par_patches_mut().enumerate().for_each(|(pi, dp)| {
                let (a, rr) = (&aus[pi], &rrs[pi]);
                let (vb, nc) = (dp.valid, dp.ncomp());
                for tb in targets.boxes() {
                    if let Some(b) = tb.intersect(&vb) {
                        for p in b.iter() {
                            for c in 0..nc {
                                dp.set(p, c, a.get(p, c) + rr.get(p, c));
                            }
                        }
                    }
                }
            });
        } else {
            // Correction transfer: full-weight the residual inward and
            // inject it on the physical boundary ring, then start the coarse
            // correction from zero.
            let mut res = res;
            let (lo, hi) = self.stack.split_at_mut(m);
            transfer::restrict_covering(&mut res, &hi[0].level, &mut lo[m - 1].rhs_eff);
            lo[m - 1].u.fill(0.0);
            lo[m - 1].u.set_ghosts_filled(true);
        }
        Ok(())
    }

    fn ascend(&mut self, m: usize) -> Result<()> {
        {
            let (lo, hi) = self.stack.split_at_mut(m);
            let coarse = &lo[m - 1];
            if m > self.base {
                transfer::interpolate_add_delta(
                    &coarse.u,
                    &coarse.saved,
                    &mut hi[0].u,
                    &hi[0].level,
                );
            } else {
                transfer::interpolate_add(&coarse.u, &mut hi[0].u, &hi[0].level);
            }
        }
        self.fill_level_ghosts(m)?;
        self.smooth_level(m, self.post_sweeps())
    }

    fn cycle(&mut self, m: usize, kind: CycleKind) -> Result<()> {
        if m == 0 {
            return self.smooth_level(0, self.config.bottom_sweeps);
        }
        self.descend(m)?;
        self.cycle(m - 1, kind)?;
        if kind == CycleKind::F && m > 1 {
            self.cycle(m - 1, CycleKind::V)?;
        }
        self.ascend(m)
    }

    /// Max-norm of rhs - A u over the composite grid: every refinement
    /// level's nodes not covered by a finer one, all components.
    pub fn composite_residual(&mut self) -> Result<f64> {
        let mut worst = 0.0f64;
        for m in self.base..self.stack.len() {
            self.fill_level_ghosts(m)?;
            let st = &self.stack[m];
            let au = st.op.apply(&st.u)?;
            let aus = au.patches();
            let rs = st.rhs_orig.patches();
            let unc = &st.uncovered;
            let lvl = (0..rs.len())
                .into_par_iter()
                .map(|pi| {
                    let (a, r) = (&aus[pi], &rs[pi]);
                    let mut w = 0.0f64;
                    for ub in unc.boxes() {
                        if let Some(b) = ub.intersect(&r.valid) {
                            for p in b.iter() {
                                for c in 0..r.ncomp() {
                                    w = w.max((r.get(p, c) - a.get(p, c)).abs());
                                }
                            }
                        }
                    }
                    w
                })
                .reduce(|| 0.0, f64::max);
            worst = worst.max(lvl);
        }
        Ok(worst)
    }

    fn amr_stats(&self) -> AmrStats {
        let mut nodes_per_level = Vec::new();
        let mut total = 0usize;
        let mut cf = 0usize;
        for m in self.base..self.stack.len() {
            let st = &self.stack[m];
            let n = st.level.region.num_nodes();
            nodes_per_level.push(n);
            total += n;
            if m > self.base {
                let rim = st.level.region.subtract(&epsilon_interior(&st.level.region, 1));
                let inside = st.level.domain.grow(self.dim, -1);
                cf += rim.intersect_box(&inside).num_nodes();
            }
        }
        AmrStats {
            nodes_per_level,
            cf_boundary_fraction: cf as f64 / total.max(1) as f64,
        }
    }

    /// Run cycles until the composite residual falls below `tol_rel` times
    /// its initial value (with a small absolute floor), the cycle budget
    /// runs out, or the iteration blows up. On return the solution is
    /// averaged down so coarse levels agree with fine data everywhere they
    /// overlap.
    pub fn solve(&mut self) -> Result<ConvergenceReport> {
        let t0 = Instant::now();
        let top = self.stack.len() - 1;
        let r0 = self.composite_residual()?;
        let floor = 1e-14;
        let threshold = (self.config.tol_rel * r0).max(floor);
        let mut history = vec![r0];
        let mut converged = r0 <= floor;
        while !converged && history.len() - 1 < self.config.max_cycles {
            self.cycle(top, self.config.cycle)?;
            let r = self.composite_residual()?;
            history.push(r);
            if !r.is_finite() || r > 1e10 * r0.max(floor) {
                return Err(Error::Numerical(format!(
                    "multigrid diverged: residual {r:.3e} from initial {r0:.3e}"
                )));
            }
            if r <= threshold {
                converged = true;
            }
        }
        for m in ((self.base + 1)..=top).rev() {
            let (lo, hi) = self.stack.split_at_mut(m);
            transfer::average_down(&mut hi[0].u, &hi[0].level, &mut lo[m - 1].u);
        }
        let cycles = history.len() - 1;
        let convergence_factors = history[1..]
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .collect();
        Ok(ConvergenceReport {
            residual_history: history,
            convergence_factors,
            cycles,
            converged,
            wall_time: t0.elapsed(),
            amr_stats: self.amr_stats(),
        })
    }
}

/// Meshes, operators, and the stack position of refinement level 0, ready
/// for `MgSolver::new`.
pub type LevelStack = (Vec<Level>, Vec<Box<dyn StencilOperator>>, usize);

/// Assemble the full solver stack for the elasticity operator: sub-levels
/// coarsen refinement level 0 (and its stiffness) by factors of two while at
/// least four nodes per axis remain. Sub-level operators see zero
/// eigenstrain and body force; those loads only shape the right-hand side,
/// which residual correction rebuilds each visit anyway.
pub fn elastic_stack(hier: &Hierarchy, ctxs: Vec<OperatorContext>) -> Result<LevelStack> {
    if ctxs.len() != hier.levels.len() {
        return Err(Error::Parameter(format!(
            "{} operator contexts for {} hierarchy levels",
            ctxs.len(),
            hier.levels.len()
        )));
    }
    hier.check_nesting()?;
    let dim = hier.dim;
    let bcs = ctxs[0].bcs.clone();
    let scale = ctxs[0].dirichlet_scale;
    let ghost = ctxs[0].modulus.ghost;

    let mut subs: Vec<(Level, NodeField)> = Vec::new();
    let mut cur_level = hier.levels[0].clone();
    let mut cur_mod = ctxs[0].modulus.clone();
    while let Some(cdom) = cur_level.domain.coarsen() {
        if (0..dim).any(|d| cdom.extent(d) < 4) {
            break;
        }
        let mut spacing = cur_level.spacing;
        for s in spacing.iter_mut().take(dim) {
            *s *= 2.0;
        }
        let clev = Level::new(
            dim,
            0,
            spacing,
            cdom,
            cdom.chop(dim, hier.params.max_patch_cells),
        );
        let uniform = cur_mod.patches().iter().all(|p| p.is_uniform());
        let cmod = if uniform {
            let vals = cur_mod.patch(0).uniform_vals().unwrap().to_vec();
            NodeField::uniform_on(&clev.patches, dim, ghost, &vals)
        } else {
            let mut c = NodeField::zeros_on(&clev.patches, dim, NMOD, ghost);
            transfer::restrict_covering(&mut cur_mod, &cur_level, &mut c);
            transfer::exchange_same_level(&mut c, &clev);
            c.set_ghosts_filled(true);
            c
        };
        subs.push((clev.clone(), cmod.clone()));
        cur_level = clev;
        cur_mod = cmod;
    }
    subs.reverse();

    let mut levels = Vec::new();
    let mut ops: Vec<Box<dyn StencilOperator>> = Vec::new();
    for (lev, md) in subs {
        let e0 = NodeField::uniform_on(&lev.patches, dim, ghost, &[0.0; 6]);
        let b = NodeField::uniform_on(&lev.patches, dim, ghost, &vec![0.0; dim]);
        let mut ctx = OperatorContext::new(&lev, hier.phys_lo, md, e0, b, bcs.clone())?;
        ctx.dirichlet_scale = scale;
        levels.push(lev);
        ops.push(Box::new(ctx));
    }
    let sub_count = levels.len();
    for (k, ctx) in ctxs.into_iter().enumerate() {
        levels.push(hier.levels[k].clone());
        ops.push(Box::new(ctx));
    }
    Ok((levels, ops, sub_count))
}

/// Same stack shape for the scalar surrogate; no coefficients to coarsen.
pub fn scalar_stack(hier: &Hierarchy) -> LevelStack {
    let dim = hier.dim;
    let mut subs: Vec<Level> = Vec::new();
    let mut cur = hier.levels[0].clone();
    while let Some(cdom) = cur.domain.coarsen() {
        if (0..dim).any(|d| cdom.extent(d) < 4) {
            break;
        }
        let mut spacing = cur.spacing;
        for s in spacing.iter_mut().take(dim) {
            *s *= 2.0;
        }
        let clev = Level::new(
            dim,
            0,
            spacing,
            cdom,
            cdom.chop(dim, hier.params.max_patch_cells),
        );
        subs.push(clev.clone());
        cur = clev;
    }
    subs.reverse();
    let mut levels = Vec::new();
    let mut ops: Vec<Box<dyn StencilOperator>> = Vec::new();
    for lev in subs {
        ops.push(Box::new(ScalarLaplacian::new(&lev)));
        levels.push(lev);
    }
    let sub_count = levels.len();
    for lev in &hier.levels {
        ops.push(Box::new(ScalarLaplacian::new(lev)));
        levels.push(lev.clone());
    }
    (levels, ops, sub_count)
}
