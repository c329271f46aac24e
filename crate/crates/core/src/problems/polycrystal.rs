//! Polycrystalline microstructures as multiphase fields.
//!
//! Each lattice orientation carries a non-conserved order parameter eta_i;
//! a grain is a region where one parameter sits near one and the rest
//! vanish. The free energy combines a multi-well bulk term, a gradient
//! penalty setting the boundary width, and the elastic energy of the
//! mixture-rule stiffness, so boundaries both relax curvature and respond
//! to the elastic contrast between orientations. Relaxation is forward
//! Euler on the variational force, and the hierarchy regrids after every
//! step so refinement follows the moving boundary network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Problem;
use crate::error::{Error, Result};
use crate::mesh::{tags, transfer, Hierarchy, Level, NodeField};
use crate::op::{BcFace, BcKind, BcSpec, OperatorContext};
use crate::tensor::{contract_packed, make_cubic, random_rotation_from, rotate, Rotation, NMOD};

/// Phase-field constants plus the cubic elastic constants shared by every
/// grain (orientation is what differs between grains, not the lattice).
#[derive(Clone, Copy, Debug)]
pub struct PhaseFieldParams {
    /// Relaxation rate of the order parameters.
    pub mobility: f64,
    /// Bulk well depth; with the gradient coefficient it sets the boundary
    /// energy and width.
    pub mu_c: f64,
    /// Cross-well penalty keeping coexisting order parameters apart.
    pub gamma: f64,
    /// Target diffuse boundary width, physical units.
    pub gb_width: f64,
    /// Target boundary energy per unit area.
    pub gb_energy: f64,
    pub c11: f64,
    pub c12: f64,
    pub c44: f64,
    /// Scaled-gradient threshold that drives refinement of eta.
    pub tag_threshold: f64,
}

impl Default for PhaseFieldParams {
    fn default() -> Self {
        PhaseFieldParams {
            mobility: 1.0,
            mu_c: 10.0,
            gamma: 1.0,
            gb_width: 0.025,
            gb_energy: 0.075,
            c11: 1.68,
            c12: 1.21,
            c44: 0.75,
            tag_threshold: 0.1,
        }
    }
}

/// Microstructure snapshot: the hierarchy, one multi-component order
/// parameter field per level, and one lattice orientation per parameter.
pub struct PhaseFieldState {
    pub hierarchy: Hierarchy,
    /// `eta[m]` holds every order parameter on level m; ncomp is the
    /// parameter count.
    pub eta: Vec<NodeField>,
    pub orientations: Vec<Rotation>,
    pub params: PhaseFieldParams,
    /// Gradient energy coefficient, derived from the target boundary energy
    /// and width at construction.
    pub kappa: f64,
    /// Regridding may deepen the hierarchy to this many levels above base.
    pub max_levels: usize,
}

impl PhaseFieldState {
    pub fn n_order(&self) -> usize {
        self.eta[0].ncomp
    }

    /// Exchanges same-level ghosts and interpolates coarse-fine ghosts,
    /// coarse levels first so the fine fill reads current parent data.
    pub fn fill_ghosts(&mut self) -> Result<()> {
        let levels = &self.hierarchy.levels;
        for m in 0..levels.len() {
            if m == 0 {
                transfer::fill_ghost(&mut self.eta[0], &levels[0], None)?;
            } else {
                let (lo, hi) = self.eta.split_at_mut(m);
                transfer::fill_ghost(&mut hi[0], &levels[m], Some((&lo[m - 1], &levels[m - 1])))?;
            }
        }
        Ok(())
    }

    /// Largest forward Euler step that keeps the relaxation a descent:
    /// one over the worst-case curvature of the force, the gradient term
    /// evaluated at the finest spacing regridding may ever introduce and the
    /// bulk curvature at order-one eta.
    pub fn stable_dt(&self) -> f64 {
        let l = self.params.mobility;
        if l <= 0.0 {
            return f64::INFINITY;
        }
        let dim = self.hierarchy.dim;
        let base = &self.hierarchy.levels[0];
        let mut h = f64::INFINITY;
        for d in 0..dim {
            h = h.min(base.spacing[d] / (1 << self.max_levels) as f64);
        }
        let grad = 2.0 * dim as f64 * 2.0 * self.kappa / (h * h);
        let bulk = self.params.mu_c * (2.0 + 4.0 * self.params.gamma);
        1.0 / (l * (grad + bulk))
    }
}

fn validate_params(p: &PhaseFieldParams) -> Result<()> {
    if p.mobility < 0.0 {
        return Err(Error::Parameter(format!("mobility must be non-negative, got {}", p.mobility)));
    }
    if !(p.mu_c > 0.0) || p.gamma < 0.0 {
        return Err(Error::Parameter(format!(
            "well depth must be positive and the cross penalty non-negative, got ({}, {})",
            p.mu_c, p.gamma
        )));
    }
    if !(p.gb_width > 0.0) || !(p.gb_energy > 0.0) {
        return Err(Error::Parameter(format!(
            "boundary width and energy must be positive, got ({}, {})",
            p.gb_width, p.gb_energy
        )));
    }
    if !(p.tag_threshold > 0.0) {
        return Err(Error::Parameter(format!(
            "tag threshold must be positive, got {}",
            p.tag_threshold
        )));
    }
    make_cubic(p.c11, p.c12, p.c44).map(|_| ())
}

/// Seeds `n_grains` Voronoi cells in the periodic box, assigns grain g the
/// order parameter `g % n_order`, and draws one random lattice orientation
/// per order parameter. Deterministic for a given seed, including the draw
/// order: all seed positions first, then the orientations.
pub fn voronoi_init(
    params: &PhaseFieldParams,
    n_grains: usize,
    n_order: usize,
    seed: u64,
    hierarchy: Hierarchy,
    max_levels: usize,
) -> Result<PhaseFieldState> {
    if n_grains == 0 {
        return Err(Error::Config("polycrystal needs at least one grain".into()));
    }
    if n_order == 0 || n_order > n_grains {
        return Err(Error::Config(format!(
            "order parameter count must lie in 1..={n_grains}, got {n_order}"
        )));
    }
    if hierarchy.finest() > max_levels {
        return Err(Error::Config(format!(
            "hierarchy already has {} levels above base, the cap is {max_levels}",
            hierarchy.finest()
        )));
    }
    validate_params(params)?;
    let dim = hierarchy.dim;
    let mut finest = f64::INFINITY;
    for d in 0..dim {
        finest = finest.min(hierarchy.levels[0].spacing[d]);
    }
    finest /= (1 << max_levels) as f64;
    if !(params.gb_width > 2.0 * finest) {
        return Err(Error::Config(format!(
            "boundary width {} is unresolvable: at most two finest node spacings ({})",
            params.gb_width,
            2.0 * finest
        )));
    }
    let kappa = 0.75 * params.gb_energy * params.gb_width;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = hierarchy.phys_lo;
    let hi = hierarchy.phys_hi;
    let mut seeds = Vec::with_capacity(n_grains);
    for _ in 0..n_grains {
        let mut s = [0.0; 3];
        for d in 0..dim {
            s[d] = rng.gen_range(lo[d]..hi[d]);
        }
        seeds.push(s);
    }
    let orientations: Vec<Rotation> =
        (0..n_order).map(|_| random_rotation_from(&mut rng)).collect();

    let mut len = [1.0; 3];
    for d in 0..dim {
        len[d] = hi[d] - lo[d];
    }
    // Nearest seed under the wrapped metric; ties go to the lower grain id.
    let assign = |x: [f64; 3]| -> usize {
        let mut best = 0usize;
        let mut bd = f64::INFINITY;
        for (g, s) in seeds.iter().enumerate() {
            let mut d2 = 0.0;
            for d in 0..dim {
                let raw = (x[d] - s[d]).rem_euclid(len[d]);
                let w = raw.min(len[d] - raw);
                d2 += w * w;
            }
            if d2 < bd {
                bd = d2;
                best = g;
            }
        }
        best
    };

    let ghost = hierarchy.params.ghost_width;
    let mut eta = Vec::with_capacity(hierarchy.levels.len());
    for (m, lev) in hierarchy.levels.iter().enumerate() {
        eta.push(NodeField::from_fn_on(
            &lev.patches,
            dim,
            n_order,
            ghost,
            &|i| hierarchy.node_pos(m, i),
            &|x, c| if assign(x) % n_order == c { 1.0 } else { 0.0 },
        ));
    }
    Ok(PhaseFieldState { hierarchy, eta, orientations, params: *params, kappa, max_levels })
}

/// Variational force dF/d(eta_i) on level `m`: multi-well bulk term,
/// gradient term with zero-flux reflection at physical faces, and, when a
/// strain snapshot is supplied, the elastic driving force of the mixture
/// rule, eps : (C_i - C_mix) : eps / (2 sum eta).
///
/// The face reflection matches the half-weight boundary quadrature of
/// [`free_energy`], so on a fixed single-level grid the relaxation is an
/// exact discrete descent. Nodes where every parameter vanishes get no
/// elastic force; the mixture is meaningless there and the caller decides
/// whether such nodes are an error (the stiffness builder does).
pub fn chemical_force(
    state: &PhaseFieldState,
    m: usize,
    strain: Option<&NodeField>,
) -> Result<NodeField> {
    let eta = &state.eta[m];
    eta.require_ghosts("chemical force")?;
    assert!(eta.ghost >= 1, "gradient stencil needs a ghost node");
    let level = &state.hierarchy.levels[m];
    let dim = state.hierarchy.dim;
    let n = eta.ncomp;
    let prm = state.params;
    let kappa = state.kappa;
    let packed: Vec<[f64; NMOD]> = if strain.is_some() {
        assert_eq!(state.orientations.len(), n, "one orientation per order parameter");
        let cubic = make_cubic(prm.c11, prm.c12, prm.c44)?;
        state.orientations.iter().map(|r| rotate(&cubic, r).to_packed()).collect()
    } else {
        Vec::new()
    };
    if let Some(s) = strain {
        assert_eq!(s.ncomp, 6);
        assert_eq!(s.num_patches(), eta.num_patches());
    }
    let h = level.spacing;
    let domain = level.domain;
    let estores = eta.patches();
    let mut out = NodeField::zeros_on(&level.patches, dim, n, 0);
    out.par_patches_mut().enumerate().for_each(|(pi, os)| {
        let es = &estores[pi];
        let ss = strain.map(|s| s.patch(pi));
        let vb = os.valid;
        let mut vals = vec![0.0; n];
        for idx in vb.iter() {
            for (c, v) in vals.iter_mut().enumerate() {
                *v = es.get(idx, c);
            }
            let s2: f64 = vals.iter().map(|v| v * v).sum();
            let mut ehat = [0.0; 6];
            let mut mixv = [0.0; NMOD];
            let mut wsum = 0.0;
            if let Some(sp) = ss {
                for (a, e) in ehat.iter_mut().enumerate() {
                    *e = sp.get(idx, a);
                }
                wsum = vals.iter().sum();
                if wsum > 1e-8 {
                    for (i, w) in vals.iter().enumerate() {
                        for k in 0..NMOD {
                            mixv[k] += w * packed[i][k];
                        }
                    }
                    for v in mixv.iter_mut() {
                        *v /= wsum;
                    }
                }
            }
            for c in 0..n {
                let v = vals[c];
                let bulk = prm.mu_c * (v * v * v - v + 2.0 * prm.gamma * v * (s2 - v * v));
                let mut lap = 0.0;
                for d in 0..dim {
                    let mut up = idx;
                    let mut dn = idx;
                    up[d] += 1;
                    dn[d] -= 1;
                    let second = if idx[d] == domain.lo[d] {
                        2.0 * (es.get(up, c) - v)
                    } else if idx[d] == domain.hi[d] {
                        2.0 * (es.get(dn, c) - v)
                    } else {
                        es.get(up, c) - 2.0 * v + es.get(dn, c)
                    };
                    lap += second / (h[d] * h[d]);
                }
                let mut f = bulk - kappa * lap;
                if ss.is_some() && wsum > 1e-8 {
                    let mut dc = [0.0; NMOD];
                    for k in 0..NMOD {
                        dc[k] = (packed[c][k] - mixv[k]) / wsum;
                    }
                    let sv = contract_packed(&dc, &ehat);
                    let mut w = 0.0;
                    for a in 0..6 {
                        w += ehat[a] * sv[a];
                    }
                    f += 0.5 * w;
                }
                os.set(idx, c, f);
            }
        }
    });
    Ok(out)
}

/// Relaxes the order parameters by `steps` forward Euler steps of size
/// `dt`, keeping covered coarse nodes averaged down from the fine data and
/// regridding after every step so refinement tracks the boundaries. A step
/// above the explicit stability bound is rejected up front; a runaway
/// parameter magnitude after a step aborts with a numerical error. Zero
/// mobility leaves the state untouched.
pub fn evolve_phase_field(state: &mut PhaseFieldState, dt: f64, steps: usize) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
    }
    let bound = state.stable_dt();
    if dt > bound {
        return Err(Error::Parameter(format!(
            "time step {dt} exceeds the explicit stability bound {bound}"
        )));
    }
    let l = state.params.mobility;
    for step in 0..steps {
        state.fill_ghosts()?;
        let nlev = state.hierarchy.levels.len();
        let mut forces = Vec::with_capacity(nlev);
        for m in 0..nlev {
            forces.push(chemical_force(state, m, None)?);
        }
        for (m, force) in forces.iter().enumerate() {
            let fstores = force.patches();
            state.eta[m].par_patches_mut().enumerate().for_each(|(pi, es)| {
                let fp = &fstores[pi];
                let vb = es.valid;
                let nc = es.ncomp();
                for idx in vb.iter() {
                    for c in 0..nc {
                        es.set(idx, c, es.get(idx, c) - dt * l * fp.get(idx, c));
                    }
                }
            });
            state.eta[m].set_ghosts_filled(false);
            let worst = state.eta[m].max_abs_owned(&state.hierarchy.levels[m].owned);
            if !worst.is_finite() || worst > 10.0 {
                return Err(Error::Numerical(format!(
                    "order parameter magnitude {worst} on level {m} after step {step}: \
                     the time step is too large for this state"
                )));
            }
        }
        for m in (1..nlev).rev() {
            let (lo, hi) = state.eta.split_at_mut(m);
            transfer::average_down(&mut hi[0], &state.hierarchy.levels[m], &mut lo[m - 1]);
        }
        if l > 0.0 {
            regrid_state(state)?;
        }
    }
    Ok(())
}

/// Rebuilds the refined levels under the current eta gradients. Data lands
/// on the new layout by interpolation from the level below, overwritten
/// with the old fine values wherever old and new layouts overlap.
fn regrid_state(state: &mut PhaseFieldState) -> Result<()> {
    if state.max_levels == 0 {
        return Ok(());
    }
    let dim = state.hierarchy.dim;
    let mesh = state.hierarchy.params;
    let thr = state.params.tag_threshold;
    let ncomp = state.eta[0].ncomp;
    let ghost = state.eta[0].ghost;
    let mut new_levels = vec![state.hierarchy.levels[0].clone()];
    let mut new_eta = vec![state.eta[0].clone()];
    transfer::fill_ghost(&mut new_eta[0], &new_levels[0], None)?;
    for m in 0..state.max_levels {
        let tagged = tags::tag_by_gradient(&new_eta[m], &new_levels[m], thr)?;
        let patches = tags::regrid(&new_levels[m], &tagged, &mesh);
        if patches.is_empty() {
            break;
        }
        let mut spacing = new_levels[m].spacing;
        for s in spacing.iter_mut().take(dim) {
            *s *= 0.5;
        }
        let next = Level::new(dim, m + 1, spacing, new_levels[m].domain.refine(), patches);
        let mut f = NodeField::zeros(&next, dim, ncomp, ghost);
        transfer::interpolate(&new_eta[m], &mut f, &next);
        if state.hierarchy.levels.len() > m + 1 {
            transfer::copy_overlap(&state.eta[m + 1], &state.hierarchy.levels[m + 1], &mut f, &next);
        }
        transfer::fill_ghost(&mut f, &next, Some((&new_eta[m], &new_levels[m])))?;
        new_levels.push(next);
        new_eta.push(f);
    }
    state.hierarchy.levels = new_levels;
    state.eta = new_eta;
    state.hierarchy.check_nesting()
}

/// Total free energy of the composite grid: bulk wells plus gradient
/// energy under trapezoid node weights, finer levels overriding the coarse
/// nodes they cover. The well term is shifted so a single grain at rest
/// scores exactly zero. Gradient links crossing a coarse/fine seam are
/// counted on the coarse grid only, so across regrids the value is a
/// diagnostic; on a fixed single-level grid it decreases exactly along the
/// relaxation.
pub fn free_energy(state: &PhaseFieldState) -> Result<f64> {
    let dim = state.hierarchy.dim;
    let prm = state.params;
    let kappa = state.kappa;
    let mut total = 0.0;
    for (m, lev) in state.hierarchy.levels.iter().enumerate() {
        let eta = &state.eta[m];
        eta.require_ghosts("free energy")?;
        let n = eta.ncomp;
        let covered = state.hierarchy.levels.get(m + 1).map(|f| f.region.coarsen());
        let h = lev.spacing;
        let domain = lev.domain;
        let mut cell = 1.0;
        for d in 0..dim {
            cell *= h[d];
        }
        for (pi, os) in eta.patches().iter().enumerate() {
            let mine = match &covered {
                Some(c) => lev.owned[pi].subtract(c),
                None => lev.owned[pi].clone(),
            };
            for idx in mine.iter_nodes() {
                let mut w = [1.0; 3];
                for d in 0..dim {
                    if idx[d] == domain.lo[d] || idx[d] == domain.hi[d] {
                        w[d] = 0.5;
                    }
                }
                let wall = w[0] * w[1] * w[2];
                let mut wells = 0.0;
                let mut cross = 0.0;
                for c in 0..n {
                    let v = os.get(idx, c);
                    wells += 0.25 * v * v * v * v - 0.5 * v * v;
                    for c2 in (c + 1)..n {
                        let v2 = os.get(idx, c2);
                        cross += v * v * v2 * v2;
                    }
                }
                total += cell * wall * prm.mu_c * (wells + prm.gamma * cross + 0.25);
                for d in 0..dim {
                    let mut up = idx;
                    up[d] += 1;
                    if up[d] > domain.hi[d] || !lev.region.contains(up) {
                        continue;
                    }
                    for c in 0..n {
                        let dv = os.get(up, c) - os.get(idx, c);
                        total += 0.5 * kappa * (dv / h[d]).powi(2) * cell * wall / w[d];
                    }
                }
            }
        }
    }
    Ok(total)
}

/// Simple shear drive: the face at the top of the last axis is dragged
/// along x by `shear`, the bottom face is held fixed, and the remaining
/// faces are traction free.
pub fn shear_load(dim: usize, shear: f64) -> BcSpec {
    let mut faces: Vec<[BcFace; 2]> = (0..dim)
        .map(|_| [BcFace::zero(BcKind::Traction), BcFace::zero(BcKind::Traction)])
        .collect();
    faces[dim - 1] = [
        BcFace::zero(BcKind::Displacement),
        BcFace::new(BcKind::Displacement, move |_| [shear, 0.0, 0.0]),
    ];
    BcSpec { faces }
}

/// Freezes the current microstructure into an elasticity problem: every
/// node carries the order-parameter-weighted mixture of the rotated cubic
/// stiffnesses, C(eta) = sum eta_i C_i / sum eta_i. Ghost nodes outside the
/// physical box reuse the nearest in-domain mixture. A node inside the box
/// where every parameter vanishes has no meaningful stiffness and is
/// reported as an error. Zero eigenstrain and body force; the load enters
/// through the boundary.
pub fn build_polycrystal_problem(state: &mut PhaseFieldState, load: &BcSpec) -> Result<Problem> {
    let prm = state.params;
    let cubic = make_cubic(prm.c11, prm.c12, prm.c44)?;
    let packed: Vec<[f64; NMOD]> =
        state.orientations.iter().map(|r| rotate(&cubic, r).to_packed()).collect();
    let n = state.n_order();
    if packed.len() != n {
        return Err(Error::Config(format!(
            "{} orientations for {n} order parameters",
            packed.len()
        )));
    }
    state.fill_ghosts()?;
    let dim = state.hierarchy.dim;
    let ghost = state.hierarchy.params.ghost_width;
    let mut contexts = Vec::with_capacity(state.hierarchy.levels.len());
    for (m, lev) in state.hierarchy.levels.iter().enumerate() {
        assert!(state.eta[m].ghost >= ghost, "eta ghost frame narrower than the mesh ghost width");
        let estores = state.eta[m].patches();
        let domain = lev.domain;
        let mut modulus = NodeField::zeros_on(&lev.patches, dim, NMOD, ghost);
        modulus.par_patches_mut().enumerate().try_for_each(|(pi, ms)| -> Result<()> {
            let es = &estores[pi];
            let frame = ms.frame;
            let mut vals = vec![0.0; n];
            for idx in frame.iter() {
                let mut q = idx;
                for d in 0..dim {
                    q[d] = q[d].clamp(domain.lo[d], domain.hi[d]);
                }
                let mut wsum = 0.0;
                for (c, v) in vals.iter_mut().enumerate() {
                    *v = es.get(q, c);
                    wsum += *v;
                }
                if wsum <= 1e-8 {
                    return Err(Error::Numerical(format!(
                        "degenerate phase mixture (weight sum {wsum:.3e}) at level {m} node \
                         ({}, {}, {})",
                        q[0], q[1], q[2]
                    )));
                }
                for k in 0..NMOD {
                    let mut acc = 0.0;
                    for (c, v) in vals.iter().enumerate() {
                        acc += v * packed[c][k];
                    }
                    ms.set(idx, k, acc / wsum);
                }
            }
            Ok(())
        })?;
        modulus.set_ghosts_filled(true);
        let e0 = NodeField::uniform_on(&lev.patches, dim, ghost, &[0.0; 6]);
        let body = NodeField::uniform_on(&lev.patches, dim, ghost, &vec![0.0; dim]);
        contexts.push(OperatorContext::new(
            lev,
            state.hierarchy.phys_lo,
            modulus,
            e0,
            body,
            load.clone(),
        )?);
    }
    Ok(Problem { hierarchy: state.hierarchy.clone(), contexts })
}
