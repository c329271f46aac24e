//! Plane-strain plate with a stadium-shaped notch under far-field tension.
//! The notch is a fixed, mollified crack field: the stiffness is degraded
//! smoothly from intact material to a small floor inside the slit, and the
//! near-tip stress is compared against the square-root singular field of a
//! center crack.

use libm::erf;

use super::{centered_base, refine_on_indicator, GridSpec, Problem};
use crate::error::{Error, Result};
use crate::mesh::NodeField;
use crate::op::{BcFace, BcKind, BcSpec, OperatorContext};
use crate::tensor::make_isotropic;

/// Notch geometry, degradation, and loading.
#[derive(Clone)]
pub struct FractureParams {
    /// Notch half-length: the straight flanks span |x| <= a, so the slit
    /// plays the role of a center crack of half-length a in the handbook
    /// formula K_I = sigma * sqrt(pi a).
    pub a: f64,
    /// Slit thickness; the ends are semicircular caps of radius t/2.
    pub t: f64,
    /// Mollification length of the crack field's transition band.
    pub eps: f64,
    /// Fracture energy of the regularized functional. The static notch
    /// solve never consumes it, but configs carry it alongside the geometry.
    pub g_c: f64,
    /// Lower bound on the stiffness scale inside the slit.
    pub modulus_floor: f64,
    pub half_extent: f64,
    pub e: f64,
    pub nu: f64,
    /// Far-field tensile stress realized by the default load.
    pub sigma_inf: f64,
    pub tag_threshold: f64,
    /// Boundary load; `None` means uniaxial tension at `sigma_inf`.
    pub load: Option<BcSpec>,
}

impl Default for FractureParams {
    fn default() -> Self {
        FractureParams {
            a: 1.0,
            t: 1.0 / 64.0,
            eps: 0.08,
            g_c: 1.0,
            modulus_floor: 0.01,
            half_extent: 4.0,
            e: 210.0,
            nu: 0.3,
            sigma_inf: 1.0,
            tag_threshold: 0.001,
            load: None,
        }
    }
}

impl FractureParams {
    /// Position of the right notch tip on the crack line.
    pub fn tip(&self) -> f64 {
        self.a + 0.5 * self.t
    }

    fn resolve_load(&self) -> BcSpec {
        self.load.clone().unwrap_or_else(|| uniaxial_tension(self.e, self.nu, self.sigma_inf))
    }

    fn validate(&self, grid: &GridSpec) -> Result<()> {
        if grid.dim != 2 {
            return Err(Error::Config(format!("the notch problem is two dimensional, got dim {}", grid.dim)));
        }
        if !(self.a > self.t && self.t > 0.0) {
            return Err(Error::Config(format!(
                "notch needs half-length > thickness > 0, got a = {}, t = {}",
                self.a, self.t
            )));
        }
        if !(self.modulus_floor > 0.0 && self.modulus_floor <= 1.0) {
            return Err(Error::Config(format!(
                "modulus floor must be in (0, 1], got {}",
                self.modulus_floor
            )));
        }
        if self.tip() >= 0.75 * self.half_extent {
            return Err(Error::Config(format!(
                "notch tip at {} crowds the domain boundary {}",
                self.tip(),
                self.half_extent
            )));
        }
        let finest = grid.finest_spacing(2.0 * self.half_extent);
        if !(self.eps > 2.0 * finest) {
            return Err(Error::Config(format!(
                "notch mollification {} is unresolvable: needs > {} (two nodes at the finest level)",
                self.eps,
                2.0 * finest
            )));
        }
        Ok(())
    }
}

/// Signed distance to the stadium boundary: negative inside the slit.
fn stadium_signed_distance(a: f64, t: f64, x: [f64; 3]) -> f64 {
    let cx = x[0].clamp(-a, a);
    let dx = x[0] - cx;
    (dx * dx + x[1] * x[1]).sqrt() - 0.5 * t
}

/// Mollified crack field: 1 deep inside the notch, 0 in intact material,
/// 1/2 on the stadium boundary, transitioning over `eps` in the signed
/// distance.
pub fn notch_indicator(p: &FractureParams, x: [f64; 3]) -> f64 {
    0.5 * (1.0 - erf(stadium_signed_distance(p.a, p.t, x) / p.eps))
}

/// Stiffness degradation: quadratic in the intact fraction, clamped to the
/// floor so the slit keeps a sliver of stiffness for stability.
fn modulus_scale(p: &FractureParams, x: [f64; 3]) -> f64 {
    let intact = 1.0 - notch_indicator(p, x);
    (intact * intact).max(p.modulus_floor)
}

/// Boundary conditions reproducing a uniform plane-strain uniaxial stress
/// sigma_22 = sigma: displacement on the top and bottom faces follows the
/// exact linear field (including lateral contraction), the sides are
/// traction free. Without a notch this load's solution is homogeneous, so
/// the far field carries exactly sigma.
pub fn uniaxial_tension(e: f64, nu: f64, sigma: f64) -> BcSpec {
    let e11 = -nu * (1.0 + nu) * sigma / e;
    let e22 = (1.0 - nu * nu) * sigma / e;
    BcSpec {
        faces: vec![
            [BcFace::zero(BcKind::Traction), BcFace::zero(BcKind::Traction)],
            [
                BcFace::new(BcKind::Displacement, move |x| [e11 * x[0], e22 * x[1], 0.0]),
                BcFace::new(BcKind::Displacement, move |x| [e11 * x[0], e22 * x[1], 0.0]),
            ],
        ],
    }
}

/// Builds the notch problem: square domain, hierarchy refined around the
/// slit, isotropic stiffness degraded by the crack field, tension applied
/// through the boundary.
pub fn setup_notch(params: &FractureParams, grid: &GridSpec) -> Result<Problem> {
    params.validate(grid)?;
    let mut hier = centered_base(grid, params.half_extent)?;
    let ind = |x: [f64; 3]| notch_indicator(params, x);
    refine_on_indicator(&mut hier, grid.max_levels, params.tag_threshold, &ind)?;

    let ghost = hier.params.ghost_width;
    let packed = make_isotropic(params.e, params.nu)?.to_packed();
    let bcs = params.resolve_load();
    bcs.validate(2)?;
    let mut contexts = Vec::with_capacity(hier.levels.len());
    for m in 0..hier.levels.len() {
        let lev = &hier.levels[m];
        let modulus = NodeField::from_fn_on(
            &lev.patches,
            2,
            21,
            ghost,
            &|i| hier.node_pos(m, i),
            &|x, c| modulus_scale(params, x) * packed[c],
        );
        let e0 = NodeField::uniform_on(&lev.patches, 2, ghost, &[0.0; 6]);
        let body = NodeField::uniform_on(&lev.patches, 2, ghost, &[0.0; 2]);
        contexts.push(OperatorContext::new(lev, hier.phys_lo, modulus, e0, body, bcs.clone())?);
    }
    Ok(Problem { hierarchy: hier, contexts })
}

/// Mode-I stress intensity of a center crack of half-length `a` in an
/// infinite plate under remote tension.
pub fn center_crack_k1(sigma_inf: f64, a: f64) -> f64 {
    sigma_inf * (std::f64::consts::PI * a).sqrt()
}

/// Singular crack-tip stress ahead of the tip: sigma_22 on theta = 0 at
/// distance r.
pub fn lefm_sigma22(k1: f64, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Parameter(format!(
            "the crack-tip field is singular: r must be positive, got {r}"
        )));
    }
    Ok(k1 / (2.0 * std::f64::consts::PI * r).sqrt())
}
