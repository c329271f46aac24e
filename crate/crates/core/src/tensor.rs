//! Elastic stiffness algebra: symmetry classes, Voigt packing, rotation,
//! mixture rule, and stress contraction.
//!
//! The full representation stores the 21 independent components of the
//! symmetric 6x6 Voigt matrix in upper-triangle row-major order. Strain
//! vectors carry engineering shear (2 eps_23, 2 eps_13, 2 eps_12); stiffness
//! entries and stress vectors carry no extra factors.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Rotation = Mat3;

/// Voigt pair index of the (i, j) tensor slot.
pub const VOIGT: [[usize; 3]; 3] = [[0, 5, 4], [5, 1, 3], [4, 3, 2]];

/// Number of independent stiffness components.
pub const NMOD: usize = 21;

/// Packed position of Voigt entry (a, b) in upper-triangle row-major order.
#[inline]
pub fn pack(a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * 6 - a * (a + 1) / 2 + b
}

/// Stiffness component C_ijkl from a packed 21-entry slice.
#[inline]
pub fn c_entry(v: &[f64], i: usize, j: usize, k: usize, l: usize) -> f64 {
    v[pack(VOIGT[i][j], VOIGT[k][l])]
}

#[derive(Clone, Debug)]
pub enum Modulus {
    Isotropic { lambda: f64, mu: f64 },
    Cubic { c11: f64, c12: f64, c44: f64, r: Rotation },
    Full { v: [f64; NMOD] },
}

pub fn make_isotropic(e: f64, nu: f64) -> Result<Modulus> {
    if !(e > 0.0) {
        return Err(Error::Parameter(format!("Young modulus must be positive, got {e}")));
    }
    if !(-1.0 < nu && nu < 0.5) {
        return Err(Error::Parameter(format!(
            "Poisson ratio must lie in (-1, 0.5), got {nu} (0.5 is incompressible)"
        )));
    }
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    Ok(Modulus::Isotropic { lambda, mu })
}

pub fn make_cubic(c11: f64, c12: f64, c44: f64) -> Result<Modulus> {
    if !(c11 > c12.abs()) || !(c44 > 0.0) {
        return Err(Error::Parameter(format!(
            "cubic stability requires C11 > |C12| and C44 > 0, got ({c11}, {c12}, {c44})"
        )));
    }
    Ok(Modulus::Cubic { c11, c12, c44, r: IDENTITY })
}

pub const IDENTITY: Rotation = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Modulus {
    /// Packed 21-component Voigt representation, rotations applied.
    pub fn to_packed(&self) -> [f64; NMOD] {
        match self {
            Modulus::Isotropic { lambda, mu } => {
                let mut v = [0.0; NMOD];
                for a in 0..3 {
                    for b in a..3 {
                        v[pack(a, b)] = if a == b { lambda + 2.0 * mu } else { *lambda };
                    }
                }
                for a in 3..6 {
                    v[pack(a, a)] = *mu;
                }
                v
            }
            Modulus::Cubic { c11, c12, c44, r } => {
                let mut v = [0.0; NMOD];
                for a in 0..3 {
                    for b in a..3 {
                        v[pack(a, b)] = if a == b { *c11 } else { *c12 };
                    }
                }
                for a in 3..6 {
                    v[pack(a, a)] = *c44;
                }
                if *r == IDENTITY {
                    v
                } else {
                    rotate_packed(&v, r)
                }
            }
            Modulus::Full { v } => *v,
        }
    }

    pub fn c(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        c_entry(&self.to_packed(), i, j, k, l)
    }
}

fn rotate_packed(v: &[f64; NMOD], r: &Rotation) -> [f64; NMOD] {
    let mut out = [0.0; NMOD];
    for p in 0..3 {
        for q in p..3 {
            for s in 0..3 {
                for t in s..3 {
                    let (a, b) = (VOIGT[p][q], VOIGT[s][t]);
                    if a > b {
                        continue;
                    }
                    let mut acc = 0.0;
                    for i in 0..3 {
                        for j in 0..3 {
                            let rp = r[p][i] * r[q][j];
                            if rp == 0.0 {
                                continue;
                            }
                            for k in 0..3 {
                                for l in 0..3 {
                                    acc += rp * r[s][k] * r[t][l] * c_entry(v, i, j, k, l);
                                }
                            }
                        }
                    }
                    out[pack(a, b)] = acc;
                }
            }
        }
    }
    out
}

/// Rotates the stiffness into the frame given by `r`, returning the Full
/// class with all 21 components transformed.
pub fn rotate(c: &Modulus, r: &Rotation) -> Modulus {
    Modulus::Full { v: rotate_packed(&c.to_packed(), r) }
}

/// Weighted mixture C = sum w_i C_i / sum w_i.
pub fn mix(moduli: &[Modulus], weights: &[f64]) -> Result<Modulus> {
    let wsum: f64 = weights.iter().sum();
    if wsum <= 1e-8 {
        return Err(Error::Parameter(format!(
            "degenerate mixture: weight sum {wsum} below tolerance 1e-8"
        )));
    }
    let mut v = [0.0; NMOD];
    for (m, w) in moduli.iter().zip(weights) {
        let p = m.to_packed();
        for (acc, x) in v.iter_mut().zip(&p) {
            *acc += w * x;
        }
    }
    for x in &mut v {
        *x /= wsum;
    }
    Ok(Modulus::Full { v })
}

/// Symmetric strain tensor to its Voigt vector with engineering shear.
pub fn strain_to_voigt(e: &Mat3) -> [f64; 6] {
    [e[0][0], e[1][1], e[2][2], 2.0 * e[1][2], 2.0 * e[0][2], 2.0 * e[0][1]]
}

pub fn voigt_to_strain(v: &[f64; 6]) -> Mat3 {
    [
        [v[0], 0.5 * v[5], 0.5 * v[4]],
        [0.5 * v[5], v[1], 0.5 * v[3]],
        [0.5 * v[4], 0.5 * v[3], v[2]],
    ]
}

pub fn stress_to_voigt(s: &Mat3) -> [f64; 6] {
    [s[0][0], s[1][1], s[2][2], s[1][2], s[0][2], s[0][1]]
}

pub fn voigt_to_stress(v: &[f64; 6]) -> Mat3 {
    [[v[0], v[5], v[4]], [v[5], v[1], v[3]], [v[4], v[3], v[2]]]
}

/// Voigt matrix-vector product on a packed stiffness: strain in, stress out.
#[inline]
pub fn contract_packed(v: &[f64], strain_voigt: &[f64; 6]) -> [f64; 6] {
    let mut s = [0.0; 6];
    for a in 0..6 {
        let mut acc = 0.0;
        for b in 0..6 {
            acc += v[pack(a, b)] * strain_voigt[b];
        }
        s[a] = acc;
    }
    s
}

fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn mat_transpose(a: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

/// sigma_ij = C_ijkl eps_kl, using the closed form of the symmetry class.
pub fn contract_stress(c: &Modulus, strain: &Mat3) -> Mat3 {
    match c {
        Modulus::Isotropic { lambda, mu } => {
            let tr = strain[0][0] + strain[1][1] + strain[2][2];
            let mut s = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    s[i][j] = 2.0 * mu * strain[i][j];
                }
                s[i][i] += lambda * tr;
            }
            s
        }
        Modulus::Cubic { c11, c12, c44, r } => {
            // Pull the strain back to the crystal frame, contract there,
            // push the stress forward.
            let rt = mat_transpose(r);
            let ec = mat_mul(&rt, &mat_mul(strain, r));
            let tr = ec[0][0] + ec[1][1] + ec[2][2];
            let mut sc = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    if i == j {
                        sc[i][j] = c12 * tr + (c11 - c12) * ec[i][i];
                    } else {
                        sc[i][j] = 2.0 * c44 * ec[i][j];
                    }
                }
            }
            mat_mul(r, &mat_mul(&sc, &rt))
        }
        Modulus::Full { v } => {
            let sv = contract_packed(v, &strain_to_voigt(strain));
            voigt_to_stress(&sv)
        }
    }
}

fn quat_to_rotation(w: f64, x: f64, y: f64, z: f64) -> Rotation {
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - z * w),
            2.0 * (x * z + y * w),
        ],
        [
            2.0 * (x * y + z * w),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - x * w),
        ],
        [
            2.0 * (x * z - y * w),
            2.0 * (y * z + x * w),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Draws a rotation uniform on SO(3) from the stream, via uniform unit
/// quaternions.
pub fn random_rotation_from(rng: &mut impl Rng) -> Rotation {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let two_pi = 2.0 * std::f64::consts::PI;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    quat_to_rotation(
        b * (two_pi * u3).cos(),
        a * (two_pi * u2).sin(),
        a * (two_pi * u2).cos(),
        b * (two_pi * u3).sin(),
    )
}

/// Deterministic uniform rotation for a seed.
pub fn random_rotation(seed: u64) -> Rotation {
    random_rotation_from(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Rotation by `angle` about coordinate axis `axis`.
pub fn axis_rotation(axis: usize, angle: f64) -> Rotation {
    let (s, c) = angle.sin_cos();
    let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
    let mut r = [[0.0; 3]; 3];
    r[axis][axis] = 1.0;
    r[u][u] = c;
    r[v][v] = c;
    r[u][v] = -s;
    r[v][u] = s;
    r
}

/// Checks R^T R = I and det R = 1 to the stated tolerance.
pub fn is_rotation(r: &Rotation, tol: f64) -> bool {
    let rtr = mat_mul(&mat_transpose(r), r);
    for i in 0..3 {
        for j in 0..3 {
            let target = if i == j { 1.0 } else { 0.0 };
            if (rtr[i][j] - target).abs() > tol {
                return false;
            }
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
        - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    (det - 1.0).abs() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn max_diff(a: &[f64; NMOD], b: &[f64; NMOD]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn lame_constants_from_engineering_pair() {
        let Modulus::Isotropic { lambda, mu } = make_isotropic(210.0, 0.3).unwrap() else {
            panic!("wrong class");
        };
        assert_relative_eq!(lambda, 121.15384615384616, max_relative = 1e-12);
        assert_relative_eq!(mu, 80.76923076923077, max_relative = 1e-12);
    }

    #[test]
    fn zero_poisson_gives_zero_lambda() {
        let Modulus::Isotropic { lambda, mu } = make_isotropic(100.0, 0.0).unwrap() else {
            panic!("wrong class");
        };
        assert_eq!(lambda, 0.0);
        assert_eq!(mu, 50.0);
    }

    #[test]
    fn incompressible_and_nonpositive_inputs_rejected() {
        assert!(make_isotropic(210.0, 0.5).is_err());
        assert!(make_isotropic(0.0, 0.3).is_err());
        assert!(make_isotropic(-1.0, 0.3).is_err());
    }

    #[test]
    fn cubic_voigt_entries() {
        let c = make_cubic(1.68, 1.21, 0.75).unwrap();
        let v = c.to_packed();
        assert_eq!(v[pack(0, 0)], 1.68);
        assert_eq!(v[pack(0, 1)], 1.21);
        assert_eq!(v[pack(3, 3)], 0.75);
        assert_eq!(v[pack(0, 3)], 0.0);
    }

    #[test]
    fn degenerate_cubic_rejected() {
        assert!(make_cubic(1.0, 1.0, 1.0).is_err());
        assert!(make_cubic(1.0, -1.5, 1.0).is_err());
        assert!(make_cubic(1.0, 0.5, 0.0).is_err());
    }

    #[test]
    fn isotropic_consistent_cubic_matches_isotropic() {
        // C44 = (C11 - C12)/2 makes the cubic tensor isotropic with
        // lambda = C12, mu = C44.
        let (lambda, mu) = (1.21, 0.75);
        let cub = make_cubic(lambda + 2.0 * mu, lambda, mu).unwrap();
        let iso = Modulus::Isotropic { lambda, mu };
        assert!(max_diff(&cub.to_packed(), &iso.to_packed()) < 1e-14);
    }

    #[test]
    fn cubic_contraction_of_uniaxial_strain() {
        let c = make_cubic(1.68, 1.21, 0.75).unwrap();
        let e = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let s = contract_stress(&c, &e);
        assert_relative_eq!(s[0][0], 1.68, max_relative = 1e-14);
        assert_relative_eq!(s[1][1], 1.21, max_relative = 1e-14);
        assert_relative_eq!(s[2][2], 1.21, max_relative = 1e-14);
        assert_eq!(s[0][1], 0.0);
    }

    #[test]
    fn isotropic_contraction_of_unit_strain() {
        let c = make_isotropic(210.0, 0.3).unwrap();
        let Modulus::Isotropic { lambda, mu } = c else { unreachable!() };
        let e = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let s = contract_stress(&c, &e);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 3.0 * lambda + 2.0 * mu } else { 0.0 };
                assert_relative_eq!(s[i][j], want, max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn engineering_shear_factor() {
        // A pure eps_12 strain must produce sigma_12 = 2 C_1212 eps_12.
        let c = make_isotropic(210.0, 0.3).unwrap();
        let Modulus::Isotropic { mu, .. } = c else { unreachable!() };
        let s12 = 0.37;
        let e = [[0.0, s12, 0.0], [s12, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let s = contract_stress(&c, &e);
        assert_relative_eq!(s[0][1], 2.0 * mu * s12, max_relative = 1e-14);
        // Same through the Full path.
        let full = Modulus::Full { v: c.to_packed() };
        let sf = contract_stress(&full, &e);
        assert_relative_eq!(sf[0][1], 2.0 * mu * s12, max_relative = 1e-14);
    }

    #[test]
    fn zero_strain_zero_stress() {
        let c = make_cubic(1.68, 1.21, 0.75).unwrap();
        let s = contract_stress(&c, &[[0.0; 3]; 3]);
        assert_eq!(s, [[0.0; 3]; 3]);
    }

    #[test]
    fn identity_rotation_preserves_components() {
        let c = make_cubic(1.68, 1.21, 0.75).unwrap();
        let r = rotate(&c, &IDENTITY);
        assert!(max_diff(&c.to_packed(), &r.to_packed()) < 1e-15);
    }

    #[test]
    fn isotropic_invariant_under_any_rotation() {
        let c = make_isotropic(210.0, 0.3).unwrap();
        for seed in 0..8u64 {
            let r = random_rotation(seed);
            assert!(max_diff(&c.to_packed(), &rotate(&c, &r).to_packed()) < 1e-12);
        }
    }

    #[test]
    fn cubic_invariant_under_quarter_turns() {
        let c = make_cubic(1.68, 1.21, 0.75).unwrap();
        for axis in 0..3 {
            let r = axis_rotation(axis, std::f64::consts::FRAC_PI_2);
            assert!(max_diff(&c.to_packed(), &rotate(&c, &r).to_packed()) < 1e-13);
        }
    }

    #[test]
    fn mixture_rules() {
        let a = make_cubic(1.68, 1.21, 0.75).unwrap();
        let b = make_isotropic(210.0, 0.3).unwrap();
        let first = mix(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap();
        assert!(max_diff(&first.to_packed(), &a.to_packed()) < 1e-15);
        let scaled = mix(&[a.clone(), b.clone()], &[2.0, 0.0]).unwrap();
        assert!(max_diff(&scaled.to_packed(), &a.to_packed()) < 1e-15);
        let same = mix(&[a.clone(), a.clone()], &[0.3, 1.1]).unwrap();
        assert!(max_diff(&same.to_packed(), &a.to_packed()) < 1e-14);
        assert!(mix(&[a, b], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn random_rotation_is_deterministic_and_orthogonal() {
        let r1 = random_rotation(42);
        let r2 = random_rotation(42);
        assert_eq!(r1, r2);
        assert_ne!(random_rotation(43), r1);
        for seed in 0..32u64 {
            assert!(is_rotation(&random_rotation(seed), 1e-12));
        }
    }

    #[test]
    fn random_rotation_trace_mean_is_near_zero() {
        // Uniform SO(3) has E[tr R] = 0 with Var[tr R] = 1; over 10^4 draws
        // the sample mean stays within 0.05 (5 sigma).
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let r = random_rotation_from(&mut rng);
            sum += r[0][0] + r[1][1] + r[2][2];
        }
        assert!((sum / n as f64).abs() < 0.05);
    }

    fn arb_rotation() -> impl Strategy<Value = Rotation> {
        any::<u64>().prop_map(random_rotation)
    }

    fn arb_symmetric() -> impl Strategy<Value = Mat3> {
        proptest::array::uniform6(-1.0f64..1.0).prop_map(|v| voigt_to_strain(&v))
    }

    fn arb_modulus() -> impl Strategy<Value = Modulus> {
        prop_oneof![
            (0.1f64..10.0, 0.05f64..5.0)
                .prop_map(|(lambda, mu)| Modulus::Isotropic { lambda, mu }),
            (0.1f64..5.0, 0.05f64..2.0, any::<u64>()).prop_map(|(gap, c44, seed)| {
                let c12 = 1.0;
                Modulus::Cubic { c11: c12 + gap, c12, c44, r: random_rotation(seed) }
            }),
        ]
    }

    proptest! {
        #[test]
        fn rotation_composition(c in arb_modulus(), s1 in any::<u64>(), s2 in any::<u64>()) {
            let (r1, r2) = (random_rotation(s1), random_rotation(s2));
            let seq = rotate(&rotate(&c, &r1), &r2).to_packed();
            let composed = rotate(&c, &mat_mul(&r2, &r1)).to_packed();
            prop_assert!(max_diff(&seq, &composed) < 1e-10);
        }

        #[test]
        fn frame_objectivity(c in arb_modulus(), r in arb_rotation(), e in arb_symmetric()) {
            let rot_c = rotate(&c, &r);
            let rot_e = mat_mul(&r, &mat_mul(&e, &mat_transpose(&r)));
            let lhs = contract_stress(&rot_c, &rot_e);
            let s = contract_stress(&c, &e);
            let rhs = mat_mul(&r, &mat_mul(&s, &mat_transpose(&r)));
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((lhs[i][j] - rhs[i][j]).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn mixture_weight_scale_invariance(
            alpha in 0.1f64..50.0,
            w1 in 0.01f64..1.0,
            w2 in 0.01f64..1.0,
        ) {
            let a = make_cubic(1.68, 1.21, 0.75).unwrap();
            let b = make_isotropic(210.0, 0.3).unwrap();
            let m1 = mix(&[a.clone(), b.clone()], &[w1, w2]).unwrap().to_packed();
            let m2 = mix(&[a, b], &[alpha * w1, alpha * w2]).unwrap().to_packed();
            prop_assert!(max_diff(&m1, &m2) < 1e-9 * (1.0 + m1.iter().fold(0.0f64, |m, x| m.max(x.abs()))));
        }

        #[test]
        fn voigt_round_trip(v in proptest::array::uniform6(-2.0f64..2.0)) {
            let e = voigt_to_strain(&v);
            let back = strain_to_voigt(&e);
            for a in 0..6 {
                prop_assert!((back[a] - v[a]).abs() < 1e-15);
            }
            let s = voigt_to_stress(&v);
            let back = stress_to_voigt(&s);
            for a in 0..6 {
                prop_assert!((back[a] - v[a]).abs() < 1e-15);
            }
        }

        #[test]
        fn fast_paths_match_full_contraction(c in arb_modulus(), e in arb_symmetric()) {
            let full = Modulus::Full { v: c.to_packed() };
            let s_fast = contract_stress(&c, &e);
            let s_full = contract_stress(&full, &e);
            let scale = 1.0 + s_full.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((s_fast[i][j] - s_full[i][j]).abs() < 1e-12 * scale);
                }
            }
        }

        #[test]
        fn contraction_output_symmetric(c in arb_modulus(), e in arb_symmetric()) {
            let s = contract_stress(&c, &e);
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((s[i][j] - s[j][i]).abs() < 1e-12);
                }
            }
        }
    }
}
