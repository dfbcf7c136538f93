//! The transverse direction field `xi = grad L - a grad H` and the companion
//! one-form `lambda = dL - b V_flat`.
//!
//! `xi` is the Euclidean projection of `grad L` onto the energy level, so it is
//! tangent to the level and transverse to the unperturbed tori (`L` constant).
//! `lambda` is stored as its Euclidean dual vector `grad L - b V`, so that
//! `lambda(eta) = (grad L - b V) . eta`.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    grad_h_unchecked, grad_l, potential_derivs, vector_field_unchecked, MassRatio,
    PotentialDerivs, State, TangentVector,
};
use crate::error::{Error, Result};

/// `|grad H|` (resp. `|V|`) below which `xi` (resp. `lambda`) is refused.
pub const SINGULAR_TOL: f64 = 1e-12;

/// Default relative tolerance of [`is_degenerate`].
pub const DEFAULT_DEGENERACY_TOL: f64 = 1e-8;

/// Everything the detector needs from the foliation at one state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FoliationEval {
    pub xi: TangentVector,
    /// Dual vector of `lambda`.
    pub lambda: TangentVector,
    pub a_coeff: f64,
    pub b_coeff: f64,
    pub xi_norm: f64,
    /// `lambda(xi) = |xi|^2 - (V . xi)^2 / |V|^2`, non-negative up to rounding.
    pub lambda_of_xi: f64,
}

#[inline]
pub(crate) fn xi_from(s: &State, d: &PotentialDerivs) -> (TangentVector, f64, f64) {
    let gh = grad_h_unchecked(s, d);
    let gl = grad_l(s);
    let gh2 = gh.dot(&gh);
    let a = gl.dot(&gh) / gh2;
    (gl - gh * a, a, gh2.sqrt())
}

#[inline]
pub(crate) fn lambda_from(s: &State, d: &PotentialDerivs) -> (TangentVector, f64, f64) {
    let v = vector_field_unchecked(s, d);
    let gl = grad_l(s);
    let v2 = v.dot(&v);
    let b = gl.dot(&v) / v2;
    (gl - v * b, b, v2.sqrt())
}

fn check_body(s: &State, mass: MassRatio) -> Result<PotentialDerivs> {
    let d = potential_derivs(s.x, s.y, mass);
    if !d.u.is_finite() {
        return Err(Error::AtBody { x: s.x, y: s.y });
    }
    Ok(d)
}

/// `xi = grad L - a grad H` with `a = grad L . grad H / |grad H|^2`.
pub fn xi(s: &State, mass: MassRatio) -> Result<TangentVector> {
    let d = check_body(s, mass)?;
    let (xi, _, gh) = xi_from(s, &d);
    if gh <= SINGULAR_TOL {
        return Err(Error::Singular {
            what: "xi",
            detail: format!("|grad H| = {gh:e} (equilibrium)"),
        });
    }
    Ok(xi)
}

/// Dual vector of `lambda = dL - b V_flat`, `b = grad L . V / |V|^2`.
pub fn lambda(s: &State, mass: MassRatio) -> Result<TangentVector> {
    let d = check_body(s, mass)?;
    let (lam, _, vn) = lambda_from(s, &d);
    if vn <= SINGULAR_TOL {
        return Err(Error::Singular {
            what: "lambda",
            detail: format!("|V| = {vn:e} (equilibrium)"),
        });
    }
    Ok(lam)
}

pub fn evaluate(s: &State, mass: MassRatio) -> Result<FoliationEval> {
    let d = check_body(s, mass)?;
    let (xi, a, gh) = xi_from(s, &d);
    let (lam, b, vn) = lambda_from(s, &d);
    if gh <= SINGULAR_TOL || vn <= SINGULAR_TOL {
        return Err(Error::Singular {
            what: "foliation",
            detail: format!("|grad H| = {gh:e}, |V| = {vn:e}"),
        });
    }
    Ok(FoliationEval {
        xi,
        lambda: lam,
        a_coeff: a,
        b_coeff: b,
        xi_norm: xi.norm(),
        lambda_of_xi: lam.dot(&xi),
    })
}

/// The two symmetry planes `p_r = 0, theta = 0` and `p_r = 0, theta = pi`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Plane {
    #[serde(rename = "P0")]
    Zero,
    #[serde(rename = "Ppi")]
    Pi,
}

impl Plane {
    pub fn name(self) -> &'static str {
        match self {
            Plane::Zero => "P0",
            Plane::Pi => "Ppi",
        }
    }
}

impl std::str::FromStr for Plane {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "P0" | "p0" | "0" | "zero" => Ok(Plane::Zero),
            "Ppi" | "ppi" | "pi" => Ok(Plane::Pi),
            _ => Err(Error::InvalidArgument(format!("unknown symmetry plane {s:?}"))),
        }
    }
}

/// `f(r, L; mu) = (1-mu)/(r+mu)^2 +/- mu/(r-1+mu)^2 - L^2/r^3`, the sign
/// being that of `r - 1 + mu`. On `Plane::Pi` the roles of the bodies are
/// exchanged (`mu -> 1 - mu`). The zero set is where `xi` vanishes on the
/// plane; `f >= 0` is the part of the plane inside the section
/// `{p_r = 0, dp_r/dt <= 0}`.
pub fn singularity_f(r: f64, l: f64, mass: MassRatio, plane: Plane) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("r = {r} must be positive")));
    }
    let m = match plane {
        Plane::Zero => mass,
        Plane::Pi => mass.swapped(),
    };
    let near = r + m.mu();
    let far = r - m.complement();
    if far == 0.0 && m.mu() > 0.0 {
        return Err(Error::AtBody { x: r, y: 0.0 });
    }
    let secondary = if m.mu() > 0.0 { m.mu() / (far * far) } else { 0.0 };
    let signed = if far > 0.0 { secondary } else { -secondary };
    Ok(m.complement() / (near * near) + signed - l * l / (r * r * r))
}

/// Why (or whether) `xi` degenerates at a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Degeneracy {
    Regular,
    /// `grad H` vanishes: an equilibrium.
    LagrangePoint,
    /// `grad L` parallel to `grad H`, so `xi = 0`.
    ParallelGradients,
    /// At one of the bodies.
    Collision,
}

impl Degeneracy {
    pub fn is_degenerate(self) -> bool {
        self != Degeneracy::Regular
    }
}

pub fn is_degenerate(s: &State, mass: MassRatio, tol: f64) -> Degeneracy {
    let d = potential_derivs(s.x, s.y, mass);
    if !d.u.is_finite() {
        return Degeneracy::Collision;
    }
    let (xi, a, gh) = xi_from(s, &d);
    if !(gh > tol) {
        return Degeneracy::LagrangePoint;
    }
    let scale = grad_l(s).norm() + a.abs() * gh;
    if xi.norm() <= tol * scale {
        Degeneracy::ParallelGradients
    } else {
        Degeneracy::Regular
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{
        grad_h, lagrange_points, reversal, reversal_tangent, vector_field,
    };
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn m(mu: f64) -> MassRatio {
        MassRatio::new(mu).unwrap()
    }

    fn plane0(r: f64, l: f64) -> State {
        State::new(r, 0.0, 0.0, l / r - r)
    }

    #[test]
    fn corotating_rest_point_is_an_equilibrium_for_mu_zero() {
        let s = State::new(1.0, 0.0, 0.0, 0.0);
        assert!(matches!(xi(&s, m(0.0)), Err(Error::Singular { .. })));
        assert_eq!(is_degenerate(&s, m(0.0), DEFAULT_DEGENERACY_TOL), Degeneracy::LagrangePoint);
    }

    #[test]
    fn circular_orbit_has_parallel_gradients() {
        // r = L^2 on the theta = 0 plane with mu = 0.
        let l = 2f64.sqrt();
        let s = plane0(2.0, l);
        let x = xi(&s, m(0.0)).unwrap();
        assert!(x.norm() < 1e-14);
        assert_eq!(
            is_degenerate(&s, m(0.0), DEFAULT_DEGENERACY_TOL),
            Degeneracy::ParallelGradients
        );
    }

    #[test]
    fn lagrange_points_are_degenerate() {
        let mass = m(0.1);
        for p in lagrange_points(mass).unwrap().all() {
            let s = State::new(p[0], p[1], 0.0, 0.0);
            assert_eq!(is_degenerate(&s, mass, DEFAULT_DEGENERACY_TOL), Degeneracy::LagrangePoint);
        }
    }

    #[test]
    fn torus_points_are_regular_and_transverse() {
        // mu = 0, L = 1, C = 2.5 on the theta = 0 plane: r solves
        // 1/r^2 - 2 - 2/r = -2.5, i.e. r = 2 +/- sqrt(2).
        let mass = m(0.0);
        for r in [2.0 - 2f64.sqrt(), 2.0 + 2f64.sqrt()] {
            let s = plane0(r, 1.0);
            let c = -2.0 * crate::dynamics::hamiltonian(&s, mass).unwrap();
            assert_relative_eq!(c, 2.5, max_relative = 1e-12);
            assert_eq!(is_degenerate(&s, mass, DEFAULT_DEGENERACY_TOL), Degeneracy::Regular);
            let x = xi(&s, mass).unwrap();
            assert!(x.dot(&grad_l(&s)) > 0.0);
        }
        // and off the plane, rotated copies of the same torus
        for theta in [0.3f64, 1.4, 2.9, -2.2] {
            let r = 2.0 + 2f64.sqrt();
            let (sn, cs) = theta.sin_cos();
            // Same (r, p_r = 0, L = 1) rotated by theta: velocity form of
            // p = (L/r) e_theta.
            let px = -sn / r;
            let py = cs / r;
            let s = State::from_momenta(r * cs, r * sn, crate::dynamics::Momenta { px, py });
            let x = xi(&s, mass).unwrap();
            assert!(x.dot(&grad_l(&s)) > 0.0);
        }
    }

    #[test]
    fn singularity_f_examples() {
        for &(r, l) in &[(0.5, 0.3), (2.0, 1.1), (3.3, -1.7)] {
            let f = singularity_f(r, l, m(0.0), Plane::Zero).unwrap();
            assert_relative_eq!(f, 1.0 / (r * r) - l * l / (r * r * r), max_relative = 1e-14);
        }
        assert_eq!(singularity_f(4.0, 2.0, m(0.0), Plane::Zero).unwrap(), 0.0);
        let f = singularity_f(2.0, 0.0, m(0.1), Plane::Zero).unwrap();
        assert_relative_eq!(f, 0.9 / (2.1 * 2.1) + 0.1 / (1.1 * 1.1), max_relative = 1e-14);
        assert!(singularity_f(0.9, 0.0, m(0.1), Plane::Zero).is_err());
        assert!(singularity_f(0.1, 0.0, m(0.1), Plane::Pi).is_err());
        assert!(singularity_f(-1.0, 0.0, m(0.1), Plane::Zero).is_err());
    }

    #[test]
    fn zero_set_of_f_is_where_xi_vanishes() {
        // Solve f(r, L) = 0 for L at fixed r, then check xi = 0 at that plane point.
        let mass = m(0.1);
        for r in [0.4, 1.3, 2.0, 3.5] {
            let fl0 = singularity_f(r, 0.0, mass, Plane::Zero).unwrap();
            if fl0 <= 0.0 {
                continue;
            }
            let l = (fl0 * r * r * r).sqrt();
            let s = plane0(r, l);
            let x = xi(&s, mass).unwrap();
            assert!(x.norm() < 1e-12 * grad_l(&s).norm(), "r = {r}");
        }
    }

    #[test]
    fn zero_set_tends_to_circular_orbits() {
        let mass = m(1e-6);
        let mut worst: f64 = 0.0;
        for k in 0..=60 {
            let l = -1.5 + 3.0 * k as f64 / 60.0;
            if l.abs() < 0.2 {
                continue;
            }
            // bisection for the root of f in r near L^2
            let f = |r: f64| singularity_f(r, l, mass, Plane::Zero).unwrap();
            let (mut lo, mut hi) = (0.5 * l * l, 1.5 * l * l);
            // avoid the pole at r = 1 - mu
            if (lo..hi).contains(&(1.0 - 1e-6)) {
                if f(lo) * f(1.0 - 1e-6 - 1e-4) < 0.0 {
                    hi = 1.0 - 1e-6 - 1e-4;
                } else {
                    lo = 1.0 - 1e-6 + 1e-4;
                }
            }
            if f(lo) * f(hi) > 0.0 {
                continue;
            }
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if (f(mid) < 0.0) == (f(lo) < 0.0) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            worst = worst.max((lo - l * l).abs());
        }
        assert!(worst < 1e-3, "max deviation {worst}");
    }

    /// Newton solve for a state where grad L lies in span(V, grad H), which
    /// is exactly where xi is parallel to V.
    fn find_xi_parallel_to_v(mass: MassRatio, x: f64, y: f64, guess: [f64; 4]) -> Option<State> {
        let residual = |z: [f64; 4]| -> [f64; 4] {
            let s = State::new(x, y, z[0], z[1]);
            let v = vector_field(&s, mass).unwrap();
            let gh = grad_h(&s, mass).unwrap();
            let gl = grad_l(&s);
            let r = gl - v * z[2] - gh * z[3];
            r.to_array()
        };
        let mut z = guess;
        for _ in 0..60 {
            let f0 = residual(z);
            let n0: f64 = f0.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n0 < 1e-13 {
                return Some(State::new(x, y, z[0], z[1]));
            }
            let mut j = nalgebra::Matrix4::<f64>::zeros();
            for c in 0..4 {
                let mut zp = z;
                let h = 1e-7 * z[c].abs().max(1.0);
                zp[c] += h;
                let fp = residual(zp);
                for r in 0..4 {
                    j[(r, c)] = (fp[r] - f0[r]) / h;
                }
            }
            let dz = j.lu().solve(&nalgebra::Vector4::from(f0))?;
            for c in 0..4 {
                z[c] -= dz[c];
            }
        }
        None
    }

    #[test]
    fn lambda_of_xi_vanishes_where_xi_parallel_to_v() {
        let mass = m(0.1);
        let mut found = 0;
        for &(x, y) in &[(1.2, 0.3), (0.5, 0.6), (-0.8, 0.5), (1.6, -0.4)] {
            for g in [[0.3, 0.2, 1.0, 1.0], [-0.5, 0.4, -1.0, 0.5], [0.1, -0.7, 2.0, -1.0]] {
                if let Some(s) = find_xi_parallel_to_v(mass, x, y, g) {
                    let ev = evaluate(&s, mass).unwrap();
                    let cos = ev.xi.dot(&vector_field(&s, mass).unwrap()).abs()
                        / (ev.xi_norm * vector_field(&s, mass).unwrap().norm());
                    assert!((cos - 1.0).abs() < 1e-9);
                    assert!(ev.lambda_of_xi.abs() < 1e-9 * ev.xi_norm.powi(2).max(1e-300));
                    found += 1;
                }
            }
        }
        assert!(found > 0, "no parallel point found");
    }

    fn any_state() -> impl Strategy<Value = State> {
        (-3.0..3.0f64, -3.0..3.0f64, -2.0..2.0f64, -2.0..2.0f64)
            .prop_map(|(x, y, vx, vy)| State::new(x, y, vx, vy))
    }

    proptest! {
        #[test]
        fn construction_identities(s in any_state(), mu in 0.0..0.5f64) {
            let mass = m(mu);
            let (r1, r2) = s.body_distances(mass);
            prop_assume!(r1 > 0.05 && r2 > 0.05);
            let Ok(ev) = evaluate(&s, mass) else { return Ok(()); };
            let gh = grad_h(&s, mass).unwrap();
            let v = vector_field(&s, mass).unwrap();
            let scale = grad_l(&s).norm().max(1.0) * gh.norm().max(1.0) * v.norm().max(1.0);
            prop_assert!(gh.dot(&ev.xi).abs() <= 1e-12 * scale);
            prop_assert!(ev.lambda.dot(&v).abs() <= 1e-12 * scale);
            prop_assert!(ev.lambda_of_xi >= -1e-14 * scale);
            let cs = ev.xi_norm.powi(2) - v.dot(&ev.xi).powi(2) / v.dot(&v);
            prop_assert!((cs - ev.lambda_of_xi).abs() <= 1e-12 * scale);
            // xi . grad L = |xi|^2
            prop_assert!((ev.xi.dot(&grad_l(&s)) - ev.xi_norm.powi(2)).abs() <= 1e-12 * scale);
        }

        #[test]
        fn reversal_equivariance(s in any_state(), mu in 0.0..0.5f64) {
            let mass = m(mu);
            let (r1, r2) = s.body_distances(mass);
            prop_assume!(r1 > 0.05 && r2 > 0.05);
            let Ok(x) = xi(&s, mass) else { return Ok(()); };
            let xr = xi(&reversal(&s), mass).unwrap();
            let d = reversal_tangent(&x) - xr;
            prop_assert!(d.norm() <= 1e-13 * x.norm().max(1.0) * 10.0);
            let l = lambda(&s, mass).unwrap();
            let lr = lambda(&reversal(&s), mass).unwrap();
            prop_assert!((reversal_tangent(&l) - lr).norm() <= 1e-12 * l.norm().max(1.0));
        }
    }
}
