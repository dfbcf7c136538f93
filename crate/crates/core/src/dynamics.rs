//! Rotating-frame dynamics of the planar circular restricted three-body problem.
//!
//! Units: total mass 1, primary-secondary distance 1, angular rate 1. The
//! primary (mass `1 - mu`) sits at `(-mu, 0)` and the secondary (mass `mu`)
//! at `(1 - mu, 0)`. States are stored in velocity form `(x, y, vx, vy)`;
//! the symplectic form in these coordinates is
//! `dx ^ dvx + dy ^ dvy - 2 dx ^ dy` and the Hamiltonian is
//! `H = (vx^2 + vy^2) / 2 + U(x, y)`.
//!
//! Every floating-point expression touching the two bodies is written so that
//! the point reflection `s -> -s` combined with `mu -> 1 - mu` (see
//! [`MassRatio::swapped`]) maps results to exact negations. That keeps scans
//! of the two symmetry planes bit-compatible.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mass of the secondary relative to the total mass.
///
/// The complement `1 - mu` is stored rather than recomputed so that
/// [`MassRatio::swapped`] is an exact involution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct MassRatio {
    mu: f64,
    complement: f64,
}

impl MassRatio {
    pub fn new(mu: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::InvalidMassRatio(mu));
        }
        if mu > 0.5 {
            log::warn!("mass ratio {mu} > 1/2: primary and secondary roles are exchanged");
        }
        Ok(Self {
            mu,
            complement: 1.0 - mu,
        })
    }

    pub fn mu(self) -> f64 {
        self.mu
    }

    /// `1 - mu`, the primary's mass.
    pub fn complement(self) -> f64 {
        self.complement
    }

    /// Exchange the roles of the two bodies (`mu -> 1 - mu`).
    pub fn swapped(self) -> Self {
        Self {
            mu: self.complement,
            complement: self.mu,
        }
    }

    pub fn is_swapped_range(self) -> bool {
        self.mu > 0.5
    }

    pub fn primary_x(self) -> f64 {
        -self.mu
    }

    pub fn secondary_x(self) -> f64 {
        self.complement
    }
}

impl TryFrom<f64> for MassRatio {
    type Error = Error;

    fn try_from(mu: f64) -> Result<Self> {
        MassRatio::new(mu)
    }
}

impl From<MassRatio> for f64 {
    fn from(m: MassRatio) -> f64 {
        m.mu
    }
}

/// A point `(x, y, vx, vy)` of the rotating-frame phase space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl State {
    pub const fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self { x, y, vx, vy }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.vx, self.vy]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// Distance from the origin (the centre of mass).
    pub fn radius(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Distances `(r1, r2)` to the primary and secondary.
    pub fn body_distances(&self, mass: MassRatio) -> (f64, f64) {
        let dx1 = self.x + mass.mu;
        let dx2 = self.x - mass.complement;
        (dx1.hypot(self.y), dx2.hypot(self.y))
    }

    pub fn momenta(&self) -> Momenta {
        Momenta {
            px: self.vx - self.y,
            py: self.vy + self.x,
        }
    }

    pub fn from_momenta(x: f64, y: f64, m: Momenta) -> Self {
        Self::new(x, y, m.px + y, m.py - x)
    }

    /// Polar canonical coordinates; `r` must be positive.
    pub fn polar(&self) -> Result<PolarState> {
        let r = self.radius();
        if r == 0.0 {
            return Err(Error::Singular {
                what: "polar coordinates",
                detail: "r = 0".into(),
            });
        }
        Ok(PolarState {
            r,
            theta: self.y.atan2(self.x),
            pr: radial_momentum(self),
            ptheta: angular_momentum(self),
        })
    }

    pub fn from_polar(p: &PolarState) -> Self {
        let (sin, cos) = p.theta.sin_cos();
        let x = p.r * cos;
        let y = p.r * sin;
        // p = pr * e_r + (ptheta / r) * e_theta
        let px = p.pr * cos - p.ptheta / p.r * sin;
        let py = p.pr * sin + p.ptheta / p.r * cos;
        Self::from_momenta(x, y, Momenta { px, py })
    }
}

/// Inertial-frame momenta per unit mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Momenta {
    pub px: f64,
    pub py: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarState {
    pub r: f64,
    pub theta: f64,
    pub pr: f64,
    pub ptheta: f64,
}

/// A tangent vector (or, via the Euclidean metric, a covector) at a state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub dx: f64,
    pub dy: f64,
    pub dvx: f64,
    pub dvy: f64,
}

impl TangentVector {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(dx: f64, dy: f64, dvx: f64, dvy: f64) -> Self {
        Self { dx, dy, dvx, dvy }
    }

    pub fn basis(i: usize) -> Self {
        let mut a = [0.0; 4];
        a[i] = 1.0;
        Self::from_array(a)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dvx, self.dvy]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.dx * other.dx + self.dy * other.dy + self.dvx * other.dvx + self.dvy * other.dvy
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

impl Add for TangentVector {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.dx + o.dx, self.dy + o.dy, self.dvx + o.dvx, self.dvy + o.dvy)
    }
}

impl AddAssign for TangentVector {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for TangentVector {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.dx - o.dx, self.dy - o.dy, self.dvx - o.dvx, self.dvy - o.dvy)
    }
}

impl Mul<f64> for TangentVector {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        Self::new(self.dx * k, self.dy * k, self.dvx * k, self.dvy * k)
    }
}

impl Neg for TangentVector {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.dx, -self.dy, -self.dvx, -self.dvy)
    }
}

/// `U` and its first and second partial derivatives at a point.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PotentialDerivs {
    pub u: f64,
    pub ux: f64,
    pub uy: f64,
    pub uxx: f64,
    pub uxy: f64,
    pub uyy: f64,
}

#[inline]
fn body_terms(m: f64, r: f64, rsq: f64) -> (f64, f64, f64) {
    if m == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let t = m / (rsq * r);
    (m / r, t, t / rsq)
}

/// Unchecked evaluation; produces non-finite values at the bodies.
#[inline]
pub(crate) fn potential_derivs(x: f64, y: f64, mass: MassRatio) -> PotentialDerivs {
    let dx1 = x + mass.mu;
    let dx2 = x - mass.complement;
    let y2 = y * y;
    let r1sq = dx1 * dx1 + y2;
    let r2sq = dx2 * dx2 + y2;
    let r1 = r1sq.sqrt();
    let r2 = r2sq.sqrt();
    // t_k = m_k / r_k^3, w_k = t_k / r_k^2; a massless body contributes nothing
    let (p1, t1, w1) = body_terms(mass.complement, r1, r1sq);
    let (p2, t2, w2) = body_terms(mass.mu, r2, r2sq);

    let u = -0.5 * (x * x + y2) - (p1 + p2);
    let ux = (dx1 * t1 + dx2 * t2) - x;
    let uy = y * (t1 + t2) - y;
    let tsum = t1 + t2;
    let uxx = tsum - 3.0 * (dx1 * dx1 * w1 + dx2 * dx2 * w2) - 1.0;
    let uyy = tsum - 3.0 * y2 * (w1 + w2) - 1.0;
    let uxy = -3.0 * y * (dx1 * w1 + dx2 * w2);
    PotentialDerivs {
        u,
        ux,
        uy,
        uxx,
        uxy,
        uyy,
    }
}

fn check_position(x: f64, y: f64, mass: MassRatio) -> Result<()> {
    let dx1 = x + mass.mu;
    let dx2 = x - mass.complement;
    let hit_primary = dx1 == 0.0 && mass.complement > 0.0;
    let hit_secondary = dx2 == 0.0 && mass.mu > 0.0;
    if (hit_primary || hit_secondary) && y == 0.0 {
        return Err(Error::AtBody { x, y });
    }
    Ok(())
}

/// Effective potential `U = -(x^2 + y^2)/2 - (1 - mu)/r1 - mu/r2`.
pub fn effective_potential(x: f64, y: f64, mass: MassRatio) -> Result<f64> {
    check_position(x, y, mass)?;
    Ok(potential_derivs(x, y, mass).u)
}

/// Gradient `(dU/dx, dU/dy)` of the effective potential.
pub fn potential_gradient(x: f64, y: f64, mass: MassRatio) -> Result<(f64, f64)> {
    check_position(x, y, mass)?;
    let d = potential_derivs(x, y, mass);
    Ok((d.ux, d.uy))
}

/// Rotating-frame Hamiltonian `H = |v|^2 / 2 + U`.
pub fn hamiltonian(s: &State, mass: MassRatio) -> Result<f64> {
    let u = effective_potential(s.x, s.y, mass)?;
    Ok(0.5 * (s.vx * s.vx + s.vy * s.vy) + u)
}

/// Jacobi constant `C = -2H`.
pub fn jacobi_constant(s: &State, mass: MassRatio) -> Result<f64> {
    Ok(-2.0 * hamiltonian(s, mass)?)
}

/// Inertial angular momentum about the centre of mass,
/// `L = x p_y - y p_x = x vy - y vx + x^2 + y^2`.
pub fn angular_momentum(s: &State) -> f64 {
    s.x * s.vy - s.y * s.vx + (s.x * s.x + s.y * s.y)
}

/// Radial momentum `p_r = (x vx + y vy) / r` (equal in velocity and momentum form).
pub fn radial_momentum(s: &State) -> f64 {
    (s.x * s.vx + s.y * s.vy) / s.radius()
}

/// Inertial-frame Kepler energy `K = |p|^2/2 - (1 - mu)/r1 - mu/r2`; `H = K - L`.
pub fn kepler_energy(s: &State, mass: MassRatio) -> Result<f64> {
    check_position(s.x, s.y, mass)?;
    let p = s.momenta();
    let (r1, r2) = s.body_distances(mass);
    let (p1, _, _) = body_terms(mass.complement, r1, r1 * r1);
    let (p2, _, _) = body_terms(mass.mu, r2, r2 * r2);
    Ok(0.5 * (p.px * p.px + p.py * p.py) - (p1 + p2))
}

#[inline]
pub(crate) fn vector_field_unchecked(s: &State, d: &PotentialDerivs) -> TangentVector {
    TangentVector::new(s.vx, s.vy, 2.0 * s.vy - d.ux, -2.0 * s.vx - d.uy)
}

/// Hamiltonian vector field `V`, defined by `omega(V, .) = dH`.
pub fn vector_field(s: &State, mass: MassRatio) -> Result<TangentVector> {
    check_position(s.x, s.y, mass)?;
    let d = potential_derivs(s.x, s.y, mass);
    Ok(vector_field_unchecked(s, &d))
}

/// `DV * eta` without forming the matrix.
#[inline]
pub(crate) fn linearised_unchecked(d: &PotentialDerivs, eta: &TangentVector) -> TangentVector {
    TangentVector::new(
        eta.dvx,
        eta.dvy,
        2.0 * eta.dvy - (d.uxx * eta.dx + d.uxy * eta.dy),
        -2.0 * eta.dvx - (d.uxy * eta.dx + d.uyy * eta.dy),
    )
}

/// Analytic Jacobian `DV` of the vector field.
pub fn jacobian(s: &State, mass: MassRatio) -> Result<Matrix4<f64>> {
    check_position(s.x, s.y, mass)?;
    let d = potential_derivs(s.x, s.y, mass);
    #[rustfmt::skip]
    let m = Matrix4::new(
        0.0,     0.0,     1.0,  0.0,
        0.0,     0.0,     0.0,  1.0,
        -d.uxx,  -d.uxy,  0.0,  2.0,
        -d.uxy,  -d.uyy,  -2.0, 0.0,
    );
    Ok(m)
}

/// `omega(u, w)` for `omega = dx ^ dvx + dy ^ dvy - 2 dx ^ dy`.
pub fn symplectic_form(u: &TangentVector, w: &TangentVector) -> f64 {
    (u.dx * w.dvx - u.dvx * w.dx) + (u.dy * w.dvy - u.dvy * w.dy)
        - 2.0 * (u.dx * w.dy - u.dy * w.dx)
}

#[inline]
pub(crate) fn grad_h_unchecked(s: &State, d: &PotentialDerivs) -> TangentVector {
    TangentVector::new(d.ux, d.uy, s.vx, s.vy)
}

/// Euclidean gradient of `H` in `(x, y, vx, vy)`.
pub fn grad_h(s: &State, mass: MassRatio) -> Result<TangentVector> {
    check_position(s.x, s.y, mass)?;
    let d = potential_derivs(s.x, s.y, mass);
    Ok(grad_h_unchecked(s, &d))
}

/// Euclidean gradient of `L` in `(x, y, vx, vy)`.
pub fn grad_l(s: &State) -> TangentVector {
    TangentVector::new(s.vy + 2.0 * s.x, -s.vx + 2.0 * s.y, -s.y, s.x)
}

/// Time-reversal symmetry `(x, y, vx, vy) -> (x, -y, -vx, vy)`.
pub fn reversal(s: &State) -> State {
    State::new(s.x, -s.y, -s.vx, s.vy)
}

/// Differential of [`reversal`]; the same linear map acting on tangent vectors.
pub fn reversal_tangent(v: &TangentVector) -> TangentVector {
    TangentVector::new(v.dx, -v.dy, -v.dvx, v.dvy)
}

/// Positions of the five equilibria.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LagrangePoints {
    /// Between the two bodies.
    pub l1: [f64; 2],
    /// Beyond the secondary.
    pub l2: [f64; 2],
    /// Beyond the primary.
    pub l3: [f64; 2],
    pub l4: [f64; 2],
    pub l5: [f64; 2],
}

impl LagrangePoints {
    pub fn all(&self) -> [[f64; 2]; 5] {
        [self.l1, self.l2, self.l3, self.l4, self.l5]
    }
}

fn bisect_collinear(lo: f64, hi: f64, mass: MassRatio) -> Result<f64> {
    let f = |x: f64| potential_derivs(x, 0.0, mass).ux;
    let (mut lo, mut hi) = (lo, hi);
    let (mut flo, fhi) = (f(lo), f(hi));
    if !(flo * fhi < 0.0) {
        return Err(Error::NoConvergence(format!(
            "no sign change of dU/dx on [{lo}, {hi}]"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return Ok(mid);
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let x = 0.5 * (lo + hi);
    let residual = f(x).abs();
    // Resolution limit: the slope times one ulp of x.
    let slope = potential_derivs(x, 0.0, mass).uxx.abs().max(1.0);
    if residual > 1e-12_f64.max(8.0 * f64::EPSILON * slope * x.abs().max(1.0)) {
        return Err(Error::NoConvergence(format!(
            "bisection stalled at x = {x} with residual {residual:e}"
        )));
    }
    Ok(x)
}

/// The five Lagrange points for `0 < mu <= 1/2` (larger `mu` is accepted too).
///
/// Collinear points come from bisection of `dU/dx(x, 0)` on the three
/// intervals separated by the bodies, clipped to `[-2, 2]`.
pub fn lagrange_points(mass: MassRatio) -> Result<LagrangePoints> {
    let mu = mass.mu;
    if mu <= 0.0 || mu >= 1.0 {
        return Err(Error::InvalidArgument(format!(
            "Lagrange points need 0 < mu < 1, got {mu}"
        )));
    }
    let xp = mass.primary_x();
    let xs = mass.secondary_x();
    // Offsets keep the end points off the poles while staying inside the
    // Hill-sphere scale ~ (m/3)^(1/3) of either body.
    let eps_s = 1e-3 * (mass.mu / 3.0).cbrt();
    let eps_p = 1e-3 * (mass.complement / 3.0).cbrt();
    let l1 = bisect_collinear(xp + eps_p, xs - eps_s, mass)?;
    let l2 = bisect_collinear(xs + eps_s, 2.0, mass)?;
    let l3 = bisect_collinear(-2.0, xp - eps_p, mass)?;
    let h = 3.0_f64.sqrt() / 2.0;
    let xe = 0.5 - mu;
    Ok(LagrangePoints {
        l1: [l1, 0.0],
        l2: [l2, 0.0],
        l3: [l3, 0.0],
        l4: [xe, h],
        l5: [xe, -h],
    })
}
