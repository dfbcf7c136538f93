//! Adaptive Dormand-Prince 5(4) propagation of the flow together with its
//! tangent (linearised) flow.
//!
//! Error control only looks at the leading `controlled_dims` components of a
//! system. For the joint state/tangent system those are the four state
//! components: the tangent equation is linear along the same trajectory, and
//! keeping it out of the controller makes the step sequence independent of the
//! scale of `eta` (and of renormalisation).

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    linearised_unchecked, potential_derivs, vector_field_unchecked, MassRatio, State,
    TangentVector,
};
use crate::error::{Error, Result};

/// Right-hand side of `dy/dt = f(t, y)`.
pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &[f64; N], dydt: &mut [f64; N]);

    /// Number of leading components that enter the error norm.
    fn controlled_dims(&self) -> usize {
        N
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    /// `|eta|` above which the tangent vector is rescaled to unit length.
    pub renorm_threshold: f64,
    /// Distance to either body at which a trajectory is stopped as a collision.
    pub collision_radius: f64,
    /// Distance from the origin at which a trajectory is stopped as an escape.
    pub escape_radius: f64,
    /// Constant step size; disables error control when set.
    pub fixed_step: Option<f64>,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-13,
            abs_tol: 1e-14,
            h_init: 1e-3,
            h_min: 1e-12,
            h_max: 0.25,
            renorm_threshold: 1e6,
            collision_radius: 1e-3,
            escape_radius: 20.0,
            fixed_step: None,
        }
    }
}

impl IntegratorOptions {
    /// Every violated constraint, empty when valid.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.rel_tol > 0.0) {
            v.push(format!("rel_tol = {} must be > 0", self.rel_tol));
        }
        if !(self.abs_tol > 0.0) {
            v.push(format!("abs_tol = {} must be > 0", self.abs_tol));
        }
        if !(0.0 < self.h_min && self.h_min <= self.h_init && self.h_init <= self.h_max) {
            v.push(format!(
                "step bounds must satisfy 0 < h_min <= h_init <= h_max (got {}, {}, {})",
                self.h_min, self.h_init, self.h_max
            ));
        }
        if !(self.renorm_threshold > 1.0) {
            v.push(format!("renorm_threshold = {} must be > 1", self.renorm_threshold));
        }
        if !(self.collision_radius >= 0.0) {
            v.push(format!("collision_radius = {} must be >= 0", self.collision_radius));
        }
        if !(self.escape_radius > self.collision_radius) {
            v.push(format!(
                "escape_radius = {} must exceed collision_radius",
                self.escape_radius
            ));
        }
        if let Some(h) = self.fixed_step {
            if !(h > 0.0 && h.is_finite()) {
                v.push(format!("fixed_step = {h} must be positive"));
            }
        }
        v
    }
}

// Dormand & Prince (1980) RK5(4)7M tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// b - b_hat
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

#[inline]
fn combine<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

/// One Dormand-Prince step of size `h` from `(t, y)` with `k1 = f(t, y)`.
/// Returns the 5th-order solution, `f` at that solution and the raw error
/// vector (difference to the embedded 4th-order solution).
pub fn dopri_step<const N: usize, S: OdeSystem<N> + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64; N],
    k1: &[f64; N],
    h: f64,
) -> ([f64; N], [f64; N], [f64; N]) {
    let mut k2 = [0.0; N];
    let mut k3 = [0.0; N];
    let mut k4 = [0.0; N];
    let mut k5 = [0.0; N];
    let mut k6 = [0.0; N];
    let mut k7 = [0.0; N];
    sys.rhs(t + C2 * h, &combine(y, h, &[(A21, k1)]), &mut k2);
    sys.rhs(t + C3 * h, &combine(y, h, &[(A31, k1), (A32, &k2)]), &mut k3);
    sys.rhs(
        t + C4 * h,
        &combine(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]),
        &mut k4,
    );
    sys.rhs(
        t + C5 * h,
        &combine(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        &mut k5,
    );
    sys.rhs(
        t + h,
        &combine(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
        &mut k6,
    );
    let y_new = combine(y, h, &[(B1, k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
    sys.rhs(t + h, &y_new, &mut k7);
    let mut err = [0.0; N];
    for i in 0..N {
        err[i] = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
    }
    (y_new, k7, err)
}

/// Scaled RMS error norm over the controlled components.
fn error_norm<const N: usize>(
    y: &[f64; N],
    y_new: &[f64; N],
    err: &[f64; N],
    dims: usize,
    opts: &IntegratorOptions,
) -> f64 {
    let dims = dims.clamp(1, N);
    let mut acc = 0.0;
    for i in 0..dims {
        let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(y_new[i].abs());
        let q = err[i] / sc;
        acc += q * q;
    }
    let e = (acc / dims as f64).sqrt();
    if e.is_finite() && y_new.iter().all(|v| v.is_finite()) {
        e
    } else {
        f64::INFINITY
    }
}

/// Outcome of one accepted step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepInfo {
    pub h_used: f64,
    pub h_next: f64,
    pub error: f64,
    pub rejected: u32,
}

/// Stateful adaptive integrator; holds the proposed next step and the
/// first-same-as-last derivative.
#[derive(Clone, Debug)]
pub struct Dopri5<const N: usize> {
    opts: IntegratorOptions,
    h: f64,
    fsal: Option<[f64; N]>,
    pub n_accepted: u64,
    pub n_rejected: u64,
}

impl<const N: usize> Dopri5<N> {
    pub fn new(opts: IntegratorOptions) -> Self {
        let h = opts.fixed_step.unwrap_or(opts.h_init);
        Self {
            opts,
            h,
            fsal: None,
            n_accepted: 0,
            n_rejected: 0,
        }
    }

    pub fn options(&self) -> &IntegratorOptions {
        &self.opts
    }

    /// Proposed magnitude of the next step.
    pub fn next_step_size(&self) -> f64 {
        self.h
    }

    /// Forget the cached derivative; call after modifying `y` externally.
    pub fn invalidate(&mut self) {
        self.fsal = None;
    }

    /// Take one accepted step from `(t, y)` towards `t_limit`, never passing
    /// it. Steps are retried with smaller `h` until the error norm is at most 1.
    pub fn step<S: OdeSystem<N> + ?Sized>(
        &mut self,
        sys: &S,
        t: &mut f64,
        y: &mut [f64; N],
        t_limit: f64,
    ) -> Result<StepInfo> {
        let remaining = t_limit - *t;
        if remaining == 0.0 {
            return Err(Error::InvalidArgument("step requested at t_limit".into()));
        }
        let dir = remaining.signum();
        let k1 = match self.fsal {
            Some(k) => k,
            None => {
                let mut k = [0.0; N];
                sys.rhs(*t, y, &mut k);
                k
            }
        };
        let mut rejected = 0u32;
        if let Some(hf) = self.opts.fixed_step {
            let h = hf.min(remaining.abs());
            let (y_new, k7, err) = dopri_step(sys, *t, y, &k1, dir * h);
            let e = error_norm(y, &y_new, &err, sys.controlled_dims(), &self.opts);
            *y = y_new;
            *t = if h == remaining.abs() { t_limit } else { *t + dir * h };
            self.fsal = Some(k7);
            self.n_accepted += 1;
            return Ok(StepInfo {
                h_used: h,
                h_next: hf,
                error: e,
                rejected,
            });
        }
        let mut h = self.h.clamp(self.opts.h_min, self.opts.h_max);
        loop {
            let clipped = h >= remaining.abs();
            let h_try = if clipped { remaining.abs() } else { h };
            let (y_new, k7, err) = dopri_step(sys, *t, y, &k1, dir * h_try);
            let e = error_norm(y, &y_new, &err, sys.controlled_dims(), &self.opts);
            if e <= 1.0 {
                let factor = if e == 0.0 {
                    MAX_FACTOR
                } else {
                    (SAFETY * e.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
                };
                // A clipped final step says nothing about the natural step size.
                let base = if clipped { h.max(h_try) } else { h_try };
                let h_next = if rejected > 0 {
                    base.min(base * factor)
                } else {
                    base * factor
                };
                *y = y_new;
                *t = if clipped { t_limit } else { *t + dir * h_try };
                self.h = h_next.clamp(self.opts.h_min, self.opts.h_max);
                self.fsal = Some(k7);
                self.n_accepted += 1;
                return Ok(StepInfo {
                    h_used: h_try,
                    h_next: self.h,
                    error: e,
                    rejected,
                });
            }
            rejected += 1;
            self.n_rejected += 1;
            let factor = if e.is_finite() {
                (SAFETY * e.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
            } else {
                MIN_FACTOR
            };
            let h_new = h_try * factor;
            if h_new < self.opts.h_min {
                return Err(Error::StepUnderflow { t: *t, h: h_new });
            }
            h = h_new;
        }
    }

    /// Integrate from `(t, y)` to exactly `t_end`.
    pub fn integrate<S: OdeSystem<N> + ?Sized>(
        &mut self,
        sys: &S,
        t: &mut f64,
        y: &mut [f64; N],
        t_end: f64,
    ) -> Result<()> {
        while *t != t_end {
            self.step(sys, t, y, t_end)?;
        }
        Ok(())
    }
}

/// Single unchecked step of size `h` (no error control), used to re-integrate
/// inside an accepted step when refining events.
pub fn substep<const N: usize, S: OdeSystem<N> + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64; N],
    h: f64,
) -> [f64; N] {
    if h == 0.0 {
        return *y;
    }
    let mut k1 = [0.0; N];
    sys.rhs(t, y, &mut k1);
    dopri_step(sys, t, y, &k1, h).0
}

/// Rotating-frame flow `ds/dt = V(s)`.
#[derive(Clone, Copy, Debug)]
pub struct Flow {
    pub mass: MassRatio,
}

impl OdeSystem<4> for Flow {
    #[inline]
    fn rhs(&self, _t: f64, y: &[f64; 4], dydt: &mut [f64; 4]) {
        let s = State::from_array(*y);
        let d = potential_derivs(s.x, s.y, self.mass);
        *dydt = vector_field_unchecked(&s, &d).to_array();
    }
}

/// Joint system `ds/dt = V(s)`, `d eta/dt = DV(s) eta` on `[s, eta]`.
#[derive(Clone, Copy, Debug)]
pub struct TangentFlow {
    pub mass: MassRatio,
}

impl OdeSystem<8> for TangentFlow {
    #[inline]
    fn rhs(&self, _t: f64, y: &[f64; 8], dydt: &mut [f64; 8]) {
        let s = State::new(y[0], y[1], y[2], y[3]);
        let eta = TangentVector::new(y[4], y[5], y[6], y[7]);
        let d = potential_derivs(s.x, s.y, self.mass);
        let v = vector_field_unchecked(&s, &d);
        let w = linearised_unchecked(&d, &eta);
        *dydt = [v.dx, v.dy, v.dvx, v.dvy, w.dx, w.dy, w.dvx, w.dvy];
    }

    fn controlled_dims(&self) -> usize {
        4
    }
}

/// A trajectory point together with its evolved tangent vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JointState {
    pub s: State,
    pub eta: TangentVector,
    pub t: f64,
    /// Sum of `ln |eta|` removed by renormalisation.
    pub log_norm_accum: f64,
}

impl JointState {
    pub fn new(s: State, eta: TangentVector) -> Self {
        Self {
            s,
            eta,
            t: 0.0,
            log_norm_accum: 0.0,
        }
    }

    pub fn to_array(&self) -> [f64; 8] {
        let a = self.s.to_array();
        let b = self.eta.to_array();
        [a[0], a[1], a[2], a[3], b[0], b[1], b[2], b[3]]
    }

    pub fn set_array(&mut self, y: &[f64; 8]) {
        self.s = State::new(y[0], y[1], y[2], y[3]);
        self.eta = TangentVector::new(y[4], y[5], y[6], y[7]);
    }

    /// `ln |eta|` including everything removed by renormalisation.
    pub fn log_eta_norm(&self) -> f64 {
        self.log_norm_accum + self.eta.norm().ln()
    }
}

/// Rescale `eta` to unit length once `|eta|` exceeds `threshold`, moving
/// `ln |eta|` into the accumulator. Returns whether a rescale happened.
/// The detector's sign tests are homogeneous in `eta`, so they are unaffected.
pub fn renormalize(js: &mut JointState, threshold: f64) -> bool {
    let n = js.eta.norm();
    if n > threshold {
        js.eta = js.eta * (1.0 / n);
        js.log_norm_accum += n.ln();
        true
    } else {
        false
    }
}

/// Why a trajectory was stopped before its time limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stop {
    Collision,
    Escape,
}

/// Collision/escape test against the option radii.
pub fn check_bounds(s: &State, mass: MassRatio, opts: &IntegratorOptions) -> Option<Stop> {
    if !s.is_finite() {
        return Some(Stop::Collision);
    }
    let (r1, r2) = s.body_distances(mass);
    let hit1 = mass.complement() > 0.0 && r1 < opts.collision_radius;
    let hit2 = mass.mu() > 0.0 && r2 < opts.collision_radius;
    if hit1 || hit2 {
        return Some(Stop::Collision);
    }
    if s.radius() > opts.escape_radius {
        return Some(Stop::Escape);
    }
    None
}

/// Locate a sign change of `g` in `[t0, t1]` by bisection, to a bracket width
/// of `t_tol`. `g` is typically evaluated by re-integrating from the start of
/// an accepted step.
pub fn refine_sign_change<F>(mut g: F, t0: f64, t1: f64, t_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let g0 = g(t0);
    let g1 = g(t1);
    if !(g0 * g1 < 0.0) {
        return Err(Error::InvalidBracket { t0, t1, g0, g1 });
    }
    let (mut lo, mut hi) = (t0, t1);
    let neg_lo = g0 < 0.0;
    for _ in 0..200 {
        if (hi - lo).abs() <= t_tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if (gm < 0.0) == neg_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
