//! The simple pendulum `H = p^2/2 - cos q` with the vertical foliation
//! `xi = (0, 1)`: rotational invariant circles exist exactly for `H > 1`,
//! which makes it an exact oracle for the detector machinery.

use serde::{Deserialize, Serialize};

use crate::detector::{q_measure, Classification, DetectionOutcome};
use crate::error::{Error, Result};
use crate::integrator::{refine_sign_change, substep, Dopri5, IntegratorOptions, OdeSystem};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub q: f64,
    pub p: f64,
}

impl PendulumState {
    /// Angle reduced to `[-pi, pi)`, for display.
    pub fn reduced_angle(&self) -> f64 {
        use std::f64::consts::PI;
        (self.q + PI).rem_euclid(2.0 * PI) - PI
    }
}

pub fn pendulum_energy(q: f64, p: f64) -> f64 {
    0.5 * p * p - q.cos()
}

/// `[q, p, eta_q, eta_p]` with the linearised flow.
struct PendulumFlow;

impl OdeSystem<4> for PendulumFlow {
    #[inline]
    fn rhs(&self, _t: f64, y: &[f64; 4], d: &mut [f64; 4]) {
        d[0] = y[1];
        d[1] = -y[0].sin();
        d[2] = y[3];
        d[3] = -y[0].cos() * y[2];
    }
}

pub fn pendulum_detect(q0: f64, p0: f64, t_out: f64) -> Result<DetectionOutcome> {
    pendulum_detect_with(q0, p0, t_out, &IntegratorOptions::default())
}

/// Evolve `eta` from `(0, 1)`; nonexistence of rotational circles once
/// `g = eta_q = omega(eta, xi)` changes sign with `eta_p < 0` (an upward
/// tangent turned downward). The outcome's `jacobi` field holds `H`.
pub fn pendulum_detect_with(
    q0: f64,
    p0: f64,
    t_out: f64,
    opts: &IntegratorOptions,
) -> Result<DetectionOutcome> {
    if !(q0.is_finite() && p0.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite seed ({q0}, {p0})")));
    }
    if !(t_out > 0.0 && t_out.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_out = {t_out} must be positive")));
    }
    let sys = PendulumFlow;
    let mut solver = Dopri5::<4>::new(*opts);
    let (mut t, mut y) = (0.0, [q0, p0, 0.0, 1.0]);
    let mut armed: Option<bool> = None;
    let mut n_events = 0;
    let mut t_detect = None;
    while t < t_out {
        let (t0, y0) = (t, y);
        solver.step(&sys, &mut t, &mut y, t_out)?;
        let g = y[2];
        let scale = y[2].hypot(y[3]);
        match armed {
            None => {
                if g.abs() > 1e-12 * scale {
                    armed = Some(g > 0.0);
                }
            }
            Some(positive) => {
                if g != 0.0 && (g > 0.0) != positive {
                    armed = Some(g > 0.0);
                    n_events += 1;
                    let ts = refine_sign_change(|tau| substep(&sys, t0, &y0, tau - t0)[2], t0, t, 1e-12)
                        .unwrap_or(t);
                    if substep(&sys, t0, &y0, ts - t0)[3] < 0.0 {
                        t_detect = Some(ts);
                        break;
                    }
                }
            }
        }
    }
    let growth = y[2].hypot(y[3]).ln();
    Ok(DetectionOutcome {
        classification: if t_detect.is_some() {
            Classification::Nonexistence
        } else {
            Classification::Undetermined
        },
        t_detect,
        q: t_detect.map(|td| q_measure(td, t_out)),
        lyapunov: (t > 0.0).then(|| growth / t),
        n_sign_events: n_events,
        jacobi: pendulum_energy(q0, p0),
        t_end: t,
        detail: None,
    })
}

/// Final state of the pendulum flow after time `t`.
pub fn pendulum_flow(q0: f64, p0: f64, t: f64, opts: &IntegratorOptions) -> Result<PendulumState> {
    let mut solver = Dopri5::<4>::new(*opts);
    let (mut tt, mut y) = (0.0, [q0, p0, 0.0, 1.0]);
    solver.integrate(&PendulumFlow, &mut tt, &mut y, t)?;
    Ok(PendulumState { q: y[0], p: y[1] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn energy_examples() {
        assert_eq!(pendulum_energy(0.0, 0.0), -1.0);
        assert_eq!(pendulum_energy(PI, 0.0), 1.0);
        assert_eq!(pendulum_energy(0.0, 2.0), 1.0);
    }

    #[test]
    fn libration_is_detected() {
        let o = pendulum_detect(0.0, 0.5, 50.0).unwrap();
        assert_eq!(o.classification, Classification::Nonexistence);
        assert!(o.t_detect.unwrap() < 50.0);
        assert_eq!(o.jacobi, -0.875);
    }

    #[test]
    fn rotation_is_undetermined() {
        let o = pendulum_detect(0.0, 3.0, 200.0).unwrap();
        assert_eq!(o.classification, Classification::Undetermined);
        assert_eq!(o.t_end, 200.0);
    }

    #[test]
    fn equilibrium_fires_after_half_turn() {
        // linear centre: eta = (sin t, cos t), so eta_q turns negative at pi
        let o = pendulum_detect(0.0, 0.0, 50.0).unwrap();
        let t = o.t_detect.unwrap();
        assert!(t < 2.0 * PI);
        assert!((t - PI).abs() < 1e-9, "{t}");
    }

    #[test]
    fn energy_is_conserved() {
        let h0 = pendulum_energy(0.0, 1.5);
        let s = pendulum_flow(0.0, 1.5, 200.0, &IntegratorOptions::default()).unwrap();
        let drift = (pendulum_energy(s.q, s.p) - h0).abs();
        assert!(drift < 1e-10, "{drift:e}");
    }

    #[test]
    fn reduced_angle_range() {
        let s = PendulumState { q: 7.0, p: 0.0 };
        assert!((s.reduced_angle() - (7.0 - 2.0 * PI)).abs() < 1e-15);
    }
}
