//! The surface of section `{p_r = 0, dp_r/dt <= 0}` (local maxima of `r`)
//! and its return map.

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    angular_momentum, potential_derivs, radial_momentum, vector_field_unchecked, MassRatio,
    PolarState, State,
};
use crate::error::{Error, Result};
use crate::foliation::{singularity_f, Plane};
use crate::integrator::{
    check_bounds, refine_sign_change, substep, Dopri5, Flow, IntegratorOptions, Stop,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionCrossing {
    pub t: f64,
    pub s: State,
    pub polar: PolarState,
    pub dp_r_dt: f64,
    /// `|dp_r/dt|` below the tangency tolerance; excluded from plots.
    pub tangency: bool,
}

impl SectionCrossing {
    pub fn r(&self) -> f64 {
        self.polar.r
    }

    pub fn angular_momentum(&self) -> f64 {
        angular_momentum(&self.s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SectionConfig {
    /// Integration time limit.
    pub t_max: f64,
    pub integrator: IntegratorOptions,
    pub tangency_tol: f64,
    pub event_tol: f64,
}

impl Default for SectionConfig {
    fn default() -> Self {
        Self {
            t_max: 1000.0,
            integrator: IntegratorOptions::default(),
            tangency_tol: 1e-10,
            event_tol: 1e-13,
        }
    }
}

impl SectionConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            v.push(format!("t_max = {} must be positive", self.t_max));
        }
        if !(self.tangency_tol >= 0.0) {
            v.push(format!("tangency_tol = {} must be >= 0", self.tangency_tol));
        }
        if !(self.event_tol > 0.0) {
            v.push(format!("event_tol = {} must be > 0", self.event_tol));
        }
        v.extend(self.integrator.violations().into_iter().map(|e| format!("integrator: {e}")));
        v
    }
}

/// Why the return-map integration ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionEnd {
    Complete,
    Timeout,
    Collision,
    Escape,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReturnMap {
    pub crossings: Vec<SectionCrossing>,
    pub end: SectionEnd,
    pub t_end: f64,
}

/// `dp_r/dt` along the flow.
pub fn radial_momentum_rate(s: &State, mass: MassRatio) -> f64 {
    let d = potential_derivs(s.x, s.y, mass);
    let v = vector_field_unchecked(s, &d);
    let r2 = s.x * s.x + s.y * s.y;
    let r = r2.sqrt();
    let n = s.x * s.vx + s.y * s.vy;
    let n_dot = s.vx * s.vx + s.vy * s.vy + s.x * v.dvx + s.y * v.dvy;
    n_dot / r - n * n / (r2 * r)
}

fn pr(y: &[f64; 4]) -> f64 {
    radial_momentum(&State::from_array(*y))
}

/// Successive crossings of the section by the orbit of `s0`, stopping after
/// `n_returns` crossings, at `cfg.t_max`, or on collision/escape. A crossing
/// at `t = 0` (a seed already on the section) is not counted.
pub fn return_map(s0: &State, mass: MassRatio, n_returns: usize, cfg: &SectionConfig) -> Result<ReturnMap> {
    if n_returns == 0 {
        return Err(Error::InvalidArgument("n_returns must be >= 1".into()));
    }
    let v = cfg.violations();
    if !v.is_empty() {
        return Err(Error::ConfigInvalid(v));
    }
    crate::dynamics::hamiltonian(s0, mass)?;
    let sys = Flow { mass };
    let mut solver = Dopri5::<4>::new(cfg.integrator);
    let (mut t, mut y) = (0.0, s0.to_array());
    let mut crossings = Vec::new();
    let mut end = SectionEnd::Timeout;
    while t < cfg.t_max {
        let (t0, y0) = (t, y);
        if solver.step(&sys, &mut t, &mut y, cfg.t_max).is_err() {
            end = SectionEnd::Collision;
            break;
        }
        if let Some(stop) = check_bounds(&State::from_array(y), mass, &cfg.integrator) {
            end = match stop {
                Stop::Collision => SectionEnd::Collision,
                Stop::Escape => SectionEnd::Escape,
            };
            break;
        }
        let (p0, p1) = (pr(&y0), pr(&y));
        if p0 > 0.0 && p1 <= 0.0 {
            let ts = if p1 == 0.0 {
                t
            } else {
                refine_sign_change(|tau| pr(&substep(&sys, t0, &y0, tau - t0)), t0, t, cfg.event_tol)?
            };
            let s = State::from_array(substep(&sys, t0, &y0, ts - t0));
            let rate = radial_momentum_rate(&s, mass);
            crossings.push(SectionCrossing {
                t: ts,
                s,
                polar: s.polar()?,
                dp_r_dt: rate,
                tangency: rate.abs() < cfg.tangency_tol,
            });
            if crossings.len() >= n_returns {
                end = SectionEnd::Complete;
                break;
            }
        }
    }
    if crossings.is_empty() {
        return Err(Error::NoReturn {
            t_end: t,
            reason: format!("{end:?}").to_lowercase(),
        });
    }
    Ok(ReturnMap {
        crossings,
        end,
        t_end: t,
    })
}

/// Whether the plane seed `(r, L)` lies in the section, i.e. `f >= 0`.
pub fn sigma_boundary_on_plane(r: f64, l: f64, mass: MassRatio, plane: Plane) -> bool {
    singularity_f(r, l, mass, plane).is_ok_and(|f| f >= 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::jacobi_constant;
    use crate::unperturbed::elements_from_state;
    use approx::assert_relative_eq;

    fn m(mu: f64) -> MassRatio {
        MassRatio::new(mu).unwrap()
    }

    #[test]
    fn kepler_ellipse_returns_at_apocentre() {
        let (a, e) = (1.2f64, 0.3);
        let ra = a * (1.0 + e);
        let l = (a * (1.0 - e * e)).sqrt();
        let s0 = State::new(ra, 0.0, 0.0, l / ra - ra);
        let map = return_map(&s0, m(0.0), 5, &SectionConfig::default()).unwrap();
        assert_eq!(map.end, SectionEnd::Complete);
        assert_eq!(map.crossings.len(), 5);
        for c in &map.crossings {
            assert_relative_eq!(c.r(), ra, max_relative = 1e-10);
            assert_relative_eq!(c.angular_momentum(), l, max_relative = 1e-10);
            assert!(c.dp_r_dt < 0.0 && !c.tangency);
        }
    }

    #[test]
    fn crossing_radius_matches_elements() {
        let s0 = State::new(0.7, 0.0, 0.3, 0.4);
        let el = elements_from_state(&s0).unwrap();
        let map = return_map(&s0, m(0.0), 3, &SectionConfig::default()).unwrap();
        for c in &map.crossings {
            assert!((c.r() - el.r_max).abs() < 1e-8);
        }
    }

    #[test]
    fn crossings_are_on_section_with_constant_jacobi() {
        let mass = m(0.1);
        let s0 = State::new(1.6, 0.0, 0.0, 0.5 / 1.6 - 1.6);
        let c0 = jacobi_constant(&s0, mass).unwrap();
        let cfg = SectionConfig {
            t_max: 200.0,
            ..Default::default()
        };
        let map = return_map(&s0, mass, 20, &cfg).unwrap();
        assert!(!map.crossings.is_empty());
        for c in &map.crossings {
            assert!(radial_momentum(&c.s).abs() < 1e-9);
            assert!(c.dp_r_dt <= 0.0);
            let cj = jacobi_constant(&c.s, mass).unwrap();
            assert!(((cj - c0) / c0).abs() < 1e-9);
        }
    }

    #[test]
    fn hyperbolic_outgoing_seed_never_returns() {
        let cfg = SectionConfig {
            integrator: IntegratorOptions {
                escape_radius: 50.0,
                ..Default::default()
            },
            ..Default::default()
        };
        // K > 0 with p_r > 0
        let s0 = State::new(2.0, 0.0, 1.5, -1.0);
        assert!(crate::dynamics::kepler_energy(&s0, m(0.0)).unwrap() > 0.0);
        let r = return_map(&s0, m(0.0), 1, &cfg);
        assert!(matches!(r, Err(Error::NoReturn { .. })), "{r:?}");
    }

    #[test]
    fn rate_matches_finite_difference() {
        let mass = m(0.1);
        let s = State::new(1.3, 0.4, -0.2, 0.5);
        let h = 1e-6;
        let fwd = substep(&Flow { mass }, 0.0, &s.to_array(), h);
        let bwd = substep(&Flow { mass }, 0.0, &s.to_array(), -h);
        let fd = (pr(&fwd) - pr(&bwd)) / (2.0 * h);
        assert_relative_eq!(radial_momentum_rate(&s, mass), fd, max_relative = 1e-7);
    }

    #[test]
    fn sigma_on_plane_examples() {
        for (r, l) in [(1.0, 0.5), (0.5, 1.0), (2.0, -1.2), (1.5, 1.3)] {
            assert_eq!(sigma_boundary_on_plane(r, l, m(0.0), Plane::Zero), r >= l * l);
        }
        assert!(sigma_boundary_on_plane(2.0, 0.0, m(0.1), Plane::Zero));
    }
}
