//! Converse-KAM nonexistence tests.
//!
//! A tangent vector `eta` is carried along the trajectory of a seed `s0` and
//! compared with the transverse field `xi` through `g = omega(eta, xi)`.
//!
//! * General formulation: `eta0 = xi(s0)`; nonexistence once `g` changes sign
//!   at a point where `lambda(eta) < 0`.
//! * Symmetric formulation (seeds on a symmetry plane of the reversal): `eta0`
//!   antisymmetric and tangent to the energy level; nonexistence at the first
//!   sign change of `g`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    jacobi_constant, potential_derivs, symplectic_form, vector_field_unchecked, MassRatio,
    State, TangentVector,
};
use crate::error::{Error, Result};
use crate::foliation::{
    is_degenerate, lambda_from, xi_from, DEFAULT_DEGENERACY_TOL, SINGULAR_TOL,
};
use crate::integrator::{
    check_bounds, refine_sign_change, substep, Dopri5, IntegratorOptions, JointState, OdeSystem,
    Stop, TangentFlow,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Formulation {
    General,
    Symmetric,
    Both,
    LyapunovOnly,
}

impl Formulation {
    pub fn name(self) -> &'static str {
        match self {
            Formulation::General => "general",
            Formulation::Symmetric => "symmetric",
            Formulation::Both => "both",
            Formulation::LyapunovOnly => "lyapunov_only",
        }
    }
}

impl fmt::Display for Formulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "general" => Ok(Formulation::General),
            "symmetric" => Ok(Formulation::Symmetric),
            "both" => Ok(Formulation::Both),
            "lyapunov_only" | "lyapunov" => Ok(Formulation::LyapunovOnly),
            other => Err(Error::InvalidArgument(format!("unknown formulation '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Nonexistence,
    Undetermined,
    Collision,
    Escape,
    SingularSeed,
}

impl Classification {
    pub fn name(self) -> &'static str {
        match self {
            Classification::Nonexistence => "nonexistence",
            Classification::Undetermined => "undetermined",
            Classification::Collision => "collision",
            Classification::Escape => "escape",
            Classification::SingularSeed => "singular_seed",
        }
    }
}

impl fmt::Display for Classification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl From<Stop> for Classification {
    fn from(s: Stop) -> Self {
        match s {
            Stop::Collision => Classification::Collision,
            Stop::Escape => Classification::Escape,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub t_out: f64,
    pub formulation: Formulation,
    pub integrator: IntegratorOptions,
    /// Sign tracking starts once `|g| > arming_rel * |eta| |xi|`.
    pub arming_rel: f64,
    /// Time resolution of event refinement.
    pub event_tol: f64,
    /// Relative tolerance for rejecting degenerate seeds.
    pub degeneracy_tol: f64,
    /// Keep integrating after a detection so the Lyapunov estimate covers
    /// the whole horizon.
    pub full_horizon: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            t_out: 40.0,
            formulation: Formulation::General,
            integrator: IntegratorOptions::default(),
            arming_rel: 1e-12,
            event_tol: 1e-10,
            degeneracy_tol: DEFAULT_DEGENERACY_TOL,
            full_horizon: false,
        }
    }
}

impl DetectorConfig {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.t_out > 0.0 && self.t_out.is_finite()) {
            v.push(format!("t_out = {} must be positive", self.t_out));
        }
        if !(self.arming_rel >= 0.0) {
            v.push(format!("arming_rel = {} must be >= 0", self.arming_rel));
        }
        if !(self.event_tol > 0.0) {
            v.push(format!("event_tol = {} must be > 0", self.event_tol));
        }
        if !(self.degeneracy_tol > 0.0) {
            v.push(format!("degeneracy_tol = {} must be > 0", self.degeneracy_tol));
        }
        v.extend(self.integrator.violations().into_iter().map(|e| format!("integrator: {e}")));
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::ConfigInvalid(v))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub classification: Classification,
    pub t_detect: Option<f64>,
    /// `t_detect / t_out` (equivalently `1 - t_r / t_out`).
    pub q: Option<f64>,
    pub lyapunov: Option<f64>,
    pub n_sign_events: u32,
    /// Jacobi constant of the seed.
    pub jacobi: f64,
    /// Time actually integrated.
    pub t_end: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detail: Option<String>,
}

impl DetectionOutcome {
    fn singular(jacobi: f64, detail: String) -> Self {
        Self {
            classification: Classification::SingularSeed,
            t_detect: None,
            q: None,
            lyapunov: None,
            n_sign_events: 0,
            jacobi,
            t_end: 0.0,
            detail: Some(detail),
        }
    }

    pub fn is_nonexistence(&self) -> bool {
        self.classification == Classification::Nonexistence
    }
}

/// `q = 1 - t_r / t_out` with remaining time `t_r = t_out - t_detect`.
pub fn q_measure(t_detect: f64, t_out: f64) -> f64 {
    let t_r = t_out - t_detect;
    (1.0 - t_r / t_out).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    General,
    Symmetric,
    Passive,
}

struct Observation {
    g: f64,
    scale: f64,
    lambda_eta: f64,
}

fn observe(y: &[f64; 8], mass: MassRatio) -> Observation {
    let s = State::new(y[0], y[1], y[2], y[3]);
    let eta = TangentVector::new(y[4], y[5], y[6], y[7]);
    let d = potential_derivs(s.x, s.y, mass);
    let (xi, _, _) = xi_from(&s, &d);
    let (lam, _, _) = lambda_from(&s, &d);
    Observation {
        g: symplectic_form(&eta, &xi),
        scale: eta.norm() * xi.norm(),
        lambda_eta: lam.dot(&eta),
    }
}

fn seed_checks(s0: &State, mass: MassRatio) -> Result<f64> {
    if !s0.is_finite() {
        return Err(Error::InvalidArgument(format!("non-finite seed {s0:?}")));
    }
    jacobi_constant(s0, mass)
}

/// Core loop shared by all formulations.
fn track(
    s0: &State,
    eta0: TangentVector,
    mass: MassRatio,
    cfg: &DetectorConfig,
    mode: Mode,
    jacobi: f64,
) -> DetectionOutcome {
    let opts = cfg.integrator;
    let sys = TangentFlow { mass };
    let mut solver = Dopri5::<8>::new(opts);
    let mut js = JointState::new(*s0, eta0);
    let mut y = js.to_array();
    let mut t = 0.0;
    let log_eta0 = eta0.norm().ln();

    let mut armed: Option<bool> = None;
    let mut n_events = 0u32;
    let mut t_detect: Option<f64> = None;
    let mut stop: Option<Stop> = None;
    let mut detail = None;

    let arm = |o: &Observation| o.g.abs() > cfg.arming_rel * o.scale && o.g.is_finite();
    if mode != Mode::Passive {
        let o = observe(&y, mass);
        if mode == Mode::Symmetric && arm(&o) {
            armed = Some(o.g > 0.0);
        }
    }

    while t < cfg.t_out {
        let (t0, y0) = (t, y);
        if let Err(e) = solver.step(&sys, &mut t, &mut y, cfg.t_out) {
            stop = Some(Stop::Collision);
            detail = Some(e.to_string());
            break;
        }
        if let Some(st) = check_bounds(&State::new(y[0], y[1], y[2], y[3]), mass, &opts) {
            stop = Some(st);
            break;
        }
        if mode != Mode::Passive && t_detect.is_none() {
            let o = observe(&y, mass);
            match armed {
                None => {
                    if arm(&o) {
                        armed = Some(o.g > 0.0);
                    }
                }
                Some(positive) => {
                    if o.g.is_finite() && o.g != 0.0 && (o.g > 0.0) != positive {
                        armed = Some(o.g > 0.0);
                        n_events += 1;
                        let g_at = |tau: f64| observe(&substep(&sys, t0, &y0, tau - t0), mass).g;
                        let ts = refine_sign_change(g_at, t0, t, cfg.event_tol).unwrap_or(t);
                        let fires = match mode {
                            Mode::Symmetric => true,
                            _ => observe(&substep(&sys, t0, &y0, ts - t0), mass).lambda_eta < 0.0,
                        };
                        if fires {
                            t_detect = Some(ts);
                            if !cfg.full_horizon {
                                break;
                            }
                        }
                    }
                }
            }
        }
        js.set_array(&y);
        let n = js.eta.norm();
        if n > opts.renorm_threshold {
            js.eta = js.eta * (1.0 / n);
            js.log_norm_accum += n.ln();
            y = js.to_array();
            solver.invalidate();
        }
    }
    js.set_array(&y);
    js.t = t;

    let lyapunov = if mode == Mode::Symmetric || t <= 0.0 {
        None
    } else {
        Some((js.log_eta_norm() - log_eta0) / t)
    };
    let classification = match (t_detect, stop) {
        (Some(_), _) => Classification::Nonexistence,
        (None, Some(st)) => st.into(),
        (None, None) => Classification::Undetermined,
    };
    DetectionOutcome {
        classification,
        t_detect,
        q: t_detect.map(|td| q_measure(td, cfg.t_out)),
        lyapunov,
        n_sign_events: n_events,
        jacobi,
        t_end: t,
        detail,
    }
}

fn general_with_eta(
    s0: &State,
    eta0: TangentVector,
    mass: MassRatio,
    cfg: &DetectorConfig,
) -> Result<DetectionOutcome> {
    let jacobi = seed_checks(s0, mass)?;
    let deg = is_degenerate(s0, mass, cfg.degeneracy_tol);
    if deg.is_degenerate() {
        return Ok(DetectionOutcome::singular(jacobi, format!("{deg:?}")));
    }
    Ok(track(s0, eta0, mass, cfg, Mode::General, jacobi))
}

/// General formulation with `eta0 = xi(s0)`.
pub fn run_general(s0: &State, mass: MassRatio, cfg: &DetectorConfig) -> Result<DetectionOutcome> {
    let d = potential_derivs(s0.x, s0.y, mass);
    let (xi0, _, _) = xi_from(s0, &d);
    general_with_eta(s0, xi0, mass, cfg)
}

/// General formulation with a caller-supplied positive multiple of `xi(s0)`
/// (or any other initial tangent).
pub fn run_general_from(
    s0: &State,
    eta0: TangentVector,
    mass: MassRatio,
    cfg: &DetectorConfig,
) -> Result<DetectionOutcome> {
    general_with_eta(s0, eta0, mass, cfg)
}

fn check_plane(s0: &State) -> Result<()> {
    let scale = s0.x.abs().max(s0.vy.abs()).max(1.0);
    if s0.y.abs() > 1e-12 * scale || s0.vx.abs() > 1e-12 * scale {
        return Err(Error::NotOnSymmetryPlane { y: s0.y, vx: s0.vx });
    }
    Ok(())
}

/// Unit antisymmetric tangent `(0, a, b, 0)` orthogonal to `V(s0)`.
pub fn initial_eta_symmetric(s0: &State, mass: MassRatio) -> Result<TangentVector> {
    check_plane(s0)?;
    let d = potential_derivs(s0.x, s0.y, mass);
    if !d.u.is_finite() {
        return Err(Error::AtBody { x: s0.x, y: s0.y });
    }
    let v = vector_field_unchecked(s0, &d);
    let n = v.norm();
    if !(n > SINGULAR_TOL) {
        return Err(Error::Singular {
            what: "symmetric eta",
            detail: format!("|V| = {n:e} (equilibrium)"),
        });
    }
    let (a, b) = (-v.dvx, v.dy);
    let m = a.hypot(b);
    Ok(TangentVector::new(0.0, a / m, b / m, 0.0))
}

/// Symmetric formulation for a seed on a symmetry plane.
pub fn run_symmetric(s0: &State, mass: MassRatio, cfg: &DetectorConfig) -> Result<DetectionOutcome> {
    let jacobi = seed_checks(s0, mass)?;
    let eta0 = match initial_eta_symmetric(s0, mass) {
        Ok(e) => e,
        Err(Error::Singular { detail, .. }) => return Ok(DetectionOutcome::singular(jacobi, detail)),
        Err(e) => return Err(e),
    };
    Ok(track(s0, eta0, mass, cfg, Mode::Symmetric, jacobi))
}

/// Symmetric formulation with an explicit initial tangent.
pub fn run_symmetric_from(
    s0: &State,
    eta0: TangentVector,
    mass: MassRatio,
    cfg: &DetectorConfig,
) -> Result<DetectionOutcome> {
    let jacobi = seed_checks(s0, mass)?;
    check_plane(s0)?;
    Ok(track(s0, eta0, mass, cfg, Mode::Symmetric, jacobi))
}

/// Result of [`lyapunov_estimate`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LyapunovEstimate {
    pub value: f64,
    /// Horizon reached (shorter than `t_out` on collision or escape).
    pub t_end: f64,
    pub stop: Option<Stop>,
}

/// `Lambda = (1/t) ln(|eta(t)| / |eta(0)|)` with `eta0 = xi(s0)`.
pub fn lyapunov_estimate(s0: &State, mass: MassRatio, cfg: &DetectorConfig) -> Result<LyapunovEstimate> {
    let d = potential_derivs(s0.x, s0.y, mass);
    let (xi0, _, _) = xi_from(s0, &d);
    lyapunov_estimate_from(s0, xi0, mass, cfg)
}

pub fn lyapunov_estimate_from(
    s0: &State,
    eta0: TangentVector,
    mass: MassRatio,
    cfg: &DetectorConfig,
) -> Result<LyapunovEstimate> {
    let jacobi = seed_checks(s0, mass)?;
    if !(eta0.norm() > 0.0) {
        return Err(Error::Singular {
            what: "lyapunov",
            detail: "initial tangent vanishes".into(),
        });
    }
    let out = track(s0, eta0, mass, cfg, Mode::Passive, jacobi);
    let stop = match out.classification {
        Classification::Collision => Some(Stop::Collision),
        Classification::Escape => Some(Stop::Escape),
        _ => None,
    };
    match out.lyapunov {
        Some(value) => Ok(LyapunovEstimate {
            value,
            t_end: out.t_end,
            stop,
        }),
        None => Err(Error::NoConvergence("no integration time for the Lyapunov estimate".into())),
    }
}

/// Earliest detection of the two formulations; otherwise the general result
/// unless its seed was singular.
pub fn merge_outcomes(general: DetectionOutcome, symmetric: DetectionOutcome) -> DetectionOutcome {
    let lyapunov = general.lyapunov;
    let events = general.n_sign_events + symmetric.n_sign_events;
    let mut out = match (general.t_detect, symmetric.t_detect) {
        (Some(a), Some(b)) => {
            if b < a {
                symmetric
            } else {
                general
            }
        }
        (Some(_), None) => general,
        (None, Some(_)) => symmetric,
        (None, None) => {
            if general.classification == Classification::SingularSeed {
                symmetric
            } else {
                general
            }
        }
    };
    out.lyapunov = lyapunov.or(out.lyapunov);
    out.n_sign_events = events;
    out
}

/// Run the configured formulation on `s0`.
pub fn detect(s0: &State, mass: MassRatio, cfg: &DetectorConfig) -> Result<DetectionOutcome> {
    match cfg.formulation {
        Formulation::General => run_general(s0, mass, cfg),
        Formulation::Symmetric => run_symmetric(s0, mass, cfg),
        Formulation::Both => {
            let g = run_general(s0, mass, cfg)?;
            let s = run_symmetric(s0, mass, cfg)?;
            Ok(merge_outcomes(g, s))
        }
        Formulation::LyapunovOnly => {
            let jacobi = seed_checks(s0, mass)?;
            let d = potential_derivs(s0.x, s0.y, mass);
            let (xi0, _, gh) = xi_from(s0, &d);
            if !(gh > SINGULAR_TOL) || !(xi0.norm() > 0.0) {
                return Ok(DetectionOutcome::singular(jacobi, "xi vanishes".into()));
            }
            Ok(track(s0, xi0, mass, cfg, Mode::Passive, jacobi))
        }
    }
}

/// Evolve `(s, eta)` for time `t` (either sign) without any event logic.
pub fn evolve_tangent(
    s0: &State,
    eta0: TangentVector,
    mass: MassRatio,
    t: f64,
    opts: &IntegratorOptions,
) -> Result<JointState> {
    let sys = TangentFlow { mass };
    let mut solver = Dopri5::<8>::new(*opts);
    let mut js = JointState::new(*s0, eta0);
    let mut y = js.to_array();
    let mut tt = 0.0;
    if t != 0.0 {
        solver.integrate(&sys, &mut tt, &mut y, t)?;
    }
    js.set_array(&y);
    js.t = tt;
    debug_assert_eq!(sys.controlled_dims(), 4);
    Ok(js)
}
