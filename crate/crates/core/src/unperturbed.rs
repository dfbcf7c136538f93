//! Structure of the integrable case `mu = 0`: Kepler invariants, the torus
//! region in `(L, C)`, osculating elements and the overlay curves drawn on the
//! symmetry planes.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{angular_momentum, kepler_energy, MassRatio, State};
use crate::error::{Error, Result};

/// Whether `(L, C)` labels an invariant two-torus of the unperturbed problem,
/// i.e. `2L < C < 2L + 1/L^2`.
pub fn torus_region_contains(l: f64, c: f64) -> bool {
    l != 0.0 && 2.0 * l < c && c < 2.0 * l + 1.0 / (l * l)
}

/// `p_r^2 + L^2/r^2 - 2L - 2/r + C`, which vanishes on the unperturbed
/// invariant set with Jacobi constant `C`.
pub fn radial_invariant_residual(r: f64, pr: f64, l: f64, c: f64) -> f64 {
    pr * pr + l * l / (r * r) - 2.0 * l - 2.0 / r + c
}

/// Osculating Kepler ellipse about the origin.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KeplerElements {
    pub semi_major_axis: f64,
    pub eccentricity: f64,
    /// +1 for direct, -1 for retrograde motion.
    pub direction: f64,
    /// First Delaunay variable `N = sigma sqrt(a)`.
    pub delaunay_n: f64,
    /// Winding ratio `w = -N^3` of pericentre turns to mean-anomaly turns.
    pub winding: f64,
    pub r_min: f64,
    pub r_max: f64,
}

/// Elements from the Kepler invariants `(K, L)`.
pub fn elements_from_invariants(k: f64, l: f64) -> Result<KeplerElements> {
    if !(k < 0.0) {
        return Err(Error::Unbound(k));
    }
    if l == 0.0 {
        return Err(Error::Degenerate("L = 0 (radial orbit)".into()));
    }
    let a = -1.0 / (2.0 * k);
    let ratio = l * l / a;
    if ratio > 1.0 + 1e-12 {
        return Err(Error::Degenerate(format!("L^2 / a = {ratio} exceeds 1")));
    }
    let e = (1.0 - ratio).max(0.0).sqrt();
    let direction = l.signum();
    let n = direction * a.sqrt();
    Ok(KeplerElements {
        semi_major_axis: a,
        eccentricity: e,
        direction,
        delaunay_n: n,
        winding: -n * n * n,
        r_min: a * (1.0 - e),
        r_max: a * (1.0 + e),
    })
}

/// Elements of the state's osculating ellipse in the unperturbed problem.
pub fn elements_from_state(s: &State) -> Result<KeplerElements> {
    let k = kepler_energy(s, MassRatio::new(0.0)?)?;
    elements_from_invariants(k, angular_momentum(s))
}

/// Positive rational winding ratio, kept as an integer pair for exact labels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::InvalidArgument(format!(
                "winding ratio {num}/{den} must be positive"
            )));
        }
        Ok(Self { num, den })
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("cannot parse winding ratio {s:?}"));
        let (n, d) = match s.trim().split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        Ratio::new(n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?)
    }
}

impl TryFrom<String> for Ratio {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Ratio> for String {
    fn from(r: Ratio) -> String {
        r.to_string()
    }
}

/// Labelled polyline in the `(r, L)` plane.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub points: Vec<[f64; 2]>,
}

impl Curve {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Unperturbed resonance with winding ratio `|w|`: the ellipse
/// `(r/a - 1)^2 + L^2/a = 1` with `a = |w|^(2/3)`, restricted to
/// `r_range`. The upper branch is traced with increasing `r`, then the lower
/// branch back, so an unclipped ellipse comes out as a closed loop.
/// Returns an empty curve when the ellipse misses the range.
pub fn resonance_curve(w: Ratio, r_range: (f64, f64), n_samples: usize) -> Curve {
    let a = w.value().powf(2.0 / 3.0);
    let label = format!("resonance {w}");
    let lo = r_range.0.max(0.0);
    let hi = r_range.1.min(2.0 * a);
    if !(lo < hi) || n_samples < 2 {
        return Curve {
            label,
            points: Vec::new(),
        };
    }
    // Sample uniformly in the eccentric-like angle so the turning points at
    // r = 0 and r = 2a are resolved.
    let phi_of = |r: f64| (1.0 - r / a).clamp(-1.0, 1.0).acos();
    let (p0, p1) = (phi_of(lo), phi_of(hi));
    let upper: Vec<[f64; 2]> = (0..n_samples)
        .map(|i| {
            let phi = p0 + (p1 - p0) * i as f64 / (n_samples - 1) as f64;
            let r = a * (1.0 - phi.cos());
            [r, a.sqrt() * phi.sin()]
        })
        .collect();
    let mut points = upper.clone();
    points.extend(upper.iter().rev().map(|&[r, l]| [r, -l]));
    points.dedup();
    Curve { label, points }
}

/// `L^2 = 2r/(r + 1)`: for `r > 1` and smaller `L^2` the unperturbed orbit
/// started at apocentre `r` crosses the secondary's orbit.
pub fn crossing_boundary(r: f64) -> f64 {
    2.0 * r / (r + 1.0)
}

/// `L^2 = 2r`: the parabolic boundary `K = 0` at `p_r = 0`.
pub fn escape_boundary(r: f64) -> f64 {
    2.0 * r
}

fn sample_branches(
    label: &str,
    l_squared: impl Fn(f64) -> f64,
    r_range: (f64, f64),
    n: usize,
) -> Vec<Curve> {
    let n = n.max(2);
    let rs: Vec<f64> = (0..n)
        .map(|i| r_range.0 + (r_range.1 - r_range.0) * i as f64 / (n - 1) as f64)
        .collect();
    [1.0, -1.0]
        .iter()
        .map(|&sign| Curve {
            label: format!("{label} {}", if sign > 0.0 { "+" } else { "-" }),
            points: rs.iter().map(|&r| [r, sign * l_squared(r).sqrt()]).collect(),
        })
        .collect()
}

/// Both branches `L = +/- sqrt(2r/(r+1))`.
pub fn crossing_boundary_curves(r_range: (f64, f64), n: usize) -> Vec<Curve> {
    sample_branches("crossing", crossing_boundary, r_range, n)
}

/// Both branches `L = +/- sqrt(2r)`.
pub fn escape_boundary_curves(r_range: (f64, f64), n: usize) -> Vec<Curve> {
    sample_branches("escape", escape_boundary, r_range, n)
}

/// Plotting coordinates `(r/(r + m), L/sqrt(r))`. Circular orbits map to
/// `|L_bar| = 1` and the escape boundary to `|L_bar| = sqrt(2)`.
pub fn bar_coords(r: f64, l: f64, m: f64) -> (f64, f64) {
    (r / (r + m), l / r.sqrt())
}
