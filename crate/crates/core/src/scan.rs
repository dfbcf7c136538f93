//! Grid scans of seeds on the symmetry planes.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{
    detect, merge_outcomes, run_general, run_symmetric, Classification, DetectionOutcome,
    DetectorConfig, Formulation,
};
use crate::dynamics::{jacobi_constant, MassRatio, State};
use crate::error::{Error, Result};
use crate::foliation::{singularity_f, Plane};
use crate::unperturbed::{
    crossing_boundary_curves, escape_boundary_curves, resonance_curve, Curve, Ratio,
};

/// Seed on a symmetry plane with `p_r = 0` and angular momentum `l`.
pub fn plane_point(plane: Plane, r: f64, l: f64, mass: MassRatio) -> Result<State> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("r = {r} must be positive")));
    }
    let s = match plane {
        Plane::Zero => State::new(r, 0.0, 0.0, l / r - r),
        Plane::Pi => State::new(-r, 0.0, 0.0, -l / r + r),
    };
    let (r1, r2) = s.body_distances(mass);
    if (mass.complement() > 0.0 && r1 == 0.0) || (mass.mu() > 0.0 && r2 == 0.0) {
        return Err(Error::AtBody { x: s.x, y: s.y });
    }
    Ok(s)
}

/// Cell-centred uniform grid of `(r, L)` seeds on one plane.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSeedSpec {
    pub plane: Plane,
    pub r_range: [f64; 2],
    pub l_range: [f64; 2],
    pub n_r: usize,
    pub n_l: usize,
    pub mu: MassRatio,
}

impl PlaneSeedSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let [r0, r1] = self.r_range;
        if !(0.0 < r0 && r0 < r1 && r1.is_finite()) {
            v.push(format!("r_range {:?} must satisfy 0 < lo < hi", self.r_range));
        }
        let [l0, l1] = self.l_range;
        if !(l0 < l1 && l0.is_finite() && l1.is_finite()) {
            v.push(format!("l_range {:?} must satisfy lo < hi", self.l_range));
        }
        if self.n_r < 2 || self.n_l < 2 {
            v.push(format!("grid counts ({}, {}) must be >= 2", self.n_r, self.n_l));
        }
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

    pub fn len(&self) -> usize {
        self.n_r * self.n_l
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn r_at(&self, i: usize) -> f64 {
        let [a, b] = self.r_range;
        a + (i as f64 + 0.5) * (b - a) / self.n_r as f64
    }

    pub fn l_at(&self, j: usize) -> f64 {
        let [a, b] = self.l_range;
        a + (j as f64 + 0.5) * (b - a) / self.n_l as f64
    }

    /// Row-major index with `i` over `r` and `j` over `L`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.n_l + j
    }

    pub fn coords(&self, k: usize) -> (usize, usize) {
        (k / self.n_l, k % self.n_l)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSettings {
    pub detector: DetectorConfig,
    /// Seeds closer than this to a body, or (general formulation) to the
    /// `f = 0` curve, are classified as singular without integrating.
    pub exclusion: f64,
    /// Worker threads; `None` uses the global rayon pool.
    pub workers: Option<usize>,
}

impl Default for ScanSettings {
    fn default() -> Self {
        Self {
            detector: DetectorConfig::default(),
            exclusion: 1e-3,
            workers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanMetadata {
    pub version: String,
    pub t_out: f64,
    pub formulation: Formulation,
    pub runtime_s: f64,
    pub workers: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub spec: PlaneSeedSpec,
    /// Row-major outcomes, see [`PlaneSeedSpec::index`].
    pub cells: Vec<DetectionOutcome>,
    pub overlays: Vec<Curve>,
    pub metadata: ScanMetadata,
}

impl ScanResult {
    pub fn get(&self, i: usize, j: usize) -> &DetectionOutcome {
        &self.cells[self.spec.index(i, j)]
    }

    pub fn count(&self, c: Classification) -> usize {
        self.cells.iter().filter(|o| o.classification == c).count()
    }

    pub fn classifications(&self) -> Vec<Classification> {
        self.cells.iter().map(|o| o.classification).collect()
    }

    /// `(i, j, r, L, outcome)` for every cell.
    pub fn iter_cells(&self) -> impl Iterator<Item = (usize, usize, f64, f64, &DetectionOutcome)> {
        self.cells.iter().enumerate().map(move |(k, o)| {
            let (i, j) = self.spec.coords(k);
            (i, j, self.spec.r_at(i), self.spec.l_at(j), o)
        })
    }
}

fn near_body(s: &State, mass: MassRatio, eps: f64) -> bool {
    let (r1, r2) = s.body_distances(mass);
    (mass.complement() > 0.0 && r1 < eps) || (mass.mu() > 0.0 && r2 < eps)
}

/// Whether the `f = 0` curve passes within `eps` of `(r, l)` along either
/// coordinate direction.
pub fn near_singular_curve(r: f64, l: f64, mass: MassRatio, plane: Plane, eps: f64) -> bool {
    let f = |r: f64, l: f64| singularity_f(r, l, mass, plane).ok();
    let Some(f0) = f(r, l) else { return true };
    if f0 == 0.0 {
        return true;
    }
    let probes = [(r + eps, l), (r - eps, l), (r, l + eps), (r, l - eps)];
    probes.iter().any(|&(rr, ll)| {
        if rr <= 0.0 {
            return false;
        }
        match f(rr, ll) {
            Some(v) => v * f0 <= 0.0,
            None => true,
        }
    })
}

fn singular_outcome(s: &State, mass: MassRatio, detail: &str) -> DetectionOutcome {
    DetectionOutcome {
        classification: Classification::SingularSeed,
        t_detect: None,
        q: None,
        lyapunov: None,
        n_sign_events: 0,
        jacobi: jacobi_constant(s, mass).unwrap_or(f64::NAN),
        t_end: 0.0,
        detail: Some(detail.to_string()),
    }
}

fn error_outcome(s: &State, mass: MassRatio, e: Error) -> DetectionOutcome {
    let mut o = singular_outcome(s, mass, "");
    o.detail = Some(e.to_string());
    o
}

/// Outcome of one grid cell, including the pre-integration exclusions.
pub fn classify_cell(spec: &PlaneSeedSpec, i: usize, j: usize, settings: &ScanSettings) -> DetectionOutcome {
    let (r, l) = (spec.r_at(i), spec.l_at(j));
    let mass = spec.mu;
    let s = match plane_point(spec.plane, r, l, mass) {
        Ok(s) => s,
        Err(e) => return error_outcome(&State::new(r, 0.0, 0.0, 0.0), mass, e),
    };
    if near_body(&s, mass, settings.exclusion) {
        return singular_outcome(&s, mass, "near body");
    }
    let cfg = &settings.detector;
    let general_excluded =
        || near_singular_curve(r, l, mass, spec.plane, settings.exclusion);
    let result = match cfg.formulation {
        Formulation::General | Formulation::LyapunovOnly => {
            if general_excluded() {
                return singular_outcome(&s, mass, "near f = 0");
            }
            detect(&s, mass, cfg)
        }
        Formulation::Symmetric => run_symmetric(&s, mass, cfg),
        Formulation::Both => {
            let g = if general_excluded() {
                Ok(singular_outcome(&s, mass, "near f = 0"))
            } else {
                run_general(&s, mass, cfg)
            };
            g.and_then(|g| run_symmetric(&s, mass, cfg).map(|sy| merge_outcomes(g, sy)))
        }
    };
    result.unwrap_or_else(|e| error_outcome(&s, mass, e))
}

/// Run the detector over every cell of `spec`. Cell errors are recorded in
/// the cell; the result does not depend on the number of workers.
pub fn run_scan(spec: &PlaneSeedSpec, settings: &ScanSettings) -> Result<ScanResult> {
    spec.validate()?;
    settings.detector.validate()?;
    let start = Instant::now();
    let n = spec.len();
    let work = || -> Vec<DetectionOutcome> {
        (0..n)
            .into_par_iter()
            .map(|k| {
                let (i, j) = spec.coords(k);
                classify_cell(spec, i, j, settings)
            })
            .collect()
    };
    let (cells, workers) = match settings.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
            (pool.install(work), w.max(1))
        }
        None => (work(), rayon::current_num_threads()),
    };
    log::info!(
        "scan {}x{} on {} finished in {:.1}s",
        spec.n_r,
        spec.n_l,
        spec.plane.name(),
        start.elapsed().as_secs_f64()
    );
    Ok(ScanResult {
        spec: *spec,
        cells,
        overlays: Vec::new(),
        metadata: ScanMetadata {
            version: env!("CARGO_PKG_VERSION").to_string(),
            t_out: settings.detector.t_out,
            formulation: settings.detector.formulation,
            runtime_s: start.elapsed().as_secs_f64(),
            workers,
            config_hash: None,
        },
    })
}

/// Branches `L = +/- sqrt(r^3 f(r, 0))` of the `f = 0` curve, split where
/// the curve leaves the plotted `L` range or ceases to exist.
pub fn singularity_curves(spec: &PlaneSeedSpec, n: usize) -> Vec<Curve> {
    let n = n.max(2);
    let [r0, r1] = spec.r_range;
    let [l0, l1] = spec.l_range;
    let mut out = Vec::new();
    for (sign, suffix) in [(1.0, "+"), (-1.0, "-")] {
        let label = format!("singularity {suffix}");
        let mut current: Vec<[f64; 2]> = Vec::new();
        for k in 0..n {
            let r = r0 + (r1 - r0) * k as f64 / (n - 1) as f64;
            let point = singularity_f(r, 0.0, spec.mu, spec.plane)
                .ok()
                .filter(|f0| *f0 >= 0.0)
                .map(|f0| [r, sign * (r * r * r * f0).sqrt()])
                .filter(|p| p[1] >= l0 && p[1] <= l1);
            match point {
                Some(p) => current.push(p),
                None => {
                    if current.len() > 1 {
                        out.push(Curve {
                            label: label.clone(),
                            points: std::mem::take(&mut current),
                        });
                    }
                    current.clear();
                }
            }
        }
        if current.len() > 1 {
            out.push(Curve {
                label,
                points: current,
            });
        }
    }
    out
}

/// Overlay curves for a scan: resonances for each ratio, the crossing and
/// escape boundaries and the `f = 0` contour of the plane.
pub fn assemble_overlays(spec: &PlaneSeedSpec, winding_ratios: &[Ratio]) -> Vec<Curve> {
    const N: usize = 400;
    let rr = (spec.r_range[0], spec.r_range[1]);
    let mut out: Vec<Curve> = winding_ratios
        .iter()
        .map(|&w| resonance_curve(w, rr, N))
        .collect();
    out.extend(crossing_boundary_curves(rr, N));
    out.extend(escape_boundary_curves(rr, N));
    out.extend(singularity_curves(spec, N));
    out
}

/// Heatmap value of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum QCell {
    Value(f64),
    Undetermined,
    Singular,
    Collision,
    Escape,
}

impl QCell {
    pub fn value(self) -> Option<f64> {
        match self {
            QCell::Value(q) => Some(q),
            _ => None,
        }
    }
}

/// `q` per nonexistence cell, sentinels elsewhere; indexed `[i][j]`.
pub fn q_heatmap(result: &ScanResult) -> Vec<Vec<QCell>> {
    let spec = &result.spec;
    (0..spec.n_r)
        .map(|i| {
            (0..spec.n_l)
                .map(|j| {
                    let o = result.get(i, j);
                    match o.classification {
                        Classification::Nonexistence => QCell::Value(o.q.unwrap_or(f64::NAN)),
                        Classification::Undetermined => QCell::Undetermined,
                        Classification::SingularSeed => QCell::Singular,
                        Classification::Collision => QCell::Collision,
                        Classification::Escape => QCell::Escape,
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{angular_momentum, radial_momentum, reversal};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn m(mu: f64) -> MassRatio {
        MassRatio::new(mu).unwrap()
    }

    fn spec(mu: f64, plane: Plane, n: usize) -> PlaneSeedSpec {
        PlaneSeedSpec {
            plane,
            r_range: [0.1, 4.0],
            l_range: [-2.5, 2.5],
            n_r: n,
            n_l: n,
            mu: m(mu),
        }
    }

    #[test]
    fn plane_point_examples() {
        for mu in [0.0, 0.1, 0.5] {
            assert_eq!(plane_point(Plane::Zero, 1.0, 1.0, m(mu)).unwrap(), State::new(1.0, 0.0, 0.0, 0.0));
        }
        let s = plane_point(Plane::Pi, 1.0, 1.0, m(0.1)).unwrap();
        assert_eq!(s, State::new(-1.0, 0.0, 0.0, 0.0));
        assert_eq!(reversal(&s), s);
        assert!(matches!(
            plane_point(Plane::Zero, 0.9, 0.3, m(0.1)),
            Err(Error::AtBody { .. })
        ));
    }

    proptest! {
        #[test]
        fn plane_point_has_requested_momentum(r in 0.05f64..5.0, l in -3.0f64..3.0, pi in any::<bool>()) {
            let plane = if pi { Plane::Pi } else { Plane::Zero };
            let s = plane_point(plane, r, l, m(0.1)).unwrap();
            prop_assert!((angular_momentum(&s) - l).abs() <= 1e-12 * (1.0 + l.abs() + r * r));
            prop_assert_eq!(s.y, 0.0);
            prop_assert_eq!(s.vx, 0.0);
            prop_assert_eq!(radial_momentum(&s), 0.0);
        }
    }

    #[test]
    fn grid_is_cell_centred() {
        let sp = spec(0.1, Plane::Zero, 10);
        assert_relative_eq!(sp.r_at(0), 0.1 + 0.195);
        assert_relative_eq!(sp.l_at(9), 2.25);
        assert_eq!(sp.coords(sp.index(3, 7)), (3, 7));
    }

    #[test]
    fn spec_validation() {
        let mut sp = spec(0.1, Plane::Zero, 1);
        sp.r_range = [0.0, 1.0];
        assert_eq!(sp.violations().len(), 2);
    }

    #[test]
    fn mu_zero_singular_contour_is_parabola() {
        let sp = spec(0.0, Plane::Zero, 10);
        let curves = singularity_curves(&sp, 50);
        assert!(!curves.is_empty());
        for c in &curves {
            for &[r, l] in &c.points {
                assert_relative_eq!(l * l, r, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn overlays_for_reference_ratios() {
        let sp = spec(0.1, Plane::Zero, 10);
        let ratios: Vec<Ratio> = ["9/4", "13/4", "17/4", "21/4"].iter().map(|s| s.parse().unwrap()).collect();
        let ov = assemble_overlays(&sp, &ratios);
        let labels: Vec<&str> = ov.iter().map(|c| c.label.as_str()).collect();
        for w in ["9/4", "13/4", "17/4", "21/4"] {
            assert!(labels.contains(&format!("resonance {w}").as_str()));
        }
        for l in ["crossing +", "crossing -", "escape +", "escape -", "singularity +", "singularity -"] {
            assert!(labels.contains(&l), "{l}");
        }
    }

    #[test]
    fn exclusions() {
        let mass = m(0.1);
        let sp = spec(0.1, Plane::Zero, 10);
        let settings = ScanSettings::default();
        // circular-orbit neighbourhood for a nearly Keplerian radius
        assert!(near_singular_curve(3.0, (3.0f64 * 3.0 * 3.0 * singularity_f(3.0, 0.0, mass, Plane::Zero).unwrap()).sqrt() + 1e-4, mass, Plane::Zero, 1e-3));
        assert!(!near_singular_curve(3.0, 0.0, mass, Plane::Zero, 1e-3));
        let body = PlaneSeedSpec {
            r_range: [0.9 - 1e-4, 0.9 + 1e-4],
            ..sp
        };
        let o = classify_cell(&body, 0, 0, &settings);
        assert_eq!(o.classification, Classification::SingularSeed);
    }

    #[test]
    fn mu_zero_torus_grid_has_no_nonexistence() {
        let sp = PlaneSeedSpec {
            r_range: [0.3, 3.0],
            l_range: [-2.0, 2.0],
            ..spec(0.0, Plane::Zero, 6)
        };
        let settings = ScanSettings {
            detector: DetectorConfig {
                formulation: Formulation::Both,
                t_out: 20.0,
                ..Default::default()
            },
            ..Default::default()
        };
        let res = run_scan(&sp, &settings).unwrap();
        assert_eq!(res.cells.len(), 36);
        assert_eq!(res.count(Classification::Nonexistence), 0);
    }

    #[test]
    fn q_heatmap_sentinels() {
        let sp = PlaneSeedSpec {
            r_range: [1.2, 1.8],
            l_range: [0.2, 0.6],
            ..spec(0.1, Plane::Zero, 3)
        };
        let res = run_scan(&sp, &ScanSettings::default()).unwrap();
        let h = q_heatmap(&res);
        assert_eq!(h.len(), 3);
        for (i, row) in h.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let o = res.get(i, j);
                match c {
                    QCell::Value(q) => assert_eq!(Some(*q), o.q),
                    QCell::Undetermined => assert_eq!(o.classification, Classification::Undetermined),
                    _ => {}
                }
            }
        }
    }
}
