//! Serialisation of results: CSV tables, a JSON envelope, overlay blocks and
//! an 8-bit RGB heatmap. Every file is written to a temporary sibling first
//! and renamed into place.
//!
//! Heatmap colours:
//!
//! | cell | RGB |
//! |------|-----|
//! | nonexistence | `(80 + 175 q, 0, 0)`, darker for faster detection |
//! | undetermined | `(0, 0, 200)` |
//! | singular seed | `(0, 0, 0)` |
//! | collision | `(128, 128, 128)` |
//! | escape | `(200, 200, 200)` |
//!
//! Rows run from the largest `L` at the top to the smallest at the bottom.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::json;

use crate::config::{CoordMode, RunConfig};
use crate::detector::{Classification, DetectionOutcome};
use crate::error::{Error, Result};
use crate::section::SectionCrossing;
use crate::scan::ScanResult;
use crate::unperturbed::{bar_coords, Curve};

/// Version tag of the CSV column layout and JSON schema.
pub const SCHEMA_VERSION: &str = "ckam-scan/1";

pub const SCAN_CSV_HEADER: &str = "i,j,r,L,classification,t_detect,q,lyapunov,C";

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

/// One row per cell, `i` over `r` and `j` over `L`, in index order.
pub fn scan_csv(result: &ScanResult) -> String {
    let mut out = String::with_capacity(64 * (result.cells.len() + 1));
    out.push_str(SCAN_CSV_HEADER);
    out.push('\n');
    for (i, j, r, l, o) in result.iter_cells() {
        let _ = writeln!(
            out,
            "{i},{j},{r:e},{l:e},{},{},{},{},{:e}",
            o.classification,
            opt(o.t_detect),
            opt(o.q),
            opt(o.lyapunov),
            o.jacobi
        );
    }
    out
}

fn transform_curve(c: &Curve, coords: CoordMode, m: f64) -> Curve {
    match coords {
        CoordMode::RL => c.clone(),
        CoordMode::Bar => Curve {
            label: c.label.clone(),
            points: c
                .points
                .iter()
                .filter(|p| p[0] > 0.0)
                .map(|&[r, l]| {
                    let (a, b) = bar_coords(r, l, m);
                    [a, b]
                })
                .collect(),
        },
    }
}

/// Blocks of `x y` rows, one per curve, each headed by `# label`.
pub fn overlay_blocks(curves: &[Curve], coords: CoordMode, m: f64) -> String {
    let mut out = String::new();
    for c in curves {
        let c = transform_curve(c, coords, m);
        let _ = writeln!(out, "# {}", c.label);
        for [x, y] in &c.points {
            let _ = writeln!(out, "{x:e} {y:e}");
        }
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct Envelope<'a> {
    schema: &'static str,
    spec: &'a crate::scan::PlaneSeedSpec,
    metadata: serde_json::Value,
    coords: CoordMode,
    grid: serde_json::Value,
    overlays: Vec<Curve>,
}

/// JSON envelope: spec, metadata (including the full config), the
/// classification and `q` layers indexed `[i][j]`, and overlay curves.
pub fn scan_json(result: &ScanResult, config: Option<&RunConfig>) -> String {
    let spec = &result.spec;
    let (coords, m) = config
        .map(|c| (c.output.coords, c.output.bar_m))
        .unwrap_or((CoordMode::RL, 5.0));
    let class: Vec<Vec<&str>> = (0..spec.n_r)
        .map(|i| (0..spec.n_l).map(|j| result.get(i, j).classification.name()).collect())
        .collect();
    let q: Vec<Vec<Option<f64>>> = (0..spec.n_r)
        .map(|i| (0..spec.n_l).map(|j| result.get(i, j).q).collect())
        .collect();
    let mut metadata = serde_json::to_value(&result.metadata).expect("metadata serialises");
    if let Some(cfg) = config {
        metadata["config_hash"] = json!(cfg.hash());
        metadata["config"] = serde_json::to_value(cfg).expect("config serialises");
        metadata["config_toml"] = json!(cfg.to_toml());
    }
    let counts: serde_json::Map<String, serde_json::Value> = [
        Classification::Nonexistence,
        Classification::Undetermined,
        Classification::Collision,
        Classification::Escape,
        Classification::SingularSeed,
    ]
    .iter()
    .map(|&c| (c.name().to_string(), json!(result.count(c))))
    .collect();
    metadata["counts"] = serde_json::Value::Object(counts);
    let env = Envelope {
        schema: SCHEMA_VERSION,
        spec,
        metadata,
        coords,
        grid: json!({
            "r": (0..spec.n_r).map(|i| spec.r_at(i)).collect::<Vec<_>>(),
            "L": (0..spec.n_l).map(|j| spec.l_at(j)).collect::<Vec<_>>(),
            "classification": class,
            "q": q,
        }),
        overlays: result
            .overlays
            .iter()
            .map(|c| transform_curve(c, coords, m))
            .collect(),
    };
    serde_json::to_string_pretty(&env).expect("envelope serialises")
}

pub fn cell_colour(o: &DetectionOutcome) -> [u8; 3] {
    match o.classification {
        Classification::Nonexistence => {
            let q = o.q.unwrap_or(1.0).clamp(0.0, 1.0);
            [(80.0 + 175.0 * q).round() as u8, 0, 0]
        }
        Classification::Undetermined => [0, 0, 200],
        Classification::SingularSeed => [0, 0, 0],
        Classification::Collision => [128, 128, 128],
        Classification::Escape => [200, 200, 200],
    }
}

/// RGB raster of the scan. In bar coordinates each pixel is mapped back to
/// `(r, L)` and takes the colour of the containing cell (white outside);
/// the vertical extent is `|L_bar| <= min(max|L| / sqrt(r_min), 2)`.
pub fn render_rgb(result: &ScanResult, cell_pixels: u32, coords: CoordMode, m: f64) -> (u32, u32, Vec<u8>) {
    let spec = &result.spec;
    let px = cell_pixels.max(1);
    let (w, h) = (spec.n_r as u32 * px, spec.n_l as u32 * px);
    let mut buf = vec![255u8; (w * h * 3) as usize];
    let [r0, r1] = spec.r_range;
    let [l0, l1] = spec.l_range;
    let (a0, _) = bar_coords(r0, 0.0, m);
    let (a1, _) = bar_coords(r1, 0.0, m);
    // |L_bar| range: what the grid reaches, capped just beyond the escape
    // boundary |L_bar| = sqrt(2).
    let bmax = (l0.abs().max(l1.abs()) / r0.sqrt()).min(2.0);
    for y in 0..h {
        for x in 0..w {
            let fx = (x as f64 + 0.5) / w as f64;
            let fy = 1.0 - (y as f64 + 0.5) / h as f64;
            let cell = match coords {
                CoordMode::RL => Some(((x / px) as usize, (spec.n_l - 1) - (y / px) as usize)),
                CoordMode::Bar => {
                    let a = a0 + fx * (a1 - a0);
                    let b = -bmax + fy * 2.0 * bmax;
                    let r = m * a / (1.0 - a);
                    let l = b * r.sqrt();
                    let i = ((r - r0) / (r1 - r0) * spec.n_r as f64).floor();
                    let j = ((l - l0) / (l1 - l0) * spec.n_l as f64).floor();
                    (i >= 0.0 && j >= 0.0 && (i as usize) < spec.n_r && (j as usize) < spec.n_l)
                        .then_some((i as usize, j as usize))
                }
            };
            if let Some((i, j)) = cell {
                let c = cell_colour(result.get(i, j));
                let k = ((y * w + x) * 3) as usize;
                buf[k..k + 3].copy_from_slice(&c);
            }
        }
    }
    (w, h, buf)
}

pub fn encode_png(w: u32, h: u32, rgb: &[u8]) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, w, h);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png header: {e}")))?;
        writer
            .write_image_data(rgb)
            .map_err(|e| Error::InvalidArgument(format!("png data: {e}")))?;
    }
    Ok(bytes)
}

/// `t,x,y,vx,vy,r,L` per crossing (tangential crossings omitted), prefixed
/// by the orbit index.
pub fn section_csv(orbits: &[Vec<SectionCrossing>]) -> String {
    let mut out = String::from("orbit,t,x,y,vx,vy,r,L\n");
    for (k, cs) in orbits.iter().enumerate() {
        for c in cs.iter().filter(|c| !c.tangency) {
            let _ = writeln!(
                out,
                "{k},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
                c.t,
                c.s.x,
                c.s.y,
                c.s.vx,
                c.s.vy,
                c.r(),
                c.angular_momentum()
            );
        }
    }
    out
}

/// `p0,H,classification,t_detect,q` per pendulum seed.
pub fn pendulum_csv(rows: &[(f64, DetectionOutcome)]) -> String {
    let mut out = String::from("p0,H,classification,t_detect,q\n");
    for (p0, o) in rows {
        let _ = writeln!(
            out,
            "{p0:e},{:e},{},{},{}",
            o.jacobi,
            o.classification,
            opt(o.t_detect),
            opt(o.q)
        );
    }
    out
}

fn path_for(cfg: &RunConfig, suffix: &str) -> PathBuf {
    cfg.output.dir.join(format!("{}{suffix}", cfg.output.stem))
}

/// Write CSV, JSON, overlay blocks and (optionally) PNG for a scan.
/// Returns the paths written.
pub fn write_outputs(result: &ScanResult, config: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let csv = path_for(config, ".csv");
    write_atomic(&csv, scan_csv(result).as_bytes())?;
    written.push(csv);
    let js = path_for(config, ".json");
    write_atomic(&js, scan_json(result, Some(config)).as_bytes())?;
    written.push(js);
    if !result.overlays.is_empty() {
        let ov = path_for(config, "_overlays.txt");
        write_atomic(
            &ov,
            overlay_blocks(&result.overlays, config.output.coords, config.output.bar_m).as_bytes(),
        )?;
        written.push(ov);
    }
    if config.output.png {
        let (w, h, rgb) = render_rgb(
            result,
            config.output.cell_pixels,
            config.output.coords,
            config.output.bar_m,
        );
        let p = path_for(config, ".png");
        write_atomic(&p, &encode_png(w, h, &rgb)?)?;
        written.push(p);
    }
    Ok(written)
}

/// Write a JSON document `value` next to the other outputs.
pub fn write_json<T: Serialize>(config: &RunConfig, suffix: &str, value: &T) -> Result<PathBuf> {
    let p = path_for(config, suffix);
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidArgument(format!("json: {e}")))?;
    write_atomic(&p, text.as_bytes())?;
    Ok(p)
}

pub fn write_text(config: &RunConfig, suffix: &str, text: &str) -> Result<PathBuf> {
    let p = path_for(config, suffix);
    write_atomic(&p, text.as_bytes())?;
    Ok(p)
}
