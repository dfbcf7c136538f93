use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ckam::config::{Command, CoordMode, RunConfig};
use ckam::detector::{detect, lyapunov_estimate, Classification, Formulation};
use ckam::dynamics::{MassRatio, State};
use ckam::foliation::Plane;
use ckam::output::{
    pendulum_csv, section_csv, write_json, write_outputs, write_text, overlay_blocks,
};
use ckam::pendulum::pendulum_detect;
use ckam::scan::{assemble_overlays, plane_point, run_scan};
use ckam::section::return_map;
use ckam::unperturbed::Ratio;

#[derive(Parser)]
#[command(name = "ckam", version, about = "Converse KAM nonexistence scans for the planar circular restricted three-body problem")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Classify a grid of seeds on a symmetry plane.
    Scan(Opts),
    /// Run the detector on individual seeds.
    Detect(Opts),
    /// Return map to the section p_r = 0, dp_r/dt <= 0.
    Section(Opts),
    /// Pendulum validation scan over initial momenta.
    Pendulum(Opts),
    /// Emit the overlay curves for a grid.
    Overlays(Opts),
    /// Lyapunov estimates for seeds, or for a grid when no seeds are given.
    Lyapunov(Opts),
}

impl Sub {
    fn split(self) -> (Command, Opts) {
        match self {
            Sub::Scan(o) => (Command::Scan, o),
            Sub::Detect(o) => (Command::Detect, o),
            Sub::Section(o) => (Command::Section, o),
            Sub::Pendulum(o) => (Command::Pendulum, o),
            Sub::Overlays(o) => (Command::Overlays, o),
            Sub::Lyapunov(o) => (Command::Lyapunov, o),
        }
    }
}

fn pair(s: &str) -> Result<[f64; 2], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    <[f64; 2]>::try_from(v).map_err(|_| format!("expected two comma-separated numbers, got '{s}'"))
}

fn quad(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    <[f64; 4]>::try_from(v).map_err(|_| format!("expected x,y,vx,vy, got '{s}'"))
}

/// Flags mirror the configuration file; flags override file values.
#[derive(Args, Default)]
struct Opts {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long, allow_negative_numbers = true)]
    mu: Option<f64>,
    /// P0 or Ppi.
    #[arg(long)]
    plane: Option<Plane>,
    #[arg(long, allow_negative_numbers = true)]
    t_out: Option<f64>,
    /// general, symmetric, both or lyapunov_only.
    #[arg(long)]
    formulation: Option<Formulation>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_parser = pair, allow_hyphen_values = true)]
    r_range: Option<[f64; 2]>,
    #[arg(long, value_parser = pair, allow_hyphen_values = true)]
    l_range: Option<[f64; 2]>,
    #[arg(long)]
    n_r: Option<usize>,
    #[arg(long)]
    n_l: Option<usize>,
    /// Winding ratio such as 9/4; repeatable.
    #[arg(long = "ratio")]
    ratios: Vec<Ratio>,
    /// Plane seed r,L; repeatable.
    #[arg(long = "seed", value_parser = pair, allow_hyphen_values = true)]
    seeds: Vec<[f64; 2]>,
    /// Full state x,y,vx,vy; repeatable.
    #[arg(long = "state", value_parser = quad, allow_hyphen_values = true)]
    states: Vec<[f64; 4]>,
    #[arg(long, allow_negative_numbers = true)]
    rel_tol: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    abs_tol: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    fixed_step: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    stem: Option<String>,
    #[arg(long)]
    no_png: bool,
    /// Plot in (r/(r+m), L/sqrt(r)) coordinates.
    #[arg(long)]
    bar: bool,
    #[arg(long, allow_negative_numbers = true)]
    bar_m: Option<f64>,
    #[arg(long)]
    n_returns: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    t_max: Option<f64>,
    /// Pendulum momentum range lo,hi.
    #[arg(long, value_parser = pair, allow_hyphen_values = true)]
    p_range: Option<[f64; 2]>,
    /// Pendulum sample count.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    q0: Option<f64>,
    /// Keep integrating after detection (full-horizon Lyapunov estimates).
    #[arg(long)]
    full_horizon: bool,
}

fn build_config(command: Command, o: Opts) -> Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let mut c: RunConfig = text.parse()?;
            c.command = command;
            c
        }
        None => {
            let mu = match (o.mu, command) {
                (Some(mu), _) => mu,
                (None, Command::Pendulum) => 0.0,
                (None, _) => bail!(ckam::Error::InvalidArgument(
                    "--mu is required without --config".into()
                )),
            };
            RunConfig::new(command, MassRatio::new(mu)?)
        }
    };
    if let Some(mu) = o.mu {
        cfg.mu = MassRatio::new(mu)?;
    }
    macro_rules! set {
        ($src:expr => $dst:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(o.plane => cfg.plane);
    set!(o.t_out => cfg.t_out);
    set!(o.formulation => cfg.formulation);
    set!(o.r_range => cfg.grid.r_range);
    set!(o.l_range => cfg.grid.l_range);
    set!(o.n_r => cfg.grid.n_r);
    set!(o.n_l => cfg.grid.n_l);
    set!(o.rel_tol => cfg.integrator.rel_tol);
    set!(o.abs_tol => cfg.integrator.abs_tol);
    set!(o.out_dir => cfg.output.dir);
    set!(o.stem => cfg.output.stem);
    set!(o.bar_m => cfg.output.bar_m);
    set!(o.n_returns => cfg.section.n_returns);
    set!(o.t_max => cfg.section.t_max);
    set!(o.p_range => cfg.pendulum.p_range);
    set!(o.n => cfg.pendulum.n);
    set!(o.q0 => cfg.pendulum.q0);
    if o.workers.is_some() {
        cfg.workers = o.workers;
    }
    if o.fixed_step.is_some() {
        cfg.integrator.fixed_step = o.fixed_step;
    }
    if !o.ratios.is_empty() {
        cfg.winding_ratios = o.ratios;
    }
    if !o.seeds.is_empty() {
        cfg.seeds = o.seeds;
    }
    if !o.states.is_empty() {
        cfg.states = o.states;
    }
    if o.no_png {
        cfg.output.png = false;
    }
    if o.bar {
        cfg.output.coords = CoordMode::Bar;
    }
    if o.full_horizon {
        cfg.detector.full_horizon = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Seeds from the config: plane points first, then explicit states.
fn seed_states(cfg: &RunConfig) -> Result<Vec<State>> {
    let mut out = Vec::new();
    for [r, l] in &cfg.seeds {
        out.push(plane_point(cfg.plane, *r, *l, cfg.mu)?);
    }
    out.extend(cfg.states.iter().map(|s| State::from_array(*s)));
    Ok(out)
}

fn run(cfg: &RunConfig) -> Result<serde_json::Value> {
    match cfg.command {
        Command::Scan => scan(cfg),
        Command::Detect => {
            let dc = cfg.detector_config();
            let mut rows = Vec::new();
            for s in seed_states(cfg)? {
                let o = detect(&s, cfg.mu, &dc)?;
                rows.push(json!({ "state": s, "outcome": o }));
            }
            let doc = json!({ "config_hash": cfg.hash(), "formulation": cfg.formulation, "results": rows });
            let path = write_json(cfg, "_detect.json", &doc)?;
            Ok(json!({ "results": doc["results"], "files": [path] }))
        }
        Command::Section => {
            let sc = cfg.section_config();
            let mut orbits = Vec::new();
            let mut summary = Vec::new();
            for s in seed_states(cfg)? {
                match return_map(&s, cfg.mu, cfg.section.n_returns, &sc) {
                    Ok(map) => {
                        summary.push(json!({
                            "state": s,
                            "crossings": map.crossings.len(),
                            "tangencies": map.crossings.iter().filter(|c| c.tangency).count(),
                            "end": map.end,
                            "t_end": map.t_end,
                        }));
                        orbits.push(map.crossings);
                    }
                    Err(e @ ckam::Error::NoReturn { .. }) => {
                        summary.push(json!({ "state": s, "crossings": 0, "no_return": e.to_string() }));
                        orbits.push(Vec::new());
                    }
                    Err(e) => return Err(e.into()),
                }
            }
            let path = write_text(cfg, "_section.csv", &section_csv(&orbits))?;
            Ok(json!({ "orbits": summary, "files": [path] }))
        }
        Command::Pendulum => {
            let p = &cfg.pendulum;
            let rows: Vec<(f64, _)> = (0..p.n)
                .map(|k| {
                    let p0 = if p.n == 1 {
                        p.p_range[0]
                    } else {
                        p.p_range[0] + (p.p_range[1] - p.p_range[0]) * k as f64 / (p.n - 1) as f64
                    };
                    pendulum_detect(p.q0, p0, p.t_out).map(|o| (p0, o))
                })
                .collect::<ckam::Result<_>>()?;
            let nonex = rows.iter().filter(|(_, o)| o.is_nonexistence()).count();
            let path = write_text(cfg, "_pendulum.csv", &pendulum_csv(&rows))?;
            Ok(json!({ "samples": rows.len(), "nonexistence": nonex, "files": [path] }))
        }
        Command::Overlays => {
            let spec = cfg.seed_spec();
            let curves = assemble_overlays(&spec, &cfg.winding_ratios);
            let text = overlay_blocks(&curves, cfg.output.coords, cfg.output.bar_m);
            let txt = write_text(cfg, "_overlays.txt", &text)?;
            let js = write_json(cfg, "_overlays.json", &curves)?;
            let labels: Vec<&str> = curves.iter().map(|c| c.label.as_str()).collect();
            Ok(json!({ "curves": labels, "files": [txt, js] }))
        }
        Command::Lyapunov => {
            if cfg.seeds.is_empty() && cfg.states.is_empty() {
                let mut grid_cfg = cfg.clone();
                grid_cfg.formulation = Formulation::LyapunovOnly;
                return scan(&grid_cfg);
            }
            let dc = cfg.detector_config();
            let mut rows = Vec::new();
            for s in seed_states(cfg)? {
                let est = lyapunov_estimate(&s, cfg.mu, &dc)?;
                rows.push(json!({ "state": s, "estimate": est }));
            }
            let path = write_json(cfg, "_lyapunov.json", &rows)?;
            Ok(json!({ "results": rows, "files": [path] }))
        }
    }
}

fn scan(cfg: &RunConfig) -> Result<serde_json::Value> {
    let spec = cfg.seed_spec();
    let mut result = run_scan(&spec, &cfg.scan_settings())?;
    result.overlays = assemble_overlays(&spec, &cfg.winding_ratios);
    result.metadata.config_hash = Some(cfg.hash());
    let files = write_outputs(&result, cfg)?;
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
    Ok(json!({
        "cells": result.cells.len(),
        "counts": counts,
        "runtime_s": result.metadata.runtime_s,
        "files": files,
    }))
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    match e.downcast_ref::<ckam::Error>() {
        Some(err) => err.kind(),
        None => "error",
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (command, opts) = Cli::parse().command.split();
    let outcome = build_config(command, opts).and_then(|cfg| run(&cfg));
    match outcome {
        Ok(summary) => {
            let text = serde_json::to_string_pretty(&summary).unwrap_or_default();
            let _ = writeln!(std::io::stdout(), "{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = error_kind(&e);
            let envelope = json!({
                "error": {
                    "kind": kind,
                    "message": format!("{e:#}"),
                }
            });
            let _ = writeln!(std::io::stderr(), "{envelope}");
            if matches!(
                kind,
                "config_parse" | "config_invalid" | "invalid_argument" | "invalid_mass_ratio"
            ) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
