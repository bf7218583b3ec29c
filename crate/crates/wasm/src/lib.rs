//! Browser bindings for the mass-spring demo page in `www/`.
//!
//! Every exported function returns a JSON string; the page draws it on a
//! canvas. The `*_json` functions hold the logic so they can be tested
//! natively.

use qcqp::bench::{mass_spring_ocp, polygon_normals, run_pipeline, ConstraintConfig, MassSpringSpec, Pipeline};
use qcqp::condensing::remove_x0;
use qcqp::ipm::IterationRecord;
use qcqp::{solve_ocp, IpmSettings, Mode, OcpSolution};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct PhasePath {
    label: String,
    objective: f64,
    iterations: usize,
    status: String,
    /// `(p₂, v₂)` per stage.
    points: Vec<[f64; 2]>,
    /// Polygon vertices, empty for the disk.
    vertices: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct PhaseDemo {
    radius: f64,
    paths: Vec<PhasePath>,
}

#[derive(Serialize)]
struct Trajectory {
    ts: f64,
    /// Positions per stage, one row per mass.
    positions: Vec<Vec<f64>>,
    controls: Vec<f64>,
    u_bound: f64,
    objective: f64,
    status: String,
}

#[derive(Serialize)]
struct History {
    pipeline: String,
    status: String,
    records: Vec<IterationRecord>,
}

fn parse_mode(mode: &str) -> Result<Mode, String> {
    mode.parse().map_err(|e: qcqp::QcqpError| e.to_string())
}

fn phase_points(sol: &OcpSolution, m: usize) -> Vec<[f64; 2]> {
    sol.x.iter().map(|x| [x[1], x[m + 1]]).collect()
}

fn polygon_vertices(sides: usize, rho: f64) -> Vec<[f64; 2]> {
    let Ok((normals, a)) = polygon_normals(sides, rho) else {
        return Vec::new();
    };
    // outward normals of all sides, then vertices where neighbours meet
    let mut all: Vec<[f64; 2]> = normals.clone();
    all.extend(normals.iter().map(|n| [-n[0], -n[1]]));
    all.sort_by(|p, q| p[1].atan2(p[0]).total_cmp(&q[1].atan2(q[0])));
    (0..all.len())
        .map(|i| {
            let (n1, n2) = (all[i], all[(i + 1) % all.len()]);
            let det = n1[0] * n2[1] - n1[1] * n2[0];
            [a * (n2[1] - n1[1]) / det, a * (n1[0] - n2[0]) / det]
        })
        .collect()
}

/// Second-mass phase trajectories of the energy instance and its polygon
/// approximations, with the initial state removed.
pub fn phase_demo_json(seed: u64, horizon: usize, radius_scale: f64, hard: bool, mode: &str) -> Result<String, String> {
    let mode = parse_mode(mode)?;
    let mut spec = MassSpringSpec::table2(ConstraintConfig::QcqpEnergy, seed);
    spec.horizon = horizon;
    spec.hard = hard;
    let rho = radius_scale * spec.disk_radius() / 0.5;
    spec.radius = Some(rho);
    let m = spec.n_masses;
    let mut paths = Vec::new();
    for config in [
        ConstraintConfig::QcqpEnergy,
        ConstraintConfig::Qp4,
        ConstraintConfig::Qp6,
        ConstraintConfig::Qp8,
    ] {
        let ocp = mass_spring_ocp(&MassSpringSpec { config, ..spec.clone() }).map_err(|e| e.to_string())?;
        let run = run_pipeline(&ocp, Pipeline::X0Removal, 1, &IpmSettings::for_mode(mode)).map_err(|e| e.to_string())?;
        paths.push(PhasePath {
            label: config.label().to_string(),
            objective: run.objective,
            iterations: run.iterations,
            status: run.status.to_string(),
            points: phase_points(&run.solution, m),
            vertices: config.polygon_sides().map(|s| polygon_vertices(s, rho)).unwrap_or_default(),
        });
    }
    serde_json::to_string(&PhaseDemo { radius: rho, paths }).map_err(|e| e.to_string())
}

/// Positions and control of a Table 1 style instance.
pub fn trajectory_json(config: &str, seed: u64, horizon: usize, u_bound: f64, mode: &str) -> Result<String, String> {
    let mode = parse_mode(mode)?;
    let config = ConstraintConfig::from_label(config).ok_or_else(|| format!("unknown problem '{config}'"))?;
    let mut spec = MassSpringSpec::table1(config, seed);
    spec.horizon = horizon;
    spec.u_bound = u_bound;
    let ocp = mass_spring_ocp(&spec).map_err(|e| e.to_string())?;
    let x0 = spec.initial_state();
    let (reduced, _) = remove_x0(&ocp, &x0).map_err(|e| e.to_string())?;
    let (reduced_sol, stats) = solve_ocp(&reduced, &IpmSettings::for_mode(mode)).map_err(|e| e.to_string())?;
    let m = spec.n_masses;
    let mut positions = vec![Vec::new(); m];
    let mut state = x0;
    let mut controls = Vec::new();
    for (n, x) in reduced_sol.x.iter().enumerate() {
        if n > 0 {
            state = x.clone();
        }
        for (i, row) in positions.iter_mut().enumerate() {
            row.push(state[i]);
        }
        if let Some(u) = reduced_sol.u[n].first() {
            controls.push(*u);
        }
    }
    serde_json::to_string(&Trajectory {
        ts: spec.ts,
        positions,
        controls,
        u_bound,
        objective: stats.objective,
        status: stats.status.to_string(),
    })
    .map_err(|e| e.to_string())
}

/// Per-iteration records of a Table 1 instance for every pipeline.
pub fn history_json(config: &str, seed: u64, mode: &str, block_size: usize) -> Result<String, String> {
    let mode = parse_mode(mode)?;
    let config = ConstraintConfig::from_label(config).ok_or_else(|| format!("unknown problem '{config}'"))?;
    let ocp = mass_spring_ocp(&MassSpringSpec::table1(config, seed)).map_err(|e| e.to_string())?;
    let x0 = ocp.initial_state.clone().unwrap_or_default();
    let settings = IpmSettings::for_mode(mode);
    let mut out = Vec::new();
    for p in [Pipeline::Baseline, Pipeline::X0Removal, Pipeline::X0Full, Pipeline::X0Partial] {
        let stats = match p {
            Pipeline::Baseline => solve_ocp(&ocp, &settings).map(|r| r.1),
            Pipeline::X0Removal => remove_x0(&ocp, &x0).and_then(|(r, _)| solve_ocp(&r, &settings)).map(|r| r.1),
            Pipeline::X0Full => remove_x0(&ocp, &x0)
                .map(|(r, _)| qcqp::condensing::full_condense(&r).0)
                .and_then(|d| qcqp::solve_dense(&d, &settings))
                .map(|r| r.1),
            _ => remove_x0(&ocp, &x0)
                .and_then(|(r, _)| {
                    let nb = qcqp::condensing::blocks_for_size(r.horizon(), block_size)?;
                    qcqp::condensing::partial_condense(&r, nb)
                })
                .and_then(|(r, _)| solve_ocp(&r, &settings))
                .map(|r| r.1),
        }
        .map_err(|e| e.to_string())?;
        out.push(History {
            pipeline: p.label().to_string(),
            status: stats.status.to_string(),
            records: stats.records,
        });
    }
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn phase_demo(seed: u32, horizon: u32, radius_scale: f64, hard: bool, mode: &str) -> Result<String, JsError> {
    phase_demo_json(seed.into(), horizon as usize, radius_scale, hard, mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn trajectory(config: &str, seed: u32, horizon: u32, u_bound: f64, mode: &str) -> Result<String, JsError> {
    trajectory_json(config, seed.into(), horizon as usize, u_bound, mode).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn history(config: &str, seed: u32, mode: &str, block_size: u32) -> Result<String, JsError> {
    history_json(config, seed.into(), mode, block_size as usize).map_err(|e| JsError::new(&e))
}
