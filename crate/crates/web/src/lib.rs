//! Browser bindings for the simulator. Each export takes plain numbers and
//! returns a JSON document that `www/index.html` draws on a canvas.

use cellfree::combining::{lsfd_weights, lsfd_weights_plug_in_mrc};
use cellfree::harness::{apply_architecture, empirical_cdf, run_experiment};
use cellfree::rates::rate_closed_form;
use cellfree::{Architecture, CfVariant, Receiver, Scenario, SimConfig, Threshold};
use serde::Serialize;
use wasm_bindgen::prelude::*;

#[derive(Serialize)]
struct Site {
    x: f64,
    y: f64,
}

#[derive(Serialize)]
struct Ap {
    x: f64,
    y: f64,
    seu: usize,
}

#[derive(Serialize)]
struct Ue {
    x: f64,
    y: f64,
    pilot: usize,
    cluster_size: usize,
}

#[derive(Serialize)]
struct LayoutView {
    radius: f64,
    aps: Vec<Ap>,
    seus: Vec<Site>,
    ues: Vec<Ue>,
    /// `[ap, ue]` pairs of the selection matrix.
    links: Vec<[usize; 2]>,
}

#[derive(Serialize)]
struct CdfCurve {
    architecture: String,
    median: f64,
    rates: Vec<f64>,
}

#[derive(Serialize)]
struct RatePoint {
    antennas: usize,
    mean_rate: f64,
}

fn config(num_aps: usize, num_ues: usize, threshold_db: f64, seed: u64) -> Result<SimConfig, String> {
    let cfg = SimConfig {
        num_aps,
        num_ues,
        num_pilots: num_ues.min(8),
        selection_threshold_db: if threshold_db.is_finite() { Threshold(threshold_db) } else { Threshold::ALL },
        rng_seed: seed,
        ..SimConfig::desk()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

/// Geometry, SEU grouping, pilots and AP clusters of one layout.
pub fn layout_json(num_aps: usize, num_ues: usize, threshold_db: f64, seed: u64) -> Result<String, String> {
    let s = Scenario::new(config(num_aps, num_ues, threshold_db, seed)?, Architecture::MultiLevel, Receiver::Mrc);
    let dep = apply_architecture(&s, 0).map_err(|e| e.to_string())?;
    let l = &dep.layout;
    let view = LayoutView {
        radius: s.config.area_radius_m,
        aps: l
            .ap_positions
            .iter()
            .zip(&l.ap_to_seu)
            .map(|(p, &seu)| Ap { x: p.x, y: p.y, seu })
            .collect(),
        seus: l.seu_positions.iter().map(|p| Site { x: p.x, y: p.y }).collect(),
        ues: l
            .ue_positions
            .iter()
            .enumerate()
            .map(|(k, p)| Ue {
                x: p.x,
                y: p.y,
                pilot: dep.pilots.pilot_of[k],
                cluster_size: dep.plan.omega.column(k).iter().filter(|&&s| s).count(),
            })
            .collect(),
        links: (0..l.num_aps())
            .flat_map(|m| (0..l.num_ues()).map(move |k| [m, k]))
            .filter(|&[m, k]| dep.plan.omega[(m, k)])
            .collect(),
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// Monte Carlo MRC rate CDFs of the three architectures over `layouts`
/// layouts, each on the 1% quantile grid.
pub fn cdfs_json(antennas: usize, threshold_db: f64, layouts: usize, draws: usize, seed: u64) -> Result<String, String> {
    let mut cfg = config(64, 16, threshold_db, seed)?;
    cfg.antennas_per_ap = antennas;
    let curves = Architecture::ALL
        .iter()
        .map(|&arch| {
            let mut s = Scenario::new(cfg.clone(), arch, Receiver::Mrc);
            s.layouts = layouts;
            s.draws = draws;
            s.moment_samples = draws;
            let r = run_experiment(&s).map_err(|e| e.to_string())?;
            Ok(CdfCurve { architecture: arch.to_string(), median: r.cdf.median(), rates: r.cdf.values })
        })
        .collect::<Result<Vec<_>, String>>()?;
    serde_json::to_string(&curves).map_err(|e| e.to_string())
}

/// Closed-form mean per-UE rate of one layout for 1 to `max_antennas`
/// antennas per AP. ZF points where the receiver is infeasible are omitted.
pub fn rate_vs_antennas_json(receiver: &str, threshold_db: f64, max_antennas: usize, seed: u64) -> Result<String, String> {
    let rx: Receiver = receiver.parse().map_err(|e: cellfree::Error| e.to_string())?;
    let s = Scenario::new(config(64, 16, threshold_db, seed)?, Architecture::MultiLevel, rx);
    let base = apply_architecture(&s, 0).map_err(|e| e.to_string())?;
    let mut points = Vec::new();
    for n in 1..=max_antennas {
        let dep = base.with_antennas(n);
        let mu = match rx {
            Receiver::Mrc => lsfd_weights_plug_in_mrc(&dep),
            Receiver::Zf => lsfd_weights(&dep, rx, 200, seed),
        };
        match mu.and_then(|mu| rate_closed_form(&dep, rx, &mu, CfVariant::Consistent)) {
            Ok(rates) => points.push(RatePoint {
                antennas: n,
                mean_rate: rates.iter().sum::<f64>() / rates.len() as f64,
            }),
            Err(cellfree::Error::Dimension { .. }) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    serde_json::to_string(&points).map_err(|e| e.to_string())
}

/// Quantiles of an arbitrary sample, for client-side what-if plots.
pub fn quantiles_json(samples: &[f64]) -> Result<String, String> {
    let cdf = empirical_cdf(samples).map_err(|e| e.to_string())?;
    serde_json::to_string(&cdf.values).map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn layout(num_aps: usize, num_ues: usize, threshold_db: f64, seed: u64) -> Result<String, JsError> {
    js(layout_json(num_aps, num_ues, threshold_db, seed))
}

#[wasm_bindgen]
pub fn architecture_cdfs(
    antennas: usize,
    threshold_db: f64,
    layouts: usize,
    draws: usize,
    seed: u64,
) -> Result<String, JsError> {
    js(cdfs_json(antennas, threshold_db, layouts, draws, seed))
}

#[wasm_bindgen]
pub fn rate_vs_antennas(receiver: &str, threshold_db: f64, max_antennas: usize, seed: u64) -> Result<String, JsError> {
    js(rate_vs_antennas_json(receiver, threshold_db, max_antennas, seed))
}

#[wasm_bindgen]
pub fn quantiles(samples: &[f64]) -> Result<String, JsError> {
    js(quantiles_json(samples))
}
