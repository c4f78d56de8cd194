//! Experiment orchestration: architecture presets, per-layout pipelines,
//! empirical CDFs and CSV output.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::SignalModel;
use crate::combining::{lsfd_weights, lsfd_weights_plug_in_mrc, LsfdWeights, Receiver};
use crate::config::{SimConfig, Threshold};
use crate::deployment::Deployment;
use crate::error::{Error, Result};
use crate::netgeom::generate_layout;
use crate::rates::{rate_closed_form, rate_monte_carlo, CfVariant, RateReport, SinrForm};
use crate::rng::layout_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// APs grouped under SEUs as configured, threshold-based clusters.
    MultiLevel,
    /// One processing entity and every AP serving every UE.
    OriginalCellfree,
    /// Every AP is its own processing unit; same clusters as multi-level.
    FullyDistributed,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::OriginalCellfree,
        Architecture::MultiLevel,
        Architecture::FullyDistributed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::MultiLevel => "multi_level",
            Architecture::OriginalCellfree => "original_cellfree",
            Architecture::FullyDistributed => "fully_distributed",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Architecture> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "multi_level" | "multilevel" => Ok(Architecture::MultiLevel),
            "original_cellfree" | "original" => Ok(Architecture::OriginalCellfree),
            "fully_distributed" | "distributed" => Ok(Architecture::FullyDistributed),
            _ => Err(Error::Config(format!(
                "unknown architecture '{s}' (expected multi_level, original_cellfree or fully_distributed)"
            ))),
        }
    }
}

/// Where the LSFD moments come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LsfdSource {
    /// Sample averages over a dedicated batch of channel draws.
    #[default]
    MonteCarlo,
    /// Exact analytic moments; MRC only.
    PlugInMrc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub architecture: Architecture,
    pub receiver: Receiver,
    pub layouts: usize,
    pub draws: usize,
    pub moment_samples: usize,
    pub signal: SignalModel,
    pub sinr_form: SinrForm,
    pub cf_variant: CfVariant,
    pub lsfd_source: LsfdSource,
    /// Skip (and record) layouts where ZF is structurally infeasible instead
    /// of failing the run.
    pub skip_infeasible: bool,
    pub config: SimConfig,
}

impl Scenario {
    pub fn new(config: SimConfig, architecture: Architecture, receiver: Receiver) -> Scenario {
        Scenario {
            config,
            architecture,
            receiver,
            layouts: 1,
            draws: 10_000,
            moment_samples: 2_000,
            signal: SignalModel::default(),
            sinr_form: SinrForm::default(),
            cf_variant: CfVariant::default(),
            lsfd_source: LsfdSource::default(),
            skip_infeasible: false,
        }
    }

    /// Hex SHA-256 of everything that determines the output.
    pub fn fingerprint(&self) -> String {
        let text = toml::to_string(self).expect("Scenario always serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Master seed of layout realization `index`.
    pub fn layout_seed(&self, index: usize) -> u64 {
        layout_seed(self.config.rng_seed, index as u64)
    }
}

/// Configuration actually simulated under `arch`.
///
/// The fully distributed preset keeps the configured SEU count here: SEU
/// positions do not influence AP or UE placement, and the layout is
/// regrouped one AP per SEU afterwards.
pub fn effective_config(cfg: &SimConfig, arch: Architecture) -> SimConfig {
    match arch {
        Architecture::MultiLevel | Architecture::FullyDistributed => cfg.clone(),
        Architecture::OriginalCellfree => SimConfig {
            num_seus: 1,
            selection_threshold_db: Threshold::ALL,
            noise_power_per_seu_dbm: cfg.noise_power_per_seu_dbm.as_ref().map(|n| vec![n[0]]),
            ..cfg.clone()
        },
    }
}

/// Builds the deployment of layout realization `index` under the scenario's
/// architecture.
pub fn apply_architecture(scenario: &Scenario, index: usize) -> Result<Deployment> {
    let seed = scenario.layout_seed(index);
    let build = || -> Result<Deployment> {
        let cfg = effective_config(&scenario.config, scenario.architecture);
        let mut layout = generate_layout(&cfg, seed)?;
        if scenario.architecture == Architecture::FullyDistributed {
            layout = layout.one_seu_per_ap();
        }
        Deployment::from_layout(&cfg, layout, seed, scenario.signal)
    };
    build().map_err(|e| e.with_layout_seed(seed))
}

pub fn scenario_weights(scenario: &Scenario, dep: &Deployment, seed: u64) -> Result<LsfdWeights> {
    match scenario.lsfd_source {
        LsfdSource::MonteCarlo => lsfd_weights(dep, scenario.receiver, scenario.moment_samples, seed),
        LsfdSource::PlugInMrc if scenario.receiver == Receiver::Mrc => lsfd_weights_plug_in_mrc(dep),
        LsfdSource::PlugInMrc => Err(Error::Unsupported("plug-in LSFD moments exist for MRC only")),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayoutResult {
    pub report: RateReport,
    pub mc_std_err: Vec<f64>,
    pub max_zf_residual: f64,
}

/// ZF orthogonality bound enforced on every Monte Carlo draw.
pub const ZF_RESIDUAL_LIMIT: f64 = 1e-10;

/// clustering -> pilots -> statistics -> LSFD -> closed form and Monte Carlo
/// rates for one layout realization.
pub fn run_layout(scenario: &Scenario, index: usize) -> Result<LayoutResult> {
    let seed = scenario.layout_seed(index);
    let dep = apply_architecture(scenario, index)?;
    let inner = || -> Result<LayoutResult> {
        let mu = scenario_weights(scenario, &dep, seed)?;
        let cf = rate_closed_form(&dep, scenario.receiver, &mu, scenario.cf_variant)?;
        let mc = rate_monte_carlo(&dep, scenario.receiver, &mu, scenario.draws, seed, scenario.sinr_form)?;
        if mc.max_zf_residual > ZF_RESIDUAL_LIMIT {
            return Err(Error::Invariant(format!(
                "ZF orthogonality residual {:.3e} above {ZF_RESIDUAL_LIMIT:e}",
                mc.max_zf_residual
            )));
        }
        let report = RateReport {
            per_ue_rate_mc: mc.mean,
            per_ue_rate_cf: cf,
            receiver: scenario.receiver,
            draw_count: scenario.draws,
            seed,
            config_fingerprint: scenario.fingerprint(),
        };
        report.check()?;
        Ok(LayoutResult { report, mc_std_err: mc.std_err, max_zf_residual: mc.max_zf_residual })
    };
    inner().map_err(|e| e.with_layout_seed(seed))
}

/// Empirical CDF sampled on a 1% quantile grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Cdf {
    pub quantiles: Vec<f64>,
    pub values: Vec<f64>,
}

/// Lower empirical quantiles `F^-1(q) = x_(ceil(q n))` at `q = 0, 0.01, ..., 1`.
pub fn empirical_cdf(samples: &[f64]) -> Result<Cdf> {
    if samples.is_empty() {
        return Err(Error::Invariant("empirical CDF of an empty sample".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let quantiles: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let values = (0..=100usize)
        .map(|i| {
            // ceil(i n / 100) in integer arithmetic
            let rank = (i * n).div_ceil(100);
            sorted[rank.saturating_sub(1).min(n - 1)]
        })
        .collect();
    Ok(Cdf { quantiles, values })
}

impl Cdf {
    pub fn median(&self) -> f64 {
        self.values[50]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quantile", "rate_bps_hz"])?;
        for (q, v) in self.quantiles.iter().zip(&self.values) {
            w.write_record([format!("{q:.2}"), format!("{v:.12e}")])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Joins several CDFs on the common quantile grid.
pub fn write_cdf_table<W: Write>(columns: &[(String, Cdf)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["quantile".to_string()];
    header.extend(columns.iter().map(|(name, _)| name.clone()));
    w.write_record(&header)?;
    for q in 0..=100 {
        let mut row = vec![format!("{:.2}", q as f64 / 100.0)];
        row.extend(columns.iter().map(|(_, c)| format!("{:.12e}", c.values[q])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    pub layouts: Vec<LayoutResult>,
    /// Layout seeds skipped because ZF was infeasible, with the reason.
    pub skipped: Vec<(u64, String)>,
    /// CDF of all Monte Carlo per-UE rates.
    pub cdf: Cdf,
}

impl ExperimentResult {
    pub fn reports(&self) -> Vec<RateReport> {
        self.layouts.iter().map(|l| l.report.clone()).collect()
    }

    pub fn mc_rates(&self) -> Vec<f64> {
        self.layouts.iter().flat_map(|l| l.report.per_ue_rate_mc.iter().copied()).collect()
    }

    pub fn cf_rates(&self) -> Vec<f64> {
        self.layouts.iter().flat_map(|l| l.report.per_ue_rate_cf.iter().copied()).collect()
    }

    pub fn file_stem(&self) -> String {
        format!("{}_{}", self.scenario.architecture, self.scenario.receiver)
    }

    /// Writes `rates_<arch>_<receiver>.csv`, `cdf_<arch>_<receiver>.csv`
    /// and a `run_<arch>_<receiver>.toml` manifest. Returns the paths.
    pub fn write_outputs(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let stem = self.file_stem();
        let rates = dir.join(format!("rates_{stem}.csv"));
        RateReport::write_csv(&self.reports(), BufWriter::new(File::create(&rates)?))?;
        let cdf = dir.join(format!("cdf_{stem}.csv"));
        self.cdf.write_csv(BufWriter::new(File::create(&cdf)?))?;
        let manifest = dir.join(format!("run_{stem}.toml"));
        std::fs::write(&manifest, self.manifest())?;
        Ok(vec![rates, cdf, manifest])
    }

    fn manifest(&self) -> String {
        #[derive(Serialize)]
        struct Manifest<'a> {
            fingerprint: String,
            layout_seeds: Vec<u64>,
            skipped_layout_seeds: Vec<u64>,
            scenario: &'a Scenario,
        }
        toml::to_string(&Manifest {
            fingerprint: self.scenario.fingerprint(),
            layout_seeds: self.layouts.iter().map(|l| l.report.seed).collect(),
            skipped_layout_seeds: self.skipped.iter().map(|s| s.0).collect(),
            scenario: &self.scenario,
        })
        .expect("manifest always serializes")
    }
}

fn is_zf_infeasible(e: &Error) -> bool {
    match e {
        Error::Dimension { .. } => true,
        Error::Layout { source, .. } => is_zf_infeasible(source),
        _ => false,
    }
}

/// Runs every layout realization of the scenario and aggregates the rates.
pub fn run_experiment(scenario: &Scenario) -> Result<ExperimentResult> {
    scenario.config.validate()?;
    if scenario.layouts == 0 {
        return Err(Error::Config("need at least one layout realization".into()));
    }
    let mut layouts = Vec::with_capacity(scenario.layouts);
    let mut skipped = Vec::new();
    for r in 0..scenario.layouts {
        match run_layout(scenario, r) {
            Ok(res) => layouts.push(res),
            Err(e) if scenario.skip_infeasible && is_zf_infeasible(&e) => {
                log::warn!("skipping layout: {e}");
                skipped.push((scenario.layout_seed(r), e.to_string()));
            }
            Err(e) => return Err(e),
        }
    }
    let rates: Vec<f64> = layouts.iter().flat_map(|l| l.report.per_ue_rate_mc.iter().copied()).collect();
    let cdf = empirical_cdf(&rates)?;
    Ok(ExperimentResult { scenario: scenario.clone(), layouts, skipped, cdf })
}

/// Per-UE agreement `|cf - mc| <= max(rel * mc, abs)`.
pub fn within_tolerance(mc: f64, cf: f64, rel: f64, abs: f64) -> bool {
    (cf - mc).abs() <= (rel * mc.abs()).max(abs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Agreement {
    pub fraction_within: f64,
    pub max_relative_deviation: f64,
    pub mean_mc: f64,
    pub mean_cf: f64,
}

/// Agreement of closed-form and Monte Carlo rates, relative to Monte Carlo.
pub fn agreement(mc: &[f64], cf: &[f64]) -> Agreement {
    let n = mc.len().max(1) as f64;
    let within = mc.iter().zip(cf).filter(|(m, c)| within_tolerance(**m, **c, 0.05, 0.1)).count();
    let max_rel = mc
        .iter()
        .zip(cf)
        .map(|(m, c)| (c - m).abs() / m.abs().max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Agreement {
        fraction_within: within as f64 / n,
        max_relative_deviation: max_rel,
        mean_mc: mc.iter().sum::<f64>() / n,
        mean_cf: cf.iter().sum::<f64>() / n,
    }
}
