use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use cellfree::harness::{agreement, apply_architecture, run_experiment, write_cdf_table, ExperimentResult};
use cellfree::{Architecture, Receiver, Scenario, SignalModel, SimConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Uplink spectral-efficiency simulator for multi-level cooperative
/// cell-free massive MIMO.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one architecture and receiver over several layouts and write
    /// per-UE rates, the rate CDF and the cluster plan of the first layout.
    Simulate(SimulateArgs),
    /// Run several configurations and print their rate CDFs side by side.
    Compare(CompareArgs),
    /// Check closed-form rates against Monte Carlo for N = 2, 4, 8 and both
    /// receivers.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Full,
    Desk,
}

#[derive(Args)]
struct Source {
    /// TOML configuration file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration used when no file is given.
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
}

impl Source {
    fn load(&self) -> anyhow::Result<SimConfig> {
        match &self.config {
            Some(path) => SimConfig::from_file(path).with_context(|| format!("reading {}", path.display())),
            None => Ok(match self.preset {
                Preset::Full => SimConfig::full(),
                Preset::Desk => SimConfig::desk(),
            }),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Monte Carlo draws per layout.
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    /// Independent layout realizations.
    #[arg(long, default_value_t = 1)]
    layouts: usize,
    /// Channel draws used to estimate the LSFD moments.
    #[arg(long, default_value_t = 2_000)]
    moment_samples: usize,
    /// Override the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the antennas per AP.
    #[arg(long)]
    antennas: Option<usize>,
    /// Count interference from unserved links as well.
    #[arg(long)]
    full_channel: bool,
    /// Skip layouts where ZF is infeasible instead of failing.
    #[arg(long)]
    skip_infeasible: bool,
}

impl RunArgs {
    fn scenario(&self, mut cfg: SimConfig, arch: Architecture, rx: Receiver) -> anyhow::Result<Scenario> {
        if let Some(seed) = self.seed {
            cfg.rng_seed = seed;
        }
        if let Some(n) = self.antennas {
            cfg.antennas_per_ap = n;
        }
        cfg.validate()?;
        let mut s = Scenario::new(cfg, arch, rx);
        s.draws = self.draws;
        s.layouts = self.layouts;
        s.moment_samples = self.moment_samples;
        s.skip_infeasible = self.skip_infeasible;
        if self.full_channel {
            s.signal = SignalModel::FullChannel;
        }
        Ok(s)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    source: Source,
    /// multi_level, original_cellfree or fully_distributed.
    #[arg(long, default_value = "multi_level")]
    arch: Architecture,
    #[arg(long, default_value = "mrc")]
    receiver: Receiver,
    #[command(flatten)]
    run: RunArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// Configuration files, one CDF column per file, architecture and receiver.
    #[arg(long, num_args = 1.., required = true)]
    configs: Vec<PathBuf>,
    #[arg(long, num_args = 1.., default_values = ["multi_level"])]
    arch: Vec<Architecture>,
    #[arg(long, num_args = 1.., default_values = ["mrc"])]
    receiver: Vec<Receiver>,
    #[command(flatten)]
    run: RunArgs,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 2_000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    layouts: usize,
    #[arg(long, default_value_t = 1_000)]
    moment_samples: usize,
    /// Fail when fewer UEs than this fraction agree within max(5%, 0.1).
    #[arg(long)]
    require: Option<f64>,
}

/// Process exit status for a violated invariant; other failures exit with 1.
const EXIT_INVARIANT: u8 = 2;
const EXIT_AGREEMENT: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
        Command::Validate(a) => validate(a),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_status(&e))
        }
    }
}

fn exit_status(e: &anyhow::Error) -> u8 {
    let invariant = e
        .downcast_ref::<cellfree::Error>()
        .is_some_and(|c| matches!(c.root(), cellfree::Error::Invariant(_)));
    if invariant {
        EXIT_INVARIANT
    } else {
        1
    }
}

/// The error chain joined by ": ", leaving out causes whose text the
/// previous message already contains.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    let mut last = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !last.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
        last = text;
    }
    out
}

fn summarize(r: &ExperimentResult) {
    let a = agreement(&r.mc_rates(), &r.cf_rates());
    println!(
        "{} {}: {} layouts ({} skipped), mean rate mc {:.4} cf {:.4}, median {:.4}, {:.0}% of UEs within tolerance",
        r.scenario.architecture,
        r.scenario.receiver,
        r.layouts.len(),
        r.skipped.len(),
        a.mean_mc,
        a.mean_cf,
        r.cdf.median(),
        100.0 * a.fraction_within
    );
}

fn simulate(a: SimulateArgs) -> anyhow::Result<ExitCode> {
    let scenario = a.run.scenario(a.source.load()?, a.arch, a.receiver)?;
    let result = run_experiment(&scenario)?;
    let mut paths = result.write_outputs(&a.out)?;
    let plan_path = a.out.join(format!("clusters_{}.csv", a.arch));
    let dep = apply_architecture(&scenario, 0)?;
    dep.plan.write_csv(BufWriter::new(File::create(&plan_path)?))?;
    paths.push(plan_path);
    summarize(&result);
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn compare(a: CompareArgs) -> anyhow::Result<ExitCode> {
    let mut columns = Vec::new();
    for path in &a.configs {
        let cfg = SimConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?;
        for &arch in &a.arch {
            for &rx in &a.receiver {
                let result = run_experiment(&a.run.scenario(cfg.clone(), arch, rx)?)?;
                log::info!("{} done", stem(path));
                columns.push((format!("{}:{arch}_{rx}", stem(path)), result.cdf));
            }
        }
    }
    match &a.out {
        Some(path) => write_cdf_table(&columns, BufWriter::new(File::create(path)?))?,
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write_cdf_table(&columns, &mut lock)?;
            lock.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(a: ValidateArgs) -> anyhow::Result<ExitCode> {
    let base = a.source.load()?;
    if let Some(r) = a.require {
        if !(0.0..=1.0).contains(&r) {
            bail!("--require must lie in [0, 1]");
        }
    }
    let run = RunArgs {
        draws: a.draws,
        layouts: a.layouts,
        moment_samples: a.moment_samples,
        seed: None,
        antennas: None,
        full_channel: false,
        skip_infeasible: true,
    };
    let mut worst_rel = 0.0f64;
    let mut worst_fraction = 1.0f64;
    println!("receiver,antennas,layouts,fraction_within,max_relative_deviation,mean_mc,mean_cf,max_zf_residual");
    for rx in Receiver::ALL {
        for n in [2, 4, 8] {
            let mut cfg = base.clone();
            cfg.antennas_per_ap = n;
            let result = run_experiment(&run.scenario(cfg, Architecture::MultiLevel, rx)?)?;
            let ag = agreement(&result.mc_rates(), &result.cf_rates());
            let residual = result.layouts.iter().map(|l| l.max_zf_residual).fold(0.0, f64::max);
            println!(
                "{rx},{n},{},{:.4},{:.4},{:.4},{:.4},{residual:.2e}",
                result.layouts.len(),
                ag.fraction_within,
                ag.max_relative_deviation,
                ag.mean_mc,
                ag.mean_cf
            );
            worst_rel = worst_rel.max(ag.max_relative_deviation);
            worst_fraction = worst_fraction.min(ag.fraction_within);
        }
    }
    println!("max relative deviation: {worst_rel:.4}");
    match a.require {
        Some(r) if worst_fraction < r => {
            eprintln!("agreement {worst_fraction:.3} below required {r:.3}");
            Ok(ExitCode::from(EXIT_AGREEMENT))
        }
        _ => Ok(ExitCode::SUCCESS),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariant_violations_get_their_own_status() {
        let inner = cellfree::Error::Invariant("rate is NaN".into());
        let wrapped = cellfree::Error::Layout { seed: 3, source: Box::new(inner) };
        assert_eq!(exit_status(&anyhow::Error::new(wrapped)), EXIT_INVARIANT);
        let other = cellfree::Error::Config("bad".into());
        assert_eq!(exit_status(&anyhow::Error::new(other)), 1);
    }

    #[test]
    fn repeated_causes_are_printed_once() {
        let e = anyhow::Error::new(cellfree::Error::EmptyCluster { ue: 4 }).context("layout 0");
        assert_eq!(describe(&e), "layout 0: UE 4 is not served by any AP");
    }
}
