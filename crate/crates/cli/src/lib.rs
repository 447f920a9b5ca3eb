// SPDX-License-Identifier: Apache-2.0

//! Command surface of the `prosim` binary.
//!
//! Every command is a pure function of (scenario, seed, flags). Output
//! files are written atomically into `--out`, followed by `manifest.json`,
//! which is the only output carrying wall-clock time.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use prosim_core::pro::{achievable_inverter_counts, check_frequency_coverage};
use prosim_core::report::{self, CsvRecord};
use prosim_core::sca::hiding::evaluate_hiding;
use prosim_core::sca::traceio::write_traces;
use prosim_core::scenario::Scenario;
use prosim_core::sim;
use prosim_core::Error;

pub const MANIFEST: &str = "manifest.json";
pub const THREADS_ENV: &str = "PRO_SIM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "prosim", version, about = "Programmable ring-oscillator sensor simulator")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    #[arg(long, global = true)]
    pub scenario: Option<PathBuf>,
    /// Master seed; overrides `seeds.master` in the scenario.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Traces per fixed-vs-random test (`sca` only).
    #[arg(long, global = true)]
    pub traces: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Mean sensor frequency over the scenario's supply sweep.
    SweepVoltage {
        /// SEL configuration ids to sweep.
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 63])]
        configs: Vec<u64>,
    },
    /// Drop ratios of every sensor and the inferred fault location.
    LocateFault,
    /// Baseline characterization, then anomaly detection per interval.
    Detect,
    /// Hiding evaluation: TVLA, spectrum, CPA and band-stop attack per mode.
    Sca,
    /// Achievable frequency table of the scenario's design.
    Configs,
    /// Waster calibration and the resulting linearity sweep.
    CalibrateWasters,
    /// Parses and validates a scenario, printing its hash.
    Validate,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SweepVoltage { .. } => "sweep-voltage",
            Command::LocateFault => "locate-fault",
            Command::Detect => "detect",
            Command::Sca => "sca",
            Command::Configs => "configs",
            Command::CalibrateWasters => "calibrate-wasters",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub scenario_hash: String,
    pub tool_version: String,
    pub seed: u64,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<String>,
}

/// What a command produced, for the caller to print.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub summary: String,
    pub manifest: Option<RunManifest>,
}

/// Builds the global rayon pool from `PRO_SIM_THREADS`, if set.
pub fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::input(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Invariant(format!("thread pool: {e}")))?;
    Ok(())
}

pub fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let started = Instant::now();
    let c = &cli.common;
    let path = c.scenario.as_ref().ok_or_else(|| Error::input("--scenario is required"))?;
    let mut scenario = Scenario::load(path).with_context(|| format!("loading scenario {}", path.display()))?;
    if let Some(seed) = c.seed {
        scenario.file.seeds.master = seed;
    }
    let seed = scenario.master_seed();

    if let Command::Validate = cli.command {
        return Ok(Outcome { summary: validate_summary(&scenario), manifest: None });
    }

    let out = Output::new(&c.out)?;
    let summary = match &cli.command {
        Command::SweepVoltage { configs } => {
            let rows = sim::sweep_voltage(&scenario, configs, seed)?;
            let recs: Vec<report::SweepRecord> = rows.iter().map(Into::into).collect();
            out.csv("sweep.csv", &recs)?;
            format!("{} sweep rows", recs.len())
        }
        Command::LocateFault => {
            let (run, loc) = sim::run_locate(&scenario, seed)?;
            out.csv("drop_ratios.csv", &report::drop_ratio_records(&run, &scenario.floorplan))?;
            out.csv("localization.csv", &report::localization_records(&loc))?;
            format!(
                "inferred row {} ({} region), confidence {:.4}",
                loc.inferred_row,
                loc.inferred_region.as_str(),
                loc.confidence
            )
        }
        Command::Detect => {
            let run = sim::run_detect(&scenario, seed)?;
            let recs: Vec<report::AnomalyRecord> = run.events.iter().map(Into::into).collect();
            out.csv("anomalies.csv", &recs)?;
            format!("{} anomaly events over {} intervals", recs.len(), run.intervals.len())
        }
        Command::Sca => {
            let mut budget = scenario.budget();
            if let Some(n) = c.traces {
                budget.tvla_traces = n;
            }
            let outcome = evaluate_hiding(&scenario.sca_setup(), &budget, seed)?;
            for (mode, set) in &outcome.tvla_sets {
                out.write(&format!("traces-{mode}.prot"), |w| write_traces(set, w))?;
            }
            out.csv("hiding.csv", &report::hiding_records(&outcome.report))?;
            let cov = &outcome.report.coverage;
            let mut s =
                format!("coverage {} (multiple {:.4})", if cov.covered { "ok" } else { "FAILED" }, cov.multiple);
            for m in &outcome.report.modes {
                s += &format!("\n{}: max|t| {:.2}", m.mode, m.max_abs_t);
            }
            s
        }
        Command::Configs => {
            let recs = report::config_records(&scenario.design)?;
            out.csv("configs.csv", &recs)?;
            config_table(&recs)
        }
        Command::CalibrateWasters => {
            let run = sim::waster_linearity(&scenario, seed)?;
            out.csv("linearity.csv", &report::linearity_records(&run))?;
            format!(
                "i_per_waster {:e} A, i_enable {:e} A; slope {:e}, intercept {:.4}, R^2 {:.5}",
                run.i_per_waster, run.i_enable, run.fit.slope, run.fit.intercept, run.fit.r_squared
            )
        }
        Command::Validate => unreachable!(),
    };

    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        scenario_hash: scenario.hash.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        outputs: out.written.borrow().clone(),
    };
    out.write(MANIFEST, |w| {
        serde_json::to_writer_pretty(&mut *w, &manifest).map_err(|e| Error::Invariant(e.to_string()))?;
        w.write_all(b"\n")?;
        Ok(())
    })?;
    Ok(Outcome { summary, manifest: Some(manifest) })
}

fn validate_summary(s: &Scenario) -> String {
    let cov = check_frequency_coverage(s.plan().f_clk, &s.design);
    format!(
        "ok: {}x{} grid, {} sensors, {} configurations, {} waster banks, {} EM pulses\n\
         coverage at {} Hz: {} (multiple {:.4})\nhash {}",
        s.grid.rows,
        s.grid.cols,
        s.floorplan.len(),
        achievable_inverter_counts(&s.design).len(),
        s.wasters.len(),
        s.em_pulses.len(),
        s.plan().f_clk,
        cov.covered,
        cov.multiple,
        s.hash
    )
}

fn config_table(recs: &[report::ConfigRecord]) -> String {
    let mut s = format!("{:>9} {:>11} {:>7} {:>14}", "inverters", "assignments", "sel_id", "frequency_mhz");
    for r in recs {
        s += &format!(
            "\n{:>9} {:>11} {:>7} {:>14.4}",
            r.active_inverters,
            r.sel_assignments,
            r.sel_config_id,
            r.frequency / 1e6
        );
    }
    s
}

/// Output directory with write-temp-then-rename semantics.
struct Output {
    dir: PathBuf,
    written: std::cell::RefCell<Vec<String>>,
}

impl Output {
    fn new(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).map_err(Error::from).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Output { dir: dir.to_path_buf(), written: Default::default() })
    }

    fn write(
        &self,
        name: &str,
        f: impl FnOnce(&mut std::io::BufWriter<&mut fs::File>) -> prosim_core::Result<()>,
    ) -> anyhow::Result<()> {
        let target = self.dir.join(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(Error::from)?;
        {
            let mut w = std::io::BufWriter::new(tmp.as_file_mut());
            f(&mut w)?;
            w.flush().map_err(Error::from)?;
        }
        tmp.persist(&target)
            .map_err(|e| Error::from(e.error))
            .with_context(|| format!("writing {}", target.display()))?;
        if name != MANIFEST {
            self.written.borrow_mut().push(name.to_string());
        }
        Ok(())
    }

    fn csv<T: CsvRecord>(&self, name: &str, rows: &[T]) -> anyhow::Result<()> {
        self.write(name, |w| report::write_csv(rows, w))
    }
}

/// Exit code for an error chain: the core error class when there is one,
/// otherwise 2 for argument and I/O problems.
pub fn exit_code(e: &anyhow::Error) -> i32 {
    e.chain().find_map(|c| c.downcast_ref::<Error>()).map_or(2, Error::exit_code)
}
