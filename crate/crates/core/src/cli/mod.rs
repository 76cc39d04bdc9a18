//! Command-line front end: argument types, subcommands and artifact layout.

pub mod config;
pub mod io;
pub mod manifest;
pub mod plot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use crate::analysis::{
    find_anti_monotone_pairs, gap_statistics, summarize_tests, velocity_profiles, RamTrajectory, ScatterDataset,
    VelocityProfile, PROFILE_WINDOW,
};
use crate::controllers::ControllerKind;
use crate::error::{Error, Result};
use crate::impactor::{fit_calibration, CalibrationMap, OperatorAction};
use crate::protocol::{placement_from_seed, run_campaign_observed, run_test, test_id, CampaignConfig, TestOutcome, TestRecord};
use config::RunConfig;
use manifest::RunManifest;

pub const OUT_DIR_ENV: &str = "IMPACT_HARNESS_OUT_DIR";

/// Ram samples kept around each impact in trajectory files, s.
const TRAJECTORY_BEFORE: f64 = 0.05;
const TRAJECTORY_AFTER: f64 = 0.25;

#[derive(Debug, Parser)]
#[command(
    name = "impact-harness",
    about = "Linear-impactor disturbance-rejection test harness for a planar biped",
    disable_version_flag = true,
    arg_required_else_help = true
)]
pub struct Cli {
    /// Print the tool version and calibration defaults.
    #[arg(short = 'V', long)]
    pub version: bool,

    /// Output directory [default: $IMPACT_HARNESS_OUT_DIR, else ./out].
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the pressure to peak-velocity map from a CSV of samples.
    Calibrate {
        /// CSV with columns pressure_psi, peak_velocity_mps.
        samples: PathBuf,
    },
    /// Run a single impact test.
    RunTest {
        #[arg(long)]
        controller: ControllerKind,
        /// Operator pressure, PSI.
        #[arg(long)]
        pressure: f64,
        #[arg(long)]
        seed: u64,
        /// Optional TOML config for models and calibration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write the per-tick trajectory log.
        #[arg(long)]
        tick_log: bool,
    },
    /// Run escalation campaigns described by a TOML config.
    RunCampaign {
        #[arg(long)]
        config: PathBuf,
        /// Campaigns run in parallel; each writes its own files.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        jobs: u32,
    },
    /// Summaries, gap statistics, scatter data, anti-monotone pairs and
    /// velocity profiles from record files.
    Analyze {
        #[arg(required = true)]
        records: Vec<PathBuf>,
    },
    /// Render an SVG figure.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Records (.jsonl) for scatter; profiles CSV or records for
        /// profiles; samples CSV for calibration.
        input: PathBuf,
        /// Profile window after impact, s.
        #[arg(long, default_value_t = PROFILE_WINDOW)]
        window: f64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Calibrate { .. } => "calibrate",
            Command::RunTest { .. } => "run-test",
            Command::RunCampaign { .. } => "run-campaign",
            Command::Analyze { .. } => "analyze",
            Command::Plot { .. } => "plot",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    Scatter,
    Profiles,
    Calibration,
}

/// What a command produced: report lines, then output paths.
#[derive(Debug, Default)]
pub struct Outcome {
    pub report: Vec<String>,
    pub paths: Vec<PathBuf>,
}

pub fn out_dir(flag: Option<&Path>) -> PathBuf {
    match flag {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out")),
    }
}

pub fn version_text() -> String {
    let c = CalibrationMap::default();
    format!(
        "impact-harness {}\ncalibration defaults: slope {} (m/s)/PSI, intercept {} m/s, valid pressure [{}, {}] PSI",
        env!("CARGO_PKG_VERSION"),
        c.slope,
        c.intercept,
        c.valid_pressure_range[0],
        c.valid_pressure_range[1]
    )
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    if cli.version {
        return Ok(Outcome { report: vec![version_text()], paths: vec![] });
    }
    let out = out_dir(cli.out.as_deref());
    match &cli.command {
        None => Ok(Outcome { report: vec![version_text()], paths: vec![] }),
        Some(Command::Calibrate { samples }) => calibrate(samples, &out),
        Some(Command::RunTest { controller, pressure, seed, config, tick_log }) => {
            let mut cfg = match config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            cfg.tick_log |= *tick_log;
            single_test(&cfg, *controller, *pressure, *seed, &out)
        }
        Some(Command::RunCampaign { config, jobs }) => campaigns(&RunConfig::load(config)?, *jobs as usize, &out),
        Some(Command::Analyze { records }) => analyze(records, &out),
        Some(Command::Plot { kind, input, window }) => plot_cmd(*kind, input, *window, &out),
    }
}

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

pub fn calibrate(samples: &Path, out: &Path) -> Result<Outcome> {
    let data = io::read_calibration_samples(samples)?;
    let map = fit_calibration(&data)?;
    create_dir(out)?;
    let path = out.join("calibration.json");
    io::write_text(&path, &serde_json::to_string_pretty(&map).expect("map serializes"))?;
    Ok(Outcome {
        report: vec![
            format!("samples {}", data.len()),
            format!("slope {:.6} (m/s)/PSI", map.slope),
            format!("intercept {:.4} m/s", map.intercept),
            format!("max residual {:.4} m/s", map.max_residual),
            format!("valid pressure [{}, {}] PSI", map.valid_pressure_range[0], map.valid_pressure_range[1]),
        ],
        paths: vec![path],
    })
}

fn trajectory_of(outcome: &TestOutcome) -> RamTrajectory {
    let t0 = outcome.event.impact_time - TRAJECTORY_BEFORE;
    let t1 = outcome.event.impact_time + TRAJECTORY_AFTER;
    RamTrajectory {
        test_id: outcome.record.test_id.clone(),
        controller_kind: outcome.record.controller_kind,
        samples: outcome.ram_trace.iter().filter(|s| s.time >= t0 && s.time <= t1).copied().collect(),
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn single_test(cfg: &RunConfig, kind: ControllerKind, pressure: f64, seed: u64, out: &Path) -> Result<Outcome> {
    let harness = cfg.harness().with_window(cfg.campaign.observation_window);
    let controller = cfg.controller(kind)?;
    let action = OperatorAction { pressure, placement_offset: placement_from_seed(seed, cfg.campaign.placement_spread), seed };
    let id = test_id(kind, pressure, 1);
    let outcome = run_test(&controller, &action, &harness, &id)?;
    create_dir(out)?;
    let stem = format!("test_{id}_s{seed}");
    let mut record = outcome.record.clone();
    let mut paths = Vec::new();
    if cfg.save_trajectories {
        let tpath = out.join(format!("{stem}.traj.csv"));
        io::write_csv(io::trajectory_rows(&trajectory_of(&outcome)), &tpath)?;
        record.trajectory_ref = Some(file_name(&tpath));
        paths.push(tpath);
    }
    if cfg.tick_log {
        let lpath = out.join(format!("{stem}.ticks.csv"));
        io::write_csv(io::tick_rows(&outcome.log), &lpath)?;
        paths.push(lpath);
    }
    let path = out.join(format!("{stem}.jsonl"));
    io::write_records(std::slice::from_ref(&record), &path)?;
    paths.insert(0, path);
    let report = vec![format!(
        "{} v_impact {:.4} m/s momentum {:.4} kg*m/s phase {} {}",
        record.test_id,
        record.impact_velocity,
        record.impact_momentum,
        record.phase_at_impact,
        if record.fallover { "FALL" } else { "recovered" }
    )];
    Ok(Outcome { report, paths })
}

pub fn campaigns(cfg: &RunConfig, jobs: usize, out: &Path) -> Result<Outcome> {
    create_dir(out)?;
    let tasks: Vec<(ControllerKind, u64)> = (0..cfg.campaigns as u64)
        .flat_map(|i| cfg.controllers.iter().map(move |k| (*k, i)))
        .map(|(k, i)| (k, cfg.campaign.seed_base + i))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let results: Vec<Result<(Vec<PathBuf>, String)>> = pool.install(|| {
        tasks.par_iter().map(|&(kind, seed)| one_campaign(cfg, kind, seed, out)).collect()
    });
    let mut paths = Vec::new();
    let mut report = Vec::new();
    for r in results {
        let (p, line) = r?;
        paths.extend(p);
        report.push(line);
    }
    let manifest_path = out.join("manifest.json");
    let names = paths.iter().map(|p| file_name(p)).collect();
    RunManifest::new(cfg, names).write(&manifest_path)?;
    paths.push(manifest_path);
    Ok(Outcome { report, paths })
}

fn one_campaign(cfg: &RunConfig, kind: ControllerKind, seed: u64, out: &Path) -> Result<(Vec<PathBuf>, String)> {
    let controller = cfg.controller(kind)?;
    let config = CampaignConfig { seed_base: seed, ..cfg.campaign };
    let stem = format!("campaign_{kind}_s{seed}");
    let tpath = out.join(format!("{stem}.traj.csv"));
    let mut trajectories = Vec::new();
    let mut paths = Vec::new();
    let mut campaign = run_campaign_observed(&controller, &config, &cfg.harness(), |o| {
        if cfg.save_trajectories {
            trajectories.push(trajectory_of(o));
        }
        if cfg.tick_log {
            let lpath = out.join(format!("{stem}_{}.ticks.csv", o.record.test_id));
            io::write_csv(io::tick_rows(&o.log), &lpath)?;
            paths.push(lpath);
        }
        Ok(())
    })?;
    if cfg.save_trajectories {
        io::write_csv(trajectories.iter().flat_map(io::trajectory_rows), &tpath)?;
        let name = file_name(&tpath);
        for t in &mut campaign.tests {
            t.trajectory_ref = Some(name.clone());
        }
    }
    let path = out.join(format!("{stem}.jsonl"));
    io::write_campaign(&campaign, &path)?;
    paths.insert(0, path);
    if cfg.save_trajectories {
        paths.insert(1, tpath);
    }
    let outcomes: String = campaign.tests.iter().map(|t| if t.fallover { 'F' } else { '.' }).collect();
    let line = format!("{kind} seed {seed}: {} tests [{outcomes}] stop {:?}", campaign.tests.len(), campaign.stop_reason);
    Ok((paths, line))
}

/// Loads the trajectories referenced by `records`, resolving references
/// against `base`.
fn referenced_trajectories(records: &[(PathBuf, TestRecord)]) -> Result<Vec<RamTrajectory>> {
    let mut cache: BTreeMap<PathBuf, Vec<RamTrajectory>> = BTreeMap::new();
    let mut out = Vec::new();
    for (base, r) in records {
        let Some(name) = &r.trajectory_ref else { continue };
        let path = base.join(name);
        if !cache.contains_key(&path) {
            cache.insert(path.clone(), io::read_trajectories(&path)?);
        }
        if let Some(t) = cache[&path].iter().find(|t| t.test_id == r.test_id && t.controller_kind == r.controller_kind) {
            out.push(t.clone());
        }
    }
    Ok(out)
}

fn load_records(files: &[PathBuf]) -> Result<Vec<(PathBuf, TestRecord)>> {
    let mut out = Vec::new();
    for f in files {
        let base = f.parent().map(Path::to_path_buf).unwrap_or_default();
        for r in io::read_records(f)? {
            out.push((base.clone(), r));
        }
    }
    Ok(out)
}

pub fn analyze(files: &[PathBuf], out: &Path) -> Result<Outcome> {
    let tagged = load_records(files)?;
    let records: Vec<TestRecord> = tagged.iter().map(|(_, r)| r.clone()).collect();
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    create_dir(out)?;
    let mut paths = Vec::new();
    let mut report = Vec::new();

    let mut by_kind: BTreeMap<ControllerKind, Vec<&TestRecord>> = BTreeMap::new();
    for r in &records {
        by_kind.entry(r.controller_kind).or_default().push(r);
    }
    let summaries: Vec<_> = by_kind.iter().map(|(k, t)| summarize_tests(*k, t)).collect();
    for s in &summaries {
        report.push(format!(
            "{}: {} tests, {} falls, max recovered {}, boxer benchmark {}",
            s.controller_kind,
            s.tests,
            s.falls,
            s.max_recovered_momentum.map_or_else(|| "none".to_string(), |m| format!("{m:.3} kg*m/s")),
            s.boxer_benchmark
        ));
    }
    let p = out.join("summary.csv");
    io::write_csv(summaries.iter().map(io::SummaryRow::from), &p)?;
    paths.push(p);

    let gaps = gap_statistics(&records)?;
    report.push(format!("peak-to-impact gap {:.4} (+/- {:.4}) s over {} tests", gaps.mean, gaps.std, gaps.count));
    let p = out.join("gaps.json");
    io::write_text(&p, &serde_json::to_string_pretty(&gaps).expect("gaps serialize"))?;
    paths.push(p);

    let p = out.join("scatter.csv");
    io::write_csv(io::scatter_rows(&ScatterDataset::from_records(&records)), &p)?;
    paths.push(p);

    let pairs = find_anti_monotone_pairs(&records);
    report.push(format!("anti-monotone pairs {}", pairs.len()));
    let p = out.join("pairs.csv");
    io::write_csv(pairs.iter().map(io::PairRow::from), &p)?;
    paths.push(p);

    let trajectories = referenced_trajectories(&tagged)?;
    if !trajectories.is_empty() {
        let profiles = velocity_profiles(&trajectories, PROFILE_WINDOW)?;
        let p = out.join("profiles.csv");
        io::write_csv(io::profile_rows(&profiles), &p)?;
        paths.push(p);
    }
    Ok(Outcome { report, paths })
}

fn profiles_from(input: &Path, window: f64) -> Result<Vec<VelocityProfile>> {
    if input.extension().is_some_and(|e| e == "jsonl") {
        let trajectories = referenced_trajectories(&load_records(&[input.to_path_buf()])?)?;
        velocity_profiles(&trajectories, window)
    } else {
        io::read_profiles(input)
    }
}

pub fn plot_cmd(kind: PlotKind, input: &Path, window: f64, out: &Path) -> Result<Outcome> {
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "plot".into());
    let (svg, name) = match kind {
        PlotKind::Scatter => {
            let records = io::read_records(input)?;
            (plot::scatter_svg(&ScatterDataset::from_records(&records)), format!("{stem}_scatter.svg"))
        }
        PlotKind::Profiles => (plot::profiles_svg(&profiles_from(input, window)?, window), format!("{stem}_profiles.svg")),
        PlotKind::Calibration => {
            let samples = io::read_calibration_samples(input)?;
            let map = fit_calibration(&samples)?;
            (plot::calibration_svg(&samples, &map), format!("{stem}_calibration.svg"))
        }
    };
    create_dir(out)?;
    let path = out.join(name);
    io::write_text(&path, &svg)?;
    Ok(Outcome { report: vec![], paths: vec![path] })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn parses_subcommands() {
        let c = Cli::try_parse_from(["impact-harness", "run-test", "--controller", "BB", "--pressure", "85", "--seed", "3"]).unwrap();
        assert!(matches!(c.command, Some(Command::RunTest { controller: ControllerKind::BBAnalog, seed: 3, .. })));
        let c = Cli::try_parse_from(["impact-harness", "plot", "--kind", "scatter", "r.jsonl"]).unwrap();
        assert!(matches!(c.command, Some(Command::Plot { kind: PlotKind::Scatter, .. })));
        assert!(Cli::try_parse_from(["impact-harness", "run-campaign", "--config", "c.toml", "--jobs", "0"]).is_err());
        let err = Cli::try_parse_from(["impact-harness", "run-test", "--controler", "TM"]).unwrap_err();
        assert!(err.to_string().contains("--controler"));
    }
}
