//! JSON-lines records, CSV tables and their readers.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::analysis::{AntiMonotonePair, ControllerSummary, RamTrajectory, ScatterDataset, VelocityProfile};
use crate::controllers::ControllerKind;
use crate::error::{Error, Result};
use crate::impactor::{CalibrationMap, RamSample};
use crate::protocol::{CampaignConfig, CampaignRecord, InvalidTest, StopReason, TestRecord, TickLog};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Campaign-level fields that are not part of any single test record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignMeta {
    pub controller_kind: ControllerKind,
    pub config: CampaignConfig,
    pub stop_reason: StopReason,
    pub calibration: CalibrationMap,
    #[serde(default)]
    pub invalid_tests: Vec<InvalidTest>,
}

/// Trailing line of every records file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordSummary {
    pub test_count: usize,
    pub falls: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<CampaignMeta>,
}

impl RecordSummary {
    pub fn of(records: &[TestRecord], campaign: Option<CampaignMeta>) -> Self {
        Self { test_count: records.len(), falls: records.iter().filter(|r| r.fallover).count(), campaign }
    }
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: RecordSummary,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordFile {
    pub records: Vec<TestRecord>,
    pub summaries: Vec<RecordSummary>,
    /// Campaigns rebuilt from records followed by a campaign summary.
    pub campaigns: Vec<CampaignRecord>,
    /// One message per ignored unknown field.
    pub warnings: Vec<String>,
}

pub fn records_to_jsonl(records: &[TestRecord], summary: &RecordSummary) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    let line = SummaryLine { summary: summary.clone() };
    out.push_str(&serde_json::to_string(&line).expect("summary serializes"));
    out.push('\n');
    out
}

pub fn write_records(records: &[TestRecord], path: &Path) -> Result<()> {
    fs::write(path, records_to_jsonl(records, &RecordSummary::of(records, None)))?;
    Ok(())
}

pub fn write_campaign(campaign: &CampaignRecord, path: &Path) -> Result<()> {
    let meta = CampaignMeta {
        controller_kind: campaign.controller_kind,
        config: campaign.config,
        stop_reason: campaign.stop_reason,
        calibration: campaign.calibration,
        invalid_tests: campaign.invalid_tests.clone(),
    };
    fs::write(path, records_to_jsonl(&campaign.tests, &RecordSummary::of(&campaign.tests, Some(meta))))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<TestRecord>> {
    Ok(read_record_file(path)?.records)
}

pub fn read_record_file(path: &Path) -> Result<RecordFile> {
    parse_records(&read_text(path)?)
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::File { path: path.display().to_string(), source })
}

/// Collects dotted paths present in `original` but absent in `known`.
fn unknown_fields(original: &Value, known: &Value, prefix: &str, out: &mut Vec<String>) {
    if let (Value::Object(o), Value::Object(k)) = (original, known) {
        for (key, v) in o {
            let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
            match k.get(key) {
                Some(kv) => unknown_fields(v, kv, &path, out),
                None => out.push(path),
            }
        }
    }
}

fn decode<T: DeserializeOwned + Serialize>(value: Value, line: usize, warnings: &mut Vec<String>) -> Result<T> {
    let parsed: T = serde_path_to_error::deserialize(&value).map_err(|e| Error::SchemaMismatch {
        line,
        field: e.path().to_string(),
        message: e.into_inner().to_string(),
    })?;
    let known = serde_json::to_value(&parsed).expect("value serializes");
    let mut extra = Vec::new();
    unknown_fields(&value, &known, "", &mut extra);
    for field in extra {
        let msg = format!("line {line}: ignoring unknown field `{field}`");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(parsed)
}

pub fn parse_records(text: &str) -> Result<RecordFile> {
    let mut file = RecordFile::default();
    let mut pending: Vec<TestRecord> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(raw).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if value.get("summary").is_some() {
            let s: SummaryLine = decode(value, line, &mut file.warnings)?;
            if let Some(meta) = &s.summary.campaign {
                file.campaigns.push(CampaignRecord {
                    controller_kind: meta.controller_kind,
                    config: meta.config,
                    tests: std::mem::take(&mut pending),
                    invalid_tests: meta.invalid_tests.clone(),
                    stop_reason: meta.stop_reason,
                    calibration: meta.calibration,
                });
            }
            pending.clear();
            file.summaries.push(s.summary);
        } else {
            let r: TestRecord = decode(value, line, &mut file.warnings)?;
            pending.push(r.clone());
            file.records.push(r);
        }
    }
    Ok(file)
}

pub fn write_csv<T: Serialize>(rows: impl IntoIterator<Item = T>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { line, message: format!("{kind:?}") },
    }
}

/// Rows with their 1-based line numbers.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = fs::File::open(path).map_err(|source| Error::File { path: path.display().to_string(), source })?;
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(file);
    let headers = r.headers().map_err(csv_err)?.clone();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let row: T = rec.deserialize(Some(&headers)).map_err(|e| match e.kind() {
            csv::ErrorKind::Deserialize { err, .. } => Error::SchemaMismatch {
                line,
                field: err.field().and_then(|i| headers.get(i as usize)).unwrap_or("").to_string(),
                message: err.to_string(),
            },
            _ => csv_err(e),
        })?;
        out.push((line, row));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub pressure_psi: f64,
    pub peak_velocity_mps: f64,
}

pub fn read_calibration_samples(path: &Path) -> Result<Vec<(f64, f64)>> {
    Ok(read_csv::<CalibrationRow>(path)?.into_iter().map(|(_, r)| (r.pressure_psi, r.peak_velocity_mps)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub controller: ControllerKind,
    pub tests: usize,
    pub falls: usize,
    pub max_recovered_momentum: Option<f64>,
    pub min_fallen_momentum: Option<f64>,
    pub boxer_benchmark: bool,
}

impl From<&ControllerSummary> for SummaryRow {
    fn from(s: &ControllerSummary) -> Self {
        Self {
            controller: s.controller_kind,
            tests: s.tests,
            falls: s.falls,
            max_recovered_momentum: s.max_recovered_momentum,
            min_fallen_momentum: s.min_fallen_momentum,
            boxer_benchmark: s.boxer_benchmark,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub test_id: String,
    pub velocity_mps: f64,
    pub momentum_kgmps: f64,
    pub stance: String,
    pub swing: String,
    pub fallover: bool,
    pub controller: ControllerKind,
}

pub fn scatter_rows(data: &ScatterDataset) -> Vec<ScatterRow> {
    data.points
        .iter()
        .map(|p| ScatterRow {
            test_id: p.test_id.clone(),
            velocity_mps: p.impact_velocity,
            momentum_kgmps: p.impact_momentum,
            stance: p.phase.stance_label().to_string(),
            swing: p.phase.swing_label().to_string(),
            fallover: p.fallover,
            controller: p.controller_kind,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub controller: ControllerKind,
    pub fall_test_id: String,
    pub fall_momentum: f64,
    pub recovery_test_id: String,
    pub recovery_momentum: f64,
    pub momentum_gap: f64,
}

impl From<&AntiMonotonePair> for PairRow {
    fn from(p: &AntiMonotonePair) -> Self {
        Self {
            controller: p.low.controller_kind,
            fall_test_id: p.low.test_id.clone(),
            fall_momentum: p.low.impact_momentum,
            recovery_test_id: p.high.test_id.clone(),
            recovery_momentum: p.high.impact_momentum,
            momentum_gap: p.momentum_gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub controller: ControllerKind,
    pub test_id: String,
    pub t_s: f64,
    pub v_mps: f64,
}

pub fn profile_rows(profiles: &[VelocityProfile]) -> Vec<ProfileRow> {
    profiles
        .iter()
        .flat_map(|p| {
            p.t.iter().zip(&p.v).map(|(&t, &v)| ProfileRow {
                controller: p.controller_kind,
                test_id: p.test_id.clone(),
                t_s: t,
                v_mps: v,
            })
        })
        .collect()
}

pub fn read_profiles(path: &Path) -> Result<Vec<VelocityProfile>> {
    let mut out: Vec<VelocityProfile> = Vec::new();
    for (_, row) in read_csv::<ProfileRow>(path)? {
        match out.last_mut() {
            Some(p) if p.test_id == row.test_id && p.controller_kind == row.controller => {
                p.t.push(row.t_s);
                p.v.push(row.v_mps);
            }
            _ => out.push(VelocityProfile {
                test_id: row.test_id,
                controller_kind: row.controller,
                impact_velocity: row.v_mps,
                t: vec![row.t_s],
                v: vec![row.v_mps],
            }),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub test_id: String,
    pub controller: ControllerKind,
    pub t_s: f64,
    pub position_m: f64,
    pub velocity_mps: f64,
    pub force_n: f64,
    pub gap_m: f64,
}

pub fn trajectory_rows(traj: &RamTrajectory) -> impl Iterator<Item = TrajectoryRow> + '_ {
    traj.samples.iter().map(|s| TrajectoryRow {
        test_id: traj.test_id.clone(),
        controller: traj.controller_kind,
        t_s: s.time,
        position_m: s.position,
        velocity_mps: s.velocity,
        force_n: s.force,
        gap_m: s.gap,
    })
}

pub fn read_trajectories(path: &Path) -> Result<Vec<RamTrajectory>> {
    let mut out: Vec<RamTrajectory> = Vec::new();
    for (_, row) in read_csv::<TrajectoryRow>(path)? {
        let sample = RamSample {
            time: row.t_s,
            position: row.position_m,
            velocity: row.velocity_mps,
            force: row.force_n,
            gap: row.gap_m,
        };
        match out.last_mut() {
            Some(t) if t.test_id == row.test_id && t.controller_kind == row.controller => t.samples.push(sample),
            _ => out.push(RamTrajectory { test_id: row.test_id, controller_kind: row.controller, samples: vec![sample] }),
        }
    }
    Ok(out)
}

/// One row of the per-tick trajectory log, in its fixed column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickRow {
    pub tick: u64,
    pub time_s: f64,
    pub ram_pos_m: f64,
    pub ram_vel_mps: f64,
    #[serde(rename = "contact_force_N")]
    pub contact_force_n: f64,
    pub com_x_m: f64,
    pub com_z_m: f64,
    pub com_vx_mps: f64,
    pub com_vz_mps: f64,
    pub pitch_rad: f64,
    pub pitch_rate_radps: f64,
    pub stance_label: String,
    pub swing_label: String,
}

pub fn tick_rows(log: &[TickLog]) -> impl Iterator<Item = TickRow> + '_ {
    log.iter().map(|l| TickRow {
        tick: l.tick,
        time_s: l.time,
        ram_pos_m: l.ram_position,
        ram_vel_mps: l.ram_velocity,
        contact_force_n: l.contact_force,
        com_x_m: l.robot.com_x,
        com_z_m: l.robot.com_z,
        com_vx_mps: l.robot.com_vx,
        com_vz_mps: l.robot.com_vz,
        pitch_rad: l.robot.pitch,
        pitch_rate_radps: l.robot.pitch_rate,
        stance_label: l.robot.gait.stance_label().to_string(),
        swing_label: l.robot.gait.swing_label().to_string(),
    })
}

/// Writes `text` and a trailing newline if missing.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    if !text.ends_with('\n') {
        f.write_all(b"\n")?;
    }
    Ok(())
}
