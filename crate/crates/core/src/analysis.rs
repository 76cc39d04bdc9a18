//! Post-campaign metrics over test records and ram trajectories.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::biped::GaitPhase;
use crate::controllers::ControllerKind;
use crate::error::{Error, Result};
use crate::impactor::{detect_impact, RamSample};
use crate::protocol::{CampaignRecord, TestRecord};

/// Average effective straight-punch momentum of elite boxers, kg·m/s.
pub const BOXER_MOMENTUM: f64 = 26.506;

/// Default post-impact window for velocity profiles, s.
pub const PROFILE_WINDOW: f64 = 0.05;

/// Profile resampling rate, Hz.
pub const PROFILE_RATE: f64 = 1000.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub mean: f64,
    /// Sample (n - 1) standard deviation; 0 when `count` is 1.
    pub std: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapStatistics {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
    pub per_controller: BTreeMap<ControllerKind, GapSummary>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    fn summary(&self) -> GapSummary {
        let std = if self.n > 1 { (self.m2 / (self.n - 1) as f64).sqrt() } else { 0.0 };
        GapSummary { mean: self.mean, std, count: self.n }
    }
}

pub fn gap_statistics(records: &[TestRecord]) -> Result<GapStatistics> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut all = Welford::default();
    let mut per: BTreeMap<ControllerKind, Welford> = BTreeMap::new();
    for r in records {
        all.push(r.peak_to_impact_gap);
        per.entry(r.controller_kind).or_default().push(r.peak_to_impact_gap);
    }
    let overall = all.summary();
    Ok(GapStatistics {
        mean: overall.mean,
        std: overall.std,
        count: overall.count,
        per_controller: per.into_iter().map(|(k, w)| (k, w.summary())).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub controller_kind: ControllerKind,
    pub tests: usize,
    pub falls: usize,
    pub max_recovered_momentum: Option<f64>,
    pub min_fallen_momentum: Option<f64>,
    /// Max recovered momentum reaches the boxer benchmark.
    pub boxer_benchmark: bool,
}

/// Per-controller outcome table across campaigns, in controller order.
pub fn summarize(campaigns: &[CampaignRecord]) -> Result<Vec<ControllerSummary>> {
    if campaigns.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut by_kind: BTreeMap<ControllerKind, Vec<&TestRecord>> = BTreeMap::new();
    for c in campaigns {
        let entry = by_kind.entry(c.controller_kind).or_default();
        entry.extend(c.tests.iter());
    }
    Ok(by_kind.into_iter().map(|(kind, tests)| summarize_tests(kind, &tests)).collect())
}

pub fn summarize_tests(kind: ControllerKind, tests: &[&TestRecord]) -> ControllerSummary {
    let max_recovered = tests.iter().filter(|t| !t.fallover).map(|t| t.impact_momentum).reduce(f64::max);
    let min_fallen = tests.iter().filter(|t| t.fallover).map(|t| t.impact_momentum).reduce(f64::min);
    ControllerSummary {
        controller_kind: kind,
        tests: tests.len(),
        falls: tests.iter().filter(|t| t.fallover).count(),
        max_recovered_momentum: max_recovered,
        min_fallen_momentum: min_fallen,
        boxer_benchmark: max_recovered.is_some_and(|m| m >= BOXER_MOMENTUM),
    }
}

/// Max recovered momentum of one campaign, if any test was recovered.
pub fn max_recovered_momentum(campaign: &CampaignRecord) -> Option<f64> {
    campaign.tests.iter().filter(|t| !t.fallover).map(|t| t.impact_momentum).reduce(f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntiMonotonePair {
    /// The fall.
    pub low: TestRecord,
    /// The recovery at strictly higher momentum.
    pub high: TestRecord,
    pub momentum_gap: f64,
}

/// Same-controller (fall, recovery) pairs where the recovery saw strictly
/// more momentum, sorted by momentum gap.
pub fn find_anti_monotone_pairs(records: &[TestRecord]) -> Vec<AntiMonotonePair> {
    let mut by_kind: BTreeMap<ControllerKind, (Vec<&TestRecord>, Vec<&TestRecord>)> = BTreeMap::new();
    for r in records {
        let e = by_kind.entry(r.controller_kind).or_default();
        if r.fallover { e.0.push(r) } else { e.1.push(r) }
    }
    let mut pairs = Vec::new();
    for (falls, mut recoveries) in by_kind.into_values() {
        recoveries.sort_by(|a, b| a.impact_momentum.total_cmp(&b.impact_momentum));
        for f in falls {
            let start = recoveries.partition_point(|r| r.impact_momentum <= f.impact_momentum);
            for r in &recoveries[start..] {
                pairs.push(AntiMonotonePair {
                    low: f.clone(),
                    high: (*r).clone(),
                    momentum_gap: r.impact_momentum - f.impact_momentum,
                });
            }
        }
    }
    pairs.sort_by(|a, b| {
        a.momentum_gap
            .total_cmp(&b.momentum_gap)
            .then_with(|| a.low.test_id.cmp(&b.low.test_id))
            .then_with(|| a.high.test_id.cmp(&b.high.test_id))
    });
    pairs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub test_id: String,
    pub controller_kind: ControllerKind,
    pub impact_velocity: f64,
    pub impact_momentum: f64,
    pub phase: GaitPhase,
    pub fallover: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScatterDataset {
    pub points: Vec<ScatterPoint>,
}

impl ScatterDataset {
    pub fn from_records(records: &[TestRecord]) -> Self {
        let points = records
            .iter()
            .map(|r| ScatterPoint {
                test_id: r.test_id.clone(),
                controller_kind: r.controller_kind,
                impact_velocity: r.impact_velocity,
                impact_momentum: r.impact_momentum,
                phase: r.phase_at_impact,
                fallover: r.fallover,
            })
            .collect();
        Self { points }
    }
}

/// Ram trace of one test, as persisted alongside its record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RamTrajectory {
    pub test_id: String,
    pub controller_kind: ControllerKind,
    pub samples: Vec<RamSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VelocityProfile {
    pub test_id: String,
    pub controller_kind: ControllerKind,
    pub impact_velocity: f64,
    /// Time since impact, s.
    pub t: Vec<f64>,
    pub v: Vec<f64>,
}

impl VelocityProfile {
    /// First resampled time at which the ram has stopped, if within the window.
    pub fn time_to_zero(&self) -> Option<f64> {
        self.t.iter().zip(&self.v).find(|(_, v)| **v <= 0.0).map(|(t, _)| *t)
    }
}

/// Linear interpolation of ram velocity at `time`; samples must be time-sorted.
fn velocity_at(samples: &[RamSample], time: f64) -> f64 {
    let i = samples.partition_point(|s| s.time < time);
    if i == 0 {
        return samples[0].velocity;
    }
    if i == samples.len() {
        return samples[i - 1].velocity;
    }
    let (a, b) = (samples[i - 1], samples[i]);
    if b.time == a.time {
        return b.velocity;
    }
    let w = (time - a.time) / (b.time - a.time);
    a.velocity + w * (b.velocity - a.velocity)
}

/// Ram velocity aligned at impact and resampled at 1 kHz over `window`,
/// ordered by controller then input order.
pub fn velocity_profiles(trajectories: &[RamTrajectory], window: f64) -> Result<Vec<VelocityProfile>> {
    if !(window > 0.0) {
        return Err(Error::InvalidConfig("profile window must be positive".into()));
    }
    let n = (window * PROFILE_RATE).round() as usize;
    let mut out = Vec::with_capacity(trajectories.len());
    for traj in trajectories {
        let event = detect_impact(&traj.samples)?;
        let last = traj.samples.last().map_or(event.impact_time, |s| s.time);
        let available = last - event.impact_time;
        if available + 1e-9 < window {
            return Err(Error::WindowExceedsLog { window, available });
        }
        let t: Vec<f64> = (0..=n).map(|i| (i as f64 / PROFILE_RATE).min(window)).collect();
        let v = t.iter().map(|dt| velocity_at(&traj.samples, event.impact_time + dt)).collect();
        out.push(VelocityProfile {
            test_id: traj.test_id.clone(),
            controller_kind: traj.controller_kind,
            impact_velocity: event.impact_velocity,
            t,
            v,
        });
    }
    out.sort_by_key(|p| p.controller_kind);
    Ok(out)
}

/// Two-sided exact sign test p-value for `wins` against `losses`; ties are
/// dropped by the caller.
pub fn sign_test(wins: u32, losses: u32) -> f64 {
    let n = wins + losses;
    if n == 0 {
        return 1.0;
    }
    let k = wins.min(losses);
    // P(X <= k) for X ~ Binomial(n, 1/2), in log space to stay finite.
    let ln_half_n = n as f64 * 0.5f64.ln();
    let mut ln_choose = 0.0;
    let mut tail = 0.0;
    for i in 0..=k {
        if i > 0 {
            ln_choose += ((n - i + 1) as f64).ln() - (i as f64).ln();
        }
        tail += (ln_choose + ln_half_n).exp();
    }
    (2.0 * tail).min(1.0)
}
