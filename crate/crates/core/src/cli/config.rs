use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::biped::{FallCriteria, RobotSpec};
use crate::controllers::{ControllerHandle, ControllerKind, PolicyTable};
use crate::error::{Error, Result};
use crate::impactor::{fit_calibration, CalibrationMap, ImpactorSpec};
use crate::protocol::{CampaignConfig, Harness};
use crate::sim::{Setup, SimConfig};

/// Run configuration as read from TOML. Every table is optional and falls
/// back to the library defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub controllers: Vec<ControllerKind>,
    /// Number of seeded campaigns per controller; campaign i uses
    /// `campaign.seed_base + i`.
    pub campaigns: u32,
    pub save_trajectories: bool,
    /// Also write the full per-tick log of every test.
    pub tick_log: bool,
    pub settle_time: f64,
    /// Calibration samples CSV; when set, its fit replaces `calibration`.
    pub calibration_file: Option<PathBuf>,
    pub tl_policy_table: Option<PathBuf>,
    pub campaign: CampaignConfig,
    pub sim: SimConfig,
    pub robot: RobotSpec,
    pub impactor: ImpactorSpec,
    pub calibration: CalibrationMap,
    pub criteria: FallCriteria,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Harness::default();
        Self {
            controllers: ControllerKind::ALL.to_vec(),
            campaigns: 1,
            save_trajectories: true,
            tick_log: false,
            settle_time: h.settle_time,
            calibration_file: None,
            tl_policy_table: None,
            campaign: CampaignConfig::default(),
            sim: h.setup.sim,
            robot: h.setup.robot,
            impactor: h.setup.impactor,
            calibration: h.calibration,
            criteria: h.criteria,
        }
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            let line = inner.span().map_or(0, |s| line_of(text, s.start));
            Error::SchemaMismatch { line, field, message: inner.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. Relative file references resolve against the
    /// config's directory; a calibration file is fitted here.
    pub fn load(path: &Path) -> Result<Self> {
        let text = super::io::read_text(path)?;
        let mut cfg = Self::parse(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.tl_policy_table, &mut cfg.calibration_file].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        if let Some(file) = &cfg.calibration_file {
            cfg.calibration = fit_calibration(&super::io::read_calibration_samples(file)?)?;
            cfg.validate()?;
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.controllers.is_empty() {
            return Err(Error::InvalidConfig("controllers must not be empty".into()));
        }
        if self.campaigns == 0 {
            return Err(Error::InvalidConfig("campaigns must be at least 1".into()));
        }
        self.campaign.validate()?;
        self.harness().with_window(self.campaign.observation_window).validate()
    }

    pub fn harness(&self) -> Harness {
        Harness {
            setup: Setup { sim: self.sim, robot: self.robot, impactor: self.impactor },
            calibration: self.calibration,
            criteria: self.criteria,
            settle_time: self.settle_time,
        }
    }

    pub fn controller(&self, kind: ControllerKind) -> Result<ControllerHandle> {
        match (kind, &self.tl_policy_table) {
            (ControllerKind::TLAnalog, Some(path)) => Ok(ControllerHandle::with_table(PolicyTable::load(path)?)),
            _ => Ok(ControllerHandle::new(kind)),
        }
    }

    /// Canonical bytes the config hash is taken over: the fully defaulted
    /// config as compact JSON.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn partial_tables_merge_with_defaults() {
        let cfg = RunConfig::parse("campaigns = 3\n[campaign]\nseed_base = 7\n").unwrap();
        assert_eq!(cfg.campaigns, 3);
        assert_eq!(cfg.campaign.seed_base, 7);
        assert_eq!(cfg.campaign.end_pressure, 95.0);
    }

    #[test]
    fn unknown_field_reports_path_and_line() {
        let err = RunConfig::parse("campaigns = 1\n\n[campaign]\nstart_pressur = 50\n").unwrap_err();
        match err {
            Error::SchemaMismatch { line, field, .. } => {
                assert_eq!(line, 4);
                assert!(field.starts_with("campaign"), "{field}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_type_is_schema_mismatch() {
        let err = RunConfig::parse("campaigns = \"two\"\n").unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch { line: 1, ref field, .. } if field == "campaigns"));
    }

    #[test]
    fn calibration_file_is_fitted_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("cal.csv"), "pressure_psi,peak_velocity_mps\n40,2.4\n100,4.8\n").unwrap();
        std::fs::write(dir.path().join("c.toml"), "calibration_file = \"cal.csv\"\n").unwrap();
        let cfg = RunConfig::load(&dir.path().join("c.toml")).unwrap();
        assert!((cfg.calibration.slope - 0.04).abs() < 1e-12);
        assert!((cfg.calibration.intercept - 0.8).abs() < 1e-12);
        assert_eq!(cfg.calibration.valid_pressure_range, [40.0, 100.0]);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(matches!(RunConfig::parse("campaigns = 0"), Err(Error::InvalidConfig(_))));
        assert!(RunConfig::parse("controllers = []").is_err());
    }
}
