//! Run manifests: what to run, on which inputs, into which directory.
//!
//! Paths in a manifest file are relative to the file. Every run writes the
//! manifest it executed to `<out>/manifest.json` with paths rebased onto the
//! output directory, so the echo can be rerun from where it lies.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, ResultExt};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_TEAM: &str = "team";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Calibrate,
    Synth,
    Track,
    Analyze,
    Rollup,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Calibrate => "calibrate",
            Stage::Synth => "synth",
            Stage::Track => "track",
            Stage::Analyze => "analyze",
            Stage::Rollup => "rollup",
            Stage::Report => "report",
        }
    }
}

/// One trial and whichever inputs its stages start from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub name: String,
    /// Scenario script, for `synth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Noise seed replacing the script's own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Detection stream, for `track` and `analyze` without `synth`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detections: Option<PathBuf>,
    /// Directory of `analyze` outputs, for `report` without `analyze`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<PathBuf>,
    /// `metrics.json`, for `rollup` without `analyze`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<PathBuf>,
}

/// A team and its trials in chronological order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TeamEntry {
    pub name: String,
    /// `scores.json`, for `report` without `rollup`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    pub trials: Vec<TrialEntry>,
}

fn default_out() -> PathBuf {
    PathBuf::from(".")
}

fn default_fps() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub engine_version: String,
    /// Room configuration; trials with a script fall back to its room.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<PathBuf>,
    /// Hierarchy replacing the configuration's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchy: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    /// Noise seed for every scripted trial without its own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub stages: Vec<Stage>,
    /// `key=value` overrides applied to the configuration in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub params: Vec<String>,
    /// Frame rate of detection streams that do not come from a script.
    #[serde(default = "default_fps")]
    pub fps: f64,
    /// Reference trajectory dump drawn beside each team's trajectories.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    /// Frames to draw gaze for; by default a few spread over the trial.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaze_frames: Option<Vec<u64>>,
    #[serde(default)]
    pub teams: Vec<TeamEntry>,
}

impl RunManifest {
    pub fn new(stages: Vec<Stage>) -> Self {
        Self {
            engine_version: ecr_core::report::ENGINE_VERSION.to_string(),
            config: None,
            hierarchy: None,
            out: default_out(),
            seed: None,
            stages,
            params: Vec::new(),
            fps: default_fps(),
            reference: None,
            gaze_frames: None,
            teams: Vec::new(),
        }
    }

    pub fn has(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).input_err(format!("reading manifest {}", path.display()))?;
        serde_json::from_str(&text).input_err(format!("parsing manifest {}", path.display()))
    }

    /// Rejects manifests whose stages have nothing to start from.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.stages.is_empty() {
            return Err(CliError::input("manifest lists no stages"));
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(CliError::input(format!("frame rate must be positive, got {}", self.fps)));
        }
        if self.has(Stage::Calibrate) && self.config.is_none() {
            return Err(CliError::input("calibrate needs a configuration"));
        }
        let mut names = std::collections::BTreeSet::new();
        for team in &self.teams {
            check_name(&team.name)?;
            if !names.insert(team.name.as_str()) {
                return Err(CliError::input(format!("duplicate team `{}`", team.name)));
            }
            let mut trials = std::collections::BTreeSet::new();
            for t in &team.trials {
                check_name(&t.name)?;
                if !trials.insert(t.name.as_str()) {
                    return Err(CliError::input(format!("team `{}`: duplicate trial `{}`", team.name, t.name)));
                }
                let what = format!("trial `{}/{}`", team.name, t.name);
                if self.has(Stage::Synth) && t.script.is_none() {
                    return Err(CliError::input(format!("{what}: synth needs a script")));
                }
                let has_stream = self.has(Stage::Synth) || t.detections.is_some();
                if (self.has(Stage::Track) || self.has(Stage::Analyze)) && !has_stream {
                    return Err(CliError::input(format!("{what}: no detections to track")));
                }
                if (self.has(Stage::Track) || self.has(Stage::Analyze)) && self.config.is_none() && t.script.is_none() {
                    return Err(CliError::input(format!("{what}: no configuration")));
                }
                let analyzed = self.has(Stage::Analyze) || t.analysis.is_some();
                if self.has(Stage::Report) && !analyzed {
                    return Err(CliError::input(format!("{what}: report needs an analysis")));
                }
                if self.has(Stage::Report) && self.config.is_none() && t.script.is_none() {
                    return Err(CliError::input(format!("{what}: no configuration")));
                }
                if self.has(Stage::Rollup) && !(self.has(Stage::Analyze) || t.metrics.is_some() || t.analysis.is_some())
                {
                    return Err(CliError::input(format!("{what}: rollup needs metrics")));
                }
            }
            if self.has(Stage::Rollup) && team.trials.is_empty() {
                return Err(CliError::input(format!("team `{}`: rollup needs at least one trial", team.name)));
            }
        }
        Ok(())
    }

    /// Output directory of a team: the run directory when there is one team.
    pub fn team_dir(&self, out: &Path, team: &TeamEntry) -> PathBuf {
        if self.teams.len() > 1 {
            out.join(&team.name)
        } else {
            out.to_path_buf()
        }
    }

    /// Output directory of a trial: the team directory when the team has one trial.
    pub fn trial_dir(&self, out: &Path, team: &TeamEntry, trial: &TrialEntry) -> PathBuf {
        let dir = self.team_dir(out, team);
        if team.trials.len() > 1 {
            dir.join(&trial.name)
        } else {
            dir
        }
    }

    /// Every path made absolute against `base`.
    pub fn resolved(&self, base: &Path) -> Result<Self, CliError> {
        self.map_paths(|p| absolute(&base.join(p)))
    }

    /// Every path made relative to `dir`, with the output directory at `dir`.
    /// Paths must already be absolute.
    pub fn rebased(&self, dir: &Path) -> Result<Self, CliError> {
        let mut m = self.map_paths(|p| {
            pathdiff::diff_paths(p, dir)
                .ok_or_else(|| CliError::input(format!("cannot express {} relative to {}", p.display(), dir.display())))
        })?;
        m.out = default_out();
        m.engine_version = ecr_core::report::ENGINE_VERSION.to_string();
        Ok(m)
    }

    fn map_paths(&self, f: impl Fn(&Path) -> Result<PathBuf, CliError>) -> Result<Self, CliError> {
        let g = |p: &Option<PathBuf>| p.as_deref().map(&f).transpose();
        let mut m = self.clone();
        m.config = g(&self.config)?;
        m.hierarchy = g(&self.hierarchy)?;
        m.reference = g(&self.reference)?;
        m.out = f(&self.out)?;
        for team in &mut m.teams {
            team.scores = g(&team.scores)?;
            for t in &mut team.trials {
                t.script = g(&t.script)?;
                t.detections = g(&t.detections)?;
                t.analysis = g(&t.analysis)?;
                t.metrics = g(&t.metrics)?;
            }
        }
        Ok(m)
    }
}

/// Names become directory names.
fn check_name(name: &str) -> Result<(), CliError> {
    if name.is_empty() || name == "." || name == ".." || name.contains(['/', '\\']) {
        return Err(CliError::input(format!("`{name}` cannot be used as a team or trial name")));
    }
    Ok(())
}

/// Absolute, lexically normalized path; the file need not exist.
pub fn absolute(path: &Path) -> Result<PathBuf, CliError> {
    let abs = std::path::absolute(path).input_err(format!("resolving {}", path.display()))?;
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            std::path::Component::CurDir => {}
            std::path::Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trial(name: &str) -> TrialEntry {
        TrialEntry { name: name.into(), detections: Some("d.jsonl".into()), ..Default::default() }
    }

    #[test]
    fn single_trial_writes_flat() {
        let mut m = RunManifest::new(vec![Stage::Analyze]);
        m.config = Some("room.json".into());
        m.teams = vec![TeamEntry { name: "a".into(), scores: None, trials: vec![trial("t1")] }];
        let out = Path::new("/o");
        assert_eq!(m.trial_dir(out, &m.teams[0], &m.teams[0].trials[0]), PathBuf::from("/o"));
        m.teams[0].trials.push(trial("t2"));
        assert_eq!(m.trial_dir(out, &m.teams[0], &m.teams[0].trials[1]), PathBuf::from("/o/t2"));
        m.teams.push(TeamEntry { name: "b".into(), scores: None, trials: vec![trial("t1")] });
        assert_eq!(m.trial_dir(out, &m.teams[1], &m.teams[1].trials[0]), PathBuf::from("/o/b"));
    }

    #[test]
    fn rebase_round_trips() {
        let mut m = RunManifest::new(vec![Stage::Analyze]);
        m.config = Some("../fixtures/room.json".into());
        m.out = "runs/a".into();
        m.teams = vec![TeamEntry { name: "a".into(), scores: None, trials: vec![trial("t1")] }];
        let abs = m.resolved(Path::new("/w/x")).unwrap();
        assert_eq!(abs.config.as_deref(), Some(Path::new("/w/fixtures/room.json")));
        let echo = abs.rebased(&abs.out).unwrap();
        assert_eq!(echo.config.as_deref(), Some(Path::new("../../../fixtures/room.json")));
        assert_eq!(echo.out, PathBuf::from("."));
        let again = echo.resolved(Path::new("/w/x/runs/a")).unwrap();
        assert_eq!(again.config, abs.config);
        assert_eq!(again.teams, abs.teams);
    }

    #[test]
    fn validation_names_missing_inputs() {
        let mut m = RunManifest::new(vec![Stage::Synth]);
        m.teams = vec![TeamEntry { name: "a".into(), scores: None, trials: vec![trial("t1")] }];
        let e = m.validate().unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("synth needs a script"));
    }
}
