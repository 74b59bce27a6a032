//! Stage implementations and the runner that sequences them over a manifest.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ecr_core::gaze::{write_gaze_dump, GazeDumpRecord, GazeRecord};
use ecr_core::ingest::{load_room_config, parse_frames, write_frames, FrameSequence, RoomConfig};
use ecr_core::mapping::{
    calibrate, calibration_report, classify_roles, trajectories_from_dump, write_trajectory_dump, AgentRole,
    TrajectoryDumpRecord,
};
use ecr_core::metrics::{leaf_values, MetricResult};
use ecr_core::pipeline::analyze;
use ecr_core::report::{
    gaze_frame_selection, render_gaze_overlay, render_score_table, render_trajectory_overlay, ParameterEcho,
    ReportBundle, TableLayout, TeamSheet, TrackPath, TrialMetadata, TrialReport, ENGINE_VERSION,
};
use ecr_core::rollup::{run_rollup, CtaHierarchy, ScoreSheet};
use ecr_core::synthetic::{load_scenario, render_scenario, ScenarioScript};
use ecr_core::tracking::{run_tracker, write_track_dump};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, ResultExt};
use crate::manifest::{RunManifest, Stage, TeamEntry, TrialEntry, MANIFEST_FILE};

pub const DETECTIONS_FILE: &str = "detections.jsonl";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const TRACKS_FILE: &str = "tracks.jsonl";
pub const TRAJECTORIES_FILE: &str = "trajectories.jsonl";
pub const GAZE_FILE: &str = "gaze.jsonl";
pub const ROLES_FILE: &str = "roles.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const SCORES_FILE: &str = "scores.json";
pub const CALIBRATION_FILE: &str = "calibration.json";
pub const BUNDLE_FILE: &str = "bundle.json";

/// Gaze drawings made when the manifest names no frames.
const DEFAULT_GAZE_FRAMES: usize = 3;

/// Contents of `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub engine_version: String,
    pub metadata: TrialMetadata,
    pub parameters: ParameterEcho,
    pub metrics: Vec<MetricResult>,
}

/// Contents of `calibration.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutput {
    pub engine_version: String,
    /// Image to map, row-major, `h33 = 1`.
    pub homography: [[f64; 3]; 3],
    /// Reprojection error of each pair, meters.
    pub errors: Vec<f64>,
    pub max_error: f64,
    pub tolerance: f64,
}

// ---- file helpers ----

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).internal_err(format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).internal_err(format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).internal_err(format!("serializing {}", path.display()))?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

fn write_with(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<std::fs::File>) -> std::io::Result<()>,
) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).internal_err(format!("creating {}", dir.display()))?;
    }
    let file = std::fs::File::create(path).internal_err(format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).internal_err(format!("writing {}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).input_err(format!("reading {}", path.display()))?;
    serde_json::from_str(&text).input_err(format!("parsing {}", path.display()))
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let text = std::fs::read_to_string(path).input_err(format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).input_err(format!("{}: line {}", path.display(), i + 1)))
        .collect()
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

// ---- configuration ----

/// Split `key=value`.
pub fn parse_param(text: &str) -> Result<(&str, &str), CliError> {
    text.split_once('=')
        .filter(|(k, _)| !k.trim().is_empty())
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| CliError::input(format!("parameter `{text}` is not of the form key=value")))
}

pub fn apply_params(mut config: RoomConfig, params: &[String]) -> Result<RoomConfig, CliError> {
    for p in params {
        let (k, v) = parse_param(p)?;
        config = config.with_override(k, v)?;
    }
    Ok(config)
}

pub fn load_config(path: &Path, params: &[String]) -> Result<RoomConfig, CliError> {
    let config =
        load_room_config(path).map_err(|e| CliError::from(e).context(format!("loading {}", path.display())))?;
    apply_params(config, params)
}

// ---- calibrate ----

pub fn calibration_output(config: &RoomConfig) -> Result<CalibrationOutput, CliError> {
    let cal = &config.calibration;
    let report = calibration_report(&cal.pairs, cal.tolerance_m)?;
    Ok(CalibrationOutput {
        engine_version: ENGINE_VERSION.to_string(),
        homography: report.homography.into(),
        errors: report.errors,
        max_error: report.max_error,
        tolerance: report.tolerance,
    })
}

pub fn print_calibration(config: &RoomConfig, out: &CalibrationOutput) {
    println!("calibration pairs: {}", config.calibration.pairs.len());
    println!("tolerance: {} m", out.tolerance);
    println!("homography (image -> map):");
    for row in &out.homography {
        println!("  [{:>16.9e} {:>16.9e} {:>16.9e}]", row[0], row[1], row[2]);
    }
    for (i, (pair, e)) in config.calibration.pairs.iter().zip(&out.errors).enumerate() {
        println!(
            "  pair {i}: pixel ({}, {}) -> map ({}, {}): error {e:.3e} m",
            pair.pixel.x, pair.pixel.y, pair.map.x, pair.map.y
        );
    }
    println!("max reprojection error: {:.3e} m", out.max_error);
}

/// Print the calibration report, write it under `out` if given, and fail
/// when the error exceeds the tolerance.
pub fn run_calibrate(config: &RoomConfig, out: Option<&Path>) -> Result<(), CliError> {
    let report = calibration_output(config)?;
    print_calibration(config, &report);
    if let Some(dir) = out {
        write_json(&dir.join(CALIBRATION_FILE), &report)?;
    }
    calibrate(&config.calibration.pairs, config.calibration.tolerance_m)?;
    Ok(())
}

// ---- trial stages ----

struct TrialJob<'a> {
    manifest: &'a RunManifest,
    team: &'a TeamEntry,
    trial: &'a TrialEntry,
    dir: PathBuf,
}

impl TrialJob<'_> {
    fn label(&self) -> String {
        format!("{}/{}", self.team.name, self.trial.name)
    }

    fn script(&self) -> Result<Option<ScenarioScript>, CliError> {
        let Some(path) = &self.trial.script else { return Ok(None) };
        let mut script =
            load_scenario(path).map_err(|e| CliError::from(e).context(format!("loading {}", path.display())))?;
        if let Some(seed) = self.trial.seed.or(self.manifest.seed) {
            script.seed = seed;
        }
        Ok(Some(script))
    }

    fn config(&self, shared: Option<&RoomConfig>, script: Option<&ScenarioScript>) -> Result<RoomConfig, CliError> {
        if let Some(c) = shared {
            return Ok(c.clone());
        }
        match script {
            Some(s) => apply_params(s.room()?.clone(), &self.manifest.params),
            None => Err(CliError::input(format!("trial `{}`: no configuration", self.label()))),
        }
    }

    fn stream_path(&self) -> Option<PathBuf> {
        if self.manifest.has(Stage::Synth) {
            Some(self.dir.join(DETECTIONS_FILE))
        } else {
            self.trial.detections.clone()
        }
    }

    fn analysis_dir(&self) -> PathBuf {
        match (&self.trial.analysis, self.manifest.has(Stage::Analyze)) {
            (Some(dir), false) => dir.clone(),
            _ => self.dir.clone(),
        }
    }

    fn metrics_path(&self) -> PathBuf {
        match (&self.trial.metrics, &self.trial.analysis, self.manifest.has(Stage::Analyze)) {
            (_, _, true) => self.dir.join(METRICS_FILE),
            (Some(path), _, false) => path.clone(),
            (None, Some(dir), false) => dir.join(METRICS_FILE),
            (None, None, false) => self.dir.join(METRICS_FILE),
        }
    }

    fn echo(&self, config: &RoomConfig, script: Option<&ScenarioScript>) -> ParameterEcho {
        ParameterEcho {
            config: config.clone(),
            overrides: self.manifest.params.clone(),
            seed: script.map(|s| s.seed),
            stages: self.manifest.stages.iter().map(|s| s.name().to_string()).collect(),
        }
    }
}

fn synth(job: &TrialJob, script: &ScenarioScript) -> Result<(), CliError> {
    let (frames, truth) = render_scenario(script)?;
    write_with(&job.dir.join(DETECTIONS_FILE), |w| write_frames(&frames, w))?;
    write_json(&job.dir.join(GROUND_TRUTH_FILE), &truth)
}

fn read_stream(path: &Path, fps: f64) -> Result<FrameSequence, CliError> {
    let file = std::fs::File::open(path).input_err(format!("reading {}", path.display()))?;
    parse_frames(BufReader::new(file), fps).map_err(|e| CliError::from(e).context(path.display()))
}

fn track(job: &TrialJob, frames: &FrameSequence, config: &RoomConfig) -> Result<(), CliError> {
    let tracks = run_tracker(frames, &config.tracker);
    write_with(&job.dir.join(TRACKS_FILE), |w| write_track_dump(&tracks, w))
}

fn analyze_trial(
    job: &TrialJob,
    frames: &FrameSequence,
    source: &Path,
    config: &RoomConfig,
    echo: ParameterEcho,
) -> Result<(), CliError> {
    if frames.detection_count() == 0 {
        eprintln!("warning: trial {}: no detections; every metric is not applicable", job.label());
    }
    let a = analyze(frames, config)?;
    let dir = &job.dir;
    write_with(&dir.join(TRACKS_FILE), |w| write_track_dump(&a.tracks, w))?;
    write_with(&dir.join(TRAJECTORIES_FILE), |w| write_trajectory_dump(a.trajectories(), w))?;
    write_with(&dir.join(GAZE_FILE), |w| write_gaze_dump(a.gaze(), w))?;
    write_json(&dir.join(ROLES_FILE), &a.roles())?;
    let result = TrialMetrics {
        engine_version: ENGINE_VERSION.to_string(),
        metadata: TrialMetadata {
            name: job.trial.name.clone(),
            team: Some(job.team.name.clone()),
            source: file_name(source),
            fps: frames.fps,
            frames: frames.frames.len(),
            detections: frames.detection_count(),
            tracks: a.tracks.len(),
        },
        parameters: echo,
        metrics: a.metrics,
    };
    write_json(&dir.join(METRICS_FILE), &result)
}

/// Synth, track and analyze for one trial, as listed.
fn produce(job: &TrialJob, shared: Option<&RoomConfig>) -> Result<(), CliError> {
    let m = job.manifest;
    let script = job.script()?;
    if m.has(Stage::Synth) {
        synth(job, script.as_ref().expect("validated"))?;
    }
    if !(m.has(Stage::Track) || m.has(Stage::Analyze)) {
        return Ok(());
    }
    let config = job.config(shared, script.as_ref())?;
    let source = job.stream_path().expect("validated");
    let fps = script.as_ref().map_or(m.fps, |s| s.fps);
    let frames = read_stream(&source, fps)?;
    if m.has(Stage::Analyze) {
        analyze_trial(job, &frames, &source, &config, job.echo(&config, script.as_ref()))
    } else {
        track(job, &frames, &config)
    }
}

struct Reference {
    paths: Vec<TrackPath>,
    rows: Vec<TrajectoryDumpRecord>,
}

fn reference_roles(reference: &Reference, config: &RoomConfig, fps: f64) -> Result<Vec<AgentRole>, CliError> {
    let cal = calibrate(&config.calibration.pairs, config.calibration.tolerance_m)?;
    let camera = cal.homography.inverse()?;
    let trajectories = trajectories_from_dump(&reference.rows, &camera, config)?;
    Ok(classify_roles(&trajectories, config, fps))
}

fn report(
    job: &TrialJob,
    shared: Option<&RoomConfig>,
    scores: Option<&ScoreSheet>,
    reference: Option<&Reference>,
) -> Result<(), CliError> {
    let script = job.script()?;
    let config = job.config(shared, script.as_ref())?;
    let src = job.analysis_dir();
    let metrics: TrialMetrics = read_json(&src.join(METRICS_FILE))?;
    let rows: Vec<TrajectoryDumpRecord> = read_jsonl(&src.join(TRAJECTORIES_FILE))?;
    let roles: Vec<AgentRole> = read_json(&src.join(ROLES_FILE))?;
    let gaze: Vec<GazeRecord> =
        read_jsonl::<GazeDumpRecord>(&src.join(GAZE_FILE))?.into_iter().map(GazeRecord::from).collect();

    let mut assets = Vec::new();
    let paths = TrackPath::from_dump(&rows);
    let svg = match reference {
        Some(r) => {
            let ref_roles = reference_roles(r, &config, metrics.metadata.fps)?;
            render_trajectory_overlay(&paths, &roles, &config, Some((&r.paths, &ref_roles)))
        }
        None => render_trajectory_overlay(&paths, &roles, &config, None),
    };
    write_bytes(&job.dir.join("trajectories.svg"), svg.as_bytes())?;
    assets.push("trajectories.svg".to_string());

    let frames = match &job.manifest.gaze_frames {
        Some(f) => f.clone(),
        None => gaze_frame_selection(&gaze, DEFAULT_GAZE_FRAMES),
    };
    for f in frames {
        let name = format!("gaze_{f}.svg");
        write_bytes(&job.dir.join(&name), render_gaze_overlay(&gaze, &[f], &config).as_bytes())?;
        assets.push(name);
    }

    let bundle = ReportBundle {
        engine_version: ENGINE_VERSION.to_string(),
        trials: vec![TrialReport { metadata: metrics.metadata, metrics: metrics.metrics }],
        score_sheet: scores.cloned(),
        assets,
        parameters: metrics.parameters,
    };
    let text = bundle.to_json().internal_err("serializing bundle")?;
    write_bytes(&job.dir.join(BUNDLE_FILE), text.as_bytes())
}

// ---- team stages ----

fn load_hierarchy(m: &RunManifest, team: &TeamEntry, shared: Option<&RoomConfig>) -> Result<CtaHierarchy, CliError> {
    if let Some(path) = &m.hierarchy {
        let h: CtaHierarchy = read_json(path)?;
        return Ok(h);
    }
    if let Some(c) = shared {
        return Ok(c.hierarchy.clone());
    }
    let first = team.trials.first().and_then(|t| t.script.as_deref());
    match first {
        Some(path) => {
            let script =
                load_scenario(path).map_err(|e| CliError::from(e).context(format!("loading {}", path.display())))?;
            Ok(apply_params(script.room()?.clone(), &m.params)?.hierarchy)
        }
        None => Ok(CtaHierarchy::default_ecr()),
    }
}

fn rollup(m: &RunManifest, out: &Path, team: &TeamEntry, shared: Option<&RoomConfig>) -> Result<ScoreSheet, CliError> {
    let h = load_hierarchy(m, team, shared)?;
    let mut leaves = Vec::new();
    for t in &team.trials {
        let job = TrialJob { manifest: m, team, trial: t, dir: m.trial_dir(out, team, t) };
        let metrics: TrialMetrics = read_json(&job.metrics_path())?;
        leaves.push(leaf_values(&metrics.metrics));
    }
    let mut sheet = run_rollup(&h, &leaves).map_err(|e| CliError::from(e).context(format!("team `{}`", team.name)))?;
    for (scores, t) in sheet.trials.iter_mut().zip(&team.trials) {
        scores.label = Some(t.name.clone());
    }
    let dir = m.team_dir(out, team);
    write_json(&dir.join(SCORES_FILE), &sheet)?;
    let table = render_score_table(&[TeamSheet { team: &team.name, sheet: &sheet }], TableLayout::PerTrial)?;
    write_bytes(&dir.join("scores.csv"), table.csv.as_bytes())?;
    write_bytes(&dir.join("scores.html"), table.html.as_bytes())?;
    Ok(sheet)
}

// ---- runner ----

/// Run `f` over `0..n` on up to `jobs` threads; the first failure by index wins.
fn for_each<T: Send>(
    n: usize,
    jobs: usize,
    f: impl Fn(usize) -> Result<T, CliError> + Sync,
) -> Result<Vec<T>, CliError> {
    let results: Vec<Mutex<Option<Result<T, CliError>>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, n.max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                *results[i].lock().expect("no panics while held") = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.into_inner().expect("no panics while held").expect("every index ran")).collect()
}

/// Execute a manifest whose paths are absolute.
pub fn execute(m: &RunManifest, jobs: usize) -> Result<(), CliError> {
    m.validate()?;
    if m.engine_version != ENGINE_VERSION {
        eprintln!("warning: manifest was written by engine {}, running {}", m.engine_version, ENGINE_VERSION);
    }
    let out = m.out.as_path();
    std::fs::create_dir_all(out).internal_err(format!("creating {}", out.display()))?;
    let shared = m.config.as_deref().map(|p| load_config(p, &m.params)).transpose()?;

    if m.has(Stage::Calibrate) {
        run_calibrate(shared.as_ref().expect("validated"), Some(out))?;
    }

    let trials: Vec<(&TeamEntry, &TrialEntry)> =
        m.teams.iter().flat_map(|team| team.trials.iter().map(move |t| (team, t))).collect();
    let job = |i: usize| {
        let (team, trial) = trials[i];
        TrialJob { manifest: m, team, trial, dir: m.trial_dir(out, team, trial) }
    };
    for_each(trials.len(), jobs, |i| {
        let j = job(i);
        produce(&j, shared.as_ref()).map_err(|e| e.context(format!("trial {}", j.label())))
    })?;

    let mut sheets: BTreeMap<String, ScoreSheet> = BTreeMap::new();
    if m.has(Stage::Rollup) {
        let done = for_each(m.teams.len(), jobs, |i| rollup(m, out, &m.teams[i], shared.as_ref()))?;
        sheets = m.teams.iter().map(|t| t.name.clone()).zip(done).collect();
        if m.teams.len() > 1 {
            let teams: Vec<TeamSheet> =
                m.teams.iter().map(|t| TeamSheet { team: &t.name, sheet: &sheets[&t.name] }).collect();
            let table = render_score_table(&teams, TableLayout::PerTeam)?;
            write_bytes(&out.join("scores.csv"), table.csv.as_bytes())?;
            write_bytes(&out.join("scores.html"), table.html.as_bytes())?;
        }
    } else {
        for team in &m.teams {
            if let Some(path) = &team.scores {
                sheets.insert(team.name.clone(), read_json(path)?);
            }
        }
    }

    if m.has(Stage::Report) {
        let reference = match &m.reference {
            Some(path) => {
                let rows: Vec<TrajectoryDumpRecord> = read_jsonl(path)?;
                Some(Reference { paths: TrackPath::from_dump(&rows), rows })
            }
            None => None,
        };
        for_each(trials.len(), jobs, |i| {
            let j = job(i);
            report(&j, shared.as_ref(), sheets.get(&j.team.name), reference.as_ref())
                .map_err(|e| e.context(format!("trial {}", j.label())))
        })?;
    }

    write_json(&out.join(MANIFEST_FILE), &m.rebased(out)?)
}
