//! `ecr`: room-clearing drill analytics from the command line.
//!
//! Every command is a one-stage run manifest; the manifest actually executed
//! is written to `<out>/manifest.json` and can be rerun with `ecr run`.
//!
//! Exit codes: 0 ok, 1 internal error, 2 invalid input, 3 tolerance exceeded.

mod error;
mod manifest;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::CliError;
use manifest::{absolute, RunManifest, Stage, TeamEntry, TrialEntry, DEFAULT_TEAM};

#[derive(Debug, Parser)]
#[command(name = "ecr", version, about = "Room-clearing drill analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Overrides {
    /// Override a configuration value, e.g. `wall_buffer=0.5` or
    /// `tracker.max_age=20`; bare keys address metric parameters.
    #[arg(long = "params", value_name = "KEY=VALUE", num_args = 1.., action = clap::ArgAction::Append)]
    params: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the image-to-floor homography and report reprojection errors.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// Also write `calibration.json` and the run manifest here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Render a scenario script into a detection stream and ground truth.
    Synth {
        #[arg(long)]
        script: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Noise seed replacing the script's own.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Track a detection stream.
    Track {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Track, map, build gaze and score one trial.
    Analyze {
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 30.0)]
        fps: f64,
        /// Trial name; defaults to the stream's file stem.
        #[arg(long)]
        trial: Option<String>,
        #[arg(long, default_value = DEFAULT_TEAM)]
        team: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Roll trial metrics up the hierarchy and smooth across trials.
    Rollup {
        /// `metrics.json` of each trial, oldest first.
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        /// Room configuration whose hierarchy to use.
        #[arg(long, conflicts_with = "hierarchy")]
        config: Option<PathBuf>,
        /// Hierarchy file replacing the configuration's.
        #[arg(long)]
        hierarchy: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = DEFAULT_TEAM)]
        team: String,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Draw trajectories and gaze and write the result bundle of one trial.
    Report {
        /// Directory holding the outputs of `analyze`.
        #[arg(long)]
        trial: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `scores.json` from `rollup`.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Trajectory dump drawn beside the team's.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Frames to draw gaze for.
        #[arg(long, value_delimiter = ',')]
        frames: Option<Vec<u64>>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Execute a run manifest.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory replacing the manifest's.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Trials and teams processed in parallel.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trial".to_string())
}

fn single(name: &str, trial: TrialEntry) -> Vec<TeamEntry> {
    vec![TeamEntry { name: name.to_string(), scores: None, trials: vec![trial] }]
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cwd = Path::new(".");
    let mut jobs = 1;
    let manifest = match cli.command {
        Command::Calibrate { config, out: None, overrides } => {
            let config = stages::load_config(&config, &overrides.params)?;
            return stages::run_calibrate(&config, None);
        }
        Command::Calibrate { config, out: Some(out), overrides } => {
            let mut m = RunManifest::new(vec![Stage::Calibrate]);
            m.config = Some(config);
            m.out = out;
            m.params = overrides.params;
            m.resolved(cwd)?
        }
        Command::Synth { script, out, seed } => {
            let mut m = RunManifest::new(vec![Stage::Synth]);
            let name = stem(&script);
            m.out = out;
            m.teams = single(DEFAULT_TEAM, TrialEntry { name, script: Some(script), seed, ..Default::default() });
            m.resolved(cwd)?
        }
        Command::Track { detections, config, out, fps, overrides } => {
            let mut m = RunManifest::new(vec![Stage::Track]);
            m.config = Some(config);
            m.out = out;
            m.fps = fps;
            m.params = overrides.params;
            m.teams = single(
                DEFAULT_TEAM,
                TrialEntry { name: stem(&detections), detections: Some(detections), ..Default::default() },
            );
            m.resolved(cwd)?
        }
        Command::Analyze { detections, config, out, fps, trial, team, overrides } => {
            let mut m = RunManifest::new(vec![Stage::Analyze]);
            m.config = Some(config);
            m.out = out;
            m.fps = fps;
            m.params = overrides.params;
            let name = trial.unwrap_or_else(|| stem(&detections));
            m.teams = single(&team, TrialEntry { name, detections: Some(detections), ..Default::default() });
            m.resolved(cwd)?
        }
        Command::Rollup { metrics, config, hierarchy, out, team, overrides } => {
            let mut m = RunManifest::new(vec![Stage::Rollup]);
            m.config = config;
            m.hierarchy = hierarchy;
            m.out = out;
            m.params = overrides.params;
            let mut trials = Vec::new();
            for (i, path) in metrics.into_iter().enumerate() {
                let name = path
                    .parent()
                    .and_then(|p| p.file_name())
                    .map(|n| n.to_string_lossy().into_owned())
                    .filter(|n| !n.is_empty() && !trials.iter().any(|t: &TrialEntry| &t.name == n))
                    .unwrap_or_else(|| format!("trial{}", i + 1));
                trials.push(TrialEntry { name, metrics: Some(path), ..Default::default() });
            }
            m.teams = vec![TeamEntry { name: team, scores: None, trials }];
            m.resolved(cwd)?
        }
        Command::Report { trial, config, out, scores, reference, frames, overrides } => {
            let mut m = RunManifest::new(vec![Stage::Report]);
            m.config = Some(config);
            m.out = out;
            m.params = overrides.params;
            m.reference = reference;
            m.gaze_frames = frames;
            let name = absolute(&trial)?
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "trial".into());
            m.teams = vec![TeamEntry {
                name: DEFAULT_TEAM.to_string(),
                scores,
                trials: vec![TrialEntry { name, analysis: Some(trial), ..Default::default() }],
            }];
            m.resolved(cwd)?
        }
        Command::Run { manifest, out, jobs: n } => {
            jobs = n.max(1);
            let base = absolute(&manifest)?.parent().map(Path::to_path_buf).unwrap_or_default();
            let mut m = RunManifest::load(&manifest)?.resolved(&base)?;
            if let Some(out) = out {
                m.out = absolute(&out)?;
            }
            m
        }
    };
    stages::execute(&manifest, jobs)?;
    eprintln!("effective parameters: {}", manifest.out.join(manifest::MANIFEST_FILE).display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ecr: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
