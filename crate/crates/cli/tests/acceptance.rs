//! Acceptance criteria. Runs without the libtest harness so every criterion
//! prints one PASS or FAIL line; the process fails if any criterion does.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ecr_core::gaze::{gaze_triangle, GazeParams};
use ecr_core::geometry::{Point, Vector};
use ecr_core::ingest::{load_room_config, CalibrationPair, RoomConfig};
use ecr_core::mapping::{estimate_homography, Homography};
use ecr_core::metrics::{compute_metrics, leaf_values, MetricContext, METRIC_NAMES};
use ecr_core::pipeline::analyze;
use ecr_core::rollup::{alpha_schedule, run_rollup, Band, ChildRef, CtaHierarchy, Node, Score};
use ecr_core::synthetic::{
    load_scenario, oracle_metrics, oracle_rollup, oracle_track_assignment, random_scenario, render_scenario,
    truth_metric_input, Occlusion,
};
use ecr_core::tracking::{run_tracker, track_dump};
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances and budgets.
const ALPHA_TOL: f64 = 1e-12;
const GAZE_SPAN_DEG: f64 = 20.0;
const GAZE_TOL_DEG: f64 = 1e-9;
const GAZE_POSES: usize = 1000;
const ROLLUP_TOL: f64 = 1e-12;
const ROLLUP_TREES: u64 = 100;
const DLT_TOL: f64 = 1e-9;
const ROUND_TRIP_TOL: f64 = 1e-6;
const ROUND_TRIP_POINTS: usize = 1000;
const ORACLE_SEEDS: u64 = 200;
const TRUTH_TOL: f64 = 1e-9;
const NOISY_TOL: f64 = 0.05;
const FUZZ_SCENARIOS: u64 = 500;
const DOCTRINE_MIN: f64 = 0.9;

type Check = fn() -> Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn room() -> RoomConfig {
    load_room_config(&fixtures().join("room.json")).expect("fixture room loads")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: Score, b: Score, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

// ---- 1 ----

fn alpha_anchor() -> Result<String, String> {
    for h in 1..=20 {
        let hl = h as f64;
        let a1 = alpha_schedule(1, 1.0, hl);
        let ah = alpha_schedule(h + 1, 1.0, hl);
        ensure(a1.abs() <= ALPHA_TOL, || format!("H={h}: alpha(1) = {a1}"))?;
        ensure((ah - 0.5).abs() <= ALPHA_TOL, || format!("H={h}: alpha(H+1) = {ah}"))?;
    }
    Ok("alpha(1)=0, alpha(H+1)=0.5 for H=1..20".into())
}

// ---- 2 ----

fn angle_deg(a: &Vector, b: &Vector) -> f64 {
    (a.x * b.y - a.y * b.x).atan2(a.dot(b)).abs().to_degrees()
}

fn gaze_span() -> Result<String, String> {
    let half = GazeParams::default().half_angle_deg;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..GAZE_POSES {
        let origin = Point::new(rng.random_range(-2000.0..2000.0), rng.random_range(-2000.0..2000.0));
        let heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let g = Vector::new(heading.cos(), heading.sin());
        let length = rng.random_range(0.01..5000.0);
        let [v0, v1, v2] = gaze_triangle(&origin, &g, half, length);
        let span = angle_deg(&(v1 - v0), &(v2 - v0));
        worst = worst.max((span - GAZE_SPAN_DEG).abs());
    }
    ensure(worst <= GAZE_TOL_DEG, || format!("worst deviation {worst:e} deg"))?;
    Ok(format!("{GAZE_POSES} poses, worst deviation {worst:.1e} deg"))
}

// ---- 3 ----

/// Random equal-weight tree over levels 0..=4 with leaves bound to metrics.
fn random_tree(rng: &mut ChaCha8Rng) -> CtaHierarchy {
    let mut nodes = Vec::new();
    let mut counter = 0;
    fn grow(rng: &mut ChaCha8Rng, level: u8, nodes: &mut Vec<Node>, counter: &mut usize) -> String {
        *counter += 1;
        let id = format!("n{counter}");
        let leaf = level == 4 || (level > 0 && rng.random_bool(0.3));
        let node = if leaf {
            let metric = METRIC_NAMES[rng.random_range(0..METRIC_NAMES.len())];
            Node {
                id: id.clone(),
                name: id.clone(),
                level,
                children: Vec::new(),
                metric: Some(metric.into()),
                bands: None,
            }
        } else {
            let k = rng.random_range(1..=3);
            let children = (0..k).map(|_| ChildRef { id: grow(rng, level + 1, nodes, counter), weight: 1.0 }).collect();
            Node { id: id.clone(), name: id.clone(), level, children, metric: None, bands: None }
        };
        nodes.push(node);
        id
    }
    grow(rng, 0, &mut nodes, &mut counter);
    let mut h = CtaHierarchy::default_ecr();
    h.nodes = nodes;
    h.smoothing.half_life = rng.random_range(0.5..6.0);
    h
}

/// Plain mean of applicable children, recursively.
fn mean_value(h: &CtaHierarchy, id: &str, leaves: &BTreeMap<String, Score>) -> Score {
    let n = h.node(id).expect("node exists");
    if let Some(m) = &n.metric {
        return leaves.get(m).copied().flatten();
    }
    let vals: Vec<f64> = n.children.iter().filter_map(|c| mean_value(h, &c.id, leaves)).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn rollup_means() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut compared = 0usize;
    for tree in 0..ROLLUP_TREES {
        let h = random_tree(&mut rng);
        let trials: Vec<BTreeMap<String, Score>> = (0..rng.random_range(1..=5))
            .map(|_| {
                METRIC_NAMES
                    .iter()
                    .map(|m| (m.to_string(), (!rng.random_bool(0.15)).then(|| rng.random_range(0.0..=1.0))))
                    .collect()
            })
            .collect();
        let sheet = run_rollup(&h, &trials).map_err(|e| format!("tree {tree}: {e}"))?;
        let oracle = oracle_rollup(&h, &trials);
        for (t, leaves) in trials.iter().enumerate() {
            for n in &h.nodes {
                let got = &sheet.trials[t].nodes[&n.id];
                let want = &oracle[t][&n.id];
                let mean = mean_value(&h, &n.id, leaves);
                ensure(close(got.raw, mean, ROLLUP_TOL), || {
                    format!("tree {tree} trial {t} node {}: raw {:?} vs mean {mean:?}", n.id, got.raw)
                })?;
                ensure(close(got.raw, want.raw, ROLLUP_TOL) && close(got.smoothed, want.smoothed, ROLLUP_TOL), || {
                    format!("tree {tree} trial {t} node {}: {got:?} vs oracle {want:?}", n.id)
                })?;
                ensure(got.band == want.band, || format!("tree {tree} trial {t} node {}: band", n.id))?;
                compared += 1;
            }
        }
    }
    Ok(format!("{ROLLUP_TREES} trees, {compared} node scores"))
}

// ---- 4 ----

fn normalized(m: &Matrix3<f64>) -> Matrix3<f64> {
    let m = m / m.norm();
    let pivot = m.iter().copied().fold(0.0, |a: f64, v| if v.abs() > a.abs() { v } else { a });
    if pivot < 0.0 {
        -m
    } else {
        m
    }
}

fn homography_recovery() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_h, mut worst_rt) = (0.0f64, 0.0f64);
    for case in 0..20 {
        let truth = Matrix3::new(
            rng.random_range(0.004..0.01),
            rng.random_range(-0.002..0.002),
            rng.random_range(-2.0..2.0),
            rng.random_range(-0.002..0.002),
            rng.random_range(-0.01..-0.004),
            rng.random_range(4.0..8.0),
            rng.random_range(-2e-5..2e-5),
            rng.random_range(-2e-5..2e-5),
            1.0,
        );
        let h = Homography::from_matrix(truth).map_err(|e| e.to_string())?;
        let pairs: Vec<CalibrationPair> = (0..8)
            .map(|_| {
                let pixel = Point::new(rng.random_range(0.0..1920.0), rng.random_range(0.0..1080.0));
                CalibrationPair { pixel, map: h.project(&pixel).expect("finite") }
            })
            .collect();
        let est = estimate_homography(&pairs).map_err(|e| format!("case {case}: {e}"))?;
        let diff = (normalized(&est.matrix) - normalized(&truth)).abs().max();
        worst_h = worst_h.max(diff);
        let inv = est.inverse().map_err(|e| e.to_string())?;
        for _ in 0..ROUND_TRIP_POINTS / 20 {
            let p = Point::new(rng.random_range(0.0..1920.0), rng.random_range(0.0..1080.0));
            let back = inv.project(&est.project(&p).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
            worst_rt = worst_rt.max((back - p).norm());
        }
    }
    ensure(worst_h <= DLT_TOL, || format!("matrix deviation {worst_h:e}"))?;
    ensure(worst_rt < ROUND_TRIP_TOL, || format!("round trip error {worst_rt:e} px"))?;
    Ok(format!("matrix deviation {worst_h:.1e}, round trip {worst_rt:.1e} px over {ROUND_TRIP_POINTS} points"))
}

// ---- 5 ----

fn tracker_fixtures() -> Result<String, String> {
    let script = load_scenario(&fixtures().join("occlusion_four.json")).map_err(|e| e.to_string())?;
    let occluded: Vec<&Occlusion> = script.noise.occlusions.iter().collect();
    let frames_hidden = occluded.iter().map(|o| ((o.end - o.start) * script.fps).round() as u64 + 1).sum::<u64>();
    ensure(frames_hidden == 5, || format!("fixture hides {frames_hidden} frames"))?;
    let room = script.room().map_err(|e| e.to_string())?.clone();
    ensure(room.tracker.max_age == 30, || format!("max_age {}", room.tracker.max_age))?;
    let (frames, gt) = render_scenario(&script).map_err(|e| e.to_string())?;
    let audit = oracle_track_assignment(&frames, &gt, &room.tracker);
    ensure(audit.identity_switches == 0 && audit.track_count == 4, || {
        format!("occlusion: {} tracks, {} switches", audit.track_count, audit.identity_switches)
    })?;

    let script = load_scenario(&fixtures().join("single_agent.json")).map_err(|e| e.to_string())?;
    let room = script.room().map_err(|e| e.to_string())?.clone();
    let (frames, _) = render_scenario(&script).map_err(|e| e.to_string())?;
    let tracks = run_tracker(&frames, &room.tracker);
    ensure(tracks.len() == 1, || format!("single agent: {} tracks", tracks.len()))?;
    let input: BTreeMap<u64, _> = frames.frames.iter().map(|f| (f.index, f.detections[0].bbox)).collect();
    let rows = track_dump(&tracks);
    ensure(rows.len() == input.len(), || format!("single agent: {} of {} boxes tracked", rows.len(), input.len()))?;
    for r in &rows {
        ensure(input.get(&r.frame) == Some(&r.bbox), || format!("single agent: frame {} box differs", r.frame))?;
    }
    Ok(format!("occlusion: 4 tracks, 0 switches; single agent: {} boxes identical", rows.len()))
}

// ---- 6 ----

fn metric_oracles() -> Result<String, String> {
    let room = room();
    let mut worst_truth: f64 = 0.0;
    let mut worst_noisy: BTreeMap<&str, f64> = BTreeMap::new();
    for seed in 0..ORACLE_SEEDS {
        let script = random_scenario(seed, &room);
        let (frames, gt) = render_scenario(&script).map_err(|e| format!("seed {seed}: {e}"))?;
        let oracle = oracle_metrics(&gt, &room);
        let input = truth_metric_input(&gt, &room).map_err(|e| format!("seed {seed}: {e}"))?;
        let truth = leaf_values(&compute_metrics(&MetricContext::new(&input, &room)));
        let noisy = leaf_values(&analyze(&frames, &room).map_err(|e| format!("seed {seed}: {e}"))?.metrics);
        for m in METRIC_NAMES {
            let (o, t, n) = (oracle[m], truth[m], noisy[m]);
            ensure(close(o, t, TRUTH_TOL), || format!("seed {seed} {m}: engine {t:?} vs oracle {o:?} on truth"))?;
            ensure(close(o, n, NOISY_TOL), || format!("seed {seed} {m}: engine {n:?} vs oracle {o:?} on noise"))?;
            if let (Some(a), Some(b)) = (o, t) {
                worst_truth = worst_truth.max((a - b).abs());
            }
            if let (Some(a), Some(b)) = (o, n) {
                let w = worst_noisy.entry(m).or_insert(0.0);
                *w = w.max((a - b).abs());
            }
        }
    }
    let (name, delta) = worst_noisy.iter().fold(("-", 0.0), |acc, (k, v)| if *v > acc.1 { (k, *v) } else { acc });
    Ok(format!("{ORACLE_SEEDS} seeds; truth deviation {worst_truth:.1e}; worst noisy {name} {delta:.3}"))
}

// ---- 7 ----

fn finite_point(p: &Point) -> bool {
    p.x.is_finite() && p.y.is_finite()
}

fn fuzz_ranges() -> Result<String, String> {
    let base = room();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut scored = 0usize;
    for k in 0..FUZZ_SCENARIOS {
        let seed = 100_000 + k;
        let mut room = base.clone();
        let p = &mut room.metric_params;
        p.entry_gap_general = rng.random_range(0.2..3.0);
        p.entry_gap_second_third = rng.random_range(0.2..4.0);
        p.penalty_rate = rng.random_range(0.05..3.0);
        p.pod_hold_min = rng.random_range(0.1..2.0);
        p.pod_time_limit = rng.random_range(1.0..10.0);
        p.wall_buffer = rng.random_range(0.2..1.5);
        p.threat_overlap_min = rng.random_range(0.2..4.0);
        p.gaze_required = rng.random_bool(0.5);
        p.floor_grid_cell = rng.random_range(0.1..0.6);
        p.floor_time_limit = rng.random_range(5.0..40.0);
        p.keypoint_conf = rng.random_range(0.05..0.95);
        let mut script = random_scenario(seed, &base);
        let seconds = script.last_frame() as f64 / script.fps;
        let n = &mut script.noise;
        n.keypoint_sigma = rng.random_range(0.0..6.0);
        n.bbox_sigma = rng.random_range(0.0..6.0);
        n.dropout = rng.random_range(0.0..0.4);
        n.foot_dropout = rng.random_range(0.0..0.5);
        n.confidence = rng.random_range(0.1..1.0);
        let ids: Vec<u64> = script.agents.iter().map(|a| a.id).collect();
        for _ in 0..rng.random_range(0..4) {
            let start = rng.random_range(0.0..seconds);
            n.occlusions.push(Occlusion {
                agent: ids[rng.random_range(0..ids.len())],
                start,
                end: start + rng.random_range(0.05..1.5),
            });
        }
        let (frames, _) = render_scenario(&script).map_err(|e| format!("scenario {seed}: {e}"))?;
        let a = analyze(&frames, &room).map_err(|e| format!("scenario {seed}: {e}"))?;
        let where_ = |what: &str| format!("scenario {seed}: {what}");
        for t in a.trajectories() {
            for s in &t.samples {
                ensure(finite_point(&s.map_position) && finite_point(&s.pixel_position), || where_("trajectory"))?;
            }
        }
        for g in a.gaze() {
            let ok = finite_point(&g.origin)
                && g.direction.x.is_finite()
                && g.direction.y.is_finite()
                && g.image_triangle.iter().all(finite_point)
                && g.map_triangle.iter().flatten().all(finite_point);
            ensure(ok, || where_("gaze record"))?;
        }
        for m in &a.metrics {
            if let Some(s) = m.score {
                ensure((0.0..=1.0).contains(&s), || where_(&format!("{} = {s}", m.metric)))?;
                scored += 1;
            }
            for (track, v) in &m.per_agent {
                ensure(v.is_finite(), || where_(&format!("{} per-agent {track} = {v}", m.metric)))?;
            }
        }
        let sheet = run_rollup(&room.hierarchy, &[leaf_values(&a.metrics)]).map_err(|e| where_(&e.to_string()))?;
        for (id, s) in &sheet.trials[0].nodes {
            for v in [s.raw, s.smoothed].into_iter().flatten() {
                ensure((0.0..=1.0).contains(&v), || where_(&format!("node {id} = {v}")))?;
            }
        }
    }
    Ok(format!("{FUZZ_SCENARIOS} scenarios, {scored} applicable scores, all finite and in [0,1]"))
}

// ---- 8 ----

fn fixture_root(name: &str) -> Result<(BTreeMap<String, Score>, Band), String> {
    let script = load_scenario(&fixtures().join(format!("{name}.json"))).map_err(|e| e.to_string())?;
    let room = script.room().map_err(|e| e.to_string())?.clone();
    let (frames, _) = render_scenario(&script).map_err(|e| e.to_string())?;
    let leaves = leaf_values(&analyze(&frames, &room).map_err(|e| e.to_string())?.metrics);
    let sheet = run_rollup(&room.hierarchy, std::slice::from_ref(&leaves)).map_err(|e| e.to_string())?;
    let band = sheet.last("root").ok_or("no root")?.band;
    Ok((leaves, band))
}

fn doctrine_contrast() -> Result<String, String> {
    let (leaves, band) = fixture_root("perfect_doctrine")?;
    let applicable: Vec<(&String, f64)> = leaves.iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect();
    ensure(!applicable.is_empty(), || "perfect: nothing applicable".into())?;
    for (m, v) in &applicable {
        ensure(*v >= DOCTRINE_MIN, || format!("perfect: {m} = {v:.4}"))?;
    }
    ensure(band == Band::Above, || format!("perfect: root band {band:?}"))?;
    let lowest = applicable.iter().map(|(_, v)| *v).fold(1.0, f64::min);
    let (_, bad) = fixture_root("pathological")?;
    ensure(bad == Band::Below, || format!("pathological: root band {bad:?}"))?;
    Ok(format!("perfect: {} metrics >= {lowest:.3}, root above; pathological: root below", applicable.len()))
}

// ---- 9 ----

fn collect_files(dir: &Path, prefix: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let rel = prefix.join(path.file_name().expect("named entry"));
        if path.is_dir() {
            collect_files(&path, &rel, out)?;
        } else {
            out.insert(rel, std::fs::read(&path)?);
        }
    }
    Ok(())
}

fn end_to_end_determinism() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let fx = fixtures();
    let manifest = serde_json::json!({
        "engine_version": env!("CARGO_PKG_VERSION"),
        "config": fx.join("room.json"),
        "stages": ["synth", "analyze", "rollup", "report"],
        "params": ["wall_buffer=0.75"],
        "reference": "reference.jsonl",
        "teams": [
            {"name": "alpha", "trials": [
                {"name": "t1", "script": fx.join("pathological.json"), "seed": 1},
                {"name": "t2", "script": fx.join("perfect_doctrine.json"), "seed": 2}
            ]},
            {"name": "bravo", "trials": [
                {"name": "t1", "script": fx.join("perfect_doctrine.json")}
            ]}
        ]
    });
    let reference = "{\"frame\":0,\"track\":1,\"x_m\":3.0,\"y_m\":-0.5,\"source\":\"measured\"}\n\
                     {\"frame\":1,\"track\":1,\"x_m\":3.0,\"y_m\":0.8,\"source\":\"measured\"}\n";
    std::fs::write(tmp.path().join("reference.jsonl"), reference).map_err(|e| e.to_string())?;
    let path = tmp.path().join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&manifest).expect("json")).map_err(|e| e.to_string())?;
    let mut trees = Vec::new();
    for (dir, jobs) in [("a", "1"), ("b", "3")] {
        let out = tmp.path().join(dir);
        let status = Command::new(env!("CARGO_BIN_EXE_ecr"))
            .args(["run", "--manifest"])
            .arg(&path)
            .arg("--out")
            .arg(&out)
            .args(["--jobs", jobs])
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || format!("run {dir} failed: {}", String::from_utf8_lossy(&status.stderr)))?;
        let mut files = BTreeMap::new();
        collect_files(&out, Path::new(""), &mut files).map_err(|e| e.to_string())?;
        trees.push(files);
    }
    let (a, b) = (&trees[0], &trees[1]);
    ensure(a.keys().eq(b.keys()), || "runs wrote different file sets".into())?;
    for (name, bytes) in a {
        ensure(&b[name] == bytes, || format!("{} differs", name.display()))?;
    }
    let bundles = a.keys().filter(|k| k.ends_with("bundle.json")).count();
    ensure(bundles == 3, || format!("{bundles} bundles"))?;
    Ok(format!("{} files byte-identical across two runs, {bundles} bundles", a.len()))
}

fn main() {
    let checks: [(u8, &str, Duration, Check); 9] = [
        (1, "smoothing schedule anchors", Duration::from_millis(1), alpha_anchor),
        (2, "gaze triangle span", Duration::from_secs(1), gaze_span),
        (3, "equal-weight roll-up", Duration::from_secs(1), rollup_means),
        (4, "homography recovery", Duration::from_secs(1), homography_recovery),
        (5, "tracker fixtures", Duration::from_secs(5), tracker_fixtures),
        (6, "metric oracle equivalence", Duration::from_secs(120), metric_oracles),
        (7, "range closure under fuzzing", Duration::from_secs(300), fuzz_ranges),
        (8, "doctrine contrast", Duration::from_secs(30), doctrine_contrast),
        (9, "end-to-end determinism", Duration::from_secs(60), end_to_end_determinism),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in checks {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or(p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|d| if elapsed <= budget { Ok(d) } else { Err(format!("{d}; over budget")) });
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d.as_str()),
            Err(e) => ("FAIL", e.as_str()),
        };
        failed += result.is_err() as usize;
        println!("[{tag}] criterion {id}: {name}: {detail} ({elapsed:.2?} of {budget:?})");
    }
    if failed > 0 {
        println!("{failed} of 9 criteria failed");
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
