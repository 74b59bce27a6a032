//! The `ecr` binary end to end: exit codes, outputs and reproducibility.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn ecr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecr")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn room_json() -> Value {
    read_json(&fixtures().join("room.json"))
}

fn write_json(path: &Path, v: &Value) {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn room_path() -> String {
    fixtures().join("room.json").to_string_lossy().into_owned()
}

fn files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn scores(metrics: &Value) -> BTreeMap<String, Option<f64>> {
    metrics["metrics"]
        .as_array()
        .unwrap()
        .iter()
        .map(|m| (m["metric"].as_str().unwrap().to_string(), m["score"].as_f64()))
        .collect()
}

#[test]
fn calibrate_exact_pairs_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ecr(&["calibrate", "--config", &room_path()], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout);
    let line = text.lines().find(|l| l.starts_with("max reprojection error:")).unwrap();
    let value: f64 = line.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(value < 1e-9, "{line}");
}

#[test]
fn calibrate_with_three_pairs_is_invalid_input() {
    let tmp = tempfile::tempdir().unwrap();
    let mut room = room_json();
    room["calibration"]["pairs"].as_array_mut().unwrap().truncate(3);
    write_json(&tmp.path().join("room.json"), &room);
    let out = ecr(&["calibrate", "--config", "room.json"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("calibration"), "{}", stderr(&out));
}

#[test]
fn calibrate_beyond_tolerance_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let mut room = room_json();
    let y = room["calibration"]["pairs"][4]["map"][1].as_f64().unwrap();
    room["calibration"]["pairs"][4]["map"][1] = json!(y + 0.5);
    write_json(&tmp.path().join("room.json"), &room);
    let out = ecr(&["calibrate", "--config", "room.json", "--out", "cal"], tmp.path());
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("calibration tolerance exceeded"), "{}", stderr(&out));
    let report = read_json(&tmp.path().join("cal/calibration.json"));
    assert!(report["max_error"].as_f64().unwrap() > report["tolerance"].as_f64().unwrap());
}

#[test]
fn analyze_perfect_fixture_scores_high_and_reproduces() {
    let tmp = tempfile::tempdir().unwrap();
    let script = fixtures().join("perfect_doctrine.json");
    let out = ecr(&["synth", "--script", script.to_str().unwrap(), "--out", "synth"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    for dir in ["a", "b"] {
        let out = ecr(
            &["analyze", "--detections", "synth/detections.jsonl", "--config", &room_path(), "--out", dir],
            tmp.path(),
        );
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let metrics = read_json(&tmp.path().join("a/metrics.json"));
    let applicable: Vec<(String, f64)> = scores(&metrics).into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect();
    assert_eq!(applicable.len(), 10);
    assert!(applicable.iter().all(|(_, v)| *v >= 0.9), "{applicable:?}");
    assert_eq!(files(&tmp.path().join("a")), files(&tmp.path().join("b")));
}

#[test]
fn empty_stream_is_all_not_applicable_with_warning() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("empty.jsonl"), "").unwrap();
    let out = ecr(&["analyze", "--detections", "empty.jsonl", "--config", &room_path(), "--out", "o"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stderr(&out).contains("warning"));
    let s = scores(&read_json(&tmp.path().join("o/metrics.json")));
    assert_eq!(s.len(), 10);
    assert!(s.values().all(Option::is_none), "{s:?}");
}

#[test]
fn malformed_stream_is_invalid_input() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.jsonl"), "{not json}\n").unwrap();
    let out = ecr(&["analyze", "--detections", "bad.jsonl", "--config", &room_path(), "--out", "o"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 1"), "{}", stderr(&out));
}

#[test]
fn parameter_overrides_are_echoed_and_checked() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("empty.jsonl"), "").unwrap();
    let base = ["analyze", "--detections", "empty.jsonl", "--config", &room_path(), "--out", "o"];
    let mut args = base.to_vec();
    args.extend(["--params", "wall_buffer=0.5", "tracker.max_age=12"]);
    let out = ecr(&args, tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = read_json(&tmp.path().join("o/metrics.json"));
    assert_eq!(m["parameters"]["config"]["metric_params"]["wall_buffer"], json!(0.5));
    assert_eq!(m["parameters"]["config"]["tracker"]["max_age"], json!(12));
    assert_eq!(m["parameters"]["overrides"], json!(["wall_buffer=0.5", "tracker.max_age=12"]));
    let echo = read_json(&tmp.path().join("o/manifest.json"));
    assert_eq!(echo["params"], json!(["wall_buffer=0.5", "tracker.max_age=12"]));

    let mut args = base.to_vec();
    args.extend(["--params", "no_such_knob=1"]);
    let out = ecr(&args, tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no_such_knob"));
}

fn metrics_file(dir: &Path, name: &str, values: &[(&str, f64)]) -> PathBuf {
    let metrics: Vec<Value> =
        values.iter().map(|(m, v)| json!({"metric": m, "score": v, "per_agent": {}, "evidence": []})).collect();
    let doc = json!({
        "engine_version": env!("CARGO_PKG_VERSION"),
        "metadata": {"name": name, "source": "x.jsonl", "fps": 30.0, "frames": 0, "detections": 0, "tracks": 0},
        "parameters": {"config": room_json_effective(), "overrides": []},
        "metrics": metrics,
    });
    let path = dir.join(name).join("metrics.json");
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    write_json(&path, &doc);
    path
}

/// The fixture room after defaults are filled in, as `analyze` echoes it.
fn room_json_effective() -> Value {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("e.jsonl"), "").unwrap();
    let out = ecr(&["analyze", "--detections", "e.jsonl", "--config", &room_path(), "--out", "o"], tmp.path());
    assert_eq!(code(&out), 0);
    read_json(&tmp.path().join("o/metrics.json"))["parameters"]["config"].clone()
}

fn toy_hierarchy() -> Value {
    json!({
        "nodes": [
            {"id": "root", "name": "Root", "level": 0, "children": [{"id": "c1"}, {"id": "c2"}]},
            {"id": "c1", "name": "Entry", "level": 1, "children": [{"id": "ev"}, {"id": "eh"}]},
            {"id": "c2", "name": "Floor", "level": 1, "children": [{"id": "fc"}]},
            {"id": "ev", "name": "EV", "level": 2, "metric": "entrance_vectors"},
            {"id": "eh", "name": "EH", "level": 2, "metric": "entrance_hesitation"},
            {"id": "fc", "name": "FC", "level": 2, "metric": "floor_coverage"}
        ]
    })
}

#[test]
fn single_trial_rollup_is_unsmoothed() {
    let tmp = tempfile::tempdir().unwrap();
    let m = metrics_file(tmp.path(), "t1", &[("entrance_vectors", 0.3), ("floor_coverage", 0.9)]);
    let out = ecr(&["rollup", "--metrics", m.to_str().unwrap(), "--config", &room_path(), "--out", "r"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sheet = read_json(&tmp.path().join("r/scores.json"));
    let nodes = sheet["trials"][0]["nodes"].as_object().unwrap();
    assert!(!nodes.is_empty());
    for (id, n) in nodes {
        assert_eq!(n["raw"], n["smoothed"], "{id}");
    }
    let csv = std::fs::read_to_string(tmp.path().join("r/scores.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "level,id,name,t1");
}

#[test]
fn three_trial_toy_tree_matches_hand_computation() {
    let tmp = tempfile::tempdir().unwrap();
    write_json(&tmp.path().join("toy.json"), &toy_hierarchy());
    let trials = [("t1", [0.2, 0.4, 0.6]), ("t2", [0.5, 0.7, 0.9]), ("t3", [0.8, 1.0, 0.9])];
    let mut args = vec!["rollup".to_string(), "--hierarchy".into(), "toy.json".into(), "--out".into(), "r".into()];
    args.push("--metrics".into());
    for (name, [ev, eh, fc]) in trials {
        let p = metrics_file(
            tmp.path(),
            name,
            &[("entrance_vectors", ev), ("entrance_hesitation", eh), ("floor_coverage", fc)],
        );
        args.push(p.to_string_lossy().into_owned());
    }
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = ecr(&args, tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let sheet = read_json(&tmp.path().join("r/scores.json"));
    // Half-life 3: alpha(2) = 1 - 2^(-1/3), alpha(3) = 1 - 2^(-2/3).
    let expected = [
        ("root", [0.45, 0.75, 0.9], [0.45, 0.68811015779523, 0.8215923940215765]),
        ("c1", [0.3, 0.6, 0.9], [0.3, 0.5381101577952299, 0.7660864727636919]),
        ("c2", [0.6, 0.9, 0.9], [0.6, 0.8381101577952299, 0.8770983152794609]),
    ];
    for (id, raw, smoothed) in expected {
        for t in 0..3 {
            let n = &sheet["trials"][t]["nodes"][id];
            assert!((n["raw"].as_f64().unwrap() - raw[t]).abs() < 1e-12, "{id} trial {t}: {n}");
            assert!((n["smoothed"].as_f64().unwrap() - smoothed[t]).abs() < 1e-12, "{id} trial {t}: {n}");
        }
    }
    assert_eq!(sheet["trials"][2]["nodes"]["root"]["band"], json!("above"));
    assert_eq!(sheet["trials"][2]["nodes"]["c1"]["band"], json!("at"));
    let html = std::fs::read_to_string(tmp.path().join("r/scores.html")).unwrap();
    assert!(html.contains("<td class=\"band-above\">0.822</td>"), "{html}");
}

#[test]
fn cyclic_hierarchy_is_rejected_with_the_cycle() {
    let tmp = tempfile::tempdir().unwrap();
    let mut h = toy_hierarchy();
    h["nodes"][1]["children"].as_array_mut().unwrap().push(json!({"id": "root"}));
    write_json(&tmp.path().join("cyclic.json"), &h);
    let m = metrics_file(tmp.path(), "t1", &[("entrance_vectors", 0.3)]);
    let out =
        ecr(&["rollup", "--metrics", m.to_str().unwrap(), "--hierarchy", "cyclic.json", "--out", "r"], tmp.path());
    assert_eq!(code(&out), 2);
    let err = stderr(&out);
    assert!(err.contains("cycle detected: ") && err.contains("root -> c1 -> root"), "{err}");

    let mut room = room_json();
    room["hierarchy"] = h;
    write_json(&tmp.path().join("room.json"), &room);
    let out = ecr(&["rollup", "--metrics", m.to_str().unwrap(), "--config", "room.json", "--out", "r"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("cycle detected"), "{}", stderr(&out));
}

#[test]
fn seed_changes_noise_not_geometry() {
    let tmp = tempfile::tempdir().unwrap();
    let script = fixtures().join("crossing.json");
    let s = script.to_str().unwrap();
    for (dir, seed) in [("a", "1"), ("b", "2"), ("c", "1")] {
        let out = ecr(&["synth", "--script", s, "--out", dir, "--seed", seed], tmp.path());
        assert_eq!(code(&out), 0, "{}", stderr(&out));
    }
    let det = |d: &str| std::fs::read(tmp.path().join(d).join("detections.jsonl")).unwrap();
    assert_ne!(det("a"), det("b"));
    assert_eq!(det("a"), det("c"));
    let geometry = |d: &str| {
        let gt = read_json(&tmp.path().join(d).join("ground_truth.json"));
        gt["agents"]
            .as_array()
            .unwrap()
            .iter()
            .map(|a| a["samples"].as_array().unwrap().iter().map(|s| s["position"].clone()).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    assert_eq!(geometry("a"), geometry("b"));
}

#[test]
fn invalid_script_is_invalid_input() {
    let tmp = tempfile::tempdir().unwrap();
    let mut script = read_json(&fixtures().join("crossing.json"));
    script["room"] = json!(room_path());
    script["agents"][0]["waypoints"][1]["t"] = json!(0.0);
    write_json(&tmp.path().join("bad.json"), &script);
    let out = ecr(&["synth", "--script", "bad.json", "--out", "o"], tmp.path());
    assert_eq!(code(&out), 2, "{}", stderr(&out));
}

#[test]
fn composed_commands_match_echoed_manifests() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let script = fixtures().join("pathological.json");
    let room = room_path();
    let steps: [Vec<&str>; 4] = [
        vec!["synth", "--script", script.to_str().unwrap(), "--out", "s"],
        vec!["analyze", "--detections", "s/detections.jsonl", "--config", &room, "--out", "a", "--trial", "t1"],
        vec!["rollup", "--metrics", "a/metrics.json", "--config", &room, "--out", "r"],
        vec![
            "report",
            "--trial",
            "a",
            "--config",
            &room,
            "--out",
            "p",
            "--scores",
            "r/scores.json",
            "--frames",
            "60,90",
        ],
    ];
    for args in &steps {
        let out = ecr(args, p);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
    }
    let bundle = read_json(&p.join("p/bundle.json"));
    assert_eq!(bundle["assets"], json!(["trajectories.svg", "gaze_60.svg", "gaze_90.svg"]));
    assert_eq!(bundle["trials"][0]["metadata"]["name"], json!("t1"));
    assert!(bundle["score_sheet"]["trials"][0]["nodes"]["root"].is_object());

    for dir in ["s", "a", "r", "p"] {
        let rerun = format!("{dir}_again");
        let manifest = p.join(dir).join("manifest.json");
        let out = ecr(&["run", "--manifest", manifest.to_str().unwrap(), "--out", &rerun], p);
        assert_eq!(code(&out), 0, "{dir}: {}", stderr(&out));
        assert_eq!(files(&p.join(dir)), files(&p.join(&rerun)), "{dir}");
    }
}

#[test]
fn report_draws_reference_beside_team() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let script = fixtures().join("perfect_doctrine.json");
    let room = room_path();
    assert_eq!(code(&ecr(&["synth", "--script", script.to_str().unwrap(), "--out", "s"], p)), 0);
    assert_eq!(code(&ecr(&["analyze", "--detections", "s/detections.jsonl", "--config", &room, "--out", "a"], p)), 0);
    let out =
        ecr(&["report", "--trial", "a", "--config", &room, "--out", "p", "--reference", "a/trajectories.jsonl"], p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let svg = std::fs::read_to_string(p.join("p/trajectories.svg")).unwrap();
    assert!(svg.contains(">Reference</text>") && svg.contains(">Team</text>"));
    assert_eq!(svg.matches("<polyline").count(), 8);
    assert_eq!(svg.matches("<circle class=\"enemy\"").count(), 4);
}

#[test]
fn manifest_runs_teams_in_parallel_with_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = fixtures();
    let manifest = json!({
        "engine_version": env!("CARGO_PKG_VERSION"),
        "stages": ["synth", "analyze", "rollup"],
        "teams": [
            {"name": "one", "trials": [{"name": "t1", "script": fx.join("pathological.json")}]},
            {"name": "two", "trials": [{"name": "t1", "script": fx.join("perfect_doctrine.json")}]}
        ]
    });
    write_json(&tmp.path().join("m.json"), &manifest);
    let out = ecr(&["run", "--manifest", "m.json", "--out", "o", "--jobs", "2"], tmp.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(tmp.path().join("o/scores.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "level,id,name,one,two");
    assert!(tmp.path().join("o/one/metrics.json").exists());
    assert!(tmp.path().join("o/two/scores.html").exists());
}

#[test]
fn manifest_without_inputs_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = json!({
        "engine_version": env!("CARGO_PKG_VERSION"),
        "stages": ["analyze"],
        "teams": [{"name": "one", "trials": [{"name": "t1"}]}]
    });
    write_json(&tmp.path().join("m.json"), &manifest);
    let out = ecr(&["run", "--manifest", "m.json"], tmp.path());
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("no detections"), "{}", stderr(&out));
}
