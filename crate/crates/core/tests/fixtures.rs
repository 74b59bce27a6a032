//! Scripted fixtures against their paired `*.expected.json` files.
//!
//! Run with `ECR_BLESS=1` to rewrite the expected files from the oracle.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ecr_core::metrics::{compute_metrics, leaf_values, MetricContext, METRIC_NAMES};
use ecr_core::pipeline::analyze;
use ecr_core::rollup::run_rollup;
use ecr_core::synthetic::{
    load_scenario, oracle_metrics, oracle_track_assignment, render_scenario, truth_metric_input,
};
use serde::{Deserialize, Serialize};

const FIXTURES: [&str; 5] = ["perfect_doctrine", "pathological", "occlusion_four", "single_agent", "crossing"];
const EXACT_TOL: f64 = 1e-9;
const NOISY_TOL: f64 = 0.05;

#[derive(Debug, PartialEq, Serialize, Deserialize)]
struct Expected {
    scenario: String,
    metrics: BTreeMap<String, Option<f64>>,
    track_count: usize,
    identity_switches: usize,
    root_band: String,
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}

type Leaves = BTreeMap<String, Option<f64>>;

fn observed(name: &str) -> (Expected, Leaves, Leaves) {
    let script = load_scenario(&fixture_dir().join(format!("{name}.json"))).unwrap();
    let room = script.room().unwrap().clone();
    let (frames, gt) = render_scenario(&script).unwrap();
    let oracle = oracle_metrics(&gt, &room);
    let truth_input = truth_metric_input(&gt, &room).unwrap();
    let engine_truth = leaf_values(&compute_metrics(&MetricContext::new(&truth_input, &room)));
    let engine_noisy = leaf_values(&analyze(&frames, &room).unwrap().metrics);
    let audit = oracle_track_assignment(&frames, &gt, &room.tracker);
    let sheet = run_rollup(&room.hierarchy, std::slice::from_ref(&oracle)).unwrap();
    let expected = Expected {
        scenario: script.name.clone(),
        metrics: oracle,
        track_count: audit.track_count,
        identity_switches: audit.identity_switches,
        root_band: sheet.last("root").unwrap().band.label().to_string(),
    };
    (expected, engine_truth, engine_noisy)
}

#[test]
fn fixtures_match_expected_outputs() {
    let bless = std::env::var_os("ECR_BLESS").is_some();
    for name in FIXTURES {
        let (got, engine_truth, engine_noisy) = observed(name);
        let path = fixture_dir().join(format!("{name}.expected.json"));
        if bless {
            std::fs::write(&path, serde_json::to_string_pretty(&got).unwrap() + "\n").unwrap();
        }
        let want: Expected = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(want.scenario, got.scenario, "{name}");
        assert_eq!(want.track_count, got.track_count, "{name}: track count");
        assert_eq!(want.identity_switches, got.identity_switches, "{name}: identity switches");
        assert_eq!(want.root_band, got.root_band, "{name}: root band");
        for m in METRIC_NAMES {
            let w = want.metrics[m];
            assert!(close(w, got.metrics[m], EXACT_TOL), "{name}/{m}: oracle {:?} vs expected {w:?}", got.metrics[m]);
            assert!(close(w, engine_truth[m], EXACT_TOL), "{name}/{m}: engine on truth {:?} vs {w:?}", engine_truth[m]);
            assert!(close(w, engine_noisy[m], NOISY_TOL), "{name}/{m}: engine on noise {:?} vs {w:?}", engine_noisy[m]);
        }
    }
}
