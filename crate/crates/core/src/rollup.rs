//! Weighted roll-up of metric scores through a CTA hierarchy, with smoothing
//! across trials and above/at/below banding.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::METRIC_NAMES;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("cycle detected: {}", .0.join(" -> "))]
    CycleDetected(Vec<String>),
    #[error("node `{0}` is not reachable from the root")]
    OrphanNode(String),
    #[error("node `{node}` binds unknown metric `{metric}`")]
    UnknownMetricBinding { node: String, metric: String },
    #[error("node `{parent}` lists unknown child `{child}`")]
    UnknownChild { parent: String, child: String },
    #[error("weight of `{child}` under `{parent}` must be positive, got {weight}")]
    NonPositiveWeight { parent: String, child: String, weight: f64 },
    #[error("expected exactly one level-0 root, found {0}")]
    RootCount(usize),
    #[error("duplicate node id `{0}`")]
    DuplicateNode(String),
    #[error("node `{0}` has neither children nor a metric binding")]
    EmptyNode(String),
    #[error("node `{0}` has both children and a metric binding")]
    LeafWithChildren(String),
    #[error("child `{child}` (level {child_level}) must sit below `{parent}` (level {parent_level})")]
    LevelOrder { parent: String, child: String, parent_level: u8, child_level: u8 },
    #[error("node `{0}` has level above 4")]
    LevelOutOfRange(String),
    #[error("invalid bands: need 0 <= at_min < above_min <= 1")]
    InvalidBands,
    #[error("invalid smoothing: need 0 < alpha_ceil <= 1 and half_life > 0")]
    InvalidSmoothing,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub above_min: f64,
    pub at_min: f64,
}

impl Default for Bands {
    fn default() -> Self {
        Self { above_min: 0.8, at_min: 0.5 }
    }
}

impl Bands {
    fn is_valid(&self) -> bool {
        0.0 <= self.at_min && self.at_min < self.above_min && self.above_min <= 1.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Smoothing {
    pub alpha_ceil: f64,
    /// Trials until α reaches half of `alpha_ceil`.
    pub half_life: f64,
    /// Whether metric leaves are smoothed like internal nodes.
    pub smooth_leaves: bool,
}

impl Default for Smoothing {
    fn default() -> Self {
        Self { alpha_ceil: 1.0, half_life: 3.0, smooth_leaves: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChildRef {
    pub id: String,
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub name: String,
    pub level: u8,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ChildRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bands: Option<Bands>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.metric.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CtaHierarchy {
    pub nodes: Vec<Node>,
    #[serde(default)]
    pub smoothing: Smoothing,
    #[serde(default)]
    pub bands: Bands,
}

fn node(id: &str, name: &str, level: u8, children: &[&str]) -> Node {
    Node {
        id: id.into(),
        name: name.into(),
        level,
        children: children.iter().map(|c| ChildRef { id: (*c).into(), weight: 1.0 }).collect(),
        metric: None,
        bands: None,
    }
}

fn leaf(metric: &str, name: &str) -> Node {
    Node {
        id: metric.into(),
        name: name.into(),
        level: 4,
        children: Vec::new(),
        metric: Some(metric.into()),
        bands: None,
    }
}

impl CtaHierarchy {
    /// Equal-weight hierarchy holding only the metric linkages known from the
    /// domain description; metrics without a known parent sit under a generic
    /// "Unplaced Metrics" node.
    pub fn default_ecr() -> Self {
        let nodes = vec![
            node("root", "ECR Performance", 0, &["teamwork", "cognition"]),
            node("teamwork", "Teamwork", 1, &["cooperation"]),
            node("cognition", "Cognition", 1, &["cognitive_constructs"]),
            node("cooperation", "Cooperation", 2, &["entrance_vectors", "teammate_coverage"]),
            node(
                "cognitive_constructs",
                "Cognitive Constructs",
                2,
                &["task_comprehension", "role_clarity", "situational_awareness", "unplaced_metrics"],
            ),
            node(
                "task_comprehension",
                "Task Comprehension",
                3,
                &["identify_capture_pod", "threat_clearance", "floor_coverage"],
            ),
            node("role_clarity", "Role Clarity", 3, &["identify_capture_pod", "pod_capture_time"]),
            node("situational_awareness", "Situational Awareness and Adaptability", 3, &["move_along_wall"]),
            node(
                "unplaced_metrics",
                "Unplaced Metrics",
                3,
                &["entrance_hesitation", "threat_coverage", "total_floor_coverage_time"],
            ),
            leaf("entrance_vectors", "Entrance Vectors"),
            leaf("entrance_hesitation", "Entrance Hesitation"),
            leaf("identify_capture_pod", "Identify and Capture POD"),
            leaf("pod_capture_time", "POD Capture Time"),
            leaf("move_along_wall", "Move Along the Wall"),
            leaf("threat_clearance", "Threat Clearance"),
            leaf("threat_coverage", "Threat Coverage"),
            leaf("teammate_coverage", "Teammate Coverage"),
            leaf("floor_coverage", "Floor Coverage"),
            leaf("total_floor_coverage_time", "Total Floor Coverage Time"),
        ];
        Self { nodes, smoothing: Smoothing::default(), bands: Bands::default() }
    }

    pub fn node(&self, id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn root(&self) -> Option<&Node> {
        self.nodes.iter().find(|n| n.level == 0)
    }

    pub fn bands_for(&self, id: &str) -> Bands {
        self.node(id).and_then(|n| n.bands).unwrap_or(self.bands)
    }

    /// Check every structural invariant; see [`HierarchyError`].
    pub fn validate(&self) -> Result<(), HierarchyError> {
        let mut index: BTreeMap<&str, &Node> = BTreeMap::new();
        for n in &self.nodes {
            if index.insert(n.id.as_str(), n).is_some() {
                return Err(HierarchyError::DuplicateNode(n.id.clone()));
            }
        }
        let roots = self.nodes.iter().filter(|n| n.level == 0).count();
        if roots != 1 {
            return Err(HierarchyError::RootCount(roots));
        }
        for n in &self.nodes {
            if n.level > 4 {
                return Err(HierarchyError::LevelOutOfRange(n.id.clone()));
            }
            match (&n.metric, n.children.is_empty()) {
                (Some(_), false) => return Err(HierarchyError::LeafWithChildren(n.id.clone())),
                (None, true) => return Err(HierarchyError::EmptyNode(n.id.clone())),
                (Some(m), true) if !METRIC_NAMES.contains(&m.as_str()) => {
                    return Err(HierarchyError::UnknownMetricBinding { node: n.id.clone(), metric: m.clone() })
                }
                _ => {}
            }
            for c in &n.children {
                if !index.contains_key(c.id.as_str()) {
                    return Err(HierarchyError::UnknownChild { parent: n.id.clone(), child: c.id.clone() });
                }
                if !(c.weight > 0.0 && c.weight.is_finite()) {
                    return Err(HierarchyError::NonPositiveWeight {
                        parent: n.id.clone(),
                        child: c.id.clone(),
                        weight: c.weight,
                    });
                }
            }
        }
        self.check_acyclic(&index)?;
        for n in &self.nodes {
            for c in &n.children {
                let child = index[c.id.as_str()];
                if child.level <= n.level {
                    return Err(HierarchyError::LevelOrder {
                        parent: n.id.clone(),
                        child: c.id.clone(),
                        parent_level: n.level,
                        child_level: child.level,
                    });
                }
            }
        }
        let root = self.root().expect("one root checked above");
        let mut reached = BTreeSet::new();
        let mut stack = vec![root.id.as_str()];
        while let Some(id) = stack.pop() {
            if reached.insert(id) {
                stack.extend(index[id].children.iter().map(|c| c.id.as_str()));
            }
        }
        if let Some(orphan) = self.nodes.iter().find(|n| !reached.contains(n.id.as_str())) {
            return Err(HierarchyError::OrphanNode(orphan.id.clone()));
        }
        if !self.bands.is_valid() || self.nodes.iter().filter_map(|n| n.bands).any(|b| !b.is_valid()) {
            return Err(HierarchyError::InvalidBands);
        }
        let s = &self.smoothing;
        if !(s.alpha_ceil > 0.0 && s.alpha_ceil <= 1.0 && s.half_life > 0.0 && s.half_life.is_finite()) {
            return Err(HierarchyError::InvalidSmoothing);
        }
        Ok(())
    }

    fn check_acyclic(&self, index: &BTreeMap<&str, &Node>) -> Result<(), HierarchyError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Active,
            Done,
        }
        fn visit<'a>(
            id: &'a str,
            index: &BTreeMap<&str, &'a Node>,
            marks: &mut BTreeMap<&'a str, Mark>,
            path: &mut Vec<&'a str>,
        ) -> Result<(), HierarchyError> {
            match marks.get(id).copied().unwrap_or(Mark::Fresh) {
                Mark::Done => return Ok(()),
                Mark::Active => {
                    let start = path.iter().position(|p| *p == id).unwrap_or(0);
                    let mut cycle: Vec<String> = path[start..].iter().map(|s| s.to_string()).collect();
                    cycle.push(id.to_string());
                    return Err(HierarchyError::CycleDetected(cycle));
                }
                Mark::Fresh => {}
            }
            marks.insert(id, Mark::Active);
            path.push(id);
            for c in &index[id].children {
                visit(c.id.as_str(), index, marks, path)?;
            }
            path.pop();
            marks.insert(id, Mark::Done);
            Ok(())
        }
        let mut marks = BTreeMap::new();
        for n in &self.nodes {
            visit(n.id.as_str(), index, &mut marks, &mut Vec::new())?;
        }
        Ok(())
    }

    /// Node ids ordered for evaluation: deepest level first, then by id.
    fn bottom_up(&self) -> Vec<&Node> {
        let mut v: Vec<&Node> = self.nodes.iter().collect();
        v.sort_by(|a, b| b.level.cmp(&a.level).then_with(|| a.id.cmp(&b.id)));
        v
    }
}

/// A score in `[0, 1]`, or `None` for not applicable.
pub type Score = Option<f64>;

/// Weighted average of applicable children at every node for one trial.
/// Leaves read their bound metric from `leaf_values`; missing metrics are not applicable.
pub fn aggregate_trial(h: &CtaHierarchy, leaf_values: &BTreeMap<String, Score>) -> BTreeMap<String, Score> {
    let mut out: BTreeMap<String, Score> = BTreeMap::new();
    for n in h.bottom_up() {
        let value = match &n.metric {
            Some(m) => leaf_values.get(m).copied().flatten(),
            None => {
                let (mut num, mut den) = (0.0, 0.0);
                for c in &n.children {
                    if let Some(x) = out.get(&c.id).copied().flatten() {
                        num += c.weight * x;
                        den += c.weight;
                    }
                }
                (den > 0.0).then(|| (num / den).clamp(0.0, 1.0))
            }
        };
        out.insert(n.id.clone(), value);
    }
    out
}

/// `α(t) = α_ceil·(1 − e^{−λ(t−1)})` with `λ = ln 2 / H`.
pub fn alpha_schedule(t: usize, alpha_ceil: f64, half_life: f64) -> f64 {
    let lambda = std::f64::consts::LN_2 / half_life;
    alpha_ceil * (1.0 - (-lambda * (t.max(1) - 1) as f64).exp())
}

/// `ŝ = α·ŝ_prev + (1 − α)·s`. A not-applicable current value carries the
/// previous score forward; with no previous score the current one is taken.
pub fn smooth_scores(prev: Score, current: Score, alpha: f64) -> Score {
    match (prev, current) {
        (Some(p), Some(c)) => Some((alpha * p + (1.0 - alpha) * c).clamp(p.min(c), p.max(c))),
        (p, None) => p,
        (None, c) => c,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Band {
    Above,
    At,
    Below,
    NotApplicable,
}

impl Band {
    pub fn label(&self) -> &'static str {
        match self {
            Band::Above => "above",
            Band::At => "at",
            Band::Below => "below",
            Band::NotApplicable => "na",
        }
    }
}

pub fn band(score: Score, thresholds: &Bands) -> Band {
    match score {
        None => Band::NotApplicable,
        Some(s) if s >= thresholds.above_min => Band::Above,
        Some(s) if s >= thresholds.at_min => Band::At,
        Some(_) => Band::Below,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeScore {
    pub raw: Score,
    pub smoothed: Score,
    pub band: Band,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialScores {
    /// 1-based trial index.
    pub trial: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub nodes: BTreeMap<String, NodeScore>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub id: String,
    pub name: String,
    pub level: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSheet {
    pub nodes: Vec<NodeInfo>,
    pub trials: Vec<TrialScores>,
}

impl ScoreSheet {
    pub fn last(&self, id: &str) -> Option<&NodeScore> {
        self.trials.last().and_then(|t| t.nodes.get(id))
    }
}

/// Aggregate and smooth a sequence of trials (trial 1 first).
pub fn run_rollup(h: &CtaHierarchy, trials: &[BTreeMap<String, Score>]) -> Result<ScoreSheet, HierarchyError> {
    h.validate()?;
    let mut nodes: Vec<NodeInfo> =
        h.nodes.iter().map(|n| NodeInfo { id: n.id.clone(), name: n.name.clone(), level: n.level }).collect();
    nodes.sort_by(|a, b| a.level.cmp(&b.level).then_with(|| a.name.cmp(&b.name)));
    let mut prev: BTreeMap<String, Score> = BTreeMap::new();
    let mut out = Vec::with_capacity(trials.len());
    for (i, leaf_values) in trials.iter().enumerate() {
        let t = i + 1;
        let alpha = alpha_schedule(t, h.smoothing.alpha_ceil, h.smoothing.half_life);
        let raw = aggregate_trial(h, leaf_values);
        let mut scores = BTreeMap::new();
        for n in &h.nodes {
            let r = raw[&n.id];
            let smoothed = if n.is_leaf() && !h.smoothing.smooth_leaves {
                r
            } else {
                smooth_scores(prev.get(&n.id).copied().flatten(), r, alpha)
            };
            prev.insert(n.id.clone(), smoothed);
            let b = band(smoothed, &h.bands_for(&n.id));
            scores.insert(n.id.clone(), NodeScore { raw: r, smoothed, band: b });
        }
        out.push(TrialScores { trial: t, label: None, nodes: scores });
    }
    Ok(ScoreSheet { nodes, trials: out })
}
