//! Human- and machine-readable outputs: score tables, trajectory and gaze
//! drawings, and result bundles.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gaze::GazeRecord;
use crate::geometry::{bounds, centroid, Point};
use crate::ingest::RoomConfig;
use crate::mapping::{AgentRole, Role, Trajectory, TrajectoryDumpRecord};
use crate::metrics::MetricResult;
use crate::rollup::{Band, NodeInfo, Score, ScoreSheet};

/// Version stamped into every bundle.
pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv output is not utf-8: {0}")]
    Utf8(#[from] std::string::FromUtf8Error),
    #[error("csv writer failed: {0}")]
    CsvFlush(String),
}

// ---- score tables ----

/// Column layout of a score table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableLayout {
    /// One column per trial.
    PerTrial,
    /// One column per team holding its latest trial.
    PerTeam,
}

/// A team's score sheet under a display name.
#[derive(Clone, Copy, Debug)]
pub struct TeamSheet<'a> {
    pub team: &'a str,
    pub sheet: &'a ScoreSheet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableCell {
    pub score: Score,
    pub band: Band,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub node: NodeInfo,
    pub cells: Vec<TableCell>,
}

/// Smoothed node scores arranged for display; rows by level then name.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedTable {
    pub csv: String,
    pub html: String,
}

/// Display rule for scores: three decimals, `N/A` when not applicable.
pub fn format_score(score: Score) -> String {
    match score {
        Some(v) => format!("{v:.3}"),
        None => "N/A".to_string(),
    }
}

fn ordered_nodes(sheets: &[TeamSheet]) -> Vec<NodeInfo> {
    let mut seen = BTreeSet::new();
    let mut nodes: Vec<NodeInfo> =
        sheets.iter().flat_map(|s| s.sheet.nodes.iter()).filter(|n| seen.insert(n.id.clone())).cloned().collect();
    nodes.sort_by(|a, b| a.level.cmp(&b.level).then_with(|| a.name.cmp(&b.name)).then_with(|| a.id.cmp(&b.id)));
    nodes
}

fn cell(scores: Option<&crate::rollup::TrialScores>, id: &str) -> TableCell {
    match scores.and_then(|t| t.nodes.get(id)) {
        Some(n) => TableCell { score: n.smoothed, band: n.band },
        None => TableCell { score: None, band: Band::NotApplicable },
    }
}

pub fn score_table(sheets: &[TeamSheet], layout: TableLayout) -> ScoreTable {
    let nodes = ordered_nodes(sheets);
    let mut columns = Vec::new();
    let mut sources: Vec<Option<&crate::rollup::TrialScores>> = Vec::new();
    match layout {
        TableLayout::PerTrial => {
            for s in sheets {
                for t in &s.sheet.trials {
                    let label = t.label.clone().unwrap_or_else(|| format!("Trial {}", t.trial));
                    columns.push(if sheets.len() > 1 { format!("{} {label}", s.team) } else { label });
                    sources.push(Some(t));
                }
            }
        }
        TableLayout::PerTeam => {
            for s in sheets {
                columns.push(s.team.to_string());
                sources.push(s.sheet.trials.last());
            }
        }
    }
    let rows = nodes
        .into_iter()
        .map(|node| {
            let cells = sources.iter().map(|t| cell(*t, &node.id)).collect();
            TableRow { node, cells }
        })
        .collect();
    ScoreTable { columns, rows }
}

fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

pub fn table_csv(table: &ScoreTable) -> Result<String, ReportError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["level".to_string(), "id".to_string(), "name".to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    for r in &table.rows {
        let mut rec = vec![r.node.level.to_string(), r.node.id.clone(), r.node.name.clone()];
        rec.extend(r.cells.iter().map(|c| format_score(c.score)));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| ReportError::CsvFlush(e.to_string()))?;
    Ok(String::from_utf8(bytes)?)
}

pub fn table_html(table: &ScoreTable) -> String {
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Scores</title>\n<style>\n");
    h.push_str(
        "table.scores { border-collapse: collapse; font-family: sans-serif; }\n\
         table.scores th, table.scores td { border: 1px solid #999; padding: 2px 8px; }\n\
         td.band-above { background: #8fd18f; }\n\
         td.band-at { background: #f3e08a; }\n\
         td.band-below { background: #ef9a9a; }\n\
         td.band-na { color: #777; }\n",
    );
    h.push_str("</style>\n</head>\n<body>\n<table class=\"scores\">\n<thead>\n<tr><th>Level</th><th>Node</th>");
    for c in &table.columns {
        let _ = write!(h, "<th>{}</th>", escape(c));
    }
    h.push_str("</tr>\n</thead>\n<tbody>\n");
    for r in &table.rows {
        let _ = write!(
            h,
            "<tr class=\"level-{}\" data-node=\"{}\"><td>{}</td><td>{}</td>",
            r.node.level,
            escape(&r.node.id),
            r.node.level,
            escape(&r.node.name)
        );
        for c in &r.cells {
            let _ = write!(h, "<td class=\"band-{}\">{}</td>", c.band.label(), format_score(c.score));
        }
        h.push_str("</tr>\n");
    }
    h.push_str("</tbody>\n</table>\n</body>\n</html>\n");
    h
}

/// CSV and styled HTML for a set of team sheets.
pub fn render_score_table(sheets: &[TeamSheet], layout: TableLayout) -> Result<RenderedTable, ReportError> {
    let table = score_table(sheets, layout);
    Ok(RenderedTable { csv: table_csv(&table)?, html: table_html(&table) })
}

// ---- drawings ----

/// Map-space path of one track.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPath {
    pub track: u64,
    pub points: Vec<Point>,
}

impl TrackPath {
    pub fn from_trajectories(trajectories: &[Trajectory]) -> Vec<TrackPath> {
        trajectories
            .iter()
            .map(|t| TrackPath { track: t.track, points: t.samples.iter().map(|s| s.map_position).collect() })
            .collect()
    }

    /// Paths from trajectory dump rows, ordered by track then frame.
    pub fn from_dump(rows: &[TrajectoryDumpRecord]) -> Vec<TrackPath> {
        let mut by_track: BTreeMap<u64, BTreeMap<u64, Point>> = BTreeMap::new();
        for r in rows {
            by_track.entry(r.track).or_default().insert(r.frame, Point::new(r.x_m, r.y_m));
        }
        by_track.into_iter().map(|(track, pts)| TrackPath { track, points: pts.into_values().collect() }).collect()
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22"];
const PX_PER_M: f64 = 100.0;
const MARGIN: f64 = 20.0;

const SVG_STYLE: &str = "<style>\n\
.room { fill: #fafafa; stroke: none; }\n\
.wall { stroke: #222; stroke-width: 3; }\n\
.entry-zone { fill: #d0e4ff; fill-opacity: 0.6; stroke: #5a8dd6; }\n\
.pod { fill: #ffe7b3; fill-opacity: 0.6; stroke: #c48a00; stroke-dasharray: 4 2; }\n\
.pod-label, .panel-title { font-family: sans-serif; font-size: 11px; fill: #555; }\n\
.member { fill: none; stroke-width: 2; }\n\
.enemy { fill: #d62728; stroke: #600; }\n\
.gaze { fill-opacity: 0.35; stroke-width: 1; }\n\
</style>\n";

/// Map-to-drawing transform for one panel.
struct Panel {
    lo: Point,
    hi: Point,
    offset_x: f64,
}

impl Panel {
    fn new(room: &RoomConfig, offset_x: f64) -> Self {
        let mut pts = room.room.clone();
        pts.extend(room.entry_zone.polygon.iter().copied());
        let (lo, hi) = bounds(&pts).unwrap_or((Point::origin(), Point::new(1.0, 1.0)));
        Self { lo, hi, offset_x }
    }

    fn width(&self) -> f64 {
        (self.hi.x - self.lo.x) * PX_PER_M + 2.0 * MARGIN
    }

    fn height(&self) -> f64 {
        (self.hi.y - self.lo.y) * PX_PER_M + 2.0 * MARGIN
    }

    fn xy(&self, p: &Point) -> (f64, f64) {
        (self.offset_x + MARGIN + (p.x - self.lo.x) * PX_PER_M, MARGIN + (self.hi.y - p.y) * PX_PER_M)
    }

    fn points(&self, pts: &[Point]) -> String {
        pts.iter()
            .map(|p| {
                let (x, y) = self.xy(p);
                format!("{x:.2},{y:.2}")
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn background(&self, room: &RoomConfig, out: &mut String) {
        let _ = writeln!(out, "<polygon class=\"room\" points=\"{}\"/>", self.points(&room.room));
        let _ = writeln!(out, "<polygon class=\"entry-zone\" points=\"{}\"/>", self.points(&room.entry_zone.polygon));
        for (name, poly) in &room.pods {
            let _ = writeln!(
                out,
                "<polygon class=\"pod\" data-name=\"{}\" points=\"{}\"/>",
                escape(name),
                self.points(poly)
            );
            if let Some(c) = centroid(poly) {
                let (x, y) = self.xy(&c);
                let _ = writeln!(
                    out,
                    "<text class=\"pod-label\" x=\"{x:.2}\" y=\"{y:.2}\" text-anchor=\"middle\">{}</text>",
                    escape(name)
                );
            }
        }
        for (a, b) in room.wall_segments() {
            let ((x1, y1), (x2, y2)) = (self.xy(&a), self.xy(&b));
            let _ = writeln!(out, "<line class=\"wall\" x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\"/>");
        }
    }

    fn title(&self, text: &str, out: &mut String) {
        let _ = writeln!(
            out,
            "<text class=\"panel-title\" x=\"{:.2}\" y=\"{:.2}\">{}</text>",
            self.offset_x + MARGIN,
            MARGIN - 6.0,
            escape(text)
        );
    }
}

fn svg_open(width: f64, height: f64) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n"
    );
    s.push_str(SVG_STYLE);
    s
}

fn member_paths(paths: &[TrackPath], roles: &[AgentRole], panel: &Panel, out: &mut String) {
    let role_of: BTreeMap<u64, &Role> = roles.iter().map(|r| (r.track, &r.role)).collect();
    let mut members: Vec<(u32, &TrackPath)> = paths
        .iter()
        .filter_map(|p| match role_of.get(&p.track) {
            Some(Role::TeamMember { entry_order, .. }) => Some((*entry_order, p)),
            _ => None,
        })
        .collect();
    members.sort_by_key(|(order, p)| (*order, p.track));
    for (k, (order, p)) in members.iter().enumerate() {
        if p.points.is_empty() {
            continue;
        }
        let _ = writeln!(
            out,
            "<polyline class=\"member\" data-track=\"{}\" data-entry-order=\"{order}\" stroke=\"{}\" points=\"{}\"/>",
            p.track,
            PALETTE[k % PALETTE.len()],
            panel.points(&p.points)
        );
    }
    for p in paths {
        if !matches!(role_of.get(&p.track), Some(Role::Enemy)) {
            continue;
        }
        if let Some(c) = centroid(&p.points) {
            let (x, y) = panel.xy(&c);
            let _ = writeln!(
                out,
                "<circle class=\"enemy\" data-track=\"{}\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"6\"/>",
                p.track
            );
        }
    }
}

/// Room, entry zone, PODs, one polyline per team member and a marker per
/// enemy. With a reference the reference run is drawn on the left and the
/// team on the right.
pub fn render_trajectory_overlay(
    paths: &[TrackPath],
    roles: &[AgentRole],
    room: &RoomConfig,
    reference: Option<(&[TrackPath], &[AgentRole])>,
) -> String {
    let first = Panel::new(room, 0.0);
    let (w, h) = (first.width(), first.height());
    let mut out = svg_open(if reference.is_some() { 2.0 * w } else { w }, h);
    match reference {
        Some((ref_paths, ref_roles)) => {
            first.background(room, &mut out);
            first.title("Reference", &mut out);
            member_paths(ref_paths, ref_roles, &first, &mut out);
            let second = Panel::new(room, w);
            second.background(room, &mut out);
            second.title("Team", &mut out);
            member_paths(paths, roles, &second, &mut out);
        }
        None => {
            first.background(room, &mut out);
            member_paths(paths, roles, &first, &mut out);
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Wall-clipped floor triangles of the selected frames, one color per track.
pub fn render_gaze_overlay(records: &[GazeRecord], frames: &[u64], room: &RoomConfig) -> String {
    let panel = Panel::new(room, 0.0);
    let mut out = svg_open(panel.width(), panel.height());
    panel.background(room, &mut out);
    let selected: BTreeSet<u64> = frames.iter().copied().collect();
    let tracks: BTreeSet<u64> = records.iter().map(|g| g.track).collect();
    let color: BTreeMap<u64, &str> = tracks.iter().enumerate().map(|(k, t)| (*t, PALETTE[k % PALETTE.len()])).collect();
    let mut shown: Vec<&GazeRecord> = records.iter().filter(|g| selected.contains(&g.frame)).collect();
    shown.sort_by_key(|g| (g.frame, g.track));
    for g in shown {
        let Some(tri) = g.map_triangle.as_deref().filter(|t| t.len() >= 3) else { continue };
        let c = color[&g.track];
        let _ = writeln!(
            out,
            "<polygon class=\"gaze\" data-track=\"{}\" data-frame=\"{}\" fill=\"{c}\" stroke=\"{c}\" points=\"{}\"/>",
            g.track,
            g.frame,
            panel.points(tri)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Up to `count` frames spread evenly over the frames that carry gaze.
pub fn gaze_frame_selection(records: &[GazeRecord], count: usize) -> Vec<u64> {
    let frames: Vec<u64> = records.iter().map(|g| g.frame).collect::<BTreeSet<_>>().into_iter().collect();
    if frames.is_empty() || count == 0 {
        return Vec::new();
    }
    if frames.len() <= count {
        return frames;
    }
    let picks: BTreeSet<u64> =
        (0..count).map(|k| frames[if count == 1 { 0 } else { k * (frames.len() - 1) / (count - 1) }]).collect();
    picks.into_iter().collect()
}

// ---- bundles ----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialMetadata {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub team: Option<String>,
    /// File name of the detection stream.
    pub source: String,
    pub fps: f64,
    pub frames: usize,
    pub detections: usize,
    pub tracks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub metadata: TrialMetadata,
    pub metrics: Vec<MetricResult>,
}

/// Everything needed to rerun a stage with identical results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterEcho {
    /// Effective configuration after overrides.
    pub config: RoomConfig,
    pub overrides: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub stages: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub engine_version: String,
    pub trials: Vec<TrialReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_sheet: Option<ScoreSheet>,
    /// Rendered files, relative to the bundle.
    pub assets: Vec<String>,
    pub parameters: ParameterEcho,
}

impl ReportBundle {
    pub fn to_json(&self) -> serde_json::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{minimal_config_json, parse_room_config};
    use crate::rollup::{run_rollup, CtaHierarchy};

    fn sheet(values: &[Option<f64>]) -> ScoreSheet {
        let h = CtaHierarchy::default_ecr();
        let trials: Vec<BTreeMap<String, Score>> =
            values.iter().map(|v| crate::metrics::METRIC_NAMES.iter().map(|m| (m.to_string(), *v)).collect()).collect();
        run_rollup(&h, &trials).unwrap()
    }

    #[test]
    fn single_trial_table_has_one_column() {
        let s = sheet(&[Some(0.5)]);
        let t = score_table(&[TeamSheet { team: "a", sheet: &s }], TableLayout::PerTrial);
        assert_eq!(t.columns, vec!["Trial 1"]);
        assert!(t.rows.iter().all(|r| r.cells.len() == 1));
        let levels: Vec<u8> = t.rows.iter().map(|r| r.node.level).collect();
        assert!(levels.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn per_team_layout_takes_latest_trial() {
        let a = sheet(&[Some(0.2), Some(0.9), Some(0.9)]);
        let b = sheet(&[Some(1.0)]);
        let t = score_table(
            &[TeamSheet { team: "a", sheet: &a }, TeamSheet { team: "b", sheet: &b }],
            TableLayout::PerTeam,
        );
        assert_eq!(t.columns, vec!["a", "b"]);
        let root = t.rows.iter().find(|r| r.node.id == "root").unwrap();
        assert_eq!(root.cells[0].score, a.last("root").unwrap().smoothed);
        assert_eq!(root.cells[1].score, Some(1.0));
    }

    #[test]
    fn not_applicable_renders_as_na() {
        let s = sheet(&[None]);
        let r = render_score_table(&[TeamSheet { team: "a", sheet: &s }], TableLayout::PerTrial).unwrap();
        assert!(r.csv.lines().skip(1).all(|l| l.ends_with(",N/A")));
        assert!(r.html.contains("<td class=\"band-na\">N/A</td>"));
        assert!(!r.html.contains(">0.000<"));
    }

    #[test]
    fn empty_overlay_is_room_only() {
        let room = parse_room_config(&minimal_config_json().to_string()).unwrap();
        let svg = render_trajectory_overlay(&[], &[], &room, None);
        assert!(svg.contains("class=\"room\""));
        assert!(!svg.contains("<polyline"));
        assert!(!svg.contains("<circle"));
        let gaze = render_gaze_overlay(&[], &[0], &room);
        assert!(!gaze.contains("class=\"gaze\""));
    }

    #[test]
    fn frame_selection_spreads_evenly() {
        let rec = |frame| GazeRecord {
            track: 1,
            frame,
            origin: Point::origin(),
            direction: crate::geometry::Vector::new(1.0, 0.0),
            source: crate::gaze::GazeSource::EyesMidpoint,
            image_triangle: [Point::origin(); 3],
            map_triangle: None,
        };
        let records: Vec<GazeRecord> = (0..=100).map(rec).collect();
        assert_eq!(gaze_frame_selection(&records, 5), vec![0, 25, 50, 75, 100]);
        assert_eq!(gaze_frame_selection(&records[..3], 5), vec![0, 1, 2]);
        assert!(gaze_frame_selection(&[], 5).is_empty());
    }
}
