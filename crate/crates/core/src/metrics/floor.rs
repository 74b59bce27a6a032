//! Floor coverage and total floor coverage time.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{pen, Evidence, MetricContext, MetricResult};
use crate::geometry::{bounds, point_in_polygon, Point};

const FC: &str = "floor_coverage";
const TFCT: &str = "total_floor_coverage_time";

/// Raster of room-interior cells marked as seen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageGrid {
    pub cell: f64,
    pub origin: Point,
    pub nx: usize,
    pub ny: usize,
    pub interior: Vec<bool>,
    pub covered: Vec<bool>,
    pub interior_count: usize,
    pub covered_count: usize,
    /// Frame at which every interior cell was first covered.
    pub full_frame: Option<u64>,
}

impl CoverageGrid {
    pub fn new(room: &[Point], cell: f64) -> Self {
        let (lo, hi) = bounds(room).unwrap_or((Point::origin(), Point::origin()));
        let nx = ((hi.x - lo.x) / cell).ceil().max(0.0) as usize;
        let ny = ((hi.y - lo.y) / cell).ceil().max(0.0) as usize;
        let mut grid = Self {
            cell,
            origin: lo,
            nx,
            ny,
            interior: vec![false; nx * ny],
            covered: vec![false; nx * ny],
            interior_count: 0,
            covered_count: 0,
            full_frame: None,
        };
        for j in 0..ny {
            for i in 0..nx {
                if point_in_polygon(&grid.center(i, j), room) {
                    grid.interior[j * nx + i] = true;
                    grid.interior_count += 1;
                }
            }
        }
        grid
    }

    pub fn center(&self, i: usize, j: usize) -> Point {
        Point::new(self.origin.x + (i as f64 + 0.5) * self.cell, self.origin.y + (j as f64 + 0.5) * self.cell)
    }

    /// Mark interior cells whose centers lie inside `poly`.
    pub fn mark(&mut self, poly: &[Point]) {
        let Some((lo, hi)) = bounds(poly) else { return };
        let idx = |v: f64, o: f64, n: usize| (((v - o) / self.cell - 0.5).max(0.0) as usize).min(n);
        let (i0, i1) = (idx(lo.x, self.origin.x, self.nx), (idx(hi.x, self.origin.x, self.nx) + 1).min(self.nx));
        let (j0, j1) = (idx(lo.y, self.origin.y, self.ny), (idx(hi.y, self.origin.y, self.ny) + 1).min(self.ny));
        for j in j0..j1 {
            for i in i0..i1 {
                let k = j * self.nx + i;
                if self.interior[k] && !self.covered[k] && point_in_polygon(&self.center(i, j), poly) {
                    self.covered[k] = true;
                    self.covered_count += 1;
                }
            }
        }
    }

    /// Mark one frame's polygons and record full coverage the first time it happens.
    pub fn observe(&mut self, frame: u64, polys: &[&[Point]]) {
        for p in polys {
            self.mark(p);
        }
        if self.full_frame.is_none() && self.interior_count > 0 && self.covered_count == self.interior_count {
            self.full_frame = Some(frame);
        }
    }

    pub fn fraction(&self) -> Option<f64> {
        (self.interior_count > 0).then(|| self.covered_count as f64 / self.interior_count as f64)
    }
}

/// Coverage accumulated over every team member's floor triangle, frame by frame.
pub fn coverage_grid(ctx: &MetricContext) -> CoverageGrid {
    let mut grid = CoverageGrid::new(&ctx.config.room, ctx.params().floor_grid_cell);
    let members: Vec<u64> = ctx.members.iter().map(|m| m.track).collect();
    let mut by_frame: BTreeMap<u64, Vec<&[Point]>> = BTreeMap::new();
    for g in &ctx.input.gaze {
        if let (true, Some(tri)) = (members.contains(&g.track), g.map_triangle.as_deref()) {
            by_frame.entry(g.frame).or_default().push(tri);
        }
    }
    for (f, polys) in by_frame {
        grid.observe(f, &polys);
    }
    grid
}

pub fn floor_coverage(ctx: &MetricContext, grid: &CoverageGrid) -> MetricResult {
    if ctx.members.is_empty() {
        return MetricResult::not_applicable(FC, "no team members");
    }
    let Some(frac) = grid.fraction() else {
        return MetricResult::not_applicable(FC, "room has no interior cells");
    };
    let evidence = vec![Evidence {
        start_frame: 0,
        end_frame: grid.full_frame.unwrap_or(0),
        description: format!("{}/{} cells covered", grid.covered_count, grid.interior_count),
    }];
    MetricResult::scored(FC, frac, BTreeMap::new(), evidence)
}

/// Penalty on the time from the first entry to full coverage; 0 if never reached.
pub fn total_floor_coverage_time(ctx: &MetricContext, grid: &CoverageGrid) -> MetricResult {
    if grid.interior_count == 0 {
        return MetricResult::not_applicable(TFCT, "room has no interior cells");
    }
    let Some(start) = ctx.members.iter().map(|m| m.entry_frame).min() else {
        return MetricResult::not_applicable(TFCT, "no team members");
    };
    let p = ctx.params();
    let Some(full) = grid.full_frame else {
        let ev = Evidence { start_frame: 0, end_frame: 0, description: "full coverage never reached".into() };
        return MetricResult::scored(TFCT, 0.0, BTreeMap::new(), vec![ev]);
    };
    let t_full = (full as f64 - start as f64) / ctx.fps;
    let ev =
        Evidence { start_frame: start, end_frame: full, description: format!("full coverage after {t_full:.3} s") };
    MetricResult::scored(TFCT, pen(t_full - p.floor_time_limit, p.penalty_rate), BTreeMap::new(), vec![ev])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(s: f64) -> Vec<Point> {
        vec![Point::new(0.0, 0.0), Point::new(s, 0.0), Point::new(s, s), Point::new(0.0, s)]
    }

    #[test]
    fn grid_counts_and_monotone_marking() {
        let mut g = CoverageGrid::new(&square(2.0), 0.25);
        assert_eq!(g.interior_count, 64);
        let half = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 2.0), Point::new(0.0, 2.0)];
        g.observe(0, &[&half]);
        assert_eq!(g.covered_count, 32);
        g.observe(1, &[&half]);
        assert_eq!(g.covered_count, 32);
        assert_eq!(g.full_frame, None);
        g.observe(2, &[&square(2.0)]);
        assert_eq!(g.full_frame, Some(2));
    }

    #[test]
    fn l_shaped_room_excludes_notch() {
        let room = vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 2.0),
            Point::new(0.0, 2.0),
        ];
        let g = CoverageGrid::new(&room, 0.5);
        assert_eq!(g.interior_count, 12);
    }
}
