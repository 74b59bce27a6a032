//! Seeded random drills for rectangular rooms entered through the low-y wall.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::script::{AgentScript, GazeKey, NoiseSpec, RoomRef, ScenarioScript, ScriptRole, Waypoint};
use crate::geometry::{bounds, centroid, Point};
use crate::ingest::RoomConfig;

struct Plan {
    waypoints: Vec<Waypoint>,
    gaze: Vec<GazeKey>,
    pos: Point,
    t: f64,
    heading: f64,
}

impl Plan {
    fn new(t: f64, pos: Point, heading: f64) -> Self {
        Self {
            waypoints: vec![Waypoint { t, x: pos.x, y: pos.y }],
            gaze: vec![GazeKey { t, heading }],
            pos,
            t,
            heading,
        }
    }

    fn walk(&mut self, to: Point, speed: f64) {
        let dt = ((to - self.pos).norm() / speed).max(0.1);
        self.t += dt;
        self.pos = to;
        self.waypoints.push(Waypoint { t: self.t, x: to.x, y: to.y });
    }

    fn wait(&mut self, dt: f64) {
        self.t += dt;
        self.waypoints.push(Waypoint { t: self.t, x: self.pos.x, y: self.pos.y });
    }

    /// Turn to `heading` (shortest way) so the turn completes at `t`.
    fn look(&mut self, t: f64, heading: f64) {
        let last = self.gaze.last().expect("seeded").t;
        let t = t.max(last + 0.05);
        let delta = (heading - self.heading + 540.0).rem_euclid(360.0) - 180.0;
        self.heading += delta;
        self.gaze.push(GazeKey { t, heading: self.heading });
    }

    fn hold_gaze_until(&mut self, t: f64) {
        let last = self.gaze.last().expect("seeded").t;
        if t > last + 0.05 {
            self.gaze.push(GazeKey { t, heading: self.heading });
        }
    }

    fn spin(&mut self, t0: f64, dur: f64, dir: f64) {
        self.hold_gaze_until(t0);
        let last = self.gaze.last().expect("seeded").t;
        self.heading += 360.0 * dir;
        self.gaze.push(GazeKey { t: (t0 + dur).max(last + 0.05), heading: self.heading });
    }

    /// Look at each point in turn, holding each gaze for `hold` seconds.
    fn fixate(&mut self, targets: &[Point], hold: f64) {
        for p in targets {
            let t = self.gaze.last().expect("seeded").t + 0.5;
            self.look(t, heading_to(&self.pos, p));
            self.hold_gaze_until(t + hold);
        }
        let end = self.gaze.last().expect("seeded").t;
        if end > self.t {
            self.wait(end - self.t);
        }
    }

    /// Random glances between the last gaze key and `until`.
    fn scan(&mut self, rng: &mut ChaCha8Rng, until: f64) {
        loop {
            let last = self.gaze.last().expect("seeded").t;
            let next = last + rng.random_range(0.4..0.9);
            if next >= until {
                break;
            }
            let h = self.heading + rng.random_range(-150.0..150.0);
            self.look(next, h);
        }
    }
}

fn heading_to(from: &Point, to: &Point) -> f64 {
    (to.y - from.y).atan2(to.x - from.x).to_degrees()
}

/// Shift `d` out of the band `buffer ± margin`.
fn clear_of(d: f64, buffer: f64, margin: f64) -> f64 {
    if (d - buffer).abs() >= margin {
        d
    } else if d < buffer {
        buffer - margin
    } else {
        buffer + margin
    }
}

/// Closest approach of any two agents, sampled at the script frame rate.
fn min_separation(script: &ScenarioScript) -> f64 {
    let dt = 1.0 / script.fps;
    let mut best = f64::INFINITY;
    for k in 0..=script.last_frame() {
        let t = k as f64 * dt;
        let present: Vec<Point> = script.agents.iter().filter(|a| a.present_at(t)).map(|a| a.position_at(t)).collect();
        for (i, a) in present.iter().enumerate() {
            for b in &present[i + 1..] {
                best = best.min((a - b).norm());
            }
        }
    }
    best
}

/// A random drill in `room`, which must be a rectangle entered through its
/// low-y wall with PODs named `left_far`, `right_far`, `left_near` and
/// `right_near` (the shipped fixture room). Absent PODs fall back to fixed spots.
///
/// Drafts in which two agents come closer than 0.3 m are redrawn from the next
/// stream of the same seed.
pub fn random_scenario(seed: u64, room: &RoomConfig) -> ScenarioScript {
    let mut stream = 0;
    loop {
        let script = draft(seed, stream, room);
        if stream >= 64 || min_separation(&script) >= 0.3 {
            return script;
        }
        stream += 1;
    }
}

fn draft(seed: u64, stream: u64, room: &RoomConfig) -> ScenarioScript {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let (lo, hi) = bounds(&room.room).expect("room has vertices");
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    let door_x = centroid(&room.entry_zone.polygon).map_or(lo.x + w / 2.0, |c| c.x);
    let at = |x: f64, y: f64| Point::new(lo.x + x, lo.y + y);
    // Dwell spots keep a margin from the wall-buffer boundary so that
    // keypoint noise cannot flip which side of it they fall on.
    let buffer = room.metric_params.wall_buffer;
    let settle = |p: Point| {
        let mut x = p.x - lo.x;
        let mut y = p.y - lo.y;
        x = if x < w / 2.0 { clear_of(x, buffer, 0.12) } else { w - clear_of(w - x, buffer, 0.12) };
        y = if y < h / 2.0 { clear_of(y, buffer, 0.12) } else { h - clear_of(h - y, buffer, 0.12) };
        at(x, y)
    };

    let n_members = match rng.random_range(0..10) {
        0 => 1,
        1..=3 => 2,
        4..=6 => 3,
        _ => 4,
    };
    let n_enemies = match rng.random_range(0..5) {
        0 => 0,
        1 | 2 => 1,
        _ => 2,
    };

    let mut enemies: Vec<Point> = Vec::new();
    let mut tries = 0;
    while enemies.len() < n_enemies {
        let p = at(rng.random_range(1.9..w - 1.9), rng.random_range(2.0..h - 1.0));
        if enemies.iter().all(|e| (e - p).norm() > 1.6) {
            enemies.push(p);
        }
        tries += 1;
        if tries % 50 == 0 {
            enemies.clear();
        }
    }

    let pod_center = |name: &str, fallback: Point| room.pods.get(name).and_then(|p| centroid(p)).unwrap_or(fallback);
    // Destination slots per side: far POD, near POD, mid-wall spot.
    let slots = |left: bool| -> [(String, Point); 3] {
        let side = if left { "left" } else { "right" };
        let x = |v: f64| if left { v } else { w - v };
        [
            (format!("{side}_far"), pod_center(&format!("{side}_far"), at(x(0.8), h - 1.1))),
            (format!("{side}_near"), pod_center(&format!("{side}_near"), at(x(1.1), 1.1))),
            (format!("{side}_mid"), at(x(0.7), h / 2.0)),
        ]
    };

    let table = &room.metric_params.pod_assignment_table;
    let mut sides: Vec<bool> = Vec::new();
    let mut used: Vec<String> = Vec::new();
    let mut plans: Vec<Plan> = Vec::new();
    let mut t_start = rng.random_range(0.2..0.6);
    for i in 0..n_members {
        let mut left = if i == 0 {
            rng.random_bool(0.5)
        } else if rng.random_bool(0.75) {
            !sides[i - 1]
        } else {
            sides[i - 1]
        };
        if slots(left).iter().all(|(n, _)| used.contains(n)) {
            left = !left;
        }
        sides.push(left);
        let key = if sides[0] { "left" } else { "right" };
        let assigned = table.get(key).and_then(|names| names.get(i)).cloned();
        let options = slots(left);
        let dest = options
            .iter()
            .find(|(n, _)| Some(n) == assigned.as_ref() && !used.contains(n) && rng.random_bool(0.8))
            .or_else(|| options.iter().find(|(n, _)| !used.contains(n)))
            .cloned()
            .expect("three slots per side, at most four members");
        used.push(dest.0.clone());
        let jitter = Point::new(rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
        let dest_pt = settle(dest.1 + jitter.coords);

        let speed = rng.random_range(1.3..2.0);
        let s = at(door_x - lo.x + rng.random_range(-0.2..0.2), -0.75);
        let mut plan = Plan::new(t_start, s, 90.0);
        plan.walk(at(door_x - lo.x + rng.random_range(-0.15..0.15), 0.25 + rng.random_range(0.0..0.1)), speed);
        plan.hold_gaze_until(plan.t);
        let sign = if left { -1.0 } else { 1.0 };
        if rng.random_bool(0.6) {
            let wall_x = if left { rng.random_range(0.38..0.5) } else { w - rng.random_range(0.38..0.5) };
            plan.walk(at(wall_x, 0.35 + rng.random_range(0.0..0.1)), speed);
            plan.walk(Point::new(lo.x + wall_x, dest_pt.y), speed);
        } else {
            let x = door_x - lo.x + sign * rng.random_range(0.6..1.0);
            plan.walk(at(x, rng.random_range(1.75..2.2)), speed);
        }
        plan.walk(dest_pt, speed);
        plan.scan(&mut rng, plan.t);
        plan.wait(rng.random_range(1.3..2.5));
        plan.scan(&mut rng, plan.t);
        plans.push(plan);
        t_start += rng.random_range(0.5..2.6);
    }

    // Assign enemies to members; a quarter of them are left uncleared.
    for e in &enemies {
        if plans.is_empty() || rng.random_bool(0.25) {
            continue;
        }
        let k = rng.random_range(0..plans.len());
        let plan = &mut plans[k];
        let away = plan.pos - e;
        let stand = settle(e + away.normalize() * rng.random_range(0.4..0.5));
        let speed = rng.random_range(1.2..1.8);
        plan.look(plan.t + 0.3, heading_to(&plan.pos, e));
        plan.walk(stand, speed);
        plan.look(plan.t, heading_to(&stand, e));
        plan.wait(rng.random_range(2.6..3.4));
        plan.hold_gaze_until(plan.t);
    }

    // At least one member sweeps the whole room once, then checks each corner.
    let corners: Vec<Point> = [(0.15, 0.15), (w - 0.15, 0.15), (w - 0.15, h - 0.15), (0.15, h - 0.15)]
        .iter()
        .map(|&(x, y)| at(x, y))
        .collect();
    let spinner = if plans.is_empty() { None } else { Some(rng.random_range(0..plans.len())) };
    for (k, plan) in plans.iter_mut().enumerate() {
        if Some(k) != spinner && !rng.random_bool(0.4) {
            continue;
        }
        let delay = if rng.random_bool(0.3) { rng.random_range(8.0..20.0) } else { rng.random_range(0.3..4.0) };
        plan.scan(&mut rng, plan.t + delay);
        let t0 = plan.t + delay;
        let dur = rng.random_range(2.5..4.0);
        plan.spin(t0, dur, if rng.random_bool(0.5) { 1.0 } else { -1.0 });
        plan.wait(delay + dur + 0.2);
        let first = rng.random_range(0..corners.len());
        let order: Vec<Point> = (0..corners.len()).map(|i| corners[(first + i) % corners.len()]).collect();
        plan.fixate(&order, 0.4);
        // Step toward the middle and look back at the spot just vacated.
        let from = plan.pos;
        let mid = at(w / 2.0, h / 2.0);
        let to = from + (mid - from).normalize() * 0.6;
        plan.fixate(&[to], 0.4);
        plan.walk(to, 1.0);
        plan.fixate(&[from], 0.4);
    }

    let duration = plans.iter().map(|p| p.t).fold(4.0, f64::max) + 1.0;
    let mut agents = Vec::new();
    for (i, mut plan) in plans.into_iter().enumerate() {
        if duration > plan.t + 1e-6 {
            plan.scan(&mut rng, duration - 0.2);
            plan.wait(duration - plan.t);
        }
        agents.push(AgentScript {
            id: i as u64 + 1,
            role: ScriptRole::Member,
            waypoints: plan.waypoints,
            gaze: plan.gaze,
            scale: rng.random_range(0.95..1.05),
            head_visible: true,
        });
    }
    for (j, e) in enemies.iter().enumerate() {
        agents.push(AgentScript {
            id: 100 + j as u64 + 1,
            role: ScriptRole::Enemy,
            waypoints: vec![Waypoint { t: 0.0, x: e.x, y: e.y }, Waypoint { t: duration, x: e.x, y: e.y }],
            gaze: vec![GazeKey { t: 0.0, heading: rng.random_range(-180.0..180.0) }],
            scale: rng.random_range(0.95..1.05),
            head_visible: true,
        });
    }
    ScenarioScript {
        name: format!("random-{seed}"),
        room: RoomRef::Inline(Box::new(room.clone())),
        fps: 30.0,
        seed,
        duration: Some(duration),
        noise: NoiseSpec::default(),
        agents,
    }
}
