//! Synthetic kitchens: furniture as box point clouds and people who stand,
//! walk between free-space waypoints and sit on chairs.
//!
//! Walking paths are planned on an occupancy grid so hip trajectories stay
//! inside the room and outside every object's box.

use std::collections::{BTreeMap, VecDeque};

use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::recording::{ObjectType, PersonTrack, SceneObject, SceneRecording, SkeletonSpec};
use crate::{rng, Error, Result};

const CELL: f64 = 0.2;
const BODY_RADIUS: f64 = 0.25;
const STAND_HIP: f64 = 0.95;
const SEAT_HIP: f64 = 0.55;
const WALL_HEIGHT: f64 = 2.5;
const POINT_SPACING: f64 = 0.2;

/// One step of a scripted behavior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptStep {
    Stand { seconds: f64 },
    WalkTo { x: f64, y: f64 },
    Sit { seconds: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub persons: usize,
    /// Total object count, walls included (the first four objects are walls).
    pub objects: usize,
    pub duration_s: f64,
    pub fps: f64,
    /// Room extent `[x, y]` in meters; the room spans `[0, x] × [0, y]`.
    pub room: [f64; 2],
    /// Fraction of persons that enter late or leave early.
    pub partial_presence: f64,
    /// Optional per-person scripts, played before random behavior takes over.
    pub scripts: Vec<Vec<ScriptStep>>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            persons: 3,
            objects: 10,
            duration_s: 20.0,
            fps: 25.0,
            room: [8.0, 6.0],
            partial_presence: 0.3,
            scripts: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Aabb {
    min: [f64; 3],
    max: [f64; 3],
}

impl Aabb {
    fn contains_strict(&self, p: [f64; 3]) -> bool {
        (0..3).all(|d| p[d] > self.min[d] && p[d] < self.max[d])
    }

    fn footprint_contains(&self, x: f64, y: f64, margin: f64) -> bool {
        x > self.min[0] - margin
            && x < self.max[0] + margin
            && y > self.min[1] - margin
            && y < self.max[1] + margin
    }

    fn center(&self) -> [f64; 2] {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1])]
    }
}

fn furniture_size(t: ObjectType) -> [f64; 3] {
    match t {
        ObjectType::Wall => [0.1, 0.1, WALL_HEIGHT],
        ObjectType::Table => [1.2, 0.8, 0.75],
        ObjectType::StandingTable => [0.7, 0.7, 1.1],
        ObjectType::Drawer => [0.6, 0.5, 0.9],
        ObjectType::Cupboard => [1.0, 0.5, 1.9],
        ObjectType::Chair => [0.45, 0.45, 0.45],
        ObjectType::Sofa => [1.6, 0.8, 0.45],
        ObjectType::Whiteboard => [1.4, 0.1, 1.9],
        ObjectType::CoffeeMachine => [0.4, 0.4, 1.3],
        ObjectType::Dishwasher => [0.6, 0.6, 0.85],
        ObjectType::Sink => [0.8, 0.6, 0.9],
        ObjectType::Microwave => [0.5, 0.4, 1.3],
        ObjectType::Fridge => [0.7, 0.7, 1.8],
    }
}

const FURNITURE_CYCLE: [ObjectType; 13] = [
    ObjectType::Table,
    ObjectType::Chair,
    ObjectType::Chair,
    ObjectType::Cupboard,
    ObjectType::StandingTable,
    ObjectType::Sofa,
    ObjectType::CoffeeMachine,
    ObjectType::Fridge,
    ObjectType::Whiteboard,
    ObjectType::Sink,
    ObjectType::Drawer,
    ObjectType::Dishwasher,
    ObjectType::Microwave,
];

/// Surface points of a box: four sides and the top, on a regular grid.
fn box_cloud(b: &Aabb) -> Array2<f32> {
    let steps = |lo: f64, hi: f64| -> Vec<f64> {
        let n = ((hi - lo) / POINT_SPACING).ceil().max(1.0) as usize;
        (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
    };
    let xs = steps(b.min[0], b.max[0]);
    let ys = steps(b.min[1], b.max[1]);
    let zs = steps(b.min[2], b.max[2]);
    let mut pts: Vec<[f64; 3]> = Vec::new();
    for &x in &xs {
        for &y in &ys {
            pts.push([x, y, b.max[2]]);
        }
    }
    for &z in &zs[..zs.len() - 1] {
        for &x in &xs {
            pts.push([x, b.min[1], z]);
            pts.push([x, b.max[1], z]);
        }
        for &y in &ys[1..ys.len() - 1] {
            pts.push([b.min[0], y, z]);
            pts.push([b.max[0], y, z]);
        }
    }
    Array2::from_shape_fn((pts.len(), 3), |(i, d)| pts[i][d] as f32)
}

fn place_objects(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<(ObjectType, Aabb)>> {
    let [w, d] = cfg.room;
    let mut placed = Vec::with_capacity(cfg.objects);
    let walls = [
        Aabb { min: [-0.1, -0.1, 0.0], max: [w + 0.1, 0.0, WALL_HEIGHT] },
        Aabb { min: [-0.1, d, 0.0], max: [w + 0.1, d + 0.1, WALL_HEIGHT] },
        Aabb { min: [-0.1, 0.0, 0.0], max: [0.0, d, WALL_HEIGHT] },
        Aabb { min: [w, 0.0, 0.0], max: [w + 0.1, d, WALL_HEIGHT] },
    ];
    for wall in walls.iter().take(cfg.objects) {
        placed.push((ObjectType::Wall, *wall));
    }
    let furniture = cfg.objects.saturating_sub(4);
    'objects: for k in 0..furniture {
        let t = FURNITURE_CYCLE[k % FURNITURE_CYCLE.len()];
        let [mut sx, mut sy, sz] = furniture_size(t);
        for gap in [0.7, 0.55, 0.45] {
            for _ in 0..400 {
                if rng.gen_bool(0.5) {
                    std::mem::swap(&mut sx, &mut sy);
                }
                let lo_x = 0.05;
                let lo_y = 0.05;
                let hi_x = w - sx - 0.05;
                let hi_y = d - sy - 0.05;
                if hi_x <= lo_x || hi_y <= lo_y {
                    break;
                }
                let x0 = rng.gen_range(lo_x..hi_x);
                let y0 = rng.gen_range(lo_y..hi_y);
                let cand = Aabb { min: [x0, y0, 0.0], max: [x0 + sx, y0 + sy, sz] };
                let clear = placed.iter().filter(|(t, _)| *t != ObjectType::Wall).all(|(_, o)| {
                    cand.max[0] + gap <= o.min[0]
                        || o.max[0] + gap <= cand.min[0]
                        || cand.max[1] + gap <= o.min[1]
                        || o.max[1] + gap <= cand.min[1]
                });
                if clear {
                    placed.push((t, cand));
                    continue 'objects;
                }
            }
        }
        return Err(Error::Infeasible(format!(
            "could not place {} objects in a {w}×{d} m room",
            cfg.objects
        )));
    }
    Ok(placed)
}

struct Grid {
    nx: usize,
    ny: usize,
    free: Vec<bool>,
    component: Vec<usize>,
}

impl Grid {
    fn build(room: [f64; 2], objects: &[(ObjectType, Aabb)]) -> Self {
        let nx = (room[0] / CELL).floor() as usize;
        let ny = (room[1] / CELL).floor() as usize;
        let mut free = vec![false; nx * ny];
        for iy in 0..ny {
            for ix in 0..nx {
                let (x, y) = Self::center_of(ix, iy);
                let inside = x > 0.3 && x < room[0] - 0.3 && y > 0.3 && y < room[1] - 0.3;
                let blocked = objects
                    .iter()
                    .any(|(_, b)| b.footprint_contains(x, y, BODY_RADIUS));
                free[iy * nx + ix] = inside && !blocked;
            }
        }
        let mut grid = Grid { nx, ny, free, component: vec![usize::MAX; nx * ny] };
        let mut label = 0;
        for start in 0..nx * ny {
            if grid.free[start] && grid.component[start] == usize::MAX {
                let mut queue = VecDeque::from([start]);
                grid.component[start] = label;
                while let Some(c) = queue.pop_front() {
                    for nb in grid.neighbors(c) {
                        if grid.component[nb] == usize::MAX {
                            grid.component[nb] = label;
                            queue.push_back(nb);
                        }
                    }
                }
                label += 1;
            }
        }
        grid
    }

    fn center_of(ix: usize, iy: usize) -> (f64, f64) {
        ((ix as f64 + 0.5) * CELL, (iy as f64 + 0.5) * CELL)
    }

    fn center(&self, c: usize) -> [f64; 2] {
        let (x, y) = Self::center_of(c % self.nx, c / self.nx);
        [x, y]
    }

    fn cell_at(&self, p: [f64; 2]) -> Option<usize> {
        let ix = (p[0] / CELL).floor();
        let iy = (p[1] / CELL).floor();
        if ix < 0.0 || iy < 0.0 || ix as usize >= self.nx || iy as usize >= self.ny {
            return None;
        }
        Some(iy as usize * self.nx + ix as usize)
    }

    /// 8-connected free neighbors; diagonals need both side cells free.
    fn neighbors(&self, c: usize) -> Vec<usize> {
        let (ix, iy) = ((c % self.nx) as i64, (c / self.nx) as i64);
        let at = |x: i64, y: i64| -> Option<usize> {
            if x < 0 || y < 0 || x >= self.nx as i64 || y >= self.ny as i64 {
                return None;
            }
            let i = y as usize * self.nx + x as usize;
            self.free[i].then_some(i)
        };
        let mut out = Vec::with_capacity(8);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            out.extend(at(ix + dx, iy + dy));
        }
        for (dx, dy) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
            if at(ix + dx, iy).is_some() && at(ix, iy + dy).is_some() {
                out.extend(at(ix + dx, iy + dy));
            }
        }
        out
    }

    fn path(&self, from: usize, to: usize) -> Option<Vec<usize>> {
        let mut prev = vec![usize::MAX; self.free.len()];
        prev[from] = from;
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            if c == to {
                let mut out = vec![to];
                let mut cur = to;
                while cur != from {
                    cur = prev[cur];
                    out.push(cur);
                }
                out.reverse();
                return Some(out);
            }
            for nb in self.neighbors(c) {
                if prev[nb] == usize::MAX {
                    prev[nb] = c;
                    queue.push_back(nb);
                }
            }
        }
        None
    }

    fn free_cells_in(&self, component: usize) -> Vec<usize> {
        (0..self.free.len()).filter(|&c| self.component[c] == component).collect()
    }
}

/// Instantaneous body state from which a pose is built.
#[derive(Clone, Copy, Debug)]
struct BodyState {
    x: f64,
    y: f64,
    heading: f64,
    hip: f64,
    gait_phase: f64,
    gait_amp: f64,
    sit: f64,
}

fn build_pose(s: &BodyState, skeleton: &SkeletonSpec) -> Vec<[f64; 3]> {
    let (sin_h, cos_h) = s.heading.sin_cos();
    let fwd = [cos_h, sin_h];
    let right = [sin_h, -cos_h];
    let world = |r: f64, f: f64, z: f64| -> [f64; 3] {
        [s.x + r * right[0] + f * fwd[0], s.y + r * right[1] + f * fwd[1], z]
    };
    let h = s.hip;
    let swing = s.gait_amp * s.gait_phase.sin();
    let knee_fwd = 0.42 * s.sit;
    let knee_z = (h - 0.47) * (1.0 - s.sit) + 0.5 * s.sit;
    let mut joints = vec![[0.0; 3]; skeleton.joint_count()];
    let mut set = |name: &str, p: [f64; 3]| {
        if let Some(i) = skeleton.joint_index(name) {
            joints[i] = p;
        }
    };
    set("left_hip", world(-0.1, 0.0, h));
    set("right_hip", world(0.1, 0.0, h));
    set("pelvis", world(0.0, 0.0, h));
    set("spine", world(0.0, -0.02, h + 0.2));
    set("chest", world(0.0, -0.02, h + 0.4));
    set("neck", world(0.0, 0.0, h + 0.55));
    set("head", world(0.0, 0.04, h + 0.7));
    set("left_shoulder", world(-0.18, 0.0, h + 0.5));
    set("right_shoulder", world(0.18, 0.0, h + 0.5));
    set("left_elbow", world(-0.2, -0.5 * swing + 0.1 * s.sit, h + 0.22));
    set("right_elbow", world(0.2, 0.5 * swing + 0.1 * s.sit, h + 0.22));
    set("left_wrist", world(-0.2, -0.8 * swing + 0.25 * s.sit, h - 0.02 + 0.1 * s.sit));
    set("right_wrist", world(0.2, 0.8 * swing + 0.25 * s.sit, h - 0.02 + 0.1 * s.sit));
    set("left_knee", world(-0.1, swing + knee_fwd, knee_z));
    set("right_knee", world(0.1, -swing + knee_fwd, knee_z));
    set("left_ankle", world(-0.1, 1.3 * swing + knee_fwd, 0.06));
    set("right_ankle", world(0.1, -1.3 * swing + knee_fwd, 0.06));
    joints
}

struct Seat {
    center: [f64; 2],
    approach: usize,
}

struct Actor<'a> {
    grid: &'a Grid,
    seats: &'a [Seat],
    fps: f64,
    state: BodyState,
    cell: usize,
    states: Vec<BodyState>,
    labels: Vec<String>,
}

fn angle_lerp(a: f64, b: f64, w: f64) -> f64 {
    let mut d = (b - a) % std::f64::consts::TAU;
    if d > std::f64::consts::PI {
        d -= std::f64::consts::TAU;
    } else if d < -std::f64::consts::PI {
        d += std::f64::consts::TAU;
    }
    a + d * w
}

impl Actor<'_> {
    fn emit(&mut self, label: &str) {
        self.states.push(self.state);
        self.labels.push(label.to_string());
    }

    fn stand(&mut self, frames: usize, rng: &mut ChaCha8Rng) {
        let phase0: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let base = self.state;
        for k in 0..frames {
            let t = k as f64 / self.fps;
            self.state = BodyState {
                x: base.x + 0.005 * (0.7 * t + phase0).sin(),
                y: base.y + 0.005 * (0.5 * t + phase0).cos(),
                heading: base.heading + 0.05 * (0.3 * t + phase0).sin(),
                hip: STAND_HIP,
                gait_phase: 0.0,
                gait_amp: 0.0,
                sit: 0.0,
            };
            self.emit("standing");
        }
        self.state = BodyState { ..base };
    }

    fn walk_to(&mut self, target: usize, rng: &mut ChaCha8Rng) {
        let Some(path) = self.grid.path(self.cell, target) else {
            return;
        };
        if path.len() < 2 {
            return;
        }
        let speed = rng.gen_range(0.9..1.4);
        let step = speed / self.fps;
        let mut points: Vec<[f64; 2]> = vec![[self.state.x, self.state.y]];
        points.extend(path[1..].iter().map(|&c| self.grid.center(c)));
        let mut seg = 0;
        let mut pos = points[0];
        while seg + 1 < points.len() {
            let mut remaining = step;
            while remaining > 0.0 && seg + 1 < points.len() {
                let next = points[seg + 1];
                let dx = next[0] - pos[0];
                let dy = next[1] - pos[1];
                let len = (dx * dx + dy * dy).sqrt();
                if len <= remaining {
                    pos = next;
                    remaining -= len;
                    seg += 1;
                } else {
                    pos = [pos[0] + dx / len * remaining, pos[1] + dy / len * remaining];
                    remaining = 0.0;
                }
            }
            let dx = pos[0] - self.state.x;
            let dy = pos[1] - self.state.y;
            let heading = if dx.abs() + dy.abs() > 1e-9 {
                angle_lerp(self.state.heading, dy.atan2(dx), 0.35)
            } else {
                self.state.heading
            };
            self.state = BodyState {
                x: pos[0],
                y: pos[1],
                heading,
                hip: STAND_HIP,
                gait_phase: self.state.gait_phase + std::f64::consts::TAU * 0.9 * step / 0.7,
                gait_amp: 0.22,
                sit: 0.0,
            };
            self.emit("walking");
        }
        self.state.gait_amp = 0.0;
        self.cell = target;
    }

    fn sit(&mut self, seconds: f64, rng: &mut ChaCha8Rng) {
        let component = self.grid.component[self.cell];
        let reachable: Vec<&Seat> = self
            .seats
            .iter()
            .filter(|s| self.grid.component[s.approach] == component)
            .collect();
        let Some(seat) = reachable.choose(rng) else {
            return;
        };
        let seat_center = seat.center;
        self.walk_to(seat.approach, rng);
        let from = [self.state.x, self.state.y];
        // Sit facing away from the seat, toward the approach point.
        let facing = (from[1] - seat_center[1]).atan2(from[0] - seat_center[0]);
        let transition = self.fps as usize;
        let start_heading = self.state.heading;
        for k in 1..=transition {
            let w = k as f64 / transition as f64;
            let smooth = 0.5 - 0.5 * (std::f64::consts::PI * w).cos();
            self.state = BodyState {
                x: from[0] + (seat_center[0] - from[0]) * smooth,
                y: from[1] + (seat_center[1] - from[1]) * smooth,
                heading: angle_lerp(start_heading, facing, w.min(1.0)),
                hip: STAND_HIP + (SEAT_HIP - STAND_HIP) * smooth,
                gait_phase: 0.0,
                gait_amp: 0.0,
                sit: smooth,
            };
            self.emit("sitting_down");
        }
        let hold = (seconds * self.fps).round() as usize;
        for _ in 0..hold {
            self.emit("sitting");
        }
        for k in 1..=transition {
            let w = k as f64 / transition as f64;
            let smooth = 0.5 - 0.5 * (std::f64::consts::PI * w).cos();
            self.state = BodyState {
                x: seat_center[0] + (from[0] - seat_center[0]) * smooth,
                y: seat_center[1] + (from[1] - seat_center[1]) * smooth,
                heading: facing,
                hip: SEAT_HIP + (STAND_HIP - SEAT_HIP) * smooth,
                gait_phase: 0.0,
                gait_amp: 0.0,
                sit: 1.0 - smooth,
            };
            self.emit("standing_up");
        }
    }
}

/// Segment from `a` to `b` at hip heights interpolated from `ha` to `hb`
/// stays outside every box except `skip`.
fn segment_clear(a: [f64; 2], b: [f64; 2], ha: f64, hb: f64, objects: &[(ObjectType, Aabb)], skip: usize) -> bool {
    (0..=20).all(|k| {
        let w = k as f64 / 20.0;
        let p = [a[0] + (b[0] - a[0]) * w, a[1] + (b[1] - a[1]) * w, ha + (hb - ha) * w];
        objects
            .iter()
            .enumerate()
            .all(|(i, (_, o))| !o.contains_strict(p) || (i == skip && p[2] > o.max[2]))
    })
}

pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<SceneRecording> {
    if !(cfg.room[0] > 1.0 && cfg.room[1] > 1.0) || !cfg.room.iter().all(|v| v.is_finite()) {
        return Err(Error::Infeasible(format!("room {:?} is too small", cfg.room)));
    }
    if !(cfg.duration_s > 0.0 && cfg.fps > 0.0) {
        return Err(Error::Infeasible("duration and fps must be positive".into()));
    }
    if !(0.0..=1.0).contains(&cfg.partial_presence) {
        return Err(Error::Infeasible("partial_presence must lie in [0, 1]".into()));
    }
    let total_frames = (cfg.duration_s * cfg.fps).round() as usize;
    if total_frames < 2 {
        return Err(Error::Infeasible("recording needs at least two frames".into()));
    }
    let skeleton = SkeletonSpec { fps: cfg.fps, ..SkeletonSpec::default() };

    let mut scene_rng = rng::stream(seed, 0);
    let placed = place_objects(cfg, &mut scene_rng)?;
    let grid = Grid::build(cfg.room, &placed);
    let cells: Vec<usize> = (0..grid.free.len()).filter(|&c| grid.free[c]).collect();
    if cells.is_empty() && cfg.persons > 0 {
        return Err(Error::Infeasible("no free floor space for persons".into()));
    }

    let seats: Vec<Seat> = placed
        .iter()
        .enumerate()
        .filter(|(_, (t, _))| matches!(t, ObjectType::Chair | ObjectType::Sofa))
        .filter_map(|(i, (_, b))| {
            let center = b.center();
            let mut best: Option<(f64, usize)> = None;
            for &c in &cells {
                let p = grid.center(c);
                let d = (p[0] - center[0]).hypot(p[1] - center[1]);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, c));
                }
            }
            let (dist, approach) = best?;
            let clear = segment_clear(grid.center(approach), center, STAND_HIP, SEAT_HIP, &placed, i);
            (dist < 1.2 && clear).then_some(Seat { center, approach })
        })
        .collect();

    let objects = placed
        .iter()
        .enumerate()
        .map(|(i, (t, b))| SceneObject::new(format!("{}_{i:02}", t.name()), *t, box_cloud(b)))
        .collect();

    let mut persons = Vec::with_capacity(cfg.persons);
    let mut labels = BTreeMap::new();
    for p in 0..cfg.persons {
        let mut rng = rng::stream(seed, 1 + p as u64);
        let (first, last) = if rng.gen_bool(cfg.partial_presence) {
            let a = rng.gen_range(0..total_frames / 2);
            let b = rng.gen_range(total_frames / 2..total_frames);
            if rng.gen_bool(0.5) { (a, total_frames - 1) } else { (0, b) }
        } else {
            (0, total_frames - 1)
        };
        let frames = last - first + 1;
        let start_cell = *cells.choose(&mut rng).expect("free cells checked above");
        let c = grid.center(start_cell);
        let mut actor = Actor {
            grid: &grid,
            seats: &seats,
            fps: cfg.fps,
            state: BodyState {
                x: c[0],
                y: c[1],
                heading: rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                hip: STAND_HIP,
                gait_phase: 0.0,
                gait_amp: 0.0,
                sit: 0.0,
            },
            cell: start_cell,
            states: Vec::with_capacity(frames),
            labels: Vec::with_capacity(frames),
        };
        let component = grid.component[start_cell];
        let reachable = grid.free_cells_in(component);
        for step in cfg.scripts.get(p).into_iter().flatten() {
            match *step {
                ScriptStep::Stand { seconds } => {
                    actor.stand((seconds * cfg.fps).round() as usize, &mut rng)
                }
                ScriptStep::WalkTo { x, y } => {
                    if let Some(c) = grid.cell_at([x, y]).filter(|&c| grid.component[c] == component) {
                        actor.walk_to(c, &mut rng);
                    }
                }
                ScriptStep::Sit { seconds } => actor.sit(seconds, &mut rng),
            }
        }
        while actor.states.len() < frames {
            let roll: f64 = rng.gen();
            let before = actor.states.len();
            if roll < 0.35 {
                let secs = rng.gen_range(1.0..5.0);
                actor.stand((secs * cfg.fps) as usize, &mut rng);
            } else if roll < 0.8 {
                let target = *reachable.choose(&mut rng).expect("component is nonempty");
                actor.walk_to(target, &mut rng);
            } else {
                let secs = rng.gen_range(2.0..6.0);
                actor.sit(secs, &mut rng);
            }
            if actor.states.len() == before {
                actor.stand(cfg.fps as usize, &mut rng);
            }
        }
        actor.states.truncate(frames);
        actor.labels.truncate(frames);

        let j = skeleton.joint_count();
        let mut joints = Array3::<f32>::zeros((frames, j, 3));
        for (f, state) in actor.states.iter().enumerate() {
            for (k, q) in build_pose(state, &skeleton).iter().enumerate() {
                for d in 0..3 {
                    joints[[f, k, d]] = q[d] as f32;
                }
            }
        }
        let id = format!("person_{p:02}");
        labels.insert(id.clone(), actor.labels);
        persons.push(PersonTrack { person_id: id, first_frame: first, joints });
    }

    let rec = SceneRecording {
        skeleton,
        persons,
        objects,
        total_frames,
        labels: Some(labels),
    };
    rec.validate()?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn object_boxes(rec: &SceneRecording) -> Vec<Aabb> {
        rec.objects
            .iter()
            .map(|o| {
                let mut b = Aabb { min: [f64::INFINITY; 3], max: [f64::NEG_INFINITY; 3] };
                for row in o.points.rows() {
                    for d in 0..3 {
                        b.min[d] = b.min[d].min(f64::from(row[d]));
                        b.max[d] = b.max[d].max(f64::from(row[d]));
                    }
                }
                b
            })
            .collect()
    }

    fn check_trajectories(rec: &SceneRecording, room: [f64; 2]) {
        let boxes = object_boxes(rec);
        let sk = &rec.skeleton;
        for t in &rec.persons {
            for f in 0..t.frame_count() {
                let p: Vec<f64> = (0..3)
                    .map(|d| 0.5 * f64::from(t.joints[[f, sk.left_hip, d]] + t.joints[[f, sk.right_hip, d]]))
                    .collect();
                assert!(p[0] > 0.0 && p[0] < room[0] && p[1] > 0.0 && p[1] < room[1]);
                for b in &boxes {
                    assert!(!b.contains_strict([p[0], p[1], p[2]]), "{} at frame {f} inside object", t.person_id);
                }
            }
        }
    }

    #[test]
    fn single_person_twenty_seconds() {
        let cfg = SynthConfig { persons: 1, objects: 3, duration_s: 20.0, ..SynthConfig::default() };
        let rec = synth_generate(&cfg, 1).unwrap();
        assert_eq!(rec.total_frames, 500);
        assert_eq!(rec.objects.len(), 3);
        check_trajectories(&rec, cfg.room);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let cfg = SynthConfig::default();
        assert_eq!(synth_generate(&cfg, 7).unwrap(), synth_generate(&cfg, 7).unwrap());
        assert_ne!(synth_generate(&cfg, 7).unwrap(), synth_generate(&cfg, 8).unwrap());
    }

    #[test]
    fn kitchen_scale_scene() {
        let cfg = SynthConfig {
            persons: 16,
            objects: 50,
            duration_s: 12.0,
            room: [14.0, 11.0],
            ..SynthConfig::default()
        };
        let rec = synth_generate(&cfg, 2).unwrap();
        assert_eq!(rec.persons.len(), 16);
        assert_eq!(rec.objects.len(), 50);
        check_trajectories(&rec, cfg.room);
    }

    #[test]
    fn people_sit_on_chairs() {
        let cfg = SynthConfig {
            persons: 1,
            objects: 8,
            duration_s: 12.0,
            partial_presence: 0.0,
            scripts: vec![vec![ScriptStep::Sit { seconds: 2.0 }]],
            ..SynthConfig::default()
        };
        let rec = synth_generate(&cfg, 4).unwrap();
        let labels = &rec.labels.as_ref().unwrap()["person_00"];
        assert!(labels.iter().any(|l| l == "sitting"));
        check_trajectories(&rec, cfg.room);
    }

    #[test]
    fn degenerate_room_is_infeasible() {
        let cfg = SynthConfig { room: [0.0, 5.0], ..SynthConfig::default() };
        assert!(matches!(synth_generate(&cfg, 0), Err(Error::Infeasible(_))));
        let crowded = SynthConfig { objects: 60, room: [3.0, 3.0], ..SynthConfig::default() };
        assert!(matches!(synth_generate(&crowded, 0), Err(Error::Infeasible(_))));
    }
}
