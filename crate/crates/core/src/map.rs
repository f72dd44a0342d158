//! Global floor plan: per-frame walls placed with the refined poses, merged
//! into a wall map, plus doors found from short walls flanked by corners.

use std::cmp::Ordering;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::MapConfig;
use crate::geometry::{hsv_distance, Line2, PlaneParams, Point2, WallSegment};
use crate::pipeline::world_wall_segments;
use crate::pose_graph::Pose2D;
use crate::scene_parser::SceneLayout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoorSegment {
    pub endpoints: [Point2; 2],
    pub width: f64,
    /// Tracked corners near each end.
    pub corners: [Vec<Point2>; 2],
    /// Frames that observed the door.
    pub frames: Vec<usize>,
    pub support_count: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WallMap {
    pub walls: Vec<WallSegment>,
    pub doors: Vec<DoorSegment>,
    /// Frames contributing to each wall.
    pub provenance: Vec<Vec<usize>>,
}

/// Corner observations in world coordinates with the observing frame.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CornerTrack {
    pub observations: Vec<(Point2, usize)>,
}

impl CornerTrack {
    pub fn from_layouts(layouts: &[Option<SceneLayout>], poses: &[Pose2D]) -> Self {
        let mut observations = Vec::new();
        for (k, (layout, pose)) in layouts.iter().zip(poses).enumerate() {
            if let Some(l) = layout {
                observations.extend(frame_corners(l).iter().map(|c| (pose.to_world(c), k)));
            }
        }
        Self { observations }
    }

    pub fn near(&self, p: &Point2, radius: f64) -> Vec<Point2> {
        self.observations
            .iter()
            .filter(|(c, _)| (c - p).norm() <= radius)
            .map(|(c, _)| *c)
            .collect()
    }
}

/// Ends of the innermost wall on the left and on the right of the camera,
/// in level coordinates. Ends on a field-of-view border are not corners.
pub fn frame_corners(layout: &SceneLayout) -> Vec<Point2> {
    let mut out = Vec::new();
    for left in [true, false] {
        let innermost = layout
            .segments
            .iter()
            .map(|s| &layout.labels[s.label])
            .filter(|l| {
                l.is_real() && (l.plane.normal.y > 0.0) == left && l.plane.normal.y.abs() > 1e-9
            })
            .min_by(|a, b| {
                a.plane
                    .offset
                    .abs()
                    .total_cmp(&b.plane.offset.abs())
                    .then(a.id.cmp(&b.id))
            });
        let Some(label) = innermost else { continue };
        for seg in layout.segments.iter().filter(|s| s.label == label.id) {
            let Some(ends) = seg.endpoints else { continue };
            for k in 0..2 {
                if !seg.clipped[k] {
                    out.push(ends[k]);
                }
            }
        }
    }
    out
}

fn weight(w: &WallSegment) -> f64 {
    w.support_count.max(1) as f64
}

fn segment_line(w: &WallSegment) -> Line2 {
    w.line()
}

/// Angle between the two walls' lines, radians in [0, π/2].
fn line_angle(a: &WallSegment, b: &WallSegment) -> f64 {
    segment_line(a).angle_to(&segment_line(b))
}

/// Largest distance of either wall's endpoints to the other wall's line.
pub fn wall_distance(a: &WallSegment, b: &WallSegment) -> f64 {
    let (la, lb) = (segment_line(a), segment_line(b));
    let mut d: f64 = 0.0;
    for p in &b.endpoints {
        d = d.max(la.signed_distance(p).abs());
    }
    for p in &a.endpoints {
        d = d.max(lb.signed_distance(p).abs());
    }
    d
}

/// Separation of the two walls along their common direction; zero when they
/// overlap.
fn along_gap(a: &WallSegment, b: &WallSegment) -> f64 {
    let la = segment_line(a);
    let (a0, a1) = interval(&la, a);
    let (b0, b1) = interval(&la, b);
    (b0 - a1).max(a0 - b1).max(0.0)
}

fn interval(line: &Line2, w: &WallSegment) -> (f64, f64) {
    let s0 = line.param(&w.endpoints[0]);
    let s1 = line.param(&w.endpoints[1]);
    (s0.min(s1), s0.max(s1))
}

/// Whether two walls are the same wall: nearly parallel, close to each
/// other's lines, overlapping or nearly touching, and of similar color.
pub fn should_merge(a: &WallSegment, b: &WallSegment, cfg: &MapConfig) -> bool {
    line_angle(a, b) < cfg.merge_angle_deg.to_radians()
        && wall_distance(a, b) < cfg.merge_distance
        && along_gap(a, b) <= cfg.merge_distance
        && hsv_distance(&a.mean_color, &b.mean_color) < cfg.color_threshold
}

/// Support-weighted circular mean for hue, arithmetic for the rest.
fn weighted_hsv(items: &[([f64; 3], f64)]) -> [f64; 3] {
    let total: f64 = items.iter().map(|i| i.1).sum();
    let (mut c, mut s, mut sat, mut val) = (0.0, 0.0, 0.0, 0.0);
    for (col, w) in items {
        let a = col[0] / 256.0 * std::f64::consts::TAU;
        c += w * a.cos();
        s += w * a.sin();
        sat += w * col[1];
        val += w * col[2];
    }
    let hue = (s.atan2(c) / std::f64::consts::TAU * 256.0).rem_euclid(256.0);
    [hue, sat / total, val / total]
}

/// One wall replacing `a` and `b`: support-weighted line, extent covering
/// both, support added up.
pub fn merge_pair(a: &WallSegment, b: &WallSegment) -> WallSegment {
    let (wa, wb) = (weight(a), weight(b));
    let (la, lb) = (segment_line(a), segment_line(b));
    let nb = if la.normal.dot(&lb.normal) < 0.0 {
        -lb.normal
    } else {
        lb.normal
    };
    let normal = (la.normal * wa + nb * wb).normalize();
    let mid_a = (a.endpoints[0] + a.endpoints[1]) / 2.0;
    let mid_b = (b.endpoints[0] + b.endpoints[1]) / 2.0;
    let offset = -(normal.dot(&mid_a) * wa + normal.dot(&mid_b) * wb) / (wa + wb);
    let line = Line2 { normal, offset };
    let params = a
        .endpoints
        .iter()
        .chain(&b.endpoints)
        .map(|p| line.param(p));
    let (lo, hi) = params.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s), hi.max(s))
    });
    // Keep the orientation convention of the better supported wall.
    let reference = if wa >= wb { a } else { b };
    let plane_normal = Vector3::new(normal.x, normal.y, 0.0);
    let plane = if plane_normal.dot(&reference.plane.normal) < 0.0 {
        PlaneParams::new(-plane_normal, -offset)
    } else {
        PlaneParams::new(plane_normal, offset)
    };
    WallSegment {
        plane,
        endpoints: [line.point_at(lo), line.point_at(hi)],
        mean_color: weighted_hsv(&[(a.mean_color, wa), (b.mean_color, wb)]),
        support_count: a.support_count + b.support_count,
    }
}

fn canonical_order(a: &WallSegment, b: &WallSegment) -> Ordering {
    let key = |w: &WallSegment| {
        let [p, q] = w.endpoints;
        let (p, q) = if (p.x, p.y) <= (q.x, q.y) {
            (p, q)
        } else {
            (q, p)
        };
        [
            p.x,
            p.y,
            q.x,
            q.y,
            w.mean_color[0],
            w.mean_color[1],
            w.mean_color[2],
        ]
    };
    b.support_count.cmp(&a.support_count).then_with(|| {
        key(a)
            .iter()
            .zip(key(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Merges walls until no pair meets the merge criteria. Inputs carry the
/// frames they came from.
pub fn merge_walls_tracked(
    mut items: Vec<(WallSegment, Vec<usize>)>,
    cfg: &MapConfig,
) -> Vec<(WallSegment, Vec<usize>)> {
    loop {
        items.sort_by(|a, b| canonical_order(&a.0, &b.0).then_with(|| a.1.cmp(&b.1)));
        let mut out: Vec<(WallSegment, Vec<usize>)> = Vec::with_capacity(items.len());
        let mut changed = false;
        for (w, frames) in items {
            match out.iter_mut().find(|(m, _)| should_merge(m, &w, cfg)) {
                Some((m, f)) => {
                    *m = merge_pair(m, &w);
                    f.extend(frames);
                    f.sort_unstable();
                    f.dedup();
                    changed = true;
                }
                None => out.push((w, frames)),
            }
        }
        items = out;
        if !changed {
            items.sort_by(|a, b| canonical_order(&a.0, &b.0).then_with(|| a.1.cmp(&b.1)));
            return items;
        }
    }
}

pub fn merge_walls(walls: Vec<WallSegment>, cfg: &MapConfig) -> Vec<WallSegment> {
    merge_walls_tracked(walls.into_iter().map(|w| (w, Vec::new())).collect(), cfg)
        .into_iter()
        .map(|(w, _)| w)
        .collect()
}

/// Merged long walls; shorter ones are returned separately for the door
/// test and the final merge.
pub fn build_coarse_map(
    walls: Vec<(WallSegment, Vec<usize>)>,
    cfg: &MapConfig,
) -> (WallMap, Vec<(WallSegment, Vec<usize>)>) {
    let (big, small): (Vec<_>, Vec<_>) = walls
        .into_iter()
        .partition(|(w, _)| w.length() >= cfg.big_wall_length);
    let merged = merge_walls_tracked(big, cfg);
    let map = WallMap {
        walls: merged.iter().map(|(w, _)| w.clone()).collect(),
        doors: Vec::new(),
        provenance: merged.into_iter().map(|(_, f)| f).collect(),
    };
    (map, small)
}

fn door_from(
    wall: &WallSegment,
    frames: Vec<usize>,
    corners: &CornerTrack,
    cfg: &MapConfig,
) -> Option<DoorSegment> {
    let width = wall.length();
    if width > cfg.door_max_width || width < cfg.door_min_width {
        return None;
    }
    let near = [
        corners.near(&wall.endpoints[0], cfg.door_corner_radius),
        corners.near(&wall.endpoints[1], cfg.door_corner_radius),
    ];
    if near.iter().any(|c| c.len() < cfg.door_min_corners) {
        return None;
    }
    Some(DoorSegment {
        endpoints: wall.endpoints,
        width,
        corners: near,
        frames,
        support_count: wall.support_count,
    })
}

/// Short walls with enough tracked corners at both ends.
pub fn detect_doors(
    small_walls: &[(WallSegment, Vec<usize>)],
    corners: &CornerTrack,
    cfg: &MapConfig,
) -> Vec<DoorSegment> {
    let candidates: Vec<DoorSegment> = small_walls
        .iter()
        .filter_map(|(w, f)| door_from(w, f.clone(), corners, cfg))
        .collect();
    merge_doors(candidates, corners, cfg)
}

fn door_line(d: &DoorSegment) -> Line2 {
    Line2::through(&d.endpoints[0], &d.endpoints[1]).expect("doors have nonzero width")
}

/// Intersection over union of the two doors' extents on their average line.
pub fn door_iou(a: &DoorSegment, b: &DoorSegment) -> f64 {
    let (la, lb) = (door_line(a), door_line(b));
    let nb = if la.normal.dot(&lb.normal) < 0.0 {
        -lb.normal
    } else {
        lb.normal
    };
    let line = Line2::new(la.normal + nb, 0.0);
    let range = |d: &DoorSegment| {
        let s0 = line.param(&d.endpoints[0]);
        let s1 = line.param(&d.endpoints[1]);
        (s0.min(s1), s0.max(s1))
    };
    let ((a0, a1), (b0, b1)) = (range(a), range(b));
    let inter = (a1.min(b1) - a0.max(b0)).max(0.0);
    let union = a1.max(b1) - a0.min(b0);
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

fn doors_match(a: &DoorSegment, b: &DoorSegment, cfg: &MapConfig) -> bool {
    let (la, lb) = (door_line(a), door_line(b));
    let mut dist: f64 = 0.0;
    for p in &b.endpoints {
        dist = dist.max(la.signed_distance(p).abs());
    }
    for p in &a.endpoints {
        dist = dist.max(lb.signed_distance(p).abs());
    }
    la.angle_to(&lb) < cfg.merge_angle_deg.to_radians()
        && dist < cfg.merge_distance
        && door_iou(a, b) >= cfg.door_min_iou
}

/// Support-weighted average of two door observations. Falls back to the
/// better supported one when the average loses its corners.
fn merge_door_pair(
    a: &DoorSegment,
    b: &DoorSegment,
    corners: &CornerTrack,
    cfg: &MapConfig,
) -> DoorSegment {
    let (wa, wb) = (a.support_count.max(1) as f64, b.support_count.max(1) as f64);
    let dir_a = a.endpoints[1] - a.endpoints[0];
    let b_ends = if dir_a.dot(&(b.endpoints[1] - b.endpoints[0])) < 0.0 {
        [b.endpoints[1], b.endpoints[0]]
    } else {
        b.endpoints
    };
    let ends = [
        (a.endpoints[0] * wa + b_ends[0] * wb) / (wa + wb),
        (a.endpoints[1] * wa + b_ends[1] * wb) / (wa + wb),
    ];
    let mut frames: Vec<usize> = a.frames.iter().chain(&b.frames).copied().collect();
    frames.sort_unstable();
    frames.dedup();
    let wall = WallSegment {
        plane: PlaneParams::new(Vector3::z(), 0.0),
        endpoints: ends,
        mean_color: [0.0; 3],
        support_count: a.support_count + b.support_count,
    };
    match door_from(&wall, frames.clone(), corners, cfg) {
        Some(d) => d,
        None => {
            let best = if wa >= wb { a } else { b };
            DoorSegment {
                frames,
                support_count: a.support_count + b.support_count,
                ..best.clone()
            }
        }
    }
}

fn door_order(a: &DoorSegment, b: &DoorSegment) -> Ordering {
    let key = |d: &DoorSegment| {
        let [p, q] = d.endpoints;
        let (p, q) = if (p.x, p.y) <= (q.x, q.y) {
            (p, q)
        } else {
            (q, p)
        };
        [p.x, p.y, q.x, q.y]
    };
    b.support_count.cmp(&a.support_count).then_with(|| {
        key(a)
            .iter()
            .zip(key(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Merges door observations of the same door until no pair matches.
pub fn merge_doors(
    mut doors: Vec<DoorSegment>,
    corners: &CornerTrack,
    cfg: &MapConfig,
) -> Vec<DoorSegment> {
    loop {
        doors.sort_by(door_order);
        let mut out: Vec<DoorSegment> = Vec::with_capacity(doors.len());
        let mut changed = false;
        for d in doors {
            match out.iter_mut().find(|m| doors_match(m, &d, cfg)) {
                Some(m) => {
                    *m = merge_door_pair(m, &d, corners, cfg);
                    changed = true;
                }
                None => out.push(d),
            }
        }
        doors = out;
        if !changed {
            doors.sort_by(door_order);
            return doors;
        }
    }
}

/// Walls of all frames placed with `poses`, merged, with doors.
pub fn build_global_map(
    layouts: &[Option<SceneLayout>],
    poses: &[Pose2D],
    cfg: &MapConfig,
) -> WallMap {
    let walls: Vec<(WallSegment, Vec<usize>)> = world_wall_segments(layouts, poses)
        .into_iter()
        .map(|(k, w, _)| (w, vec![k]))
        .collect();
    let corners = CornerTrack::from_layouts(layouts, poses);
    let (coarse, small) = build_coarse_map(walls, cfg);
    let doors = detect_doors(&small, &corners, cfg);
    let is_door = |w: &WallSegment| door_from(w, Vec::new(), &corners, cfg).is_some();
    let mut all: Vec<(WallSegment, Vec<usize>)> =
        coarse.walls.into_iter().zip(coarse.provenance).collect();
    all.extend(small.into_iter().filter(|(w, _)| !is_door(w)));
    let merged = merge_walls_tracked(all, cfg);
    WallMap {
        walls: merged.iter().map(|(w, _)| w.clone()).collect(),
        provenance: merged.into_iter().map(|(_, f)| f).collect(),
        doors,
    }
}

/// Wall segment from two world points, for tests and tools.
pub fn wall_between(a: Point2, b: Point2, color: [f64; 3], support: usize) -> WallSegment {
    let d = (b - a).normalize();
    let n = Vector2::new(d.y, -d.x);
    WallSegment {
        plane: PlaneParams::new(Vector3::new(n.x, n.y, 0.0), -n.dot(&a)),
        endpoints: [a, b],
        mean_color: color,
        support_count: support,
    }
}
