//! Planar pose graph over camera positions, keyframes and loop closures.
//!
//! Headings come from the Manhattan frames and do not drift, so only
//! positions are optimized. Every edge residual is `g_i - g_j - ĝ_ij`, whose
//! Jacobians are constant, which makes the problem linear and solvable in one
//! step.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::config::SlamConfig;
use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Corner, Point2};
use crate::scene_parser::SceneLayout;
use crate::skyline::SkylineMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub x: f64,
    pub y: f64,
    /// Heading in (-π, π].
    pub theta: f64,
}

impl Pose2D {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// World coordinates of a point given in this pose's level frame.
    pub fn to_world(&self, p: &Point2) -> Point2 {
        self.position() + rotate(p, self.theta)
    }

    pub fn direction_to_world(&self, v: &Vector2<f64>) -> Vector2<f64> {
        rotate(v, self.theta)
    }
}

fn rotate(v: &Vector2<f64>, angle: f64) -> Vector2<f64> {
    let (s, c) = angle.sin_cos();
    Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Odometry,
    LoopClosure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    /// Expected `g_i - g_j`.
    pub measurement: Vector2<f64>,
    pub information: Matrix2<f64>,
    pub kind: EdgeKind,
    /// Built from a constant-velocity guess rather than a measurement.
    pub fallback: bool,
}

impl GraphEdge {
    /// Expected motion from node `i` to node `j`.
    pub fn motion(&self) -> Vector2<f64> {
        -self.measurement
    }

    pub fn residual(&self, poses: &[Pose2D]) -> Vector2<f64> {
        poses[self.i].position() - poses[self.j].position() - self.measurement
    }

    pub fn cost(&self, poses: &[Pose2D]) -> f64 {
        let e = self.residual(poses);
        (e.transpose() * self.information * e)[(0, 0)]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PoseGraph {
    pub poses: Vec<Pose2D>,
    pub edges: Vec<GraphEdge>,
}

/// A wall seen in two consecutive frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WallTrack {
    /// Unit world normal pointing away from the cameras.
    pub normal: Vector2<f64>,
    /// Camera-to-wall distance in the earlier frame.
    pub prev_distance: f64,
    /// Camera-to-wall distance in the later frame.
    pub curr_distance: f64,
}

impl WallTrack {
    /// Replaces the motion component along the wall normal by the change in
    /// wall distance, keeping the component parallel to the wall.
    pub fn constrain(&self, motion: &Vector2<f64>) -> Vector2<f64> {
        let v = self.normal.normalize();
        let u = Vector2::new(-v.y, v.x);
        u * motion.dot(&u) + v * (self.prev_distance - self.curr_distance)
    }
}

impl PoseGraph {
    pub fn add_node(&mut self, pose: Pose2D) -> usize {
        self.poses.push(pose);
        self.poses.len() - 1
    }

    pub fn add_edge(&mut self, edge: GraphEdge) -> Result<&GraphEdge> {
        let (i, j) = (edge.i, edge.j);
        if i >= j || j >= self.poses.len() {
            return Err(Error::InvalidEdge {
                i,
                j,
                reason: "requires i < j < node count".into(),
            });
        }
        let w = &edge.information;
        let symmetric = (w[(0, 1)] - w[(1, 0)]).abs() <= 1e-12 * w.abs().max();
        if !symmetric || w[(0, 0)] <= 0.0 || w.determinant() <= 0.0 {
            return Err(Error::InvalidEdge {
                i,
                j,
                reason: "information matrix is not symmetric positive definite".into(),
            });
        }
        self.edges.push(edge);
        Ok(self.edges.last().expect("just pushed"))
    }

    pub fn objective(&self) -> f64 {
        self.objective_at(&self.poses)
    }

    pub fn objective_at(&self, poses: &[Pose2D]) -> f64 {
        self.edges.iter().map(|e| e.cost(poses)).sum()
    }

    pub fn loop_closures(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges
            .iter()
            .filter(|e| e.kind == EdgeKind::LoopClosure)
    }

    /// Minimizes the objective over all positions except node 0's. Headings
    /// are left as they are. Returns the new objective.
    pub fn optimize(&mut self) -> Result<f64> {
        let n = self.poses.len();
        if n <= 1 {
            return Ok(self.objective());
        }
        self.check_connected()?;
        let dim = 2 * (n - 1);
        // Variable block of node k > 0 starts at 2(k-1).
        let mut first: Vec<usize> = (0..dim).map(|r| r - r % 2).collect();
        for e in &self.edges {
            if e.i > 0 {
                let lo = 2 * (e.i - 1);
                for r in [2 * (e.j - 1), 2 * (e.j - 1) + 1] {
                    first[r] = first[r].min(lo);
                }
            }
        }
        let mut h = SkylineMatrix::with_profile(first);
        let mut b = vec![0.0; dim];
        for e in &self.edges {
            let w = &e.information;
            // Residual g_i - g_j - m: derivative +I for i, -I for j.
            let wm = w * e.measurement;
            for (node, sign) in [(e.i, 1.0), (e.j, -1.0)] {
                if node == 0 {
                    continue;
                }
                let r = 2 * (node - 1);
                for a in 0..2 {
                    for c in 0..=a {
                        h.add(r + a, r + c, w[(a, c)]);
                    }
                    b[r + a] += sign * wm[a];
                }
            }
            if e.i > 0 {
                let (ri, rj) = (2 * (e.i - 1), 2 * (e.j - 1));
                for a in 0..2 {
                    for c in 0..2 {
                        h.add(rj + a, ri + c, -w[(a, c)]);
                    }
                }
            } else {
                // Node 0 is held fixed; its position moves to the right side.
                let g0 = self.poses[0].position();
                let wg = w * g0;
                let rj = 2 * (e.j - 1);
                for a in 0..2 {
                    b[rj + a] += wg[a];
                }
            }
        }
        h.factorize()?;
        let x = h.solve_factored(&b);
        for k in 1..n {
            self.poses[k].x = x[2 * (k - 1)];
            self.poses[k].y = x[2 * (k - 1) + 1];
        }
        Ok(self.objective())
    }

    fn check_connected(&self) -> Result<()> {
        let n = self.poses.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut k: usize) -> usize {
            while p[k] != k {
                p[k] = p[p[k]];
                k = p[k];
            }
            k
        }
        for e in &self.edges {
            let (a, b) = (find(&mut parent, e.i), find(&mut parent, e.j));
            parent[a.max(b)] = a.min(b);
        }
        for k in 0..n {
            if find(&mut parent, k) != 0 {
                return Err(Error::DisconnectedGraph { node: k });
            }
        }
        Ok(())
    }
}

/// Adds the odometry edge from node `i` to node `i + 1`. `motion` is the
/// world-frame displacement `g_j - g_i` estimated by odometry; a tracked wall
/// replaces its wall-normal component by the change in wall distance.
/// Fallback edges get their information scaled by `cfg.fallback_scale`.
pub fn add_odometry_edge<'g>(
    graph: &'g mut PoseGraph,
    i: usize,
    j: usize,
    motion: Vector2<f64>,
    wall: Option<&WallTrack>,
    fallback: bool,
    cfg: &SlamConfig,
) -> Result<&'g GraphEdge> {
    if j != i + 1 {
        return Err(Error::NonConsecutiveEdge { i, j });
    }
    let motion = match wall {
        Some(w) => w.constrain(&motion),
        None => motion,
    };
    let scale = if fallback { cfg.fallback_scale } else { 1.0 };
    graph.add_edge(GraphEdge {
        i,
        j,
        measurement: -motion,
        information: Matrix2::identity() * (cfg.odometry_information * scale),
        kind: EdgeKind::Odometry,
        fallback,
    })
}

/// Two orthogonal walls meeting at a corner, in the level frame of the frame
/// that saw them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometricSignature {
    pub corner: Corner,
    pub walls: (usize, usize),
    /// Sum of the two wall normals (pointing away from the camera).
    pub bisector: Vector2<f64>,
    pub descriptor: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyFrame {
    pub frame: usize,
    pub pose: Pose2D,
    pub signatures: Vec<GeometricSignature>,
}

/// Fixed-length description of the scene around a corner, compared by
/// Euclidean distance.
pub trait SceneDescriptor {
    fn describe(&self, layout: &SceneLayout, corner: &Point2, heading: f64) -> Vec<f64>;
}

/// Occupancy of wall points in a square grid centered on the corner and
/// aligned with the world axes, L2-normalized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WallOccupancyGrid {
    pub cells: usize,
    /// Half side length of the grid, meters.
    pub extent: f64,
    /// Spacing of the points sampled along each wall, meters.
    pub spacing: f64,
}

impl WallOccupancyGrid {
    pub fn from_config(cfg: &SlamConfig) -> Self {
        Self {
            cells: cfg.descriptor_cells,
            extent: cfg.descriptor_extent,
            spacing: 0.05,
        }
    }
}

impl SceneDescriptor for WallOccupancyGrid {
    fn describe(&self, layout: &SceneLayout, corner: &Point2, heading: f64) -> Vec<f64> {
        let n = self.cells;
        let mut grid = vec![0.0; n * n];
        let cell = 2.0 * self.extent / n as f64;
        for (wall, _) in layout.wall_segments() {
            let [a, b] = wall.endpoints;
            let steps = ((b - a).norm() / self.spacing).ceil().max(1.0) as usize;
            for s in 0..=steps {
                let p = a + (b - a) * (s as f64 / steps as f64);
                let q = rotate(&(p - corner), heading);
                let cx = ((q.x + self.extent) / cell).floor();
                let cy = ((q.y + self.extent) / cell).floor();
                if cx < 0.0 || cy < 0.0 || cx >= n as f64 || cy >= n as f64 {
                    continue;
                }
                grid[cy as usize * n + cx as usize] += 1.0;
            }
        }
        let norm = grid.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            grid.iter_mut().for_each(|v| *v /= norm);
        }
        grid
    }
}

pub fn descriptor_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Corner signatures of a layout: real walls meeting at a corner, orthogonal
/// within `cfg.signature_angle_deg`, with the corner inside both observed
/// segments up to `cfg.connect_slack`.
pub fn geometric_signatures(
    layout: &SceneLayout,
    heading: f64,
    descriptor: &dyn SceneDescriptor,
    cfg: &SlamConfig,
) -> Vec<GeometricSignature> {
    let tol = cfg.signature_angle_deg.to_radians();
    let near_segment = |label: usize, p: &Point2| {
        layout
            .segments
            .iter()
            .filter(|s| s.label == label)
            .filter_map(|s| s.endpoints)
            .any(|[a, b]| point_segment_distance(p, &a, &b) <= cfg.connect_slack)
    };
    layout
        .corners
        .iter()
        .filter_map(|c| {
            let na = layout.label(c.wall_a).plane.normal.xy();
            let nb = layout.label(c.wall_b).plane.normal.xy();
            let angle = na.normalize().dot(&nb.normalize()).clamp(-1.0, 1.0).acos();
            if (angle - std::f64::consts::FRAC_PI_2).abs() > tol {
                return None;
            }
            if !near_segment(c.wall_a, &c.position) || !near_segment(c.wall_b, &c.position) {
                return None;
            }
            Some(GeometricSignature {
                corner: *c,
                walls: (c.wall_a, c.wall_b),
                bisector: (na.normalize() + nb.normalize()).normalize(),
                descriptor: descriptor.describe(layout, &c.position, heading),
            })
        })
        .collect()
}

fn point_segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).dot(&d) / len2).clamp(0.0, 1.0);
    (p - (a + d * t)).norm()
}

/// A keyframe when the layout has at least one geometric signature.
pub fn detect_keyframe(
    layout: &SceneLayout,
    frame: usize,
    pose: Pose2D,
    descriptor: &dyn SceneDescriptor,
    cfg: &SlamConfig,
) -> Option<KeyFrame> {
    let signatures = geometric_signatures(layout, pose.theta, descriptor, cfg);
    if signatures.is_empty() {
        None
    } else {
        Some(KeyFrame {
            frame,
            pose,
            signatures,
        })
    }
}

/// A revisit of an earlier keyframe's corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopMatch {
    /// Earlier frame.
    pub i: usize,
    /// Later frame.
    pub j: usize,
    pub signature_i: usize,
    pub signature_j: usize,
    /// Expected `g_i - g_j` from the shared corner.
    pub displacement: Vector2<f64>,
    pub rotation_difference: f64,
    pub camera_distance: f64,
    pub descriptor_distance: f64,
    /// Distance between the two corners placed with the current poses.
    pub corner_distance: f64,
}

/// Earlier keyframes whose signatures match one of `candidate`'s: bisector
/// directions within `cfg.loop_rotation_deg`, cameras closer than
/// `cfg.loop_distance`, descriptors closer than `cfg.descriptor_threshold`
/// and corners within `cfg.corner_gate` of each other under the current
/// poses. Frames closer than `cfg.min_loop_gap` are skipped. Per earlier
/// keyframe the signature pair with the closest corners is kept; results are
/// sorted by descriptor distance.
pub fn match_keyframes(
    candidate: &KeyFrame,
    registry: &[KeyFrame],
    poses: &[Pose2D],
    cfg: &SlamConfig,
) -> Vec<LoopMatch> {
    let j = candidate.frame;
    let pj = poses[j];
    let mut out = Vec::new();
    for kf in registry {
        let i = kf.frame;
        if i >= j || j - i < cfg.min_loop_gap {
            continue;
        }
        let pi = poses[i];
        let camera_distance = (pi.position() - pj.position()).norm();
        if camera_distance >= cfg.loop_distance {
            continue;
        }
        let mut best: Option<LoopMatch> = None;
        for (si, a) in kf.signatures.iter().enumerate() {
            for (sj, b) in candidate.signatures.iter().enumerate() {
                let ba = pi.direction_to_world(&a.bisector);
                let bb = pj.direction_to_world(&b.bisector);
                let rotation_difference = ba.dot(&bb).clamp(-1.0, 1.0).acos();
                if rotation_difference >= cfg.loop_rotation_deg.to_radians() {
                    continue;
                }
                let descriptor_distance = descriptor_distance(&a.descriptor, &b.descriptor);
                if descriptor_distance >= cfg.descriptor_threshold {
                    continue;
                }
                let ca = pi.to_world(&a.corner.position);
                let cb = pj.to_world(&b.corner.position);
                let corner_distance = (ca - cb).norm();
                if corner_distance >= cfg.corner_gate {
                    continue;
                }
                let displacement =
                    rotate(&b.corner.position, pj.theta) - rotate(&a.corner.position, pi.theta);
                let m = LoopMatch {
                    i,
                    j,
                    signature_i: si,
                    signature_j: sj,
                    displacement,
                    rotation_difference,
                    camera_distance,
                    descriptor_distance,
                    corner_distance,
                };
                if best
                    .as_ref()
                    .is_none_or(|b| corner_distance < b.corner_distance)
                {
                    best = Some(m);
                }
            }
        }
        out.extend(best);
    }
    out.sort_by(|a, b| {
        a.descriptor_distance
            .total_cmp(&b.descriptor_distance)
            .then(a.i.cmp(&b.i))
    });
    out
}

/// Loop-closure edge for a match.
pub fn loop_edge(m: &LoopMatch, cfg: &SlamConfig) -> GraphEdge {
    GraphEdge {
        i: m.i,
        j: m.j,
        measurement: m.displacement,
        information: Matrix2::identity() * cfg.loop_information,
        kind: EdgeKind::LoopClosure,
        fallback: false,
    }
}
