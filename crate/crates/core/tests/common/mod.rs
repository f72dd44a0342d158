//! Shared helpers for the simulator-driven integration tests.
#![allow(dead_code)]

use floorplan_slam::config::Config;
use floorplan_slam::geometry::Point2;
use floorplan_slam::scene_parser::{analyze_frame, FrameAnalysis};
use floorplan_slam::simulator::{self, Surface, TrajectorySpec, TruePose, WorldSpec};
use nalgebra::Vector2;

/// Catalog trajectory of `name` rendered at `width` x 3/4 `width`.
pub fn trajectory(name: &str, width: usize) -> TrajectorySpec {
    let mut traj = simulator::standard_trajectory(name).unwrap();
    traj.camera.width = width;
    traj.camera.height = width * 3 / 4;
    traj
}

pub fn config_for(traj: &TrajectorySpec) -> Config {
    Config::default().scaled_for_resolution(traj.camera.width * traj.camera.height)
}

pub fn analyze(
    world: &WorldSpec,
    traj: &TrajectorySpec,
    index: usize,
    config: &Config,
) -> FrameAnalysis {
    let rendered = simulator::render_frame(world, traj, index).unwrap();
    let gravity = simulator::gravity_in_camera(&traj.poses[index]);
    analyze_frame(&rendered.frame, &gravity, config).unwrap()
}

/// World floor point in the level frame of a camera at `pose`: x along the
/// horizontal viewing direction, y to the left.
pub fn to_level(pose: &TruePose, p: &Vector2<f64>) -> Point2 {
    let (s, c) = pose.yaw.sin_cos();
    let d = p - Vector2::new(pose.x, pose.y);
    Point2::new(c * d.x + s * d.y, -s * d.x + c * d.y)
}

/// A ground-truth surface seen from `pose`: unit normal pointing away from
/// the camera, distance of its line, and its end points, in level
/// coordinates.
pub struct TruthWall {
    pub surface: usize,
    pub normal: Vector2<f64>,
    pub distance: f64,
    pub ends: [Point2; 2],
}

pub fn truth_walls(world: &WorldSpec, pose: &TruePose) -> Vec<TruthWall> {
    world
        .surfaces()
        .iter()
        .enumerate()
        .map(|(k, s): (usize, &Surface)| {
            let ends = [to_level(pose, &s.a), to_level(pose, &s.b)];
            let dir = (ends[1] - ends[0]).normalize();
            let mut normal = Vector2::new(-dir.y, dir.x);
            let mut distance = normal.dot(&ends[0]);
            if distance < 0.0 {
                normal = -normal;
                distance = -distance;
            }
            TruthWall {
                surface: k,
                normal,
                distance,
                ends,
            }
        })
        .collect()
}

/// Distance from `p` to the segment `a b`.
pub fn segment_distance(p: &Point2, a: &Point2, b: &Point2) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (a + ab * t - p).norm()
}
