//! Sequence processing: per-frame parsing, odometry, graph construction,
//! loop closure and the final optimization.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dataset::{StampedPose, Trajectory, TumSequence};
use crate::error::Result;
use crate::geometry::{DepthFrame, Point2, Transform2};
use crate::odometry::{estimate_translation, Correspondence, OrientationTracker};
use crate::pose_graph::{
    add_odometry_edge, detect_keyframe, loop_edge, match_keyframes, KeyFrame, LoopMatch, Pose2D,
    PoseGraph, WallOccupancyGrid, WallTrack,
};
use crate::scene_parser::{
    analyze_frame, parse_single_view, FrameAnalysis, Provenance, SceneLayout,
};
use crate::simulator::{self, TrajectorySpec, WorldSpec};
use crate::temporal::parse_temporal;

/// One frame of a sequence, analyzed independently of the others.
#[derive(Clone, Debug)]
pub struct FrameInput {
    pub timestamp: f64,
    /// Plane and wall analysis, or why it failed.
    pub analysis: std::result::Result<FrameAnalysis, String>,
    /// Point matches with the previous frame; ignored for the first frame.
    pub correspondences: Vec<Correspondence>,
}

impl FrameInput {
    pub fn analyze(
        frame: &DepthFrame,
        gravity_prior: &Vector3<f64>,
        correspondences: Vec<Correspondence>,
        config: &Config,
    ) -> Self {
        Self {
            timestamp: frame.timestamp,
            analysis: analyze_frame(frame, gravity_prior, config).map_err(|e| e.to_string()),
            correspondences,
        }
    }
}

/// Renders and analyzes every frame of a simulated trajectory. The gravity
/// prior is taken from the true camera pose.
pub fn simulated_inputs(
    world: &WorldSpec,
    traj: &TrajectorySpec,
    config: &Config,
) -> Result<Vec<FrameInput>> {
    (0..traj.poses.len())
        .map(|i| {
            let rendered = simulator::render_frame(world, traj, i)?;
            let corrs = if i == 0 {
                Vec::new()
            } else {
                simulator::correspondences(traj, &rendered, i)
            };
            let gravity = simulator::gravity_in_camera(&traj.poses[i]);
            Ok(FrameInput::analyze(
                &rendered.frame,
                &gravity,
                corrs,
                config,
            ))
        })
        .collect()
}

/// Loads and analyzes every frame of a recorded sequence. `correspondences`
/// holds the matches of each frame with its predecessor, as produced by
/// [`crate::dataset::correspondences_by_frame`].
pub fn sequence_inputs(
    seq: &TumSequence,
    correspondences: &[Vec<Correspondence>],
    config: &Config,
) -> Result<Vec<FrameInput>> {
    (0..seq.entries.len())
        .map(|k| {
            let frame = seq.load_frame(k)?;
            let corrs = correspondences.get(k).cloned().unwrap_or_default();
            Ok(FrameInput::analyze(&frame, &seq.gravity, corrs, config))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OdometryStatus {
    /// First frame or a frame placed without a predecessor.
    Initial,
    Measured,
    /// Translation guessed from the previous frame's motion.
    Fallback,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub timestamp: f64,
    pub provenance: Option<Provenance>,
    pub energy: Option<f64>,
    pub odometry: OdometryStatus,
    pub inlier_ratio: Option<f64>,
    pub wall_constrained: bool,
    pub keyframe: bool,
    pub errors: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlamResult {
    /// Final, optimized poses.
    pub poses: Vec<Pose2D>,
    /// Camera-to-world rotation per frame.
    pub rotations: Vec<Matrix3<f64>>,
    pub camera_height: f64,
    pub layouts: Vec<Option<SceneLayout>>,
    pub graph: PoseGraph,
    pub keyframes: Vec<KeyFrame>,
    pub loop_closures: Vec<LoopMatch>,
    pub frame_offsets_deg: Vec<f64>,
    pub frames: Vec<FrameReport>,
}

impl SlamResult {
    /// Estimated camera poses lifted to 3D at the median camera height.
    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            poses: self
                .poses
                .iter()
                .zip(&self.rotations)
                .zip(&self.frames)
                .map(|((p, r), f)| {
                    StampedPose::from_matrix(
                        f.timestamp,
                        Vector3::new(p.x, p.y, self.camera_height),
                        r,
                    )
                })
                .collect(),
        }
    }
}

/// Runs the whole sequence. Frames whose analysis or odometry fails are
/// reported and bridged instead of aborting the run.
pub fn run_slam(inputs: &[FrameInput], config: &Config) -> SlamResult {
    let descriptor = WallOccupancyGrid::from_config(&config.slam);
    let mut tracker = OrientationTracker::new(config.odometry.frame_dedup_deg);
    let mut graph = PoseGraph::default();
    let mut rotations: Vec<Matrix3<f64>> = Vec::with_capacity(inputs.len());
    let mut layouts: Vec<Option<SceneLayout>> = Vec::with_capacity(inputs.len());
    let mut keyframes: Vec<KeyFrame> = Vec::new();
    let mut loop_closures = Vec::new();
    let mut reports = Vec::with_capacity(inputs.len());
    let mut heights = Vec::new();
    let mut last_motion = Vector2::zeros();

    for (i, input) in inputs.iter().enumerate() {
        let mut report = FrameReport {
            index: i,
            timestamp: input.timestamp,
            provenance: None,
            energy: None,
            odometry: OdometryStatus::Initial,
            inlier_ratio: None,
            wall_constrained: false,
            keyframe: false,
            errors: Vec::new(),
        };
        let analysis = match &input.analysis {
            Ok(a) => Some(a),
            Err(e) => {
                report.errors.push(format!("analysis: {e}"));
                None
            }
        };

        // Rotation.
        let prev_world = tracker.current;
        let (world, relative) = match (analysis, prev_world) {
            (Some(a), _) => {
                let update = tracker.update(&a.frames);
                (Some(update.world), update.relative)
            }
            (None, Some(w)) => (Some(w), Matrix3::identity()),
            (None, None) => (None, Matrix3::identity()),
        };
        rotations.push(world.map(|w| w.rotation).unwrap_or_else(Matrix3::identity));
        let theta = match (analysis, world) {
            (Some(a), Some(w)) => {
                let x = w.rotation * a.level.axis(0);
                x.y.atan2(x.x)
            }
            _ => graph.poses.last().map_or(0.0, |p| p.theta),
        };
        if let Some(a) = analysis {
            heights.push(a.camera_height);
        }

        // Translation.
        let mut measured = false;
        let position = if i == 0 || prev_world.is_none() {
            graph
                .poses
                .last()
                .map_or(Vector2::zeros(), |p| p.position())
        } else {
            let prev_w = prev_world.expect("checked above");
            let motion = match estimate_translation(
                &relative,
                &input.correspondences,
                &prev_w.up(),
                &config.odometry,
            ) {
                Ok(t) => {
                    report.odometry = OdometryStatus::Measured;
                    report.inlier_ratio =
                        Some(t.inliers.len() as f64 / input.correspondences.len() as f64);
                    measured = true;
                    (prev_w.rotation * t.t).xy()
                }
                Err(e) => {
                    report.odometry = OdometryStatus::Fallback;
                    report.errors.push(format!("odometry: {e}"));
                    last_motion
                }
            };
            last_motion = motion;
            graph.poses[i - 1].position() + motion
        };
        let pose = Pose2D::new(position.x, position.y, theta);
        graph.add_node(pose);

        // Layout.
        let prev_layout = if i > 0 { layouts[i - 1].as_ref() } else { None };
        let layout = analysis.and_then(|a| {
            let parsed = match prev_layout {
                Some(prev) => {
                    let rel = measured.then(|| relative_transform(&graph.poses[i - 1], &pose));
                    parse_temporal(prev, a, rel.as_ref(), config)
                }
                None => parse_single_view(a, &config.parser),
            };
            match parsed {
                Ok(l) => Some(l),
                Err(e) => {
                    report.errors.push(format!("parse: {e}"));
                    None
                }
            }
        });

        // Odometry edge.
        if i > 0 {
            let wall = match (prev_layout, &layout) {
                (Some(p), Some(c)) if measured => wall_track(p, c, theta),
                _ => None,
            };
            report.wall_constrained = wall.is_some();
            let motion = graph.poses[i].position() - graph.poses[i - 1].position();
            let fallback = report.odometry != OdometryStatus::Measured;
            if let Err(e) = add_odometry_edge(
                &mut graph,
                i - 1,
                i,
                motion,
                wall.as_ref(),
                fallback,
                &config.slam,
            ) {
                report.errors.push(format!("graph: {e}"));
            } else if let Some(w) = wall {
                // Keep the dead-reckoned position consistent with the edge.
                let m = w.constrain(&motion);
                let p = graph.poses[i - 1].position() + m;
                graph.poses[i].x = p.x;
                graph.poses[i].y = p.y;
                last_motion = m;
            }
        }

        // Keyframes and loop closure.
        if let Some(l) = &layout {
            report.provenance = Some(l.provenance);
            report.energy = Some(l.energy);
            if let Some(kf) = detect_keyframe(l, i, graph.poses[i], &descriptor, &config.slam) {
                report.keyframe = true;
                if config.slam.loop_closure {
                    let matches = match_keyframes(&kf, &keyframes, &graph.poses, &config.slam);
                    if let Some(m) = matches.into_iter().next() {
                        match graph.add_edge(loop_edge(&m, &config.slam)) {
                            Ok(_) => {
                                loop_closures.push(m);
                                if let Err(e) = graph.optimize() {
                                    report.errors.push(format!("optimize: {e}"));
                                }
                            }
                            Err(e) => report.errors.push(format!("graph: {e}")),
                        }
                    }
                }
                keyframes.push(kf);
            }
        }
        layouts.push(layout);
        reports.push(report);
    }

    if graph.poses.len() > 1 {
        if let Err(e) = graph.optimize() {
            if let Some(r) = reports.last_mut() {
                r.errors.push(format!("optimize: {e}"));
            }
        }
    }
    heights.sort_by(f64::total_cmp);
    let camera_height = heights.get(heights.len() / 2).copied().unwrap_or(0.0);
    SlamResult {
        poses: graph.poses.clone(),
        rotations,
        camera_height,
        layouts,
        graph,
        keyframes,
        loop_closures,
        frame_offsets_deg: tracker.registry.offsets_deg,
        frames: reports,
    }
}

/// Maps level coordinates of `prev` to level coordinates of `curr`.
pub fn relative_transform(prev: &Pose2D, curr: &Pose2D) -> Transform2 {
    let (s, c) = (-curr.theta).sin_cos();
    let d = prev.position() - curr.position();
    Transform2 {
        rotation: prev.theta - curr.theta,
        translation: Vector2::new(c * d.x - s * d.y, s * d.x + c * d.y),
    }
}

/// The best-supported wall matched between two consecutive layouts, with
/// its normal in world coordinates.
fn wall_track(prev: &SceneLayout, curr: &SceneLayout, theta: f64) -> Option<WallTrack> {
    let assoc = curr.association.as_ref()?;
    let used = |l: &SceneLayout, id: usize| l.segments.iter().any(|s| s.label == id);
    let (p, c) = assoc
        .pairs
        .iter()
        .filter(|&&(p, c)| used(prev, p) && used(curr, c) && curr.labels[c].is_real())
        .max_by_key(|&&(_, c)| (curr.labels[c].support, std::cmp::Reverse(c)))?;
    let n = curr.labels[*c].plane.normal;
    let (s, co) = theta.sin_cos();
    let normal = Vector2::new(co * n.x - s * n.y, s * n.x + co * n.y);
    Some(WallTrack {
        normal,
        prev_distance: -prev.labels[*p].plane.offset,
        curr_distance: -curr.labels[*c].plane.offset,
    })
}

/// Wall segments of every frame in world coordinates, with the frame index
/// and which ends lie on a field-of-view border.
pub fn world_wall_segments(
    layouts: &[Option<SceneLayout>],
    poses: &[Pose2D],
) -> Vec<(usize, crate::geometry::WallSegment, [bool; 2])> {
    let mut out = Vec::new();
    for (k, (layout, pose)) in layouts.iter().zip(poses).enumerate() {
        let Some(layout) = layout else { continue };
        for (mut wall, clipped) in layout.wall_segments() {
            let ends: [Point2; 2] = [
                pose.to_world(&wall.endpoints[0]),
                pose.to_world(&wall.endpoints[1]),
            ];
            wall.endpoints = ends;
            let n = pose.direction_to_world(&wall.plane.normal.xy());
            let offset = -n.dot(&ends[0]);
            wall.plane = crate::geometry::PlaneParams::new(Vector3::new(n.x, n.y, 0.0), offset);
            out.push((k, wall, clipped));
        }
    }
    out
}
