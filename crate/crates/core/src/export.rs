//! On-disk artifacts: simulated sequences, run reports and SVG drawings.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    matches_to_text, write_frame_images, CameraFile, MatchRecord, StampedPose, Trajectory,
    DEPTH_SCALE,
};
use crate::error::Result;
use crate::geometry::Point2;
use crate::map::WallMap;
use crate::pipeline::{FrameReport, SlamResult};
use crate::scene_parser::SceneLayout;
use crate::simulator::{self, TrajectorySpec, WorldSpec};

/// Renders `traj` in `world` and writes it as a TUM-style sequence: color
/// and depth images with their index files, ground truth, point matches
/// between consecutive frames, `camera.json`, and the two specs as JSON.
pub fn write_sequence(dir: &Path, world: &WorldSpec, traj: &TrajectorySpec) -> Result<()> {
    fs::create_dir_all(dir.join("rgb"))?;
    fs::create_dir_all(dir.join("depth"))?;
    let mut rgb_index = String::from("# timestamp filename\n");
    let mut depth_index = String::from("# timestamp filename\n");
    let mut truth = Trajectory::default();
    let mut matches: Vec<MatchRecord> = Vec::new();
    for i in 0..traj.poses.len() {
        let rendered = simulator::render_frame(world, traj, i)?;
        let t = traj.timestamp(i);
        let name = format!("{t:.6}.png");
        write_frame_images(
            &rendered.frame,
            &dir.join("depth").join(&name),
            &dir.join("rgb").join(&name),
            DEPTH_SCALE,
        )?;
        writeln!(rgb_index, "{t:.6} rgb/{name}").expect("string write");
        writeln!(depth_index, "{t:.6} depth/{name}").expect("string write");
        let pose = traj.poses[i];
        truth.poses.push(StampedPose::from_matrix(
            t,
            pose.position(traj.camera_height),
            &pose.rotation(),
        ));
        if i > 0 {
            let t_prev = traj.timestamp(i - 1);
            matches.extend(
                simulator::correspondences(traj, &rendered, i)
                    .into_iter()
                    .map(|correspondence| MatchRecord {
                        t_prev,
                        t_curr: t,
                        correspondence,
                    }),
            );
        }
    }
    fs::write(dir.join("rgb.txt"), rgb_index)?;
    fs::write(dir.join("depth.txt"), depth_index)?;
    truth.save(&dir.join("groundtruth.txt"))?;
    fs::write(dir.join("matches.txt"), matches_to_text(&matches))?;
    let intr = traj.camera.intrinsics();
    let gravity = traj.poses.first().map(simulator::gravity_in_camera);
    let camera = CameraFile {
        fx: intr.fx,
        fy: intr.fy,
        cx: intr.cx,
        cy: intr.cy,
        depth_scale: DEPTH_SCALE,
        gravity: gravity.map(|g| [g.x, g.y, g.z]),
    };
    fs::write(
        dir.join("camera.json"),
        serde_json::to_string_pretty(&camera)?,
    )?;
    fs::write(dir.join("world.json"), serde_json::to_string_pretty(world)?)?;
    fs::write(
        dir.join("trajectory.json"),
        serde_json::to_string_pretty(traj)?,
    )?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopSummary {
    pub i: usize,
    pub j: usize,
    pub descriptor_distance: f64,
    pub corner_distance: f64,
    pub rotation_difference_deg: f64,
    pub camera_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoorSummary {
    pub endpoints: [[f64; 2]; 2],
    pub width: f64,
    pub observing_frames: usize,
    pub corner_observations: [usize; 2],
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlamReport {
    pub loop_closure_enabled: bool,
    pub camera_height: f64,
    pub frame_offsets_deg: Vec<f64>,
    pub failed_frames: usize,
    pub walls: usize,
    pub doors: Vec<DoorSummary>,
    pub loop_closures: Vec<LoopSummary>,
    /// Against the sequence's ground truth, when it has one.
    pub ate_rmse: Option<f64>,
    pub frames: Vec<FrameReport>,
}

impl SlamReport {
    pub fn new(
        result: &SlamResult,
        map: &WallMap,
        loop_closure_enabled: bool,
        ate_rmse: Option<f64>,
    ) -> Self {
        Self {
            loop_closure_enabled,
            camera_height: result.camera_height,
            frame_offsets_deg: result.frame_offsets_deg.clone(),
            failed_frames: result.layouts.iter().filter(|l| l.is_none()).count(),
            walls: map.walls.len(),
            doors: map
                .doors
                .iter()
                .map(|d| DoorSummary {
                    endpoints: d.endpoints.map(|p| [p.x, p.y]),
                    width: d.width,
                    observing_frames: d.frames.len(),
                    corner_observations: [d.corners[0].len(), d.corners[1].len()],
                })
                .collect(),
            loop_closures: result
                .loop_closures
                .iter()
                .map(|m| LoopSummary {
                    i: m.i,
                    j: m.j,
                    descriptor_distance: m.descriptor_distance,
                    corner_distance: m.corner_distance,
                    rotation_difference_deg: m.rotation_difference.to_degrees(),
                    camera_distance: m.camera_distance,
                })
                .collect(),
            ate_rmse,
            frames: result.frames.clone(),
        }
    }
}

/// Bounding box accumulator mapping meters to SVG pixels, with `y` up.
struct Canvas {
    lo: Point2,
    hi: Point2,
    scale: f64,
    margin: f64,
}

impl Canvas {
    fn fit<'a>(points: impl IntoIterator<Item = &'a Point2>, scale: f64) -> Self {
        let (mut lo, mut hi) = (
            Point2::repeat(f64::INFINITY),
            Point2::repeat(f64::NEG_INFINITY),
        );
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        if lo.x > hi.x {
            lo = Point2::repeat(-1.0);
            hi = Point2::repeat(1.0);
        }
        Self {
            lo,
            hi,
            scale,
            margin: 20.0,
        }
    }

    fn width(&self) -> f64 {
        (self.hi.x - self.lo.x) * self.scale + 2.0 * self.margin
    }

    fn height(&self) -> f64 {
        (self.hi.y - self.lo.y) * self.scale + 2.0 * self.margin
    }

    fn map(&self, p: &Point2) -> (f64, f64) {
        (
            self.margin + (p.x - self.lo.x) * self.scale,
            self.margin + (self.hi.y - p.y) * self.scale,
        )
    }

    fn line(&self, out: &mut String, a: &Point2, b: &Point2, style: &str) {
        let ((x1, y1), (x2, y2)) = (self.map(a), self.map(b));
        writeln!(
            out,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" {style}/>"#
        )
        .expect("string write");
    }
}

/// Top view of the map: walls red, doors green, camera path blue.
pub fn map_svg(map: &WallMap, path: &[Point2]) -> String {
    let points = map
        .walls
        .iter()
        .flat_map(|w| w.endpoints.iter())
        .chain(map.doors.iter().flat_map(|d| d.endpoints.iter()))
        .chain(path);
    let canvas = Canvas::fit(points, 50.0);
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}">"#,
        canvas.width(),
        canvas.height()
    )
    .expect("string write");
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).expect("string write");
    if path.len() > 1 {
        let pts: Vec<String> = path
            .iter()
            .map(|p| {
                let (x, y) = canvas.map(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="blue" stroke-width="1.5"/>"#,
            pts.join(" ")
        )
        .expect("string write");
    }
    for w in &map.walls {
        canvas.line(
            &mut out,
            &w.endpoints[0],
            &w.endpoints[1],
            r#"stroke="red" stroke-width="3""#,
        );
    }
    for d in &map.doors {
        canvas.line(
            &mut out,
            &d.endpoints[0],
            &d.endpoints[1],
            r#"stroke="green" stroke-width="5""#,
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Layout drawn in its level frame with the camera at the origin looking up
/// the page: real walls red, virtual faces dashed gray, view limits light.
fn layout_group(out: &mut String, layout: &SceneLayout, canvas: &Canvas, dx: f64, title: &str) {
    writeln!(out, r#"<g transform="translate({dx:.2},0)">"#).expect("string write");
    writeln!(
        out,
        r#"<text x="{:.2}" y="14" font-family="sans-serif" font-size="12">{title}</text>"#,
        canvas.margin
    )
    .expect("string write");
    let (lo, hi) = layout.chain.fov();
    let reach = canvas.hi.x.max(canvas.hi.y);
    for a in [lo, hi] {
        let p = top_view(&(crate::scene_parser::azimuth_direction(a) * reach));
        canvas.line(
            out,
            &Point2::zeros(),
            &p,
            r##"stroke="#bbb" stroke-width="1""##,
        );
    }
    for s in &layout.segments {
        let Some([a, b]) = s.endpoints else { continue };
        let style = if layout.labels[s.label].is_real() {
            r#"stroke="red" stroke-width="3""#
        } else {
            r#"stroke="gray" stroke-width="2" stroke-dasharray="6 4""#
        };
        canvas.line(out, &top_view(&a), &top_view(&b), style);
    }
    let (cx, cy) = canvas.map(&Point2::zeros());
    writeln!(
        out,
        r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="4" fill="blue"/>"#
    )
    .expect("string write");
    out.push_str("</g>\n");
}

/// Level coordinates (x forward, y left) to page coordinates (x right, y up).
fn top_view(p: &Point2) -> Point2 {
    Point2::new(-p.y, p.x)
}

/// Single-view and temporal layouts of one frame side by side.
pub fn layouts_svg(single: &SceneLayout, temporal: Option<&SceneLayout>) -> String {
    let ends = |l: &SceneLayout| -> Vec<Point2> {
        l.segments
            .iter()
            .filter_map(|s| s.endpoints)
            .flat_map(|e| e.map(|p| top_view(&p)))
            .collect()
    };
    let mut points = ends(single);
    if let Some(t) = temporal {
        points.extend(ends(t));
    }
    points.push(Point2::zeros());
    let canvas = Canvas::fit(&points, 40.0);
    let panels = if temporal.is_some() { 2.0 } else { 1.0 };
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}">"#,
        canvas.width() * panels,
        canvas.height()
    )
    .expect("string write");
    writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#).expect("string write");
    layout_group(&mut out, single, &canvas, 0.0, "single view");
    if let Some(t) = temporal {
        layout_group(&mut out, t, &canvas, canvas.width(), "temporal");
    }
    out.push_str("</svg>\n");
    out
}
