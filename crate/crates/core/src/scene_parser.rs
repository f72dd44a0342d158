//! Single-view layout parsing.
//!
//! Wall lines found in one depth frame cut the horizontal field of view into
//! angular intervals. Every interval receives one plane label (a real wall or
//! a virtual bounding-box face) by minimizing a chain energy with dynamic
//! programming, and consecutive intervals sharing a label are merged into the
//! final layout.
//!
//! All floor-plan quantities live in the frame's *level* frame: origin at the
//! camera, x the camera's forward direction projected onto the floor, y to the
//! left and z up. The view angle (azimuth) of a floor point `p` is
//! `atan2(-p.y, p.x)`, so it grows from the left image border to the right one.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::config::{Config, ParserConfig, RansacConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    self, hsv_distance, mean_hsv, DepthFrame, FloorLine, Line2, ManhattanFrame, PlaneParams,
    Point2, Point3, WallSegment,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelKind {
    Real,
    Virtual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneLabel {
    pub id: usize,
    /// Vertical plane in level-frame coordinates.
    pub plane: PlaneParams,
    pub kind: LabelKind,
    /// Height of the wall top above the camera, meters.
    pub top_height: f64,
    /// Consecutive frames this label has been carried without depth support.
    pub carried_age: u32,
    pub support: usize,
    pub color: [f64; 3],
    /// Outermost observed points of the wall along its floor line.
    pub extent: Option<[Point2; 2]>,
}

impl PlaneLabel {
    pub fn line(&self) -> Line2 {
        Line2::new(
            Vector2::new(self.plane.normal.x, self.plane.normal.y),
            self.plane.offset,
        )
    }

    pub fn is_real(&self) -> bool {
        self.kind == LabelKind::Real
    }

    /// Moves `p` along the label's line into the observed extent.
    pub fn clamp_to_extent(&self, p: &Point2) -> Point2 {
        let line = self.line();
        let Some(ext) = self.extent else {
            return line.project(p);
        };
        let (a, b) = (line.param(&ext[0]), line.param(&ext[1]));
        line.point_at(line.param(p).clamp(a.min(b), a.max(b)))
    }

    /// Like [`Self::clamp_to_extent`] with the extent grown by `slack` on
    /// both sides.
    pub fn clamp_near_extent(&self, p: &Point2, slack: f64) -> Point2 {
        let line = self.line();
        let Some(ext) = self.extent else {
            return line.project(p);
        };
        let (a, b) = (line.param(&ext[0]), line.param(&ext[1]));
        line.point_at(line.param(p).clamp(a.min(b) - slack, a.max(b) + slack))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_angle: f64,
    pub end_angle: f64,
    pub weight: f64,
}

impl Interval {
    pub fn mid_angle(&self) -> f64 {
        0.5 * (self.start_angle + self.end_angle)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalChain {
    pub intervals: Vec<Interval>,
    pub endpoints: Vec<f64>,
}

impl IntervalChain {
    /// Chain over sorted, strictly increasing endpoints; the first and last
    /// endpoint are the field-of-view bounds.
    pub fn from_endpoints(endpoints: Vec<f64>) -> Result<Self> {
        if endpoints.len() < 2 {
            return Err(Error::EmptyChain);
        }
        let fov = endpoints[endpoints.len() - 1] - endpoints[0];
        let intervals = endpoints
            .windows(2)
            .map(|w| Interval {
                start_angle: w[0],
                end_angle: w[1],
                weight: (w[1] - w[0]) / fov,
            })
            .collect();
        Ok(Self {
            intervals,
            endpoints,
        })
    }

    pub fn fov(&self) -> (f64, f64) {
        (self.endpoints[0], self.endpoints[self.endpoints.len() - 1])
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Sorts and removes angles closer than `tolerance` to their predecessor.
pub fn dedup_angles(mut angles: Vec<f64>, tolerance: f64) -> Vec<f64> {
    angles.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(angles.len());
    for a in angles {
        if out.last().is_none_or(|&last| a - last > tolerance) {
            out.push(a);
        }
    }
    out
}

pub fn azimuth(p: &Point2) -> f64 {
    (-p.y).atan2(p.x)
}

pub fn azimuth_direction(angle: f64) -> Vector2<f64> {
    Vector2::new(angle.cos(), -angle.sin())
}

/// Axis-aligned box of virtual walls around the camera, in level coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBoxVolume {
    /// First horizontal axis of the dominant Manhattan frame; the second is
    /// its left-hand perpendicular.
    pub axis: Vector2<f64>,
    pub half_extent: f64,
}

impl BoundingBoxVolume {
    pub fn axes(&self) -> [Vector2<f64>; 2] {
        [self.axis, Vector2::new(-self.axis.y, self.axis.x)]
    }

    pub fn contains(&self, p: &Point2) -> bool {
        self.axes()
            .iter()
            .all(|a| a.dot(p).abs() <= self.half_extent + 1e-9)
    }

    /// The four vertical faces, normals pointing away from the camera.
    pub fn faces(&self) -> [PlaneParams; 4] {
        let [a, b] = self.axes();
        [a, b, -a, -b].map(|n| PlaneParams {
            normal: Vector3::new(n.x, n.y, 0.0),
            offset: -self.half_extent,
        })
    }
}

/// One depth pixel, in level coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelSample {
    pub azimuth: f64,
    pub ray: Vector3<f64>,
    pub point: Option<Point3>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedSegment {
    pub endpoints: [Point2; 2],
    pub support: usize,
}

/// A vertical plane found in the frame with its visible pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallObservation {
    pub plane: PlaneParams,
    pub segments: Vec<ObservedSegment>,
    pub top_height: f64,
    pub support: usize,
    pub color: [f64; 3],
}

impl WallObservation {
    pub fn line(&self) -> Line2 {
        Line2::new(
            Vector2::new(self.plane.normal.x, self.plane.normal.y),
            self.plane.offset,
        )
    }

    pub fn extent(&self) -> Option<[Point2; 2]> {
        let line = self.line();
        let params = self
            .segments
            .iter()
            .flat_map(|s| s.endpoints.iter().map(|p| line.param(p)));
        let (lo, hi) = params.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
            (lo.min(t), hi.max(t))
        });
        (lo < hi).then(|| [line.point_at(lo), line.point_at(hi)])
    }
}

/// Everything about a frame that does not depend on earlier frames.
#[derive(Clone, Debug)]
pub struct FrameAnalysis {
    pub timestamp: f64,
    /// Camera to level frame.
    pub level: ManhattanFrame,
    /// Manhattan frames (camera to frame), dominant first.
    pub frames: Vec<ManhattanFrame>,
    pub floor: PlaneParams,
    pub camera_height: f64,
    pub walls: Vec<WallObservation>,
    /// All pixels sorted by azimuth.
    pub pixels: Vec<PixelSample>,
    pub fov: (f64, f64),
    pub bbox: BoundingBoxVolume,
    pub inlier_distance: f64,
}

impl FrameAnalysis {
    /// Yaw of Manhattan frame `k`'s first axis in level coordinates.
    pub fn frame_yaw(&self, k: usize) -> f64 {
        let x = self.level.rotation * self.frames[k].axis(0);
        x.y.atan2(x.x)
    }

    pub fn pixel_range(&self, start: f64, end: f64) -> &[PixelSample] {
        let lo = self.pixels.partition_point(|p| p.azimuth < start);
        let hi = self.pixels.partition_point(|p| p.azimuth < end);
        &self.pixels[lo..hi]
    }

    pub fn floor_lines(&self) -> Vec<FloorLine> {
        self.walls
            .iter()
            .map(|w| FloorLine {
                line: w.line(),
                segments: w.segments.iter().map(|s| s.endpoints).collect(),
            })
            .collect()
    }
}

/// Plane fitting, Manhattan frames, wall segments and per-pixel rays.
pub fn analyze_frame(
    frame: &DepthFrame,
    gravity_prior: &Vector3<f64>,
    config: &Config,
) -> Result<FrameAnalysis> {
    let fits = geometry::fit_planes_ransac(frame, &config.ransac)?;
    let planes: Vec<PlaneParams> = fits.iter().map(|f| f.plane).collect();
    let weights: Vec<f64> = fits.iter().map(|f| f.inliers.len() as f64).collect();
    let est =
        geometry::manhattan_frames_weighted(&planes, &weights, gravity_prior, &config.manhattan)?;

    let level = ManhattanFrame::from_up_and_x(&est.up, &Vector3::z())
        .or_else(|| ManhattanFrame::from_up_and_x(&est.up, &Vector3::x()))
        .expect("up vector is not parallel to both camera axes");
    let camera_height = -est.floor.offset;

    let mut walls = Vec::new();
    for (idx, plane_cam) in &est.vertical {
        let n = level.rotation * plane_cam.normal;
        let plane = PlaneParams {
            normal: Vector3::new(n.x, n.y, 0.0).normalize(),
            offset: plane_cam.offset,
        };
        let inliers = &fits[*idx].inliers;
        let pts: Vec<Point3> = inliers
            .iter()
            .filter_map(|&i| frame.points[i].map(|p| level.rotation * p))
            .collect();
        let top = pts.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max) + 0.05;
        let color = frame
            .rgb
            .as_ref()
            .and_then(|rgb| mean_hsv(inliers.iter().map(|&i| &rgb[i])))
            .unwrap_or([0.0; 3]);
        let line = Line2::new(Vector2::new(plane.normal.x, plane.normal.y), plane.offset);
        let segments = split_segments(&line, &pts, &config.ransac);
        if segments.is_empty() {
            continue;
        }
        walls.push(WallObservation {
            plane,
            segments,
            top_height: top,
            support: pts.len(),
            color,
        });
    }

    let mut pixels: Vec<PixelSample> = (0..frame.points.len())
        .map(|i| {
            let ray = level.rotation * frame.ray(i);
            PixelSample {
                azimuth: (-ray.y).atan2(ray.x),
                ray,
                point: frame.points[i].map(|p| level.rotation * p),
            }
        })
        .collect();
    pixels.sort_by(|a, b| a.azimuth.total_cmp(&b.azimuth));
    let fov = (pixels[0].azimuth, pixels[pixels.len() - 1].azimuth);

    let dominant_axis = level.rotation * est.frames[0].axis(0);
    let bbox = BoundingBoxVolume {
        axis: Vector2::new(dominant_axis.x, dominant_axis.y).normalize(),
        half_extent: config.parser.bbox_half_extent,
    };

    Ok(FrameAnalysis {
        timestamp: frame.timestamp,
        level,
        frames: est.frames,
        floor: est.floor,
        camera_height,
        walls,
        pixels,
        fov,
        bbox,
        inlier_distance: config.ransac.inlier_distance,
    })
}

/// Splits the inliers of a wall into pieces separated by gaps along its line.
fn split_segments(line: &Line2, points: &[Point3], cfg: &RansacConfig) -> Vec<ObservedSegment> {
    let mut params: Vec<f64> = points
        .iter()
        .map(|p| line.param(&Point2::new(p.x, p.y)))
        .collect();
    params.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=params.len() {
        if k == params.len() || params[k] - params[k - 1] > cfg.segment_gap {
            let support = k - start;
            if support >= cfg.min_segment_support
                && params[k - 1] - params[start] >= cfg.min_segment_length
            {
                out.push(ObservedSegment {
                    endpoints: [line.point_at(params[start]), line.point_at(params[k - 1])],
                    support,
                });
            }
            start = k;
        }
    }
    out
}

/// Sorted view angles of segment ends, of line intersections inside the
/// bounding box and of the field-of-view bounds.
pub fn generate_endpoints(
    lines: &[FloorLine],
    bbox: &BoundingBoxVolume,
    fov: (f64, f64),
    cfg: &ParserConfig,
) -> Vec<f64> {
    let inside = |a: f64| a > fov.0 && a < fov.1;
    let mut angles = vec![fov.0, fov.1];
    for l in lines {
        for seg in &l.segments {
            for p in seg {
                if p.x > 1e-9 && inside(azimuth(p)) {
                    angles.push(azimuth(p));
                }
            }
        }
    }
    let min_angle = cfg.min_intersection_angle_deg.to_radians();
    for (i, a) in lines.iter().enumerate() {
        for b in &lines[i + 1..] {
            if a.line.angle_to(&b.line) < min_angle {
                continue;
            }
            if let Some(p) = a.line.intersect(&b.line) {
                if p.x > 1e-9 && bbox.contains(&p) && inside(azimuth(&p)) {
                    angles.push(azimuth(&p));
                }
            }
        }
    }
    dedup_angles(angles, cfg.endpoint_dedup)
}

/// Pixels of a frame together with the best real label of each.
pub struct PixelView<'a> {
    pub analysis: &'a FrameAnalysis,
    /// Best label id per entry of `analysis.pixels`.
    pub best: Vec<Option<usize>>,
}

impl<'a> PixelView<'a> {
    /// Assigns every pixel with depth to the nearest real label within the
    /// inlier distance.
    pub fn new(analysis: &'a FrameAnalysis, labels: &[PlaneLabel]) -> Self {
        let real: Vec<&PlaneLabel> = labels.iter().filter(|l| l.is_real()).collect();
        let tau = analysis.inlier_distance;
        let best = analysis
            .pixels
            .iter()
            .map(|px| {
                let p = px.point?;
                let mut best: Option<(f64, usize)> = None;
                for l in &real {
                    let d = geometry::point_plane_distance(&p, &l.plane);
                    if d <= tau && best.is_none_or(|(bd, _)| d < bd) {
                        best = Some((d, l.id));
                    }
                }
                best.map(|(_, id)| id)
            })
            .collect();
        Self { analysis, best }
    }

    fn camera_height(&self) -> f64 {
        self.analysis.camera_height
    }
}

/// Whether a level-frame ray meets the wall quadrilateral of `label`.
fn ray_hits_quad(ray: &Vector3<f64>, label: &PlaneLabel, camera_height: f64) -> bool {
    let nr = label.plane.normal.dot(ray);
    if nr <= 1e-12 {
        return false;
    }
    let s = -label.plane.offset / nr;
    let z = s * ray.z;
    z >= -camera_height - 1e-9 && z <= label.top_height
}

/// `1 - labelCount / totalCount` over the pixels whose rays hit the wall
/// quadrilateral of `label` inside `interval`. Pixels without depth count in
/// the total. Virtual labels cost 0.5.
pub fn support_cost_c1(interval: &Interval, label: &PlaneLabel, view: &PixelView) -> f64 {
    if !label.is_real() {
        return 0.5;
    }
    let lo = view
        .analysis
        .pixels
        .partition_point(|p| p.azimuth < interval.start_angle);
    let hi = view
        .analysis
        .pixels
        .partition_point(|p| p.azimuth < interval.end_angle);
    let h = view.camera_height();
    let (mut total, mut count) = (0usize, 0usize);
    for k in lo..hi {
        if ray_hits_quad(&view.analysis.pixels[k].ray, label, h) {
            total += 1;
            if view.best[k] == Some(label.id) {
                count += 1;
            }
        }
    }
    if total == 0 {
        return 1.0;
    }
    1.0 - count as f64 / total as f64
}

pub fn label_cost_f(interval: &Interval, label: &PlaneLabel, view: &PixelView) -> f64 {
    interval.weight * support_cost_c1(interval, label, view)
}

/// Whether the floor lines of two labels meet (within `jump_tolerance`)
/// along the ray at `junction_angle`.
pub fn is_continuous(
    left: &PlaneLabel,
    right: &PlaneLabel,
    junction_angle: f64,
    jump_tolerance: f64,
) -> bool {
    let dir = azimuth_direction(junction_angle);
    match (left.line().ray_range(&dir), right.line().ray_range(&dir)) {
        (Some(a), Some(b)) => (a - b).abs() <= jump_tolerance,
        _ => false,
    }
}

/// Zero for equal labels or a continuous junction, `delta` otherwise.
pub fn pairwise_cost_e(
    left: &PlaneLabel,
    right: &PlaneLabel,
    junction_angle: f64,
    jump_tolerance: f64,
    delta: f64,
) -> f64 {
    if left.id == right.id || is_continuous(left, right, junction_angle, jump_tolerance) {
        0.0
    } else {
        delta
    }
}

/// Minimizes `Σ_i unary(i, x_i) + Σ_{i>0} pairwise(i, x_{i-1}, x_i)` over all
/// `n_labels^n_intervals` assignments. `pairwise(i, ..)` is the cost of the
/// junction between intervals `i - 1` and `i`. Among optimal assignments the
/// lexicographically smallest is returned, and the energy is the plain sum of
/// its terms taken left to right.
pub fn dp_label(
    n_intervals: usize,
    n_labels: usize,
    unary: impl Fn(usize, usize) -> f64,
    pairwise: impl Fn(usize, usize, usize) -> f64,
) -> Result<(Vec<usize>, f64)> {
    if n_intervals == 0 {
        return Err(Error::EmptyChain);
    }
    if n_labels == 0 {
        return Err(Error::EmptyLabelSet);
    }
    let n = n_intervals;
    let k = n_labels;
    let u: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..k).map(|l| unary(i, l)).collect())
        .collect();
    // pw[i][a * k + b]: junction between interval i-1 (label a) and i (label b).
    let pw: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if i == 0 {
                Vec::new()
            } else {
                (0..k * k).map(|ab| pairwise(i, ab / k, ab % k)).collect()
            }
        })
        .collect();

    // Cost-to-go from interval i given label l.
    let mut togo = vec![vec![0.0; k]; n];
    togo[n - 1].clone_from(&u[n - 1]);
    for i in (0..n - 1).rev() {
        for l in 0..k {
            let best = (0..k)
                .map(|r| pw[i + 1][l * k + r] + togo[i + 1][r])
                .fold(f64::INFINITY, f64::min);
            togo[i][l] = u[i][l] + best;
        }
    }

    let mut labels = Vec::with_capacity(n);
    labels.push(argmin(&togo[0]));
    for i in 1..n {
        let prev = labels[i - 1];
        let scores: Vec<f64> = (0..k).map(|r| pw[i][prev * k + r] + togo[i][r]).collect();
        labels.push(argmin(&scores));
    }

    let mut energy = 0.0;
    for i in 0..n {
        energy += u[i][labels[i]];
        if i > 0 {
            energy += pw[i][labels[i - 1] * k + labels[i]];
        }
    }
    Ok((labels, energy))
}

fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    SingleView,
    Temporal,
    /// Temporal parsing was requested but no relative pose was available.
    Fallback,
}

/// A maximal run of intervals with one label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutSegment {
    pub interval: Interval,
    pub label: usize,
    /// Points of the label's floor line at the two bounding view angles.
    /// Missing when the line is not in front of the camera there.
    pub endpoints: Option<[Point2; 2]>,
    /// Whether each end lies on a field-of-view border.
    pub clipped: [bool; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneAssociation {
    /// (previous label id, current label id).
    pub pairs: Vec<(usize, usize)>,
    /// Previous labels without a current match, expressed in the current
    /// frame with their new ids.
    pub carried_labels: Vec<PlaneLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneLayout {
    pub timestamp: f64,
    pub labels: Vec<PlaneLabel>,
    pub chain: IntervalChain,
    /// Label id per interval of `chain`.
    pub assignment: Vec<usize>,
    /// Unary and incoming pairwise cost per interval of `chain`.
    pub unary_costs: Vec<f64>,
    pub pairwise_costs: Vec<f64>,
    pub segments: Vec<LayoutSegment>,
    pub corners: Vec<geometry::Corner>,
    pub frames: Vec<ManhattanFrame>,
    pub level: ManhattanFrame,
    pub camera_height: f64,
    pub energy: f64,
    pub provenance: Provenance,
    pub association: Option<PlaneAssociation>,
    /// See [`ParserConfig::junction_slack`].
    pub junction_slack: f64,
}

impl SceneLayout {
    pub fn label(&self, id: usize) -> &PlaneLabel {
        &self.labels[id]
    }

    /// Label per interval of `chain`, re-expanded from the merged segments.
    pub fn expanded_assignment(&self) -> Vec<usize> {
        self.chain
            .intervals
            .iter()
            .map(|iv| {
                let mid = iv.mid_angle();
                self.segments
                    .iter()
                    .find(|s| s.interval.start_angle <= mid && mid <= s.interval.end_angle)
                    .map(|s| s.label)
                    .expect("segments cover the chain")
            })
            .collect()
    }

    pub fn recomputed_energy(&self) -> f64 {
        self.unary_costs
            .iter()
            .zip(&self.pairwise_costs)
            .fold(0.0, |acc, (u, p)| acc + (u + p))
    }

    /// Real-labeled layout pieces as wall segments in level coordinates.
    /// Ends that are not corners (field-of-view borders, occlusions, virtual
    /// neighbors) are pulled back to the observed extent of the wall; corner
    /// ends may overshoot it by at most `junction_slack`, which keeps grazing
    /// intersections from running off.
    pub fn wall_segments(&self) -> Vec<(WallSegment, [bool; 2])> {
        // A junction is an observed corner only when the neighboring piece
        // is a real wall ending at the same point; otherwise it is an
        // occlusion boundary or a virtual face.
        let corner_with = |end: &Point2, i: Option<usize>, k: usize| {
            i.and_then(|i| self.segments.get(i)).is_some_and(|n| {
                self.labels[n.label].is_real()
                    && n.endpoints.is_some_and(|e| (e[k] - end).norm() < 1e-6)
            })
        };
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| self.labels[s.label].is_real())
            .filter_map(|(i, s)| {
                let label = &self.labels[s.label];
                let mut ends = s.endpoints?;
                let open = [
                    s.clipped[0] || !corner_with(&ends[0], i.checked_sub(1), 1),
                    s.clipped[1] || !corner_with(&ends[1], Some(i + 1), 0),
                ];
                for k in 0..2 {
                    ends[k] = if open[k] {
                        label.clamp_to_extent(&ends[k])
                    } else {
                        label.clamp_near_extent(&ends[k], self.junction_slack)
                    };
                }
                if (ends[1] - ends[0]).norm() < 1e-6 {
                    return None;
                }
                Some((
                    WallSegment {
                        plane: label.plane,
                        endpoints: ends,
                        mean_color: label.color,
                        support_count: label.support,
                    },
                    s.clipped,
                ))
            })
            .collect()
    }
}

/// Real labels from the frame's walls followed by the four bounding-box faces.
pub fn single_view_labels(analysis: &FrameAnalysis, cfg: &ParserConfig) -> Vec<PlaneLabel> {
    let mut labels: Vec<PlaneLabel> = analysis
        .walls
        .iter()
        .enumerate()
        .map(|(id, w)| PlaneLabel {
            id,
            plane: w.plane,
            kind: LabelKind::Real,
            top_height: w.top_height,
            carried_age: 0,
            support: w.support,
            color: w.color,
            extent: w.extent(),
        })
        .collect();
    append_virtual_labels(&mut labels, &analysis.bbox, cfg);
    labels
}

pub(crate) fn append_virtual_labels(
    labels: &mut Vec<PlaneLabel>,
    bbox: &BoundingBoxVolume,
    cfg: &ParserConfig,
) {
    for face in bbox.faces() {
        labels.push(PlaneLabel {
            id: labels.len(),
            plane: face,
            kind: LabelKind::Virtual,
            top_height: cfg.default_wall_height,
            carried_age: 0,
            support: 0,
            color: [0.0; 3],
            extent: None,
        });
    }
}

pub fn parse_single_view(analysis: &FrameAnalysis, cfg: &ParserConfig) -> Result<SceneLayout> {
    let labels = single_view_labels(analysis, cfg);
    let endpoints = generate_endpoints(&analysis.floor_lines(), &analysis.bbox, analysis.fov, cfg);
    let chain = IntervalChain::from_endpoints(endpoints)?;
    let view = PixelView::new(analysis, &labels);
    let unary = |i: usize, l: usize| label_cost_f(&chain.intervals[i], &labels[l], &view);
    let pairwise = |i: usize, a: usize, b: usize| {
        pairwise_cost_e(
            &labels[a],
            &labels[b],
            chain.endpoints[i],
            cfg.jump_tolerance,
            cfg.discontinuity_cost,
        )
    };
    solve_layout(
        analysis,
        &labels,
        &chain,
        unary,
        pairwise,
        cfg,
        Provenance::SingleView,
        None,
    )
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_layout(
    analysis: &FrameAnalysis,
    labels: &[PlaneLabel],
    chain: &IntervalChain,
    unary: impl Fn(usize, usize) -> f64,
    pairwise: impl Fn(usize, usize, usize) -> f64,
    cfg: &ParserConfig,
    provenance: Provenance,
    association: Option<PlaneAssociation>,
) -> Result<SceneLayout> {
    let (assignment, energy) = dp_label(chain.len(), labels.len(), &unary, &pairwise)?;
    let unary_costs: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(i, &l)| unary(i, l))
        .collect();
    let pairwise_costs: Vec<f64> = (0..assignment.len())
        .map(|i| {
            if i == 0 {
                0.0
            } else {
                pairwise(i, assignment[i - 1], assignment[i])
            }
        })
        .collect();
    let segments = merge_intervals(chain, &assignment, labels);
    let corners = layout_corners(&segments, labels, cfg.jump_tolerance);
    Ok(SceneLayout {
        timestamp: analysis.timestamp,
        labels: labels.to_vec(),
        chain: chain.clone(),
        assignment,
        unary_costs,
        pairwise_costs,
        segments,
        corners,
        frames: analysis.frames.clone(),
        level: analysis.level,
        camera_height: analysis.camera_height,
        energy,
        provenance,
        association,
        junction_slack: cfg.junction_slack,
    })
}

/// Merges runs of equally labeled intervals.
pub fn merge_intervals(
    chain: &IntervalChain,
    assignment: &[usize],
    labels: &[PlaneLabel],
) -> Vec<LayoutSegment> {
    let (fov_min, fov_max) = chain.fov();
    let total = fov_max - fov_min;
    let mut out: Vec<LayoutSegment> = Vec::new();
    for (iv, &l) in chain.intervals.iter().zip(assignment) {
        match out.last_mut() {
            Some(seg) if seg.label == l => seg.interval.end_angle = iv.end_angle,
            _ => out.push(LayoutSegment {
                interval: *iv,
                label: l,
                endpoints: None,
                clipped: [false; 2],
            }),
        }
    }
    for seg in &mut out {
        seg.interval.weight = (seg.interval.end_angle - seg.interval.start_angle) / total;
        let line = labels[seg.label].line();
        let a = line.ray_range(&azimuth_direction(seg.interval.start_angle));
        let b = line.ray_range(&azimuth_direction(seg.interval.end_angle));
        seg.endpoints = match (a, b) {
            (Some(a), Some(b)) => Some([
                azimuth_direction(seg.interval.start_angle) * a,
                azimuth_direction(seg.interval.end_angle) * b,
            ]),
            _ => None,
        };
        seg.clipped = [
            seg.interval.start_angle <= fov_min,
            seg.interval.end_angle >= fov_max,
        ];
    }
    out
}

/// Corners at transitions between two real walls that meet.
fn layout_corners(
    segments: &[LayoutSegment],
    labels: &[PlaneLabel],
    jump_tolerance: f64,
) -> Vec<geometry::Corner> {
    let mut corners = Vec::new();
    for pair in segments.windows(2) {
        let (a, b) = (&labels[pair[0].label], &labels[pair[1].label]);
        if !a.is_real() || !b.is_real() {
            continue;
        }
        if !is_continuous(a, b, pair[1].interval.start_angle, jump_tolerance) {
            continue;
        }
        if let Some(p) = a.line().intersect(&b.line()) {
            corners.push(geometry::Corner {
                position: p,
                wall_a: a.id,
                wall_b: b.id,
            });
        }
    }
    corners
}

/// Color distance helper re-exported for label comparisons.
pub fn label_color_distance(a: &PlaneLabel, b: &PlaneLabel) -> f64 {
    hsv_distance(&a.color, &b.color)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use nalgebra::Matrix3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn real_label(id: usize, normal: [f64; 2], offset: f64) -> PlaneLabel {
        PlaneLabel {
            id,
            plane: PlaneParams::new(Vector3::new(normal[0], normal[1], 0.0), offset),
            kind: LabelKind::Real,
            top_height: 2.0,
            carried_age: 0,
            support: 100,
            color: [0.0; 3],
            extent: None,
        }
    }

    fn virtual_label(id: usize) -> PlaneLabel {
        PlaneLabel {
            kind: LabelKind::Virtual,
            ..real_label(id, [1.0, 0.0], -6.0)
        }
    }

    pub(crate) fn brute_force(
        n: usize,
        k: usize,
        unary: &dyn Fn(usize, usize) -> f64,
        pairwise: &dyn Fn(usize, usize, usize) -> f64,
    ) -> (Vec<usize>, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for code in 0..k.pow(n as u32) {
            let mut x = Vec::with_capacity(n);
            let mut c = code;
            for _ in 0..n {
                x.push(c % k);
                c /= k;
            }
            x.reverse();
            let mut e = 0.0;
            for i in 0..n {
                e += unary(i, x[i]);
                if i > 0 {
                    e += pairwise(i, x[i - 1], x[i]);
                }
            }
            // Enumeration runs in lexicographic order, so strict improvement
            // keeps the lexicographically smallest optimum.
            if best.as_ref().is_none_or(|(_, be)| e < *be) {
                best = Some((x, e));
            }
        }
        best.unwrap()
    }

    #[test]
    fn dp_single_interval_picks_cheapest() {
        let costs = [0.4, 0.1, 0.7];
        let (x, e) = dp_label(1, 3, |_, l| costs[l], |_, _, _| 0.0).unwrap();
        assert_eq!(x, vec![1]);
        assert_eq!(e, 0.1);
    }

    #[test]
    fn dp_errors_on_empty_inputs() {
        assert!(matches!(
            dp_label(0, 2, |_, _| 0.0, |_, _, _| 0.0),
            Err(Error::EmptyChain)
        ));
        assert!(matches!(
            dp_label(2, 0, |_, _| 0.0, |_, _, _| 0.0),
            Err(Error::EmptyLabelSet)
        ));
    }

    #[test]
    fn dp_prefers_uniform_labeling_when_switching_is_expensive() {
        let u = [[0.2, 0.3], [0.35, 0.3], [0.2, 0.25]];
        let unary = |i: usize, l: usize| u[i][l];
        let pairwise = |_: usize, a: usize, b: usize| if a == b { 0.0 } else { 0.2 };
        let (x, e) = dp_label(3, 2, unary, pairwise).unwrap();
        let (bx, be) = brute_force(3, 2, &unary, &pairwise);
        assert_eq!(x, vec![0, 0, 0]);
        assert_eq!(x, bx);
        assert_eq!(e, be);
    }

    #[test]
    fn dp_ties_resolve_to_lowest_ids() {
        let (x, e) = dp_label(4, 3, |_, _| 0.25, |_, _, _| 0.0).unwrap();
        assert_eq!(x, vec![0; 4]);
        assert_eq!(e, 1.0);
    }

    #[test]
    fn dp_matches_brute_force_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let n = rng.random_range(1..=6);
            let k = rng.random_range(1..=4);
            let u: Vec<f64> = (0..n * k).map(|_| rng.random()).collect();
            let p: Vec<f64> = (0..n * k * k).map(|_| rng.random()).collect();
            let unary = |i: usize, l: usize| u[i * k + l];
            let pairwise = |i: usize, a: usize, b: usize| p[(i * k + a) * k + b];
            let (x, e) = dp_label(n, k, unary, pairwise).unwrap();
            let (bx, be) = brute_force(n, k, &unary, &pairwise);
            assert_eq!(e, be);
            assert_eq!(x, bx);
        }
    }

    proptest! {
        #[test]
        fn dp_energy_is_sum_of_terms(
            n in 1usize..7,
            k in 1usize..5,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..n * k).map(|_| rng.random()).collect();
            let p: Vec<f64> = (0..n * k * k).map(|_| rng.random()).collect();
            let unary = |i: usize, l: usize| u[i * k + l];
            let pairwise = |i: usize, a: usize, b: usize| p[(i * k + a) * k + b];
            let (x, e) = dp_label(n, k, unary, pairwise).unwrap();
            let mut sum = 0.0;
            for i in 0..n {
                sum += unary(i, x[i]);
                if i > 0 { sum += pairwise(i, x[i - 1], x[i]); }
            }
            prop_assert!(e >= 0.0);
            prop_assert!((e - sum).abs() <= 1e-12);
        }
    }

    #[test]
    fn chain_weights_partition_the_fov() {
        let chain = IntervalChain::from_endpoints(vec![-0.5, -0.1, 0.2, 0.5]).unwrap();
        let total: f64 = chain.intervals.iter().map(|i| i.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for iv in &chain.intervals {
            assert!(((iv.end_angle - iv.start_angle) / 1.0 - iv.weight).abs() < 1e-12);
        }
    }

    fn bbox() -> BoundingBoxVolume {
        BoundingBoxVolume {
            axis: Vector2::new(1.0, 0.0),
            half_extent: 6.0,
        }
    }

    #[test]
    fn endpoints_without_walls_are_fov_bounds() {
        let e = generate_endpoints(&[], &bbox(), (-0.5, 0.5), &ParserConfig::default());
        assert_eq!(e, vec![-0.5, 0.5]);
    }

    #[test]
    fn endpoints_include_segment_ends() {
        let line = Line2::new(Vector2::new(1.0, 0.0), -3.0);
        let fl = FloorLine {
            line,
            segments: vec![[Point2::new(3.0, 0.5), Point2::new(3.0, -0.5)]],
        };
        let e = generate_endpoints(&[fl], &bbox(), (-0.5, 0.5), &ParserConfig::default());
        assert_eq!(e.len(), 4);
        assert!((e[1] - azimuth(&Point2::new(3.0, 0.5))).abs() < 1e-12);
    }

    #[test]
    fn corner_intersection_appears_once() {
        // Front wall x = 3 and right wall y = -1 meeting at (3, -1).
        let front = FloorLine {
            line: Line2::new(Vector2::new(1.0, 0.0), -3.0),
            segments: vec![[Point2::new(3.0, 1.5), Point2::new(3.0, -1.0)]],
        };
        let right = FloorLine {
            line: Line2::new(Vector2::new(0.0, -1.0), -1.0),
            segments: vec![[Point2::new(3.0, -1.0), Point2::new(2.0, -1.0)]],
        };
        let e = generate_endpoints(
            &[front, right],
            &bbox(),
            (-0.6, 0.6),
            &ParserConfig::default(),
        );
        let corner = azimuth(&Point2::new(3.0, -1.0));
        assert_eq!(e.iter().filter(|a| (**a - corner).abs() < 1e-9).count(), 1);
        assert!(e.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn pairwise_costs() {
        let front = real_label(0, [1.0, 0.0], -3.0);
        let right = real_label(1, [0.0, -1.0], -1.0);
        let corner_angle = azimuth(&Point2::new(3.0, -1.0));
        assert_eq!(pairwise_cost_e(&front, &front, 0.1, 0.1, 0.03), 0.0);
        assert_eq!(
            pairwise_cost_e(&front, &right, corner_angle, 0.1, 0.03),
            0.0
        );
        let near = real_label(0, [1.0, 0.0], -2.0);
        let far = real_label(1, [1.0, 0.0], -4.0);
        assert_eq!(pairwise_cost_e(&near, &far, 0.0, 0.1, 0.03), 0.03);
    }

    fn synthetic_view(
        labels: &[PlaneLabel],
        points: Vec<(Vector3<f64>, Option<Point3>)>,
    ) -> FrameAnalysis {
        let mut pixels: Vec<PixelSample> = points
            .into_iter()
            .map(|(ray, point)| PixelSample {
                azimuth: (-ray.y).atan2(ray.x),
                ray,
                point,
            })
            .collect();
        pixels.sort_by(|a, b| a.azimuth.total_cmp(&b.azimuth));
        let _ = labels;
        FrameAnalysis {
            timestamp: 0.0,
            level: ManhattanFrame {
                rotation: Matrix3::identity(),
                up_axis_index: 2,
            },
            frames: vec![],
            floor: PlaneParams::new(Vector3::new(0.0, 0.0, -1.0), -1.0),
            camera_height: 1.0,
            walls: vec![],
            fov: (pixels[0].azimuth, pixels[pixels.len() - 1].azimuth),
            pixels,
            bbox: bbox(),
            inlier_distance: 0.02,
        }
    }

    #[test]
    fn c1_counts_best_labeled_fraction() {
        let wall = real_label(0, [1.0, 0.0], -2.0);
        let pts: Vec<(Vector3<f64>, Option<Point3>)> = (0..1000)
            .map(|i| {
                let y = -0.5 + i as f64 / 1000.0;
                let ray = Vector3::new(1.0, y, 0.1);
                let hit = ray * 2.0;
                // 800 pixels lie on the wall, 200 are 0.5 m behind it.
                let p = if i % 5 == 0 { ray * 2.5 } else { hit };
                (ray, Some(p))
            })
            .collect();
        let analysis = synthetic_view(&[wall.clone()], pts);
        let labels = vec![wall.clone(), virtual_label(1)];
        let view = PixelView::new(&analysis, &labels);
        let iv = Interval {
            start_angle: analysis.fov.0,
            end_angle: analysis.fov.1 + 1e-9,
            weight: 0.25,
        };
        assert!((support_cost_c1(&iv, &wall, &view) - 0.2).abs() < 1e-12);
        assert!((label_cost_f(&iv, &wall, &view) - 0.05).abs() < 1e-12);
        assert_eq!(support_cost_c1(&iv, &labels[1], &view), 0.5);
        let full = Interval { weight: 1.0, ..iv };
        assert_eq!(label_cost_f(&full, &labels[1], &view), 0.5);
    }

    #[test]
    fn c1_is_zero_when_all_pixels_support_the_label() {
        let wall = real_label(0, [1.0, 0.0], -2.0);
        let pts = (0..1000)
            .map(|i| {
                let ray = Vector3::new(1.0, -0.5 + i as f64 / 1000.0, 0.0);
                (ray, Some(ray * 2.0))
            })
            .collect();
        let analysis = synthetic_view(&[wall.clone()], pts);
        let labels = vec![wall.clone()];
        let view = PixelView::new(&analysis, &labels);
        let iv = Interval {
            start_angle: -1.0,
            end_angle: 1.0,
            weight: 1.0,
        };
        assert_eq!(support_cost_c1(&iv, &wall, &view), 0.0);
    }

    #[test]
    fn merging_collapses_equal_neighbours() {
        let chain = IntervalChain::from_endpoints(vec![-0.4, -0.2, 0.0, 0.2, 0.4]).unwrap();
        let labels = vec![
            real_label(0, [1.0, 0.0], -3.0),
            real_label(1, [0.0, 1.0], -1.0),
        ];
        let segs = merge_intervals(&chain, &[0, 0, 1, 1], &labels);
        assert_eq!(segs.len(), 2);
        assert!(segs.windows(2).all(|w| w[0].label != w[1].label));
        assert!(segs[0].clipped[0] && !segs[0].clipped[1]);
        assert!((segs.iter().map(|s| s.interval.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
