//! Plane fitting, gravity-aligned frames and floor-plane line geometry.
//!
//! Conventions used throughout the crate:
//!
//! * Camera coordinates follow the optical convention (x right, y down,
//!   z forward).
//! * A plane `{X : n·X + d = 0}` is stored with `d <= 0`, so its normal points
//!   away from the camera origin and `-d` is the camera-to-plane distance.
//! * A [`ManhattanFrame`] maps camera coordinates into a gravity-aligned frame
//!   whose third axis points up. Floor-plan (2D) coordinates are the first two
//!   components in such a frame.

use nalgebra::{Matrix3, Rotation3, SymmetricEigen, Vector2, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ManhattanConfig, RansacConfig};
use crate::error::{Error, Result};

pub type Point3 = Vector3<f64>;
pub type Point2 = Vector2<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneParams {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl PlaneParams {
    /// Normalizes `normal` (and scales `offset` with it).
    pub fn new(normal: Vector3<f64>, offset: f64) -> Self {
        let norm = normal.norm();
        Self {
            normal: normal / norm,
            offset: offset / norm,
        }
    }

    pub fn through_points(a: &Point3, b: &Point3, c: &Point3) -> Option<Self> {
        let normal = (b - a).cross(&(c - a));
        let norm = normal.norm();
        if norm < 1e-12 {
            return None;
        }
        let normal = normal / norm;
        Some(Self {
            normal,
            offset: -normal.dot(a),
        })
    }

    pub fn signed_distance(&self, p: &Point3) -> f64 {
        self.normal.dot(p) + self.offset
    }

    /// Re-expresses the plane so that `offset <= 0`.
    pub fn facing_away(self) -> Self {
        if self.offset > 0.0 {
            self.flipped()
        } else {
            self
        }
    }

    pub fn flipped(self) -> Self {
        Self {
            normal: -self.normal,
            offset: -self.offset,
        }
    }

    /// Plane given in frame A, returned in frame B where `X_a = R X_b + t`.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        Self {
            normal: rotation.transpose() * self.normal,
            offset: self.normal.dot(translation) + self.offset,
        }
        .facing_away()
    }

    /// Angle between the normals, in radians, ignoring orientation.
    pub fn axis_angle_to(&self, other: &PlaneParams) -> f64 {
        self.normal.dot(&other.normal).abs().min(1.0).acos()
    }
}

/// Unsigned point-to-plane distance.
pub fn point_plane_distance(p: &Point3, plane: &PlaneParams) -> f64 {
    plane.signed_distance(p).abs()
}

/// Total least-squares plane through the points.
pub fn fit_plane_least_squares<'a>(
    points: impl IntoIterator<Item = &'a Point3>,
) -> Option<PlaneParams> {
    let pts: Vec<&Point3> = points.into_iter().collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let centroid = pts.iter().fold(Vector3::zeros(), |acc, p| acc + *p) / n;
    let mut cov = Matrix3::zeros();
    for p in &pts {
        let q = *p - centroid;
        cov += q * q.transpose();
    }
    let eigen = SymmetricEigen::new(cov);
    let (imin, _) = eigen
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let normal: Vector3<f64> = eigen.eigenvectors.column(imin).into_owned();
    let normal = normal.normalize();
    Some(PlaneParams {
        normal,
        offset: -normal.dot(&centroid),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    /// Pinhole intrinsics for a horizontal field of view, square pixels.
    pub fn from_hfov(width: usize, height: usize, hfov_deg: f64) -> Self {
        let f = (width as f64 / 2.0) / (hfov_deg.to_radians() / 2.0).tan();
        Self {
            fx: f,
            fy: f,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// Viewing ray through pixel `(u, v)` with unit depth.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, p: &Point3) -> Option<(f64, f64)> {
        (p.z > 1e-9).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// One RGB-D image as a per-pixel point cloud in camera coordinates.
#[derive(Clone, Debug)]
pub struct DepthFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major; `None` where the sensor returned no depth.
    pub points: Vec<Option<Point3>>,
    /// Per-pixel (hue, saturation, value), each channel in 0..=255.
    pub rgb: Option<Vec<[f64; 3]>>,
    pub intrinsics: Intrinsics,
    pub timestamp: f64,
}

impl DepthFrame {
    pub fn pixel(&self, index: usize) -> (usize, usize) {
        (index % self.width, index / self.width)
    }

    pub fn ray(&self, index: usize) -> Vector3<f64> {
        let (u, v) = self.pixel(index);
        self.intrinsics.ray(u as f64, v as f64)
    }

    pub fn valid_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_some()).count()
    }
}

/// Gravity-aligned frame. Row `k` of `rotation` is axis `k` expressed in
/// camera coordinates, so `rotation * X_cam` gives frame coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManhattanFrame {
    pub rotation: Matrix3<f64>,
    pub up_axis_index: usize,
}

impl ManhattanFrame {
    /// Frame with `up` as third axis and `x_hint` (projected to the horizontal)
    /// as first axis. Both are camera-frame vectors.
    pub fn from_up_and_x(up: &Vector3<f64>, x_hint: &Vector3<f64>) -> Option<Self> {
        let up = up.normalize();
        let x = x_hint - up * up.dot(x_hint);
        if x.norm() < 1e-9 {
            return None;
        }
        let x = x.normalize();
        let y = up.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), up.transpose()]);
        Some(Self {
            rotation,
            up_axis_index: 2,
        })
    }

    pub fn axis(&self, k: usize) -> Vector3<f64> {
        self.rotation.row(k).transpose()
    }

    pub fn up(&self) -> Vector3<f64> {
        self.axis(self.up_axis_index)
    }

    /// Same up axis, horizontal axes rotated by `angle` about it.
    pub fn yawed(&self, angle: f64) -> Self {
        let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), angle);
        Self {
            rotation: rz.matrix() * self.rotation,
            up_axis_index: self.up_axis_index,
        }
    }

    pub fn to_frame(&self, p: &Point3) -> Point3 {
        self.rotation * p
    }

    /// Horizontal (floor-plan) coordinates of a camera-frame point.
    pub fn floor_point(&self, p: &Point3) -> Point2 {
        let q = self.rotation * p;
        Point2::new(q.x, q.y)
    }

    /// Camera-frame point at floor-plan coordinates `p` and height `z`
    /// relative to the camera.
    pub fn from_floor_point(&self, p: &Point2, z: f64) -> Point3 {
        self.rotation.transpose() * Vector3::new(p.x, p.y, z)
    }

    /// Horizontal direction of a camera-frame vector as an angle in this frame.
    pub fn yaw_of(&self, v: &Vector3<f64>) -> f64 {
        let q = self.rotation * v;
        q.y.atan2(q.x)
    }
}

/// Floor-plan line `{p : normal·p + offset = 0}` with a unit normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line2 {
    pub normal: Vector2<f64>,
    pub offset: f64,
}

impl Line2 {
    pub fn new(normal: Vector2<f64>, offset: f64) -> Self {
        let n = normal.norm();
        Self {
            normal: normal / n,
            offset: offset / n,
        }
    }

    pub fn through(a: &Point2, b: &Point2) -> Option<Self> {
        let d = b - a;
        if d.norm() < 1e-12 {
            return None;
        }
        let normal = Vector2::new(-d.y, d.x).normalize();
        Some(Self {
            normal,
            offset: -normal.dot(a),
        })
    }

    /// Floor line of a vertical plane given in camera coordinates.
    pub fn from_vertical_plane(plane: &PlaneParams, frame: &ManhattanFrame) -> Self {
        let n = frame.rotation * plane.normal;
        Line2::new(Vector2::new(n.x, n.y), plane.offset)
    }

    /// Sign-canonical form: `offset < 0`, or for lines through the origin a
    /// normal with positive leading component.
    pub fn canonical(self) -> Self {
        let flip = if self.offset.abs() > 1e-12 {
            self.offset > 0.0
        } else if self.normal.x.abs() > 1e-12 {
            self.normal.x < 0.0
        } else {
            self.normal.y < 0.0
        };
        if flip {
            Self {
                normal: -self.normal,
                offset: -self.offset,
            }
        } else {
            self
        }
    }

    pub fn signed_distance(&self, p: &Point2) -> f64 {
        self.normal.dot(p) + self.offset
    }

    pub fn direction(&self) -> Vector2<f64> {
        Vector2::new(-self.normal.y, self.normal.x)
    }

    pub fn param(&self, p: &Point2) -> f64 {
        self.direction().dot(p)
    }

    pub fn point_at(&self, s: f64) -> Point2 {
        -self.normal * self.offset + self.direction() * s
    }

    pub fn project(&self, p: &Point2) -> Point2 {
        p - self.normal * self.signed_distance(p)
    }

    pub fn intersect(&self, other: &Line2) -> Option<Point2> {
        let det = self.normal.x * other.normal.y - self.normal.y * other.normal.x;
        if det.abs() < 1e-12 {
            return None;
        }
        let x = (-self.offset * other.normal.y + other.offset * self.normal.y) / det;
        let y = (-self.normal.x * other.offset + other.normal.x * self.offset) / det;
        Some(Point2::new(x, y))
    }

    /// Distance from the origin along the unit direction `dir`, if the ray
    /// hits the line in front of the origin.
    pub fn ray_range(&self, dir: &Vector2<f64>) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-12 {
            return None;
        }
        let s = -self.offset / denom;
        (s > 0.0).then_some(s)
    }

    /// Acute angle between the two lines, radians.
    pub fn angle_to(&self, other: &Line2) -> f64 {
        self.normal.dot(&other.normal).abs().min(1.0).acos()
    }
}

/// Rigid floor-plan motion `p -> R(rotation) p + translation`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform2 {
    pub rotation: f64,
    pub translation: Vector2<f64>,
}

impl Transform2 {
    pub fn identity() -> Self {
        Self {
            rotation: 0.0,
            translation: Vector2::zeros(),
        }
    }

    pub fn rotate(&self, v: &Vector2<f64>) -> Vector2<f64> {
        let (s, c) = self.rotation.sin_cos();
        Vector2::new(c * v.x - s * v.y, s * v.x + c * v.y)
    }

    pub fn apply(&self, p: &Point2) -> Point2 {
        self.rotate(p) + self.translation
    }

    pub fn inverse(&self) -> Self {
        let inv = Transform2 {
            rotation: -self.rotation,
            translation: Vector2::zeros(),
        };
        Self {
            rotation: -self.rotation,
            translation: -inv.rotate(&self.translation),
        }
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Transform2) -> Self {
        Self {
            rotation: self.rotation + first.rotation,
            translation: self.rotate(&first.translation) + self.translation,
        }
    }

    pub fn apply_line(&self, line: &Line2) -> Line2 {
        let n = self.rotate(&line.normal);
        Line2 {
            normal: n,
            offset: line.offset - n.dot(&self.translation),
        }
    }

    /// Moves a vertical plane given in level coordinates, keeping `offset <= 0`.
    pub fn apply_vertical_plane(&self, plane: &PlaneParams) -> PlaneParams {
        let l = self.apply_line(&Line2 {
            normal: Vector2::new(plane.normal.x, plane.normal.y),
            offset: plane.offset,
        });
        PlaneParams {
            normal: Vector3::new(l.normal.x, l.normal.y, 0.0),
            offset: l.offset,
        }
        .facing_away()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSegment {
    pub plane: PlaneParams,
    pub endpoints: [Point2; 2],
    pub mean_color: [f64; 3],
    pub support_count: usize,
}

impl WallSegment {
    pub fn length(&self) -> f64 {
        (self.endpoints[1] - self.endpoints[0]).norm()
    }

    /// Floor line of the wall in the coordinates its endpoints are given in.
    pub fn line(&self) -> Line2 {
        Line2::through(&self.endpoints[0], &self.endpoints[1]).unwrap_or_else(|| {
            Line2::new(
                Vector2::new(self.plane.normal.x, self.plane.normal.y),
                self.plane.offset,
            )
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corner {
    pub position: Point2,
    pub wall_a: usize,
    pub wall_b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlaneFit {
    pub plane: PlaneParams,
    pub inliers: Vec<usize>,
}

/// Sequential RANSAC: extracts planes one at a time, each refined by least
/// squares and removed from the pool before the next search.
pub fn fit_planes_ransac(frame: &DepthFrame, cfg: &RansacConfig) -> Result<Vec<PlaneFit>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pool: Vec<usize> = (0..frame.points.len())
        .filter(|&i| frame.points[i].is_some())
        .collect();
    let point = |i: usize| frame.points[i].expect("pool holds valid points only");
    let mut fits: Vec<PlaneFit> = Vec::new();

    while fits.len() < cfg.max_planes && pool.len() >= cfg.min_inliers.max(3) {
        let sample: Vec<usize> = if pool.len() > cfg.score_sample {
            let mut idx = sample(&mut rng, pool.len(), cfg.score_sample).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| pool[k]).collect()
        } else {
            pool.clone()
        };
        let needed = cfg.min_inliers as f64 * sample.len() as f64 / pool.len() as f64;

        let mut best: Option<(usize, PlaneParams)> = None;
        let mut budget = cfg.max_iterations;
        let mut iter = 0;
        while iter < budget {
            iter += 1;
            let a = point(sample[rng.random_range(0..sample.len())]);
            let b = point(sample[rng.random_range(0..sample.len())]);
            let c = point(sample[rng.random_range(0..sample.len())]);
            let Some(hyp) = PlaneParams::through_points(&a, &b, &c) else {
                continue;
            };
            let count = sample
                .iter()
                .filter(|&&i| point_plane_distance(&point(i), &hyp) <= cfg.inlier_distance)
                .count();
            if best.as_ref().is_none_or(|(c, _)| count > *c) {
                best = Some((count, hyp));
                let ratio = count as f64 / sample.len() as f64;
                budget = budget.min(adaptive_iterations(ratio).max(50));
            }
        }
        let Some((count, hyp)) = best else { break };
        if (count as f64) < needed * 0.8 {
            break;
        }

        let plane = refine_plane(&pool, &point, hyp, cfg.inlier_distance);
        let inliers: Vec<usize> = pool
            .iter()
            .copied()
            .filter(|&i| point_plane_distance(&point(i), &plane) <= cfg.inlier_distance)
            .collect();
        if inliers.len() < cfg.min_inliers {
            break;
        }
        let taken: std::collections::HashSet<usize> = inliers.iter().copied().collect();
        pool.retain(|i| !taken.contains(i));

        // A near-duplicate of an accepted plane is the noise tail of that plane.
        if let Some(existing) = fits.iter_mut().find(|f| {
            f.plane.axis_angle_to(&plane) < 5f64.to_radians()
                && (f.plane.signed_distance(&(-plane.normal * plane.offset))).abs()
                    < 3.0 * cfg.inlier_distance
        }) {
            existing.inliers.extend(inliers);
            existing.inliers.sort_unstable();
            continue;
        }
        fits.push(PlaneFit {
            plane: plane.facing_away(),
            inliers,
        });
    }

    polish_fits(&mut fits, &point, cfg.inlier_distance);
    fits.retain(|f| f.inliers.len() >= cfg.min_inliers);
    if fits.is_empty() {
        return Err(Error::NoPlanesFound {
            min_inliers: cfg.min_inliers,
        });
    }
    fits.sort_by(|a, b| b.inliers.len().cmp(&a.inliers.len()));
    Ok(fits)
}

/// Hands every inlier to its nearest plane and refits each plane on its own
/// points. A plane extracted early keeps the points of later planes that lie
/// within the inlier band near a shared edge; this removes their pull.
fn polish_fits(fits: &mut [PlaneFit], point: &impl Fn(usize) -> Point3, tau: f64) {
    let planes: Vec<PlaneParams> = fits.iter().map(|f| f.plane).collect();
    let mut owned: Vec<Vec<usize>> = vec![Vec::new(); fits.len()];
    for fit in fits.iter() {
        for &i in &fit.inliers {
            let p = point(i);
            let nearest = (0..planes.len())
                .min_by(|&a, &b| {
                    point_plane_distance(&p, &planes[a])
                        .total_cmp(&point_plane_distance(&p, &planes[b]))
                })
                .expect("at least one plane");
            owned[nearest].push(i);
        }
    }
    for (fit, mut inliers) in fits.iter_mut().zip(owned) {
        inliers.sort_unstable();
        let plane = refine_plane(&inliers, point, fit.plane, tau);
        // Keep the orientation of the extracted plane.
        fit.plane = if plane.normal.dot(&fit.plane.normal) < 0.0 {
            PlaneParams {
                normal: -plane.normal,
                offset: -plane.offset,
            }
        } else {
            plane
        };
        fit.inliers = inliers;
    }
}

fn adaptive_iterations(inlier_ratio: f64) -> usize {
    let w3 = inlier_ratio.powi(3);
    if w3 >= 1.0 - 1e-12 {
        return 1;
    }
    if w3 <= 1e-12 {
        return usize::MAX;
    }
    ((1.0f64 - 0.999).ln() / (1.0 - w3).ln()).ceil() as usize
}

/// Least-squares refinement on a shrinking inlier band. The band is set from
/// the median residual so that points of adjacent planes near the shared edge
/// do not tilt the fit.
fn refine_plane(
    pool: &[usize],
    point: &impl Fn(usize) -> Point3,
    hyp: PlaneParams,
    tau: f64,
) -> PlaneParams {
    let mut plane = hyp;
    for _ in 0..3 {
        let mut residuals: Vec<f64> = pool
            .iter()
            .map(|&i| point_plane_distance(&point(i), &plane))
            .filter(|&r| r <= tau)
            .collect();
        if residuals.len() < 3 {
            break;
        }
        let mid = residuals.len() / 2;
        let (_, median, _) = residuals.select_nth_unstable_by(mid, f64::total_cmp);
        let band = (3.0 * 1.4826 * *median).clamp(1e-7, tau);
        let support: Vec<Point3> = pool
            .iter()
            .map(|&i| point(i))
            .filter(|p| point_plane_distance(p, &plane) <= band)
            .collect();
        match fit_plane_least_squares(support.iter()) {
            Some(p) => plane = p,
            None => break,
        }
    }
    plane
}

/// Floor plane, up vector and frame memberships found by
/// [`manhattan_frames_weighted`].
#[derive(Clone, Debug)]
pub struct ManhattanEstimate {
    pub floor_index: usize,
    pub floor: PlaneParams,
    pub up: Vector3<f64>,
    pub frames: Vec<ManhattanFrame>,
    /// Indices of the vertical planes, each refit to be exactly vertical.
    pub vertical: Vec<(usize, PlaneParams)>,
    /// Frame index for every entry of `vertical`; `None` for planes whose
    /// direction group was too weakly supported to form a frame.
    pub membership: Vec<Option<usize>>,
}

/// Weak-Manhattan frames from planes sorted by decreasing support. The
/// camera's optical axis picks the representative among the four yaw-equivalent
/// frames.
pub fn estimate_manhattan_frames(
    planes: &[PlaneParams],
    gravity_prior: &Vector3<f64>,
    cfg: &ManhattanConfig,
) -> Result<Vec<ManhattanFrame>> {
    let weights = vec![1.0; planes.len()];
    manhattan_frames_weighted(planes, &weights, gravity_prior, cfg).map(|e| e.frames)
}

pub fn manhattan_frames_weighted(
    planes: &[PlaneParams],
    weights: &[f64],
    gravity_prior: &Vector3<f64>,
    cfg: &ManhattanConfig,
) -> Result<ManhattanEstimate> {
    let g = gravity_prior.normalize();
    let floor_cos = cfg.floor_max_angle_deg.to_radians().cos();
    let floor_index = planes
        .iter()
        .position(|p| p.normal.dot(&g).abs() >= floor_cos)
        .ok_or(Error::NoFloorFound {
            max_angle_deg: cfg.floor_max_angle_deg,
        })?;
    let floor = planes[floor_index].facing_away();
    let up = -floor.normal;

    let vertical_sin = cfg.vertical_tolerance_deg.to_radians().sin();
    let mut vertical = Vec::new();
    for (i, p) in planes.iter().enumerate() {
        if i == floor_index || p.normal.dot(&up).abs() > vertical_sin {
            continue;
        }
        let horizontal = p.normal - up * p.normal.dot(&up);
        let scale = horizontal.norm();
        let refit = PlaneParams {
            normal: horizontal / scale,
            offset: p.offset / scale,
        }
        .facing_away();
        vertical.push((i, refit));
    }

    // Reference horizontal axis: the camera's optical axis projected.
    let forward = Vector3::z();
    let base = ManhattanFrame::from_up_and_x(&up, &forward)
        .or_else(|| ManhattanFrame::from_up_and_x(&up, &Vector3::x()))
        .expect("up vector is not parallel to both camera axes");

    let quarter = std::f64::consts::FRAC_PI_2;
    let tol = cfg.perpendicular_tolerance_deg.to_radians();
    // Groups keyed by a wall direction modulo 90 degrees, as 4θ phasors.
    // (sum cos 4θ, sum sin 4θ, seed angle, total weight)
    let mut groups: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut membership = Vec::with_capacity(vertical.len());
    for (k, (_, plane)) in vertical.iter().enumerate() {
        let angle = base.yaw_of(&plane.normal).rem_euclid(quarter);
        let w = weights[vertical[k].0];
        let found = groups.iter().position(|&(_, _, seed, _)| {
            let d = (angle - seed).rem_euclid(quarter);
            d.min(quarter - d) <= tol
        });
        let gi = match found {
            Some(gi) => gi,
            None => {
                groups.push((0.0, 0.0, angle, 0.0));
                groups.len() - 1
            }
        };
        groups[gi].0 += w * (4.0 * angle).cos();
        groups[gi].1 += w * (4.0 * angle).sin();
        groups[gi].3 += w;
        membership.push(gi);
    }

    let dominant = groups.first().map_or(0.0, |g| g.3);
    let kept: Vec<usize> = (0..groups.len())
        .filter(|&gi| gi == 0 || groups[gi].3 >= cfg.secondary_min_ratio * dominant)
        .collect();
    let membership: Vec<Option<usize>> = membership
        .into_iter()
        .map(|gi| kept.iter().position(|&k| k == gi))
        .collect();
    let mut frames = Vec::new();
    if groups.is_empty() {
        frames.push(base);
    }
    for &gi in &kept {
        let (c, s, _, _) = groups[gi];
        let mean = s.atan2(c) / 4.0;
        // Of the four equivalent axes pick the one closest to the optical axis.
        let mut best = mean;
        for k in -2..=2 {
            let cand = mean + k as f64 * quarter;
            if cand.abs() < best.abs() {
                best = cand;
            }
        }
        frames.push(base.yawed(-best));
    }

    Ok(ManhattanEstimate {
        floor_index,
        floor,
        up,
        frames,
        vertical,
        membership,
    })
}

/// Floor lines of a set of vertical walls with the endpoints of every segment
/// projected onto its line. Walls sharing a plane share one line.
#[derive(Clone, Debug, PartialEq)]
pub struct FloorLine {
    pub line: Line2,
    pub segments: Vec<[Point2; 2]>,
}

/// `walls` carry camera-frame planes and endpoints already expressed in the
/// floor coordinates of `frame`.
pub fn walls_to_floor_lines(walls: &[WallSegment], frame: &ManhattanFrame) -> Vec<FloorLine> {
    let mut out: Vec<FloorLine> = Vec::new();
    for wall in walls {
        let line = Line2::from_vertical_plane(&wall.plane, frame).canonical();
        let seg = [
            line.project(&wall.endpoints[0]),
            line.project(&wall.endpoints[1]),
        ];
        match out.iter_mut().find(|f| {
            (f.line.normal - line.normal).norm() < 1e-9
                && (f.line.offset - line.offset).abs() < 1e-9
        }) {
            Some(existing) => existing.segments.push(seg),
            None => out.push(FloorLine {
                line,
                segments: vec![seg],
            }),
        }
    }
    out
}

/// Circular mean of hue (0..=255 scale) with plain means for the other
/// channels.
pub fn mean_hsv<'a>(colors: impl IntoIterator<Item = &'a [f64; 3]>) -> Option<[f64; 3]> {
    let mut n = 0.0;
    let (mut hc, mut hs, mut s, mut v) = (0.0, 0.0, 0.0, 0.0);
    for c in colors {
        let a = c[0] / 256.0 * std::f64::consts::TAU;
        hc += a.cos();
        hs += a.sin();
        s += c[1];
        v += c[2];
        n += 1.0;
    }
    if n == 0.0 {
        return None;
    }
    let hue = if hc.abs() < 1e-12 && hs.abs() < 1e-12 {
        0.0
    } else {
        (hs.atan2(hc) / std::f64::consts::TAU * 256.0).rem_euclid(256.0)
    };
    Some([hue, s / n, v / n])
}

/// Sum of absolute channel differences with hue wrap-around.
pub fn hsv_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dh = (a[0] - b[0]).abs().rem_euclid(256.0);
    dh.min(256.0 - dh) + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()
}

pub fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut r = a.rem_euclid(tau);
    if r > std::f64::consts::PI {
        r -= tau;
    }
    r
}
