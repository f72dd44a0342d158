//! Synthetic floor-plan worlds and a ray-casting depth camera.
//!
//! Worlds are 2D polygons of vertical walls standing on the floor `z = 0`.
//! Every wall is directed so that free space lies on its left. Doors are
//! openings cut into a wall with a recessed door face and two jambs.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthFrame, Intrinsics, Point3};
use crate::odometry::Correspondence;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallSpec {
    pub start: [f64; 2],
    pub end: [f64; 2],
    pub height: f64,
    /// Hue, saturation, value in 0..=255.
    pub color: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoorSpec {
    pub wall: usize,
    /// Distance of the door center from the wall start, meters.
    pub center: f64,
    pub width: f64,
    /// How far the door face sits behind the wall surface.
    pub recess: f64,
    pub color: [f64; 3],
}

/// Part of a wall that returns no depth, e.g. glass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub wall: usize,
    /// Range along the wall from its start, meters.
    pub from: f64,
    pub to: f64,
    /// Inclusive frame range in which the mask applies; always when absent.
    #[serde(default)]
    pub frames: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub name: String,
    pub walls: Vec<WallSpec>,
    #[serde(default)]
    pub doors: Vec<DoorSpec>,
    #[serde(default)]
    pub masks: Vec<MaskSpec>,
    /// Yaw of every Manhattan frame of the world, degrees in [0, 90).
    pub manhattan_yaws_deg: Vec<f64>,
    pub floor_color: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SurfaceKind {
    Wall,
    Door,
    Jamb,
}

/// One renderable vertical rectangle.
#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
    pub height: f64,
    pub color: [f64; 3],
    pub kind: SurfaceKind,
    /// Index of the originating wall and the distance of `a` from its start.
    pub wall: usize,
    pub along: f64,
}

/// What a pixel's ray hit first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hit {
    Floor,
    Surface(usize),
}

impl WorldSpec {
    pub fn surfaces(&self) -> Vec<Surface> {
        let mut out = Vec::new();
        for (wi, w) in self.walls.iter().enumerate() {
            let a = Vector2::from(w.start);
            let b = Vector2::from(w.end);
            let len = (b - a).norm();
            let d = (b - a) / len;
            let outward = Vector2::new(d.y, -d.x);
            let mut doors: Vec<&DoorSpec> =
                self.doors.iter().filter(|door| door.wall == wi).collect();
            doors.sort_by(|x, y| x.center.total_cmp(&y.center));
            let mut cursor = 0.0;
            for door in doors {
                let lo = door.center - door.width / 2.0;
                let hi = door.center + door.width / 2.0;
                if lo > cursor {
                    out.push(Surface {
                        a: a + d * cursor,
                        b: a + d * lo,
                        height: w.height,
                        color: w.color,
                        kind: SurfaceKind::Wall,
                        wall: wi,
                        along: cursor,
                    });
                }
                let back = outward * door.recess;
                out.push(Surface {
                    a: a + d * lo + back,
                    b: a + d * hi + back,
                    height: w.height,
                    color: door.color,
                    kind: SurfaceKind::Door,
                    wall: wi,
                    along: lo,
                });
                out.push(Surface {
                    a: a + d * lo,
                    b: a + d * lo + back,
                    height: w.height,
                    color: w.color,
                    kind: SurfaceKind::Jamb,
                    wall: wi,
                    along: lo,
                });
                out.push(Surface {
                    a: a + d * hi + back,
                    b: a + d * hi,
                    height: w.height,
                    color: w.color,
                    kind: SurfaceKind::Jamb,
                    wall: wi,
                    along: hi,
                });
                cursor = hi;
            }
            if cursor < len {
                out.push(Surface {
                    a: a + d * cursor,
                    b,
                    height: w.height,
                    color: w.color,
                    kind: SurfaceKind::Wall,
                    wall: wi,
                    along: cursor,
                });
            }
        }
        out
    }

    /// Door faces as world segments.
    pub fn door_segments(&self) -> Vec<[Vector2<f64>; 2]> {
        self.surfaces()
            .into_iter()
            .filter(|s| s.kind == SurfaceKind::Door)
            .map(|s| [s.a, s.b])
            .collect()
    }

    /// Whether a floor point lies in free space: horizontal rays in eight
    /// directions must all first reach a surface from its free side.
    pub fn is_free(&self, p: &Vector2<f64>) -> bool {
        let surfaces = self.surfaces();
        (0..8).all(|k| {
            let ang = k as f64 * std::f64::consts::FRAC_PI_4 + 0.1;
            let dir = Vector2::new(ang.cos(), ang.sin());
            let mut best: Option<(f64, &Surface)> = None;
            for s in &surfaces {
                if let Some(t) = ray_segment(p, &dir, &s.a, &s.b) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, s));
                    }
                }
            }
            match best {
                Some((_, s)) => {
                    let d = (s.b - s.a).normalize();
                    let outward = Vector2::new(d.y, -d.x);
                    dir.dot(&outward) > 0.0
                }
                None => false,
            }
        })
    }
}

/// Ray parameter where `origin + t dir` crosses segment `a b`.
fn ray_segment(
    origin: &Vector2<f64>,
    dir: &Vector2<f64>,
    a: &Vector2<f64>,
    b: &Vector2<f64>,
) -> Option<f64> {
    let e = b - a;
    let denom = dir.x * e.y - dir.y * e.x;
    if denom.abs() < 1e-12 {
        return None;
    }
    let w = a - origin;
    let t = (w.x * e.y - w.y * e.x) / denom;
    let u = (w.x * dir.y - w.y * dir.x) / denom;
    (t > 1e-9 && (-1e-12..=1.0 + 1e-12).contains(&u)).then_some(t)
}

/// Ground-truth camera pose: position on the floor plan, heading and
/// downward pitch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruePose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub pitch: f64,
}

impl TruePose {
    /// Camera-to-world rotation (camera x right, y down, z forward).
    pub fn rotation(&self) -> Matrix3<f64> {
        let (st, ct) = self.yaw.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let forward = Vector3::new(ct * cp, st * cp, -sp);
        let right = Vector3::new(st, -ct, 0.0);
        let down = forward.cross(&right);
        Matrix3::from_columns(&[right, down, forward])
    }

    pub fn position(&self, height: f64) -> Vector3<f64> {
        Vector3::new(self.x, self.y, height)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gaussian noise on the measured range, meters.
    pub depth_sigma: f64,
    /// Per-axis random rotation of each frame's point cloud, degrees.
    pub normal_sigma_deg: f64,
    /// Per-point noise on correspondences, meters.
    pub correspondence_sigma: f64,
    pub outlier_rate: f64,
    /// Per-frame horizontal bias shared by all correspondences of a frame
    /// pair, meters. Shows up directly as translation odometry error.
    pub odometry_sigma: f64,
    pub correspondences_per_frame: usize,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            depth_sigma: 0.0,
            normal_sigma_deg: 0.0,
            correspondence_sigma: 0.0,
            outlier_rate: 0.0,
            odometry_sigma: 0.0,
            correspondences_per_frame: 60,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraSpec {
    pub width: usize,
    pub height: usize,
    pub hfov_deg: f64,
    pub max_range: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        Self {
            width: 320,
            height: 240,
            hfov_deg: 58.0,
            max_range: 10.0,
        }
    }
}

impl CameraSpec {
    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics::from_hfov(self.width, self.height, self.hfov_deg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub poses: Vec<TruePose>,
    pub camera_height: f64,
    pub frame_interval: f64,
    #[serde(default)]
    pub camera: CameraSpec,
    #[serde(default)]
    pub noise: NoiseConfig,
}

impl TrajectorySpec {
    pub fn timestamp(&self, i: usize) -> f64 {
        i as f64 * self.frame_interval
    }
}

pub struct RenderedFrame {
    pub frame: DepthFrame,
    /// First surface hit per pixel, before noise.
    pub hits: Vec<Option<Hit>>,
    /// Exact world point per pixel, before noise.
    pub world_points: Vec<Option<Point3>>,
}

fn frame_rng(seed: u64, index: usize, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(
        seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
            ^ (index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
            ^ stream,
    )
}

/// Ray-casts one frame. `index` selects masks and the noise stream.
pub fn render_frame(
    world: &WorldSpec,
    traj: &TrajectorySpec,
    index: usize,
) -> Result<RenderedFrame> {
    let pose = traj.poses[index];
    let p2 = Vector2::new(pose.x, pose.y);
    if !world.is_free(&p2) {
        return Err(Error::PoseOutsideWorld {
            x: pose.x,
            y: pose.y,
        });
    }
    let cam = &traj.camera;
    let intr = cam.intrinsics();
    let r_cw = pose.rotation();
    let c = pose.position(traj.camera_height);
    let surfaces = world.surfaces();
    let masks: Vec<&MaskSpec> = world
        .masks
        .iter()
        .filter(|m| m.frames.is_none_or(|[lo, hi]| index >= lo && index <= hi))
        .collect();

    let noise = &traj.noise;
    let mut rng = frame_rng(noise.seed, index, 1);
    let depth_noise =
        (noise.depth_sigma > 0.0).then(|| Normal::new(0.0, noise.depth_sigma).unwrap());
    let tilt = if noise.normal_sigma_deg > 0.0 {
        let n = Normal::new(0.0, noise.normal_sigma_deg.to_radians()).unwrap();
        let axis = Vector3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng));
        Rotation3::new(axis).into_inner()
    } else {
        Matrix3::identity()
    };

    let n_px = cam.width * cam.height;
    let mut points = Vec::with_capacity(n_px);
    let mut colors = Vec::with_capacity(n_px);
    let mut hits = Vec::with_capacity(n_px);
    let mut world_points = Vec::with_capacity(n_px);
    for v in 0..cam.height {
        for u in 0..cam.width {
            let ray = intr.ray(u as f64, v as f64);
            let d = r_cw * ray;
            let mut best: Option<(f64, Hit)> = None;
            if d.z < -1e-12 {
                best = Some((-c.z / d.z, Hit::Floor));
            }
            let dh = Vector2::new(d.x, d.y);
            for (si, s) in surfaces.iter().enumerate() {
                if let Some(t) = ray_segment(&p2, &dh, &s.a, &s.b) {
                    let z = c.z + t * d.z;
                    if (0.0..=s.height).contains(&z) && best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, Hit::Surface(si)));
                    }
                }
            }
            let hit = best.filter(|(t, _)| t * d.norm() <= cam.max_range);
            let Some((t, what)) = hit else {
                points.push(None);
                colors.push([0.0; 3]);
                hits.push(None);
                world_points.push(None);
                continue;
            };
            let world_p = c + d * t;
            let color = match what {
                Hit::Floor => world.floor_color,
                Hit::Surface(si) => surfaces[si].color,
            };
            hits.push(Some(what));
            world_points.push(Some(world_p));
            colors.push(color);
            let masked = match what {
                Hit::Surface(si) => {
                    let s = &surfaces[si];
                    let along = s.along + (Vector2::new(world_p.x, world_p.y) - s.a).norm();
                    s.kind == SurfaceKind::Wall
                        && masks
                            .iter()
                            .any(|m| m.wall == s.wall && along >= m.from && along <= m.to)
                }
                Hit::Floor => false,
            };
            if masked {
                points.push(None);
                continue;
            }
            let mut p_cam = ray * t;
            if let Some(n) = &depth_noise {
                let range = p_cam.norm();
                p_cam *= (range + n.sample(&mut rng)).max(1e-3) / range;
            }
            points.push(Some(tilt * p_cam));
        }
    }

    Ok(RenderedFrame {
        frame: DepthFrame {
            width: cam.width,
            height: cam.height,
            points,
            rgb: Some(colors),
            intrinsics: intr,
            timestamp: traj.timestamp(index),
        },
        hits,
        world_points,
    })
}

/// Point matches between frame `index - 1` and `index`, sampled from the
/// current frame's exact surface points.
pub fn correspondences(
    traj: &TrajectorySpec,
    current: &RenderedFrame,
    index: usize,
) -> Vec<Correspondence> {
    assert!(index > 0, "frame 0 has no predecessor");
    let noise = &traj.noise;
    let mut rng = frame_rng(noise.seed, index, 2);
    let prev = traj.poses[index - 1];
    let curr = traj.poses[index];
    let (r_prev, c_prev) = (prev.rotation(), prev.position(traj.camera_height));
    let (r_curr, c_curr) = (curr.rotation(), curr.position(traj.camera_height));

    let candidates: Vec<Point3> = current.world_points.iter().flatten().copied().collect();
    if candidates.is_empty() {
        return Vec::new();
    }
    let point_noise = (noise.correspondence_sigma > 0.0)
        .then(|| Normal::new(0.0, noise.correspondence_sigma).unwrap());
    let bias = if noise.odometry_sigma > 0.0 {
        let n = Normal::new(0.0, noise.odometry_sigma).unwrap();
        r_prev.transpose() * Vector3::new(n.sample(&mut rng), n.sample(&mut rng), 0.0)
    } else {
        Vector3::zeros()
    };
    let jitter = |rng: &mut ChaCha8Rng| match &point_noise {
        Some(n) => Vector3::new(n.sample(rng), n.sample(rng), n.sample(rng)),
        None => Vector3::zeros(),
    };

    (0..noise.correspondences_per_frame)
        .map(|_| {
            let p = candidates[rng.random_range(0..candidates.len())];
            let x_curr = r_curr.transpose() * (p - c_curr) + jitter(&mut rng);
            let x_prev = if rng.random::<f64>() < noise.outlier_rate {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.5..6.0),
                )
            } else {
                r_prev.transpose() * (p - c_prev) + bias + jitter(&mut rng)
            };
            Correspondence { x_prev, x_curr }
        })
        .collect()
}

/// Gravity in camera coordinates for a pose (the prior a real sensor's
/// accelerometer would give).
pub fn gravity_in_camera(pose: &TruePose) -> Vector3<f64> {
    pose.rotation().transpose() * Vector3::new(0.0, 0.0, -1.0)
}

const WALL_HEIGHT: f64 = 2.5;
const FLOOR: [f64; 3] = [20.0, 60.0, 110.0];

fn polygon(points: &[[f64; 2]], colors: &[[f64; 3]]) -> Vec<WallSpec> {
    (0..points.len())
        .map(|i| WallSpec {
            start: points[i],
            end: points[(i + 1) % points.len()],
            height: WALL_HEIGHT,
            color: colors[i % colors.len()],
        })
        .collect()
}

const PALETTE: [[f64; 3]; 4] = [
    [30.0, 40.0, 220.0],
    [100.0, 50.0, 200.0],
    [160.0, 45.0, 210.0],
    [220.0, 35.0, 190.0],
];
const WHITE: [f64; 3] = [40.0, 20.0, 225.0];
const DOOR: [f64; 3] = [18.0, 170.0, 120.0];

/// Names accepted by [`world`].
pub const WORLD_NAMES: [&str; 7] = [
    "box",
    "lcorridor",
    "tjunction",
    "bent30",
    "doors10",
    "glass",
    "loop",
];

/// The built-in worlds:
///
/// * `box`: a 6 x 4 m room.
/// * `lcorridor`: a 2 m wide corridor, 10 m east then 8 m north.
/// * `tjunction`: a 12 m corridor with a 2 m branch leaving north at x = 5..7.
/// * `bent30`: a 2 m corridor, 8 m east then 8 m at 30 degrees.
/// * `doors10`: a 28 x 2 m corridor with ten 0.825 m doors on its north wall,
///   centers 2.5 m apart starting at x = 2.5.
/// * `glass`: a 12 x 2 m corridor whose north wall has no depth between
///   x = 4 and x = 7 from frame 1 on.
/// * `loop`: a 2 m ring corridor between a 12 x 8 m outer and an 8 x 4 m
///   inner rectangle.
pub fn standard_worlds() -> Vec<WorldSpec> {
    WORLD_NAMES
        .iter()
        .map(|n| world(n).expect("catalog name"))
        .collect()
}

pub fn world(name: &str) -> Result<WorldSpec> {
    let simple = |walls: Vec<WallSpec>, yaws: Vec<f64>| WorldSpec {
        name: name.to_string(),
        walls,
        doors: vec![],
        masks: vec![],
        manhattan_yaws_deg: yaws,
        floor_color: FLOOR,
    };
    Ok(match name {
        "box" => simple(
            polygon(&[[0.0, 0.0], [6.0, 0.0], [6.0, 4.0], [0.0, 4.0]], &PALETTE),
            vec![0.0],
        ),
        "lcorridor" => simple(
            polygon(
                &[
                    [0.0, 0.0],
                    [10.0, 0.0],
                    [10.0, 8.0],
                    [8.0, 8.0],
                    [8.0, 2.0],
                    [0.0, 2.0],
                ],
                &PALETTE,
            ),
            vec![0.0],
        ),
        "tjunction" => simple(
            polygon(
                &[
                    [0.0, 0.0],
                    [12.0, 0.0],
                    [12.0, 2.0],
                    [7.0, 2.0],
                    [7.0, 8.0],
                    [5.0, 8.0],
                    [5.0, 2.0],
                    [0.0, 2.0],
                ],
                &PALETTE,
            ),
            vec![0.0],
        ),
        "bent30" => {
            let u = Vector2::new(30f64.to_radians().cos(), 30f64.to_radians().sin());
            let n = Vector2::new(-u.y, u.x);
            let bend = Vector2::new(8.0, 1.0);
            // Where the straight arm's side walls meet the bent arm's.
            let meet = |side: f64, wall_y: f64| {
                let base = bend + n * side;
                let s = (wall_y - base.y) / u.y;
                base + u * s
            };
            let lo = meet(-1.0, 0.0);
            let hi = meet(1.0, 2.0);
            let far_lo = bend - n + u * 8.0;
            let far_hi = bend + n + u * 8.0;
            simple(
                polygon(
                    &[
                        [0.0, 0.0],
                        [lo.x, lo.y],
                        [far_lo.x, far_lo.y],
                        [far_hi.x, far_hi.y],
                        [hi.x, hi.y],
                        [0.0, 2.0],
                    ],
                    &PALETTE,
                ),
                vec![0.0, 30.0],
            )
        }
        "doors10" => {
            let mut w = simple(
                polygon(
                    &[[0.0, 0.0], [28.0, 0.0], [28.0, 2.0], [0.0, 2.0]],
                    &[WHITE],
                ),
                vec![0.0],
            );
            // Wall 2 runs from (28, 2) to (0, 2).
            w.doors = (0..10)
                .map(|k| DoorSpec {
                    wall: 2,
                    center: 28.0 - (2.5 + 2.5 * k as f64),
                    width: 0.825,
                    recess: 0.1,
                    color: DOOR,
                })
                .collect();
            w
        }
        "glass" => {
            let mut w = simple(
                polygon(
                    &[[0.0, 0.0], [12.0, 0.0], [12.0, 2.0], [0.0, 2.0]],
                    &PALETTE,
                ),
                vec![0.0],
            );
            w.masks = vec![MaskSpec {
                wall: 2,
                from: 12.0 - 7.0,
                to: 12.0 - 4.0,
                frames: Some([1, usize::MAX]),
            }];
            w
        }
        "loop" => {
            let mut walls = polygon(
                &[[0.0, 0.0], [12.0, 0.0], [12.0, 8.0], [0.0, 8.0]],
                &PALETTE,
            );
            walls.extend(polygon(
                &[[2.0, 2.0], [2.0, 6.0], [10.0, 6.0], [10.0, 2.0]],
                &PALETTE[1..],
            ));
            simple(walls, vec![0.0])
        }
        other => return Err(Error::UnknownWorld(other.to_string())),
    })
}

const PITCH_DEG: f64 = 20.0;

fn pose(x: f64, y: f64, yaw_deg: f64) -> TruePose {
    TruePose {
        x,
        y,
        yaw: yaw_deg.to_radians(),
        pitch: PITCH_DEG.to_radians(),
    }
}

/// Samples a polyline path with rounded corners every `step` meters,
/// heading along the path plus `yaw_offset_deg`.
pub fn path_poses(
    corners: &[[f64; 2]],
    radius: f64,
    step: f64,
    yaw_offset_deg: f64,
) -> Vec<TruePose> {
    // Build a dense list of (point, heading) along the rounded polyline.
    let mut dense: Vec<(Vector2<f64>, f64)> = Vec::new();
    let pts: Vec<Vector2<f64>> = corners.iter().map(|c| Vector2::from(*c)).collect();
    let fine = step / 20.0;
    let push_line = |dense: &mut Vec<(Vector2<f64>, f64)>, a: Vector2<f64>, b: Vector2<f64>| {
        let len = (b - a).norm();
        let dir = (b - a) / len;
        let heading = dir.y.atan2(dir.x);
        let n = (len / fine).ceil().max(1.0) as usize;
        for k in 0..n {
            dense.push((a + dir * (len * k as f64 / n as f64), heading));
        }
    };
    let mut start = pts[0];
    for i in 1..pts.len() {
        let a = pts[i - 1];
        let b = pts[i];
        if i + 1 < pts.len() {
            let c = pts[i + 1];
            let d1 = (b - a).normalize();
            let d2 = (c - b).normalize();
            let turn = d1.x * d2.y - d1.y * d2.x;
            let angle = d1.dot(&d2).clamp(-1.0, 1.0).acos();
            let cut = radius * (angle / 2.0).tan();
            let p_in = b - d1 * cut;
            let p_out = b + d2 * cut;
            push_line(&mut dense, start, p_in);
            // Arc from p_in to p_out.
            let h1 = d1.y.atan2(d1.x);
            let sign = turn.signum();
            let center = p_in + Vector2::new(-d1.y, d1.x) * (radius * sign);
            let arc_len = radius * angle;
            let n = (arc_len / fine).ceil().max(1.0) as usize;
            for k in 0..n {
                let phi = angle * k as f64 / n as f64 * sign;
                let heading = h1 + phi;
                let rel = p_in - center;
                let rot = Vector2::new(
                    rel.x * phi.cos() - rel.y * phi.sin(),
                    rel.x * phi.sin() + rel.y * phi.cos(),
                );
                dense.push((center + rot, heading));
            }
            start = p_out;
        } else {
            push_line(&mut dense, start, b);
            let dir = (b - a).normalize();
            dense.push((b, dir.y.atan2(dir.x)));
        }
    }
    let mut out = Vec::new();
    let mut travelled = 0.0;
    let mut next = 0.0;
    for k in 0..dense.len() {
        if k > 0 {
            travelled += (dense[k].0 - dense[k - 1].0).norm();
        }
        if travelled + 1e-9 >= next {
            let (p, h) = dense[k];
            out.push(pose(p.x, p.y, h.to_degrees() + yaw_offset_deg));
            next += step;
        }
    }
    out
}

fn trajectory(poses: Vec<TruePose>) -> TrajectorySpec {
    TrajectorySpec {
        poses,
        camera_height: 1.0,
        frame_interval: 1.0 / 30.0,
        camera: CameraSpec::default(),
        noise: NoiseConfig::default(),
    }
}

/// Circuit around the ring corridor of the `loop` world.
pub fn loop_trajectory(step: f64, laps: f64) -> TrajectorySpec {
    let ring = [[1.0, 1.0], [11.0, 1.0], [11.0, 7.0], [1.0, 7.0]];
    let lap_len = 2.0 * (10.0 + 6.0);
    let mut path: Vec<[f64; 2]> = vec![[3.0, 1.0]];
    let mut remaining = lap_len * laps;
    let mut cur = Vector2::new(3.0, 1.0);
    let mut k = 1;
    while remaining > 1e-9 {
        let target: Vector2<f64> = Vector2::from(ring[k % 4]);
        let seg = (target - cur).norm();
        if seg >= remaining {
            let end = cur + (target - cur) * (remaining / seg);
            path.push([end.x, end.y]);
            break;
        }
        path.push(ring[k % 4]);
        remaining -= seg;
        cur = target;
        k += 1;
    }
    trajectory(path_poses(&path, 0.6, step, 0.0))
}

/// Default trajectory for a catalog world.
pub fn standard_trajectory(name: &str) -> Result<TrajectorySpec> {
    Ok(match name {
        "box" => {
            let n = 150;
            let poses = (0..n)
                .map(|i| {
                    let phi = i as f64 / 120.0 * std::f64::consts::TAU;
                    let (x, y) = (3.0 + 1.2 * phi.cos(), 2.0 + 0.6 * phi.sin());
                    let heading = (0.6 * phi.cos()).atan2(-1.2 * phi.sin());
                    pose(x, y, heading.to_degrees())
                })
                .collect();
            trajectory(poses)
        }
        "lcorridor" => trajectory(path_poses(
            &[[1.0, 1.0], [9.0, 1.0], [9.0, 7.0]],
            0.6,
            0.1,
            0.0,
        )),
        "tjunction" => trajectory(path_poses(
            &[[1.0, 1.0], [6.0, 1.0], [6.0, 6.0]],
            0.6,
            0.1,
            0.0,
        )),
        "bent30" => {
            let u = Vector2::new(30f64.to_radians().cos(), 30f64.to_radians().sin());
            let end = Vector2::new(8.0, 1.0) + u * 6.0;
            trajectory(path_poses(
                &[[1.0, 1.0], [8.0, 1.0], [end.x, end.y]],
                1.5,
                0.1,
                0.0,
            ))
        }
        "doors10" => {
            let mut poses = path_poses(&[[0.5, 0.8], [26.5, 0.8]], 0.5, 0.1, 40.0);
            let last = *poses.last().expect("nonempty path");
            for k in 1..12 {
                poses.push(TruePose {
                    yaw: last.yaw + std::f64::consts::PI * k as f64 / 12.0,
                    ..last
                });
            }
            poses.extend(path_poses(&[[26.5, 1.0], [1.5, 1.0]], 0.5, 0.2, 40.0));
            trajectory(poses)
        }
        "glass" => {
            let poses = (0..12)
                .map(|i| pose(2.5 + 0.1 * i as f64, 0.7, 25.0))
                .collect();
            trajectory(poses)
        }
        "loop" => loop_trajectory(0.1, 1.2),
        other => return Err(Error::UnknownWorld(other.to_string())),
    })
}

/// Conversions between 8-bit RGB and the 0..=255 HSV scale used for colors.
pub fn hsv_to_rgb(hsv: &[f64; 3]) -> [u8; 3] {
    let h = hsv[0].rem_euclid(256.0) / 256.0 * 6.0;
    let s = (hsv[1] / 255.0).clamp(0.0, 1.0);
    let v = (hsv[2] / 255.0).clamp(0.0, 1.0);
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| ((ch + m) * 255.0).round() as u8)
}

pub fn rgb_to_hsv(rgb: &[u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta < 1e-12 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let s = if max > 0.0 { delta / max } else { 0.0 };
    [h / 6.0 * 256.0 % 256.0, s * 255.0, max * 255.0]
}
