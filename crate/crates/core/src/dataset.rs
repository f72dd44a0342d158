//! TUM RGB-D sequence reading and writing, trajectories and trajectory error.
//!
//! A sequence directory holds `rgb.txt` and `depth.txt` index files
//! (`timestamp path` lines, `#` comments), the referenced PNG images, and
//! optionally `groundtruth.txt`, `matches.txt` and `camera.json`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DepthFrame, Intrinsics};
use crate::odometry::Correspondence;
use crate::simulator::{hsv_to_rgb, rgb_to_hsv};

/// Largest timestamp difference accepted when pairing streams, seconds.
pub const MAX_TIME_GAP: f64 = 0.02;
/// Depth image units per meter.
pub const DEPTH_SCALE: f64 = 5000.0;

/// Default intrinsics of the fr3 sensor.
pub fn fr3_intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 535.4,
        fy: 539.2,
        cx: 320.1,
        cy: 247.6,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TumEntry {
    pub timestamp: f64,
    pub rgb: PathBuf,
    pub depth: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TumSequence {
    pub root: PathBuf,
    pub entries: Vec<TumEntry>,
    pub intrinsics: Intrinsics,
    pub depth_scale: f64,
    /// Gravity direction in camera coordinates, used as the floor prior.
    pub gravity: Vector3<f64>,
}

/// Gravity prior for a camera held upright: along the image's downward axis.
pub const UPRIGHT_GRAVITY: [f64; 3] = [0.0, 1.0, 0.0];

/// Optional `camera.json` contents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraFile {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default = "default_depth_scale")]
    pub depth_scale: f64,
    #[serde(default)]
    pub gravity: Option<[f64; 3]>,
}

fn default_depth_scale() -> f64 {
    DEPTH_SCALE
}

fn read_index(path: &Path) -> Result<Vec<(f64, String)>> {
    if !path.is_file() {
        return Err(Error::MissingIndexFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(t), Some(p)) = (parts.next(), parts.next()) else {
            return Err(Error::parse(
                format!("{}:{}", path.display(), k + 1),
                "expected `timestamp path`",
            ));
        };
        let t: f64 = t.parse().map_err(|_| {
            Error::parse(
                format!("{}:{}", path.display(), k + 1),
                format!("bad timestamp {t:?}"),
            )
        })?;
        out.push((t, p.to_string()));
    }
    Ok(out)
}

/// Pairs `a` and `b` timestamps closer than `max_gap`, closest pairs first,
/// each element used once. Returns index pairs sorted by `a`.
pub fn associate(a: &[f64], b: &[f64], max_gap: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    for (i, ta) in a.iter().enumerate() {
        let lo = b.partition_point(|tb| *tb < ta - max_gap);
        for (j, tb) in b.iter().enumerate().skip(lo) {
            if *tb > ta + max_gap {
                break;
            }
            candidates.push(((ta - tb).abs(), i, j));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let (mut used_a, mut used_b) = (vec![false; a.len()], vec![false; b.len()]);
    let mut out = Vec::new();
    for (_, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.push((i, j));
        }
    }
    out.sort_unstable();
    out
}

pub fn load_tum(dir: &Path) -> Result<TumSequence> {
    let mut rgb = read_index(&dir.join("rgb.txt"))?;
    let mut depth = read_index(&dir.join("depth.txt"))?;
    rgb.sort_by(|x, y| x.0.total_cmp(&y.0));
    depth.sort_by(|x, y| x.0.total_cmp(&y.0));
    let ta: Vec<f64> = depth.iter().map(|e| e.0).collect();
    let tb: Vec<f64> = rgb.iter().map(|e| e.0).collect();
    let pairs = associate(&ta, &tb, MAX_TIME_GAP);
    if pairs.is_empty() {
        return Err(Error::NoAssociations {
            max_gap: MAX_TIME_GAP,
        });
    }
    let mut entries: Vec<TumEntry> = pairs
        .into_iter()
        .map(|(d, r)| TumEntry {
            timestamp: depth[d].0,
            rgb: dir.join(&rgb[r].1),
            depth: dir.join(&depth[d].1),
        })
        .collect();
    entries.dedup_by(|b, a| b.timestamp <= a.timestamp);
    let camera_path = dir.join("camera.json");
    let (intrinsics, depth_scale, gravity) = if camera_path.is_file() {
        let cam: CameraFile = serde_json::from_str(&fs::read_to_string(&camera_path)?)?;
        (
            Intrinsics {
                fx: cam.fx,
                fy: cam.fy,
                cx: cam.cx,
                cy: cam.cy,
            },
            cam.depth_scale,
            cam.gravity.unwrap_or(UPRIGHT_GRAVITY),
        )
    } else {
        (fr3_intrinsics(), DEPTH_SCALE, UPRIGHT_GRAVITY)
    };
    let gravity = Vector3::from(gravity);
    if !(gravity.norm() > 0.0) {
        return Err(Error::parse(
            camera_path.display().to_string(),
            "gravity must be a nonzero vector",
        ));
    }
    Ok(TumSequence {
        root: dir.to_path_buf(),
        entries,
        intrinsics,
        depth_scale,
        gravity: gravity.normalize(),
    })
}

/// Meters for a raw depth value; 0 means no measurement.
pub fn decode_depth(raw: u16, scale: f64) -> Option<f64> {
    (raw != 0).then(|| raw as f64 / scale)
}

/// Raw depth value for a range in meters, 0 for missing or out-of-range.
pub fn encode_depth(meters: Option<f64>, scale: f64) -> u16 {
    match meters {
        Some(m) if m > 0.0 => {
            let v = (m * scale).round();
            if v >= 1.0 && v <= u16::MAX as f64 {
                v as u16
            } else {
                0
            }
        }
        _ => 0,
    }
}

impl TumSequence {
    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.timestamp).collect()
    }

    /// Back-projects frame `k` into camera coordinates.
    pub fn load_frame(&self, k: usize) -> Result<DepthFrame> {
        let entry = &self.entries[k];
        let depth = image::open(&entry.depth)?.into_luma16();
        let (w, h) = depth.dimensions();
        let rgb = match image::open(&entry.rgb) {
            Ok(img) => {
                let img = img.into_rgb8();
                (img.dimensions() == (w, h))
                    .then(|| img.pixels().map(|p| rgb_to_hsv(&p.0)).collect::<Vec<_>>())
            }
            Err(_) => None,
        };
        let intr = self.intrinsics;
        let points = depth
            .enumerate_pixels()
            .map(|(u, v, p)| {
                decode_depth(p.0[0], self.depth_scale).map(|z| {
                    let ray = intr.ray(u as f64, v as f64);
                    ray * (z / ray.z)
                })
            })
            .collect();
        Ok(DepthFrame {
            width: w as usize,
            height: h as usize,
            points,
            rgb,
            intrinsics: intr,
            timestamp: entry.timestamp,
        })
    }
}

/// Writes a frame as 16-bit depth and 8-bit color PNGs.
pub fn write_frame_images(
    frame: &DepthFrame,
    depth_path: &Path,
    rgb_path: &Path,
    scale: f64,
) -> Result<()> {
    let (w, h) = (frame.width as u32, frame.height as u32);
    let depth: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |u, v| {
        let p = frame.points[v as usize * frame.width + u as usize];
        Luma([encode_depth(p.map(|p| p.z), scale)])
    });
    depth.save(depth_path)?;
    let rgb: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_fn(w, h, |u, v| {
        let k = v as usize * frame.width + u as usize;
        Rgb(frame.rgb.as_ref().map_or([0, 0, 0], |c| hsv_to_rgb(&c[k])))
    });
    rgb.save(rgb_path)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StampedPose {
    pub timestamp: f64,
    pub translation: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
}

impl StampedPose {
    pub fn from_matrix(timestamp: f64, translation: Vector3<f64>, rotation: &Matrix3<f64>) -> Self {
        let r = nalgebra::Rotation3::from_matrix(rotation);
        Self {
            timestamp,
            translation,
            rotation: UnitQuaternion::from_rotation_matrix(&r),
        }
    }
}

/// Timestamped camera poses, e.g. a benchmark ground truth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<StampedPose>,
}

impl Trajectory {
    /// Parses `timestamp tx ty tz qx qy qz qw` lines. Quaternions are
    /// normalized; ones far from unit length are rejected.
    pub fn parse(text: &str, context: &str) -> Result<Self> {
        let mut poses = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let ctx = || format!("{context}:{}", k + 1);
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|_| Error::parse(ctx(), format!("bad number {s:?}")))
                })
                .collect::<Result<_>>()?;
            if v.len() != 8 {
                return Err(Error::parse(
                    ctx(),
                    format!("expected 8 values, found {}", v.len()),
                ));
            }
            let q = nalgebra::Quaternion::new(v[7], v[4], v[5], v[6]);
            if (q.norm() - 1.0).abs() > 1e-2 {
                return Err(Error::parse(ctx(), "quaternion is not unit length"));
            }
            poses.push(StampedPose {
                timestamp: v[0],
                translation: Vector3::new(v[1], v[2], v[3]),
                rotation: UnitQuaternion::from_quaternion(q),
            });
        }
        Ok(Self { poses })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for p in &self.poses {
            let q = p.rotation.quaternion();
            s.push_str(&format!(
                "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
                p.timestamp, p.translation.x, p.translation.y, p.translation.z, q.i, q.j, q.k, q.w
            ));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Positions of `estimated` and `truth` paired by nearest timestamp within
/// `MAX_TIME_GAP`.
pub fn matched_positions(
    estimated: &Trajectory,
    truth: &Trajectory,
) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let mut est = estimated.poses.clone();
    let mut gt = truth.poses.clone();
    est.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    gt.sort_by(|a, b| a.timestamp.total_cmp(&b.timestamp));
    let ta: Vec<f64> = est.iter().map(|p| p.timestamp).collect();
    let tb: Vec<f64> = gt.iter().map(|p| p.timestamp).collect();
    associate(&ta, &tb, MAX_TIME_GAP)
        .into_iter()
        .map(|(i, j)| (est[i].translation, gt[j].translation))
        .collect()
}

/// Rotation and translation minimizing `Σ |R a_k + t - b_k|²`.
pub fn align_rigid(pairs: &[(Vector3<f64>, Vector3<f64>)]) -> (Matrix3<f64>, Vector3<f64>) {
    let n = pairs.len() as f64;
    let ca = pairs.iter().fold(Vector3::zeros(), |s, p| s + p.0) / n;
    let cb = pairs.iter().fold(Vector3::zeros(), |s, p| s + p.1) / n;
    let cov = pairs.iter().fold(Matrix3::zeros(), |s, (a, b)| {
        s + (b - cb) * (a - ca).transpose()
    });
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = u * d * vt;
    (r, cb - r * ca)
}

/// Absolute trajectory error: RMS position residual after the best rigid
/// alignment of `estimated` onto `truth`.
pub fn ate_rmse(estimated: &Trajectory, truth: &Trajectory) -> Result<f64> {
    let pairs = matched_positions(estimated, truth);
    if pairs.len() < 2 {
        return Err(Error::InsufficientMatches { found: pairs.len() });
    }
    let (r, t) = align_rigid(&pairs);
    let sum: f64 = pairs
        .iter()
        .map(|(a, b)| (r * a + t - b).norm_squared())
        .sum();
    Ok((sum / pairs.len() as f64).sqrt())
}

/// One line of `matches.txt`: a point seen in two consecutive frames, in
/// each frame's camera coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchRecord {
    pub t_prev: f64,
    pub t_curr: f64,
    pub correspondence: Correspondence,
}

/// Parses `t_prev t_curr xp yp zp xc yc zc` lines.
pub fn parse_matches(text: &str, context: &str) -> Result<Vec<MatchRecord>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let ctx = || format!("{context}:{}", k + 1);
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(ctx(), format!("bad number {s:?}")))
            })
            .collect::<Result<_>>()?;
        if v.len() != 8 {
            return Err(Error::parse(
                ctx(),
                format!("expected 8 values, found {}", v.len()),
            ));
        }
        out.push(MatchRecord {
            t_prev: v[0],
            t_curr: v[1],
            correspondence: Correspondence {
                x_prev: Vector3::new(v[2], v[3], v[4]),
                x_curr: Vector3::new(v[5], v[6], v[7]),
            },
        });
    }
    Ok(out)
}

pub fn load_matches(path: &Path) -> Result<Vec<MatchRecord>> {
    parse_matches(&fs::read_to_string(path)?, &path.display().to_string())
}

pub fn matches_to_text(records: &[MatchRecord]) -> String {
    let mut s = String::from("# t_prev t_curr xp yp zp xc yc zc\n");
    for r in records {
        let (p, c) = (&r.correspondence.x_prev, &r.correspondence.x_curr);
        s.push_str(&format!(
            "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}\n",
            r.t_prev, r.t_curr, p.x, p.y, p.z, c.x, c.y, c.z
        ));
    }
    s
}

/// Correspondences per frame of `timestamps` (empty for the first frame):
/// records whose timestamps match frames `k - 1` and `k` within
/// `MAX_TIME_GAP`.
pub fn correspondences_by_frame(
    records: &[MatchRecord],
    timestamps: &[f64],
) -> Vec<Vec<Correspondence>> {
    let mut out = vec![Vec::new(); timestamps.len()];
    let nearest = |t: f64| -> Option<usize> {
        let k = timestamps.partition_point(|x| *x < t);
        [k.checked_sub(1), Some(k)]
            .into_iter()
            .flatten()
            .filter(|&i| i < timestamps.len() && (timestamps[i] - t).abs() <= MAX_TIME_GAP)
            .min_by(|&a, &b| {
                (timestamps[a] - t)
                    .abs()
                    .total_cmp(&(timestamps[b] - t).abs())
            })
    };
    for r in records {
        if let (Some(p), Some(c)) = (nearest(r.t_prev), nearest(r.t_curr)) {
            if c == p + 1 {
                out[c].push(r.correspondence);
            }
        }
    }
    out
}
