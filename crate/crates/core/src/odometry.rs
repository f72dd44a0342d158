//! Frame-to-frame motion.
//!
//! Rotation comes straight from the Manhattan frames seen in each image, so it
//! does not drift: the only memory is which of the four yaw-equivalent axis
//! choices (and which registered non-perpendicular frame) is the nearest to
//! the previous orientation. Translation is then a one-point problem solved
//! by consensus over point correspondences.

use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::OdometryConfig;
use crate::error::{Error, Result};
use crate::geometry::{ManhattanFrame, Point3};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// Camera to world.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub height: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub x_prev: Point3,
    pub x_curr: Point3,
}

/// Yaw offsets (degrees in [0, 90)) of every Manhattan frame met so far,
/// relative to the world frame fixed by the first image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameRegistry {
    pub offsets_deg: Vec<f64>,
}

/// Rotation angle of a rotation matrix, radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationChoice {
    /// `R_prevᵀ R_cand`: maps current camera coordinates to previous ones.
    pub relative: Matrix3<f64>,
    pub index: usize,
    /// The chosen candidate after resolving the yaw ambiguity.
    pub resolved: ManhattanFrame,
}

/// Picks the candidate frame, among its four yaw-equivalent versions, with
/// the smallest rotation relative to `prev`.
pub fn relative_rotation(prev: &ManhattanFrame, candidates: &[ManhattanFrame]) -> RotationChoice {
    assert!(
        !candidates.is_empty(),
        "relative_rotation needs a candidate"
    );
    let mut best: Option<(f64, RotationChoice)> = None;
    for (index, cand) in candidates.iter().enumerate() {
        for k in 0..4 {
            let resolved = cand.yawed(k as f64 * std::f64::consts::FRAC_PI_2);
            let relative = prev.rotation.transpose() * resolved.rotation;
            let angle = rotation_angle(&relative);
            if best.as_ref().is_none_or(|(a, _)| angle < *a - 1e-12) {
                best = Some((
                    angle,
                    RotationChoice {
                        relative,
                        index,
                        resolved,
                    },
                ));
            }
        }
    }
    best.expect("at least one candidate").1
}

/// Direction of `other`'s first axis measured in `reference`, so that
/// `other` is (up to tilt) `reference.yawed(-ψ)`.
pub fn relative_yaw(reference: &ManhattanFrame, other: &ManhattanFrame) -> f64 {
    let m = other.rotation * reference.rotation.transpose();
    m[(0, 1)].atan2(m[(0, 0)])
}

/// Records the yaw offset between `r_i` and `r_i_prime` modulo 90 degrees,
/// unless it is (within `dedup_deg`) zero or already known. Returns whether
/// the registry changed.
pub fn register_new_frame(
    registry: &mut FrameRegistry,
    r_i: &ManhattanFrame,
    r_i_prime: &ManhattanFrame,
    dedup_deg: f64,
) -> bool {
    let offset = relative_yaw(r_i, r_i_prime).to_degrees().rem_euclid(90.0);
    let near = |a: f64, b: f64| {
        let d = (a - b).rem_euclid(90.0);
        d.min(90.0 - d) <= dedup_deg
    };
    if near(offset, 0.0) || registry.offsets_deg.iter().any(|&o| near(o, offset)) {
        return false;
    }
    registry.offsets_deg.push(offset);
    true
}

/// Keeps the camera-to-world rotation of the latest frame.
#[derive(Clone, Debug, PartialEq)]
pub struct OrientationTracker {
    pub registry: FrameRegistry,
    /// Camera-to-world rotation of the previous frame.
    pub current: Option<ManhattanFrame>,
    dedup_deg: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrientationUpdate {
    /// Camera-to-world rotation of the new frame.
    pub world: ManhattanFrame,
    /// Current camera to previous camera; identity for the first frame.
    pub relative: Matrix3<f64>,
}

impl OrientationTracker {
    pub fn new(dedup_deg: f64) -> Self {
        Self {
            registry: FrameRegistry::default(),
            current: None,
            dedup_deg,
        }
    }

    /// `frames` are the Manhattan frames of the new image, dominant first.
    pub fn update(&mut self, frames: &[ManhattanFrame]) -> OrientationUpdate {
        let (world, relative) = match self.current {
            None => (frames[0], Matrix3::identity()),
            Some(prev) => {
                let mut candidates = Vec::new();
                for f in frames {
                    candidates.push(*f);
                    for off in &self.registry.offsets_deg {
                        candidates.push(f.yawed(off.to_radians()));
                    }
                }
                let choice = relative_rotation(&prev, &candidates);
                (choice.resolved, choice.relative)
            }
        };
        for f in frames {
            register_new_frame(&mut self.registry, &world, f, self.dedup_deg);
        }
        self.current = Some(world);
        OrientationUpdate { world, relative }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TranslationEstimate {
    /// Current camera origin in previous camera coordinates, with the
    /// vertical component removed.
    pub t: Vector3<f64>,
    pub inliers: Vec<usize>,
    /// Vertical component that was projected out, meters.
    pub vertical_residual: f64,
}

/// One-point consensus: every correspondence proposes
/// `t = X_prev - R_rel X_curr`, the proposal with most inliers wins and is
/// refined as the mean over its inliers. `up` is the vertical direction in
/// previous-camera coordinates.
pub fn estimate_translation(
    r_rel: &Matrix3<f64>,
    corrs: &[Correspondence],
    up: &Vector3<f64>,
    cfg: &OdometryConfig,
) -> Result<TranslationEstimate> {
    if corrs.is_empty() {
        return Err(Error::NoConsensus {
            ratio: 0.0,
            required: cfg.min_inlier_ratio,
        });
    }
    let proposals: Vec<Vector3<f64>> = corrs.iter().map(|c| c.x_prev - r_rel * c.x_curr).collect();
    let hypotheses: Vec<usize> = if corrs.len() > cfg.max_hypotheses {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx = sample(&mut rng, corrs.len(), cfg.max_hypotheses).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..corrs.len()).collect()
    };
    let inliers_of = |t: &Vector3<f64>| -> Vec<usize> {
        (0..proposals.len())
            .filter(|&k| (proposals[k] - t).norm() <= cfg.inlier_distance)
            .collect()
    };
    let mut best: Vec<usize> = Vec::new();
    for &h in &hypotheses {
        let inl = inliers_of(&proposals[h]);
        if inl.len() > best.len() {
            best = inl;
        }
    }
    let ratio = best.len() as f64 / corrs.len() as f64;
    if ratio < cfg.min_inlier_ratio {
        return Err(Error::NoConsensus {
            ratio,
            required: cfg.min_inlier_ratio,
        });
    }
    let mean = |set: &[usize]| {
        set.iter()
            .fold(Vector3::zeros(), |acc, &k| acc + proposals[k])
            / set.len() as f64
    };
    let mut t = mean(&best);
    let refit = inliers_of(&t);
    if refit.len() >= best.len() {
        best = refit;
        t = mean(&best);
    }
    let up = up.normalize();
    let vertical = up.dot(&t);
    Ok(TranslationEstimate {
        t: t - up * vertical,
        inliers: best,
        vertical_residual: vertical,
    })
}

/// Rotation about the up axis by `angle`, for tests and tools.
pub fn yaw_rotation(angle: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), angle).into_inner()
}
