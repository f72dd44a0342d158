//! Tunable thresholds for every stage of the pipeline.
//!
//! A [`Config`] can be overridden from a plain `key = value` text file where
//! keys are dotted paths into the structure, e.g.
//!
//! ```text
//! # tighter plane fitting
//! ransac.inlier_distance = 0.015
//! temporal.discontinuity_cost = 0.05
//! slam.loop_closure = false
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    /// Inlier distance to a plane hypothesis, meters.
    pub inlier_distance: f64,
    /// Minimum support for a plane to be accepted, points.
    pub min_inliers: usize,
    pub max_iterations: usize,
    /// Number of points used to score hypotheses.
    pub score_sample: usize,
    pub max_planes: usize,
    /// Gap along a wall line that splits it into separate segments, meters.
    pub segment_gap: f64,
    pub min_segment_support: usize,
    /// Shorter pieces are dropped; they are mostly the strip where the plane
    /// cuts through a perpendicular wall, meters.
    pub min_segment_length: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            inlier_distance: 0.02,
            min_inliers: 2000,
            max_iterations: 400,
            score_sample: 3000,
            max_planes: 10,
            segment_gap: 0.3,
            min_segment_support: 150,
            min_segment_length: 0.15,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManhattanConfig {
    pub floor_max_angle_deg: f64,
    pub vertical_tolerance_deg: f64,
    pub perpendicular_tolerance_deg: f64,
    /// A wall direction group other than the dominant one becomes its own
    /// Manhattan frame only with at least this share of the dominant group's
    /// support.
    pub secondary_min_ratio: f64,
}

impl Default for ManhattanConfig {
    fn default() -> Self {
        Self {
            floor_max_angle_deg: 30.0,
            vertical_tolerance_deg: 10.0,
            perpendicular_tolerance_deg: 5.0,
            secondary_min_ratio: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParserConfig {
    pub bbox_half_extent: f64,
    /// Depth gap along a junction ray below which two planes meet, meters.
    pub jump_tolerance: f64,
    pub discontinuity_cost: f64,
    pub virtual_support_cost: f64,
    /// Upper bound of a label's quadrilateral when no support height is known.
    pub default_wall_height: f64,
    pub endpoint_dedup: f64,
    /// Minimum angle between two lines for their intersection to become an endpoint.
    pub min_intersection_angle_deg: f64,
    /// How far a junction end of a wall segment may reach past the wall's
    /// observed extent, meters.
    pub junction_slack: f64,
}

impl Default for ParserConfig {
    fn default() -> Self {
        Self {
            bbox_half_extent: 6.0,
            jump_tolerance: 0.1,
            discontinuity_cost: 0.03,
            virtual_support_cost: 0.5,
            default_wall_height: 2.5,
            endpoint_dedup: 1e-9,
            min_intersection_angle_deg: 5.0,
            junction_slack: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemporalConfig {
    pub association_offset: f64,
    pub association_angle_deg: f64,
    pub fitting_clamp: f64,
    pub virtual_fitting_cost: f64,
    pub temporal_penalty: f64,
    pub discontinuity_cost: f64,
    pub carried_expiry: u32,
    pub union_dedup: f64,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            association_offset: 0.05,
            association_angle_deg: 5.0,
            fitting_clamp: 0.15,
            virtual_fitting_cost: 0.5,
            temporal_penalty: 0.1,
            discontinuity_cost: 0.03,
            carried_expiry: 5,
            union_dedup: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OdometryConfig {
    pub inlier_distance: f64,
    pub min_inlier_ratio: f64,
    pub max_hypotheses: usize,
    pub frame_dedup_deg: f64,
    pub seed: u64,
}

impl Default for OdometryConfig {
    fn default() -> Self {
        Self {
            inlier_distance: 0.05,
            min_inlier_ratio: 0.3,
            max_hypotheses: 200,
            frame_dedup_deg: 1.0,
            seed: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SlamConfig {
    pub loop_closure: bool,
    pub odometry_information: f64,
    pub loop_information: f64,
    pub fallback_scale: f64,
    pub loop_rotation_deg: f64,
    pub loop_distance: f64,
    pub descriptor_threshold: f64,
    /// Frames that must separate a keyframe from a loop-closure candidate.
    pub min_loop_gap: usize,
    /// Largest world distance between two corners that may be paired.
    pub corner_gate: f64,
    pub signature_angle_deg: f64,
    pub connect_slack: f64,
    pub descriptor_cells: usize,
    pub descriptor_extent: f64,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self {
            loop_closure: true,
            odometry_information: 100.0,
            loop_information: 400.0,
            fallback_scale: 0.1,
            loop_rotation_deg: 10.0,
            loop_distance: 5.0,
            descriptor_threshold: 0.6,
            min_loop_gap: 30,
            corner_gate: 1.5,
            signature_angle_deg: 5.0,
            connect_slack: 0.1,
            descriptor_cells: 8,
            descriptor_extent: 6.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MapConfig {
    pub merge_angle_deg: f64,
    pub merge_distance: f64,
    pub color_threshold: f64,
    pub big_wall_length: f64,
    pub door_max_width: f64,
    /// Narrower openings are treated as noise between two wall pieces.
    pub door_min_width: f64,
    pub door_corner_radius: f64,
    pub door_min_corners: usize,
    pub door_min_iou: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            merge_angle_deg: 5.0,
            merge_distance: 0.25,
            color_threshold: 30.0,
            big_wall_length: 2.0,
            door_max_width: 1.0,
            door_min_width: 0.5,
            door_corner_radius: 0.25,
            door_min_corners: 2,
            door_min_iou: 0.25,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub ransac: RansacConfig,
    pub manhattan: ManhattanConfig,
    pub parser: ParserConfig,
    pub temporal: TemporalConfig,
    pub odometry: OdometryConfig,
    pub slam: SlamConfig,
    pub map: MapConfig,
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let mut config = Config::default();
        config.apply_text(&std::fs::read_to_string(path)?)?;
        Ok(config)
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one dotted key, e.g. `map.merge_distance`, from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut tree = serde_json::to_value(&*self)?;
        let mut slot = &mut tree;
        for part in key.split('.') {
            slot = slot
                .get_mut(part)
                .ok_or_else(|| Error::Config(format!("unknown key `{key}`")))?;
        }
        *slot = match slot {
            Value::Bool(_) => Value::Bool(
                value
                    .parse()
                    .map_err(|_| Error::Config(format!("`{key}` expects true/false")))?,
            ),
            Value::Number(n) if n.is_f64() => serde_json::json!(value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("`{key}` expects a number")))?),
            Value::Number(_) => serde_json::json!(value
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("`{key}` expects an integer")))?),
            Value::Object(_) => {
                return Err(Error::Config(format!(
                    "`{key}` names a section, not a value"
                )))
            }
            _ => return Err(Error::Config(format!("`{key}` cannot be set from text"))),
        };
        *self = serde_json::from_value(tree)?;
        Ok(())
    }

    /// Scales the pixel-count thresholds for a sensor with `pixels` pixels,
    /// relative to the 320x240 defaults.
    pub fn scaled_for_resolution(mut self, pixels: usize) -> Self {
        let ratio = pixels as f64 / (320.0 * 240.0);
        self.ransac.min_inliers =
            ((self.ransac.min_inliers as f64 * ratio).round() as usize).max(50);
        self.ransac.min_segment_support =
            ((self.ransac.min_segment_support as f64 * ratio).round() as usize).max(10);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sets_nested_values_and_ignores_comments() {
        let mut config = Config::default();
        config
            .apply_text("# header\nransac.inlier_distance = 0.015\nslam.loop_closure=false # off\nransac.min_inliers = 500\n")
            .unwrap();
        assert_eq!(config.ransac.inlier_distance, 0.015);
        assert!(!config.slam.loop_closure);
        assert_eq!(config.ransac.min_inliers, 500);
    }

    #[test]
    fn rejects_unknown_and_malformed_keys() {
        let mut config = Config::default();
        assert!(config.set("ransac.bogus", "1").is_err());
        assert!(config.set("ransac", "1").is_err());
        assert!(config.set("ransac.min_inliers", "abc").is_err());
        assert!(config.apply_text("no equals sign").is_err());
    }

    #[test]
    fn integer_fields_accept_whole_numbers_only() {
        let mut config = Config::default();
        assert!(config.set("ransac.min_inliers", "1.5").is_err());
        config.set("temporal.carried_expiry", "9").unwrap();
        assert_eq!(config.temporal.carried_expiry, 9);
    }
}
