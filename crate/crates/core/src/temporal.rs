//! Layout parsing that reuses the previous frame's layout.
//!
//! The previous layout is moved into the current frame, its walls are matched
//! against the current ones, walls that disappeared are carried along as
//! extra labels, and the interval chain gains the previous layout's
//! boundaries. The chain energy then adds a fitting residual term and a bias
//! toward the label the previous frame assigned to the same directions.

use std::collections::HashMap;

use crate::config::{Config, TemporalConfig};
use crate::error::Result;
use crate::geometry::{self, Point2, Transform2};
use crate::scene_parser::{
    append_virtual_labels, azimuth, dedup_angles, generate_endpoints, is_continuous,
    parse_single_view, single_view_labels, solve_layout, support_cost_c1, FrameAnalysis, Interval,
    IntervalChain, LabelKind, PixelView, PlaneAssociation, PlaneLabel, Provenance, SceneLayout,
};

/// Previous layout boundaries and labels seen from the current frame.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProjectedLayout {
    /// Boundary view angles strictly inside the current field of view.
    pub endpoints: Vec<f64>,
    /// (start angle, end angle, current label id) of each projected real
    /// segment, clipped to the field of view.
    pub spans: Vec<(f64, f64, usize)>,
}

/// Matches the previous layout's real walls to `curr_labels`. `relative` maps
/// previous level coordinates to current ones. Unmatched previous walls get
/// fresh ids after the current ones; walls carried for longer than
/// `carried_expiry` frames are dropped.
pub fn associate_planes(
    prev: &SceneLayout,
    curr_labels: &[PlaneLabel],
    relative: &Transform2,
    cfg: &TemporalConfig,
) -> PlaneAssociation {
    let mut used: Vec<usize> = prev
        .segments
        .iter()
        .map(|s| s.label)
        .filter(|&l| prev.labels[l].is_real())
        .collect();
    used.sort_unstable();
    used.dedup();

    let moved: Vec<PlaneLabel> = used
        .iter()
        .map(|&id| {
            let l = &prev.labels[id];
            PlaneLabel {
                plane: relative.apply_vertical_plane(&l.plane),
                extent: l
                    .extent
                    .map(|e| [relative.apply(&e[0]), relative.apply(&e[1])]),
                ..l.clone()
            }
        })
        .collect();

    let max_angle = cfg.association_angle_deg.to_radians();
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (k, p) in moved.iter().enumerate() {
        for c in curr_labels.iter().filter(|c| c.is_real()) {
            let angle = p.plane.normal.dot(&c.plane.normal).clamp(-1.0, 1.0).acos();
            let diff = (p.plane.offset - c.plane.offset).abs();
            if angle <= max_angle && diff <= cfg.association_offset {
                candidates.push((diff, k, c.id));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut prev_taken = vec![false; moved.len()];
    let mut curr_taken: Vec<usize> = Vec::new();
    let mut pairs = Vec::new();
    for (_, k, c) in candidates {
        if prev_taken[k] || curr_taken.contains(&c) {
            continue;
        }
        prev_taken[k] = true;
        curr_taken.push(c);
        pairs.push((moved[k].id, c));
    }
    pairs.sort_unstable();

    let mut carried_labels = Vec::new();
    for (k, label) in moved.into_iter().enumerate() {
        if prev_taken[k] || label.carried_age + 1 > cfg.carried_expiry {
            continue;
        }
        carried_labels.push(PlaneLabel {
            id: curr_labels.len() + carried_labels.len(),
            carried_age: label.carried_age + 1,
            support: 0,
            kind: LabelKind::Real,
            ..label
        });
    }
    PlaneAssociation {
        pairs,
        carried_labels,
    }
}

/// Projects the previous layout's real segments into the current frame.
/// `id_map` translates previous label ids to current ones; segments whose
/// label has no entry are skipped.
pub fn project_layout(
    prev: &SceneLayout,
    relative: &Transform2,
    id_map: &HashMap<usize, usize>,
    fov: (f64, f64),
) -> ProjectedLayout {
    let mut out = ProjectedLayout::default();
    for seg in &prev.segments {
        let Some(&label) = id_map.get(&seg.label) else {
            continue;
        };
        let Some(ends) = seg.endpoints else { continue };
        let a = relative.apply(&ends[0]);
        let b = relative.apply(&ends[1]);
        let Some((a, b)) = clip_in_front(a, b) else {
            continue;
        };
        let (az_a, az_b) = (azimuth(&a), azimuth(&b));
        let (lo, hi) = (az_a.min(az_b), az_a.max(az_b));
        let (lo, hi) = (lo.max(fov.0), hi.min(fov.1));
        if hi <= lo {
            continue;
        }
        for e in [lo, hi] {
            if e > fov.0 && e < fov.1 {
                out.endpoints.push(e);
            }
        }
        out.spans.push((lo, hi, label));
    }
    out
}

/// Part of segment `a b` with `x >= 1e-6`, i.e. in front of the camera.
fn clip_in_front(a: Point2, b: Point2) -> Option<(Point2, Point2)> {
    const EPS: f64 = 1e-6;
    match (a.x >= EPS, b.x >= EPS) {
        (true, true) => Some((a, b)),
        (false, false) => None,
        (a_in, _) => {
            let t = (EPS - a.x) / (b.x - a.x);
            let cut = a + (b - a) * t;
            Some(if a_in { (a, cut) } else { (cut, b) })
        }
    }
}

/// Chain over the union of the current endpoints and the projected ones.
pub fn union_endpoints(
    current: &[f64],
    projected: &ProjectedLayout,
    dedup: f64,
) -> Result<IntervalChain> {
    let mut all = current.to_vec();
    all.extend(projected.endpoints.iter().copied());
    IntervalChain::from_endpoints(dedup_angles(all, dedup))
}

/// Previous label with the largest angular overlap of each interval, ties
/// going to the smaller id.
pub fn preferred_labels(chain: &IntervalChain, projected: &ProjectedLayout) -> Vec<Option<usize>> {
    chain
        .intervals
        .iter()
        .map(|iv| {
            let mut best: Option<(f64, usize)> = None;
            for &(lo, hi, label) in &projected.spans {
                let overlap = hi.min(iv.end_angle) - lo.max(iv.start_angle);
                if overlap <= 0.0 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bo, bl)) => overlap > bo || (overlap == bo && label < bl),
                };
                if better {
                    best = Some((overlap, label));
                }
            }
            best.map(|(_, l)| l)
        })
        .collect()
}

/// Mean point-to-plane distance of the depth points inside the label's wall
/// quadrilateral, clamped to `cfg.fitting_clamp`. Virtual labels cost
/// `cfg.virtual_fitting_cost`; an empty quadrilateral costs the clamp value.
pub fn fitting_cost_c2(
    interval: &Interval,
    label: &PlaneLabel,
    view: &PixelView,
    cfg: &TemporalConfig,
) -> f64 {
    if !label.is_real() {
        return cfg.virtual_fitting_cost;
    }
    let h = view.analysis.camera_height;
    let (mut sum, mut k) = (0.0, 0usize);
    for px in view
        .analysis
        .pixel_range(interval.start_angle, interval.end_angle)
    {
        let Some(p) = px.point else { continue };
        let nr = label.plane.normal.dot(&px.ray);
        if nr <= 1e-12 {
            continue;
        }
        let z = -label.plane.offset / nr * px.ray.z;
        if z < -h - 1e-9 || z > label.top_height {
            continue;
        }
        sum += geometry::point_plane_distance(&p, &label.plane);
        k += 1;
    }
    if k == 0 {
        return cfg.fitting_clamp;
    }
    (sum / k as f64).min(cfg.fitting_clamp)
}

/// Penalty for not taking the interval's preferred label.
pub fn temporal_cost_c3(label: usize, preferred: Option<usize>, cfg: &TemporalConfig) -> f64 {
    match preferred {
        Some(p) if p != label => cfg.temporal_penalty,
        _ => 0.0,
    }
}

/// Junction cost: zero without a depth discontinuity, otherwise `δ`, or `δ/3`
/// when the right label is the preferred one.
pub fn temporal_pairwise_e(
    left: &PlaneLabel,
    right: &PlaneLabel,
    preferred_right: Option<usize>,
    junction_angle: f64,
    jump_tolerance: f64,
    cfg: &TemporalConfig,
) -> f64 {
    if left.id == right.id || is_continuous(left, right, junction_angle, jump_tolerance) {
        return 0.0;
    }
    if preferred_right == Some(right.id) {
        cfg.discontinuity_cost / 3.0
    } else {
        cfg.discontinuity_cost
    }
}

/// Extent of `label` grown to cover `other` projected onto its line.
fn widen_extent(label: &PlaneLabel, other: &[Point2; 2]) -> [Point2; 2] {
    let line = label.line();
    let own = label.extent.unwrap_or(*other);
    let params = own.iter().chain(other).map(|p| line.param(p));
    let (lo, hi) = params.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| {
        (lo.min(t), hi.max(t))
    });
    [line.point_at(lo), line.point_at(hi)]
}

/// Parses `analysis` using the previous layout. `relative` maps previous
/// level coordinates to current ones; without it the frame is parsed on its
/// own and marked as a fallback. An empty previous layout also reduces to
/// single-view parsing.
pub fn parse_temporal(
    prev: &SceneLayout,
    analysis: &FrameAnalysis,
    relative: Option<&Transform2>,
    config: &Config,
) -> Result<SceneLayout> {
    let Some(relative) = relative else {
        let mut layout = parse_single_view(analysis, &config.parser)?;
        layout.provenance = Provenance::Fallback;
        return Ok(layout);
    };
    if !prev.segments.iter().any(|s| prev.labels[s.label].is_real()) {
        return parse_single_view(analysis, &config.parser);
    }
    let tcfg = &config.temporal;
    let pcfg = &config.parser;

    let mut labels: Vec<PlaneLabel> = single_view_labels(analysis, pcfg)
        .into_iter()
        .filter(|l| l.is_real())
        .collect();
    let association = associate_planes(prev, &labels, relative, tcfg);
    for &(p, c) in &association.pairs {
        if let Some(e) = prev.labels[p].extent {
            let moved = [relative.apply(&e[0]), relative.apply(&e[1])];
            labels[c].extent = Some(widen_extent(&labels[c], &moved));
        }
    }
    labels.extend(association.carried_labels.iter().cloned());
    append_virtual_labels(&mut labels, &analysis.bbox, pcfg);

    let mut id_map: HashMap<usize, usize> = association.pairs.iter().copied().collect();
    let carried_prev = prev
        .segments
        .iter()
        .map(|s| s.label)
        .filter(|&l| prev.labels[l].is_real() && !id_map.contains_key(&l));
    let mut carried_ids = association.carried_labels.iter().map(|l| l.id);
    let mut seen: Vec<usize> = Vec::new();
    for l in carried_prev {
        if seen.contains(&l) {
            continue;
        }
        seen.push(l);
    }
    seen.sort_unstable();
    for l in seen {
        // Expired labels have no carried counterpart and are not projected.
        if prev.labels[l].carried_age + 1 > tcfg.carried_expiry {
            continue;
        }
        if let Some(id) = carried_ids.next() {
            id_map.insert(l, id);
        }
    }

    let current = generate_endpoints(&analysis.floor_lines(), &analysis.bbox, analysis.fov, pcfg);
    let projected = project_layout(prev, relative, &id_map, analysis.fov);
    let chain = union_endpoints(&current, &projected, tcfg.union_dedup)?;
    let preferred = preferred_labels(&chain, &projected);
    let view = PixelView::new(analysis, &labels);

    let unary = |i: usize, l: usize| {
        let iv = &chain.intervals[i];
        let label = &labels[l];
        iv.weight
            * (support_cost_c1(iv, label, &view)
                + fitting_cost_c2(iv, label, &view, tcfg)
                + temporal_cost_c3(label.id, preferred[i], tcfg))
    };
    let pairwise = |i: usize, a: usize, b: usize| {
        temporal_pairwise_e(
            &labels[a],
            &labels[b],
            preferred[i],
            chain.endpoints[i],
            pcfg.jump_tolerance,
            tcfg,
        )
    };
    solve_layout(
        analysis,
        &labels,
        &chain,
        unary,
        pairwise,
        pcfg,
        Provenance::Temporal,
        Some(association),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ManhattanFrame;
    use crate::scene_parser::tests::real_label;
    use crate::scene_parser::{merge_intervals, LayoutSegment};
    use nalgebra::{Matrix3, Vector2};

    fn cfg() -> TemporalConfig {
        TemporalConfig::default()
    }

    fn layout_with(labels: Vec<PlaneLabel>, segments: Vec<LayoutSegment>) -> SceneLayout {
        let chain = IntervalChain::from_endpoints(vec![-0.5, 0.5]).unwrap();
        SceneLayout {
            timestamp: 0.0,
            labels,
            assignment: vec![0],
            unary_costs: vec![0.0],
            pairwise_costs: vec![0.0],
            chain,
            segments,
            corners: vec![],
            frames: vec![],
            level: ManhattanFrame {
                rotation: Matrix3::identity(),
                up_axis_index: 2,
            },
            camera_height: 1.0,
            energy: 0.0,
            provenance: Provenance::SingleView,
            association: None,
            junction_slack: 0.5,
        }
    }

    fn two_wall_layout() -> SceneLayout {
        let labels = vec![
            real_label(0, [1.0, 0.0], -3.0),
            real_label(1, [0.0, -1.0], -1.0),
        ];
        let chain = IntervalChain::from_endpoints(vec![-0.5, 0.3, 0.5]).unwrap();
        let segments = merge_intervals(&chain, &[0, 1], &labels);
        layout_with(labels, segments)
    }

    #[test]
    fn identical_planes_fully_associate() {
        let prev = two_wall_layout();
        let assoc = associate_planes(&prev, &prev.labels, &Transform2::identity(), &cfg());
        assert_eq!(assoc.pairs, vec![(0, 0), (1, 1)]);
        assert!(assoc.carried_labels.is_empty());
    }

    #[test]
    fn offset_difference_within_threshold_associates() {
        let prev = two_wall_layout();
        let curr = vec![
            real_label(0, [1.0, 0.0], -3.04),
            real_label(1, [0.0, -1.0], -1.0),
        ];
        let assoc = associate_planes(&prev, &curr, &Transform2::identity(), &cfg());
        assert_eq!(assoc.pairs, vec![(0, 0), (1, 1)]);
        let far = vec![
            real_label(0, [1.0, 0.0], -3.06),
            real_label(1, [0.0, -1.0], -1.0),
        ];
        let assoc = associate_planes(&prev, &far, &Transform2::identity(), &cfg());
        assert_eq!(assoc.pairs, vec![(1, 1)]);
    }

    #[test]
    fn missing_wall_is_carried() {
        let prev = two_wall_layout();
        let curr = vec![real_label(0, [1.0, 0.0], -3.0)];
        let assoc = associate_planes(&prev, &curr, &Transform2::identity(), &cfg());
        assert_eq!(assoc.pairs, vec![(0, 0)]);
        assert_eq!(assoc.carried_labels.len(), 1);
        let carried = &assoc.carried_labels[0];
        assert_eq!(carried.id, 1);
        assert_eq!(carried.carried_age, 1);
        assert!((carried.plane.offset + 1.0).abs() < 1e-12);
    }

    #[test]
    fn carried_labels_expire() {
        let mut prev = two_wall_layout();
        prev.labels[1].carried_age = 5;
        let curr = vec![real_label(0, [1.0, 0.0], -3.0)];
        let assoc = associate_planes(&prev, &curr, &Transform2::identity(), &cfg());
        assert!(assoc.carried_labels.is_empty());
    }

    #[test]
    fn association_moves_planes_with_the_camera() {
        let prev = two_wall_layout();
        // Camera moved 0.5 m forward: front wall now 2.5 m away.
        let rel = Transform2 {
            rotation: 0.0,
            translation: Vector2::new(-0.5, 0.0),
        };
        let curr = vec![
            real_label(0, [1.0, 0.0], -2.5),
            real_label(1, [0.0, -1.0], -1.0),
        ];
        let assoc = associate_planes(&prev, &curr, &rel, &cfg());
        assert_eq!(assoc.pairs, vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn union_behaviour() {
        let empty = ProjectedLayout::default();
        let chain = union_endpoints(&[-0.5, 0.1, 0.5], &empty, 1e-6).unwrap();
        assert_eq!(chain.endpoints, vec![-0.5, 0.1, 0.5]);
        let proj = ProjectedLayout {
            endpoints: vec![0.2, 0.1 + 1e-8],
            spans: vec![],
        };
        let chain = union_endpoints(&[-0.5, 0.1, 0.5], &proj, 1e-6).unwrap();
        assert_eq!(chain.endpoints, vec![-0.5, 0.1, 0.2, 0.5]);
        assert_eq!(chain.len(), 3);
    }

    #[test]
    fn preferred_label_takes_largest_overlap_then_smallest_id() {
        let chain = IntervalChain::from_endpoints(vec![-0.5, 0.0, 0.5]).unwrap();
        let proj = ProjectedLayout {
            endpoints: vec![],
            spans: vec![(-0.5, -0.1, 3), (-0.1, 0.5, 2), (-0.5, -0.1, 1)],
        };
        assert_eq!(preferred_labels(&chain, &proj), vec![Some(1), Some(2)]);
        let none = preferred_labels(&chain, &ProjectedLayout::default());
        assert_eq!(none, vec![None, None]);
    }

    #[test]
    fn cost_constants() {
        let c = cfg();
        assert_eq!(temporal_cost_c3(2, Some(2), &c), 0.0);
        assert_eq!(temporal_cost_c3(1, Some(2), &c), 0.1);
        assert_eq!(temporal_cost_c3(1, None, &c), 0.0);

        let front = real_label(0, [1.0, 0.0], -3.0);
        let right = real_label(1, [0.0, -1.0], -1.0);
        let corner = azimuth(&Point2::new(3.0, -1.0));
        assert_eq!(
            temporal_pairwise_e(&front, &right, None, corner, 0.1, &c),
            0.0
        );
        let near = real_label(0, [1.0, 0.0], -2.0);
        let far = real_label(1, [1.0, 0.0], -4.0);
        assert_eq!(
            temporal_pairwise_e(&near, &far, Some(0), 0.0, 0.1, &c),
            0.03
        );
        assert_eq!(
            temporal_pairwise_e(&near, &far, Some(1), 0.0, 0.1, &c),
            0.01
        );
    }

    #[test]
    fn segments_behind_the_camera_are_clipped() {
        let (a, b) = clip_in_front(Point2::new(-1.0, 1.0), Point2::new(1.0, 1.0)).unwrap();
        assert!((a.x - 1e-6).abs() < 1e-12);
        assert_eq!(b, Point2::new(1.0, 1.0));
        assert!(clip_in_front(Point2::new(-1.0, 1.0), Point2::new(-2.0, 1.0)).is_none());
    }
}
