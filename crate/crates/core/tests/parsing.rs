mod common;

use common::*;
use floorplan_slam::config::Config;
use floorplan_slam::geometry::{fit_planes_ransac, PlaneParams};
use floorplan_slam::pipeline::relative_transform;
use floorplan_slam::pose_graph::Pose2D;
use floorplan_slam::scene_parser::{
    analyze_frame, parse_single_view, LabelKind, PlaneLabel, Provenance, SceneLayout,
};
use floorplan_slam::simulator::{self, Hit, MaskSpec, TruePose, WorldSpec};
use floorplan_slam::temporal::parse_temporal;
use nalgebra::Vector3;

fn pose(x: f64, y: f64, yaw_deg: f64) -> TruePose {
    TruePose {
        x,
        y,
        yaw: yaw_deg.to_radians(),
        pitch: 20f64.to_radians(),
    }
}

/// Distance along the label's away-facing normal and that normal.
fn label_line(label: &PlaneLabel) -> (nalgebra::Vector2<f64>, f64) {
    let n = label.plane.normal.xy();
    if label.plane.offset <= 0.0 {
        (n, -label.plane.offset)
    } else {
        (-n, label.plane.offset)
    }
}

fn matching_truth<'a>(
    label: &PlaneLabel,
    truth: &'a [TruthWall],
    angle_deg: f64,
    dist: f64,
) -> Option<&'a TruthWall> {
    let (n, d) = label_line(label);
    truth.iter().find(|t| {
        n.dot(&t.normal).clamp(-1.0, 1.0).acos().to_degrees() < angle_deg
            && (d - t.distance).abs() < dist
    })
}

#[test]
fn zero_noise_frames_recover_planes_and_polygon() {
    for (name, frames) in [
        ("box", vec![0, 20, 45, 70, 100]),
        ("lcorridor", vec![10, 80, 110]),
        ("tjunction", vec![20, 60, 90]),
    ] {
        round_trip(name, &frames);
    }
}

fn round_trip(name: &str, frames: &[usize]) {
    let world = simulator::world(name).unwrap();
    let traj = simulator::standard_trajectory(name).unwrap();
    let config = config_for(&traj);
    for &index in frames {
        let pose = traj.poses[index];
        let rendered = simulator::render_frame(&world, &traj, index).unwrap();
        let gravity = simulator::gravity_in_camera(&pose);
        let analysis = analyze_frame(&rendered.frame, &gravity, &config).unwrap();
        let layout = parse_single_view(&analysis, &config.parser).unwrap();
        let truth = truth_walls(&world, &pose);

        // Every wall with enough pixels to be fitted is among the labels.
        for t in &truth {
            let pixels = rendered
                .hits
                .iter()
                .filter(|h| **h == Some(Hit::Surface(t.surface)))
                .count();
            if pixels < config.ransac.min_inliers * 2 {
                continue;
            }
            let found = layout
                .labels
                .iter()
                .filter(|l| l.is_real())
                .any(|l| matching_truth(l, std::slice::from_ref(t), 0.1, 1e-3).is_some());
            assert!(
                found,
                "{name} frame {index}: wall {} with {pixels} pixels not recovered",
                t.surface
            );
        }
        for label in layout.labels.iter().filter(|l| l.is_real()) {
            assert!(
                matching_truth(label, &truth, 0.1, 1e-3).is_some(),
                "{name} frame {index}: label {:?} matches no wall",
                label.plane
            );
        }
        // The box encloses the camera, so wherever a wall was observed the
        // layout is real. Azimuths that see only floor may go either way.
        if name == "box" {
            let azimuth = |p: &nalgebra::Vector2<f64>| (-p.y).atan2(p.x);
            for seg in &layout.segments {
                if layout.labels[seg.label].kind == LabelKind::Real {
                    continue;
                }
                for w in &analysis.walls {
                    for o in &w.segments {
                        let (a, b) = (azimuth(&o.endpoints[0]), azimuth(&o.endpoints[1]));
                        let overlap = seg.interval.end_angle.min(a.max(b))
                            - seg.interval.start_angle.max(a.min(b));
                        assert!(
                            overlap < 1e-3,
                            "frame {index}: virtual segment over an observed wall"
                        );
                    }
                }
            }
        }
        // Wall pieces, with view-border ends pulled back to what was
        // observed, lie on the world outline.
        let pieces = layout.wall_segments();
        assert!(!pieces.is_empty());
        for (wall, _) in pieces {
            for p in wall.endpoints {
                let off = truth
                    .iter()
                    .map(|t| segment_distance(&p, &t.ends[0], &t.ends[1]))
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    off < 0.02,
                    "{name} frame {index}: layout vertex {p:?} is {off} m off the outline"
                );
            }
        }
    }
}

#[test]
fn noisy_corner_planes_are_within_tolerance() {
    let world = simulator::world("box").unwrap();
    let mut traj = simulator::standard_trajectory("box").unwrap();
    traj.poses = vec![pose(4.5, 1.5, -45.0)];
    traj.noise.depth_sigma = 0.01;
    let rendered = simulator::render_frame(&world, &traj, 0).unwrap();
    let fits = fit_planes_ransac(&rendered.frame, &Config::default().ransac).unwrap();

    // Ground-truth planes in camera coordinates, facing away from the camera.
    let p = traj.poses[0];
    let (r, c) = (p.rotation(), p.position(traj.camera_height));
    let mut truth: Vec<PlaneParams> = world
        .surfaces()
        .iter()
        .map(|s| {
            let d = (s.b - s.a).normalize();
            let n = Vector3::new(d.y, -d.x, 0.0);
            PlaneParams::new(n, -n.dot(&Vector3::new(s.a.x, s.a.y, 0.0)))
        })
        .collect();
    truth.push(PlaneParams::new(Vector3::z(), 0.0));
    let truth: Vec<PlaneParams> = truth
        .into_iter()
        .map(|w| {
            let plane = PlaneParams::new(r.transpose() * w.normal, w.offset + w.normal.dot(&c));
            if plane.offset > 0.0 {
                plane.flipped()
            } else {
                plane
            }
        })
        .collect();

    let mut walls = 0;
    for fit in &fits {
        let plane = if fit.plane.offset > 0.0 {
            fit.plane.flipped()
        } else {
            fit.plane
        };
        let t = truth
            .iter()
            .min_by(|a, b| {
                a.normal
                    .angle(&plane.normal)
                    .total_cmp(&b.normal.angle(&plane.normal))
            })
            .unwrap();
        assert!(
            t.normal.angle(&plane.normal).to_degrees() < 1.0,
            "{plane:?} vs {t:?}"
        );
        assert!((t.offset - plane.offset).abs() < 0.02, "{plane:?} vs {t:?}");
        if t.normal.dot(&(r.transpose() * Vector3::z())).abs() < 0.5 {
            walls += 1;
        }
    }
    assert!(walls >= 2, "expected both corner walls, found {walls}");
}

#[test]
fn corridor_floor_lines_match_the_walls() {
    let world = simulator::world("lcorridor").unwrap();
    let traj = trajectory("lcorridor", 160);
    let config = config_for(&traj);
    for index in [0, 40, 85, 120] {
        let pose = traj.poses[index];
        let analysis = analyze(&world, &traj, index, &config);
        let truth = truth_walls(&world, &pose);
        assert!(!analysis.walls.is_empty());
        for line in analysis.floor_lines() {
            let (n, d) = if line.line.offset <= 0.0 {
                (line.line.normal, -line.line.offset)
            } else {
                (-line.line.normal, line.line.offset)
            };
            let t = truth
                .iter()
                .filter(|t| n.dot(&t.normal) > 0.999)
                .min_by(|a, b| (a.distance - d).abs().total_cmp(&(b.distance - d).abs()))
                .expect("a parallel wall");
            assert!(
                (t.distance - d).abs() < 0.02,
                "frame {index}: line at {d} vs wall at {}",
                t.distance
            );
            for [a, b] in &line.segments {
                for p in [a, b] {
                    let off = segment_distance(p, &t.ends[0], &t.ends[1]);
                    assert!(
                        off < 0.02,
                        "frame {index}: segment end {p:?} is {off} m off its wall"
                    );
                }
            }
        }
    }
}

/// Box room with part of one wall returning no depth.
fn masked_box(mask_from: f64, mask_to: f64, frames: Option<[usize; 2]>) -> WorldSpec {
    let mut world = simulator::world("box").unwrap();
    // Wall 2 runs from (6, 4) to (0, 4).
    world.masks = vec![MaskSpec {
        wall: 2,
        from: mask_from,
        to: mask_to,
        frames,
    }];
    world
}

#[test]
fn masked_left_half_is_labeled_virtual() {
    let world = masked_box(3.0, 6.0, None);
    let mut traj = simulator::standard_trajectory("box").unwrap();
    traj.camera.width = 160;
    traj.camera.height = 120;
    traj.poses = vec![pose(3.0, 2.0, 90.0)];
    let config = config_for(&traj);
    let analysis = analyze(&world, &traj, 0, &config);
    let layout = parse_single_view(&analysis, &config.parser).unwrap();
    // Left of the camera means positive level y, i.e. negative view angles.
    let first = &layout.segments[0];
    let last = layout.segments.last().unwrap();
    assert_eq!(
        layout.labels[first.label].kind,
        LabelKind::Virtual,
        "{:?}",
        layout.segments
    );
    assert_eq!(layout.labels[last.label].kind, LabelKind::Real);
    assert!(
        first.interval.end_angle <= 0.02,
        "virtual part reaches into the right half"
    );
}

#[test]
fn frame_without_walls_is_all_virtual() {
    let world = WorldSpec {
        name: "hall".into(),
        walls: simulator::world("box")
            .unwrap()
            .walls
            .into_iter()
            .map(|mut w| {
                w.start = [w.start[0] * 10.0 - 30.0, w.start[1] * 10.0 - 20.0];
                w.end = [w.end[0] * 10.0 - 30.0, w.end[1] * 10.0 - 20.0];
                w
            })
            .collect(),
        doors: vec![],
        masks: vec![],
        manhattan_yaws_deg: vec![0.0],
        floor_color: [20.0, 60.0, 110.0],
    };
    let mut traj = simulator::standard_trajectory("box").unwrap();
    traj.camera.width = 160;
    traj.camera.height = 120;
    traj.poses = vec![pose(0.0, 0.0, 10.0)];
    let config = config_for(&traj);
    let analysis = analyze(&world, &traj, 0, &config);
    assert!(analysis.walls.is_empty());
    let layout = parse_single_view(&analysis, &config.parser).unwrap();
    assert!(layout
        .segments
        .iter()
        .all(|s| !layout.labels[s.label].is_real()));
}

fn same_layout(a: &SceneLayout, b: &SceneLayout) {
    assert_eq!(a.segments.len(), b.segments.len());
    for (x, y) in a.segments.iter().zip(&b.segments) {
        let (lx, ly) = (&a.labels[x.label], &b.labels[y.label]);
        assert_eq!(lx.kind, ly.kind);
        assert!(
            lx.plane.axis_angle_to(&ly.plane) < 1e-9
                && (lx.plane.offset - ly.plane.offset).abs() < 1e-9
        );
        assert!((x.interval.start_angle - y.interval.start_angle).abs() < 1e-9);
        assert!((x.interval.end_angle - y.interval.end_angle).abs() < 1e-9);
    }
}

#[test]
fn static_camera_temporal_parse_is_the_single_view_parse() {
    let world = simulator::world("box").unwrap();
    let traj = trajectory("box", 160);
    let config = config_for(&traj);
    for index in [0, 30, 60] {
        let analysis = analyze(&world, &traj, index, &config);
        let single = parse_single_view(&analysis, &config.parser).unwrap();
        let p = Pose2D::new(1.0, 2.0, 0.3);
        let temporal = parse_temporal(
            &single,
            &analysis,
            Some(&relative_transform(&p, &p)),
            &config,
        )
        .unwrap();
        assert_eq!(temporal.provenance, Provenance::Temporal);
        same_layout(&single, &temporal);
    }
}

fn true_pose2d(p: &TruePose) -> Pose2D {
    Pose2D::new(p.x, p.y, p.yaw)
}

#[test]
fn door_width_niche_is_carried_while_hidden() {
    // Corridor with a 0.825 m niche, 0.3 m deep, in its north wall. The
    // niche's back wall (index 4) returns no depth in frames 1 to 3.
    let walls = [
        [0.0, 0.0],
        [12.0, 0.0],
        [12.0, 2.0],
        [6.4125, 2.0],
        [6.4125, 2.3],
        [5.5875, 2.3],
        [5.5875, 2.0],
        [0.0, 2.0],
    ];
    let mut world = simulator::world("box").unwrap();
    world.walls = (0..walls.len())
        .map(|k| floorplan_slam::simulator::WallSpec {
            start: walls[k],
            end: walls[(k + 1) % walls.len()],
            height: 2.5,
            color: [(k as f64 * 40.0) % 256.0, 120.0, 180.0],
        })
        .collect();
    world.masks = vec![MaskSpec {
        wall: 4,
        from: 0.0,
        to: 0.825,
        frames: Some([1, 3]),
    }];
    let mut traj = simulator::standard_trajectory("box").unwrap();
    traj.poses = (0..4)
        .map(|i| pose(4.6 + 0.05 * i as f64, 0.6, 48.0))
        .collect();
    let config = config_for(&traj);

    let first = analyze(&world, &traj, 0, &config);
    let mut layout = parse_single_view(&first, &config.parser).unwrap();
    let niche = truth_walls(&world, &traj.poses[0])
        .into_iter()
        .find(|t| t.surface == 4)
        .unwrap();
    assert!(
        layout.segments.iter().any(|s| {
            let l = &layout.labels[s.label];
            l.is_real() && matching_truth(l, std::slice::from_ref(&niche), 2.0, 0.05).is_some()
        }),
        "niche not parsed in the first frame"
    );

    for index in 1..4 {
        let analysis = analyze(&world, &traj, index, &config);
        let rel = relative_transform(
            &true_pose2d(&traj.poses[index - 1]),
            &true_pose2d(&traj.poses[index]),
        );
        layout = parse_temporal(&layout, &analysis, Some(&rel), &config).unwrap();
        let niche = truth_walls(&world, &traj.poses[index])
            .into_iter()
            .find(|t| t.surface == 4)
            .unwrap();
        let carried = layout
            .segments
            .iter()
            .map(|s| &layout.labels[s.label])
            .find(|l| {
                l.is_real()
                    && l.carried_age > 0
                    && matching_truth(l, std::slice::from_ref(&niche), 2.0, 0.05).is_some()
            });
        let carried = carried.unwrap_or_else(|| panic!("frame {index}: niche not carried"));
        assert_eq!(carried.carried_age, index as u32);
    }
}
