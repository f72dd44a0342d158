use std::fs;
use std::path::Path;

use floorplan_slam::dataset::{ate_rmse, load_tum, StampedPose, Trajectory};
use floorplan_slam::error::Error;
use floorplan_slam::simulator::{self, Hit, TrajectorySpec, TruePose};
use image::{ImageBuffer, Luma, Rgb};
use nalgebra::{Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

/// Writes a 4 x 3 depth and color image pair per timestamp. Depth pixel
/// (u, v) holds `5000 + 1000 v`, except (0, 0) which is missing.
fn write_fixture(dir: &Path, depth_times: &[f64], rgb_times: &[f64]) {
    fs::create_dir_all(dir.join("depth")).unwrap();
    fs::create_dir_all(dir.join("rgb")).unwrap();
    let mut depth_index = String::from("# depth maps\n");
    for t in depth_times {
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(4, 3, |u, v| {
            Luma([if u + v == 0 {
                0
            } else {
                5000 + 1000 * v as u16
            }])
        });
        let name = format!("depth/{t:.6}.png");
        img.save(dir.join(&name)).unwrap();
        depth_index.push_str(&format!("{t:.6} {name}\n"));
    }
    let mut rgb_index = String::from("# color images\n");
    for t in rgb_times {
        let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_pixel(4, 3, Rgb([200, 40, 40]));
        let name = format!("rgb/{t:.6}.png");
        img.save(dir.join(&name)).unwrap();
        rgb_index.push_str(&format!("{t:.6} {name}\n"));
    }
    fs::write(dir.join("depth.txt"), depth_index).unwrap();
    fs::write(dir.join("rgb.txt"), rgb_index).unwrap();
}

#[test]
fn mini_fixture_associates_three_frames() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(
        dir.path(),
        &[1.0, 1.033, 1.066],
        &[1.012, 1.040, 1.070, 1.2],
    );
    let seq = load_tum(dir.path()).unwrap();
    assert_eq!(seq.timestamps(), vec![1.0, 1.033, 1.066]);
    for e in &seq.entries {
        assert!(e.rgb.starts_with(dir.path()) && e.depth.starts_with(dir.path()));
    }
    let frame = seq.load_frame(1).unwrap();
    assert_eq!((frame.width, frame.height), (4, 3));
    assert!(frame.points[0].is_none());
    // Depth 5000 is one meter along the optical axis.
    assert!((frame.points[1].unwrap().z - 1.0).abs() < 1e-12);
    assert!((frame.points[4].unwrap().z - 1.2).abs() < 1e-12);
    assert!((frame.points[11].unwrap().z - 1.4).abs() < 1e-12);
    assert!(frame.rgb.is_some());
}

#[test]
fn camera_file_overrides_intrinsics_and_gravity() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &[0.0, 0.1], &[0.0, 0.1]);
    fs::write(
        dir.path().join("camera.json"),
        r#"{"fx": 100, "fy": 100, "cx": 1.5, "cy": 1, "depth_scale": 1000, "gravity": [0, 2, 0]}"#,
    )
    .unwrap();
    let seq = load_tum(dir.path()).unwrap();
    assert_eq!(seq.intrinsics.fx, 100.0);
    assert_eq!(seq.gravity, Vector3::new(0.0, 1.0, 0.0));
    let frame = seq.load_frame(0).unwrap();
    assert!((frame.points[1].unwrap().z - 5.0).abs() < 1e-12);
}

#[test]
fn distant_streams_do_not_associate() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &[1.0, 2.0, 3.0], &[1.5, 2.5, 3.5]);
    assert!(matches!(
        load_tum(dir.path()),
        Err(Error::NoAssociations { .. })
    ));
}

#[test]
fn missing_index_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), &[1.0], &[1.0]);
    fs::remove_file(dir.path().join("depth.txt")).unwrap();
    match load_tum(dir.path()) {
        Err(Error::MissingIndexFile(p)) => assert!(p.ends_with("depth.txt")),
        other => panic!("{other:?}"),
    }
}

fn random_trajectory(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
    let poses = (0..n)
        .map(|k| {
            let t = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(0.0..2.0),
            );
            let r = Rotation3::from_euler_angles(0.0, 0.0, rng.random_range(-3.0..3.0));
            StampedPose::from_matrix(k as f64 * 0.1, t, r.matrix())
        })
        .collect();
    Trajectory { poses }
}

#[test]
fn gaussian_position_noise_gives_expected_error() {
    let sigma = 0.05;
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let truth = random_trajectory(&mut rng, n);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut estimated = truth.clone();
    let mut raw = 0.0;
    for p in &mut estimated.poses {
        let e = Vector3::from_fn(|_, _| noise.sample(&mut rng));
        raw += e.norm_squared();
        p.translation += e;
    }
    let raw = (raw / n as f64).sqrt();
    let ate = ate_rmse(&estimated, &truth).unwrap();
    // Alignment can only lower the error, and with six fitted parameters
    // against thousands of residuals it lowers it very little.
    assert!(ate <= raw + 1e-12);
    assert!(ate > 0.99 * raw, "ate {ate} vs raw {raw}");
    let expected = sigma * 3f64.sqrt();
    assert!(
        (ate - expected).abs() < 0.03 * expected,
        "ate {ate} vs {expected}"
    );
}

#[test]
fn error_is_invariant_under_rigid_motion() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let truth = random_trajectory(&mut rng, 50);
    let mut estimated = truth.clone();
    for p in &mut estimated.poses {
        p.translation += Vector3::new(
            rng.random_range(-0.1..0.1),
            rng.random_range(-0.1..0.1),
            0.0,
        );
    }
    let base = ate_rmse(&estimated, &truth).unwrap();
    let r = Rotation3::from_euler_angles(0.3, -0.2, 1.1);
    let t = Vector3::new(4.0, -7.0, 2.5);
    let mut moved = estimated.clone();
    for p in &mut moved.poses {
        p.translation = r * p.translation + t;
    }
    assert!((ate_rmse(&moved, &truth).unwrap() - base).abs() < 1e-9);
    assert!(
        (ate_rmse(&truth, &moved).unwrap() - ate_rmse(&truth, &estimated).unwrap()).abs() < 1e-9
    );
}

/// A camera at mid-height in the box room looking straight at the east
/// wall from 2 m.
fn facing_wall(depth_sigma: f64) -> TrajectorySpec {
    let mut traj = simulator::standard_trajectory("box").unwrap();
    traj.poses = vec![TruePose {
        x: 4.0,
        y: 2.0,
        yaw: 0.0,
        pitch: 0.0,
    }];
    traj.noise.depth_sigma = depth_sigma;
    traj.noise.seed = 9;
    traj
}

#[test]
fn wall_at_two_meters_renders_exact_depth() {
    let world = simulator::world("box").unwrap();
    let surfaces = world.surfaces();
    let rendered = simulator::render_frame(&world, &facing_wall(0.0), 0).unwrap();
    let frame = &rendered.frame;
    for k in 0..frame.width * frame.height {
        let Some(Hit::Surface(s)) = rendered.hits[k] else {
            panic!("pixel {k} missed the wall")
        };
        assert!(surfaces[s].a.x == 6.0 && surfaces[s].b.x == 6.0);
        let p = frame.points[k].unwrap();
        let ray = frame
            .intrinsics
            .ray((k % frame.width) as f64, (k / frame.width) as f64);
        assert!((p.z - 2.0).abs() < 1e-12);
        assert!((p - ray * (2.0 / ray.z)).norm() < 1e-12);
    }
}

#[test]
fn depth_noise_matches_its_configuration() {
    let sigma = 0.01;
    let world = simulator::world("box").unwrap();
    let exact = simulator::render_frame(&world, &facing_wall(0.0), 0).unwrap();
    let noisy = simulator::render_frame(&world, &facing_wall(sigma), 0).unwrap();
    assert_eq!(exact.hits, noisy.hits);
    assert_eq!(exact.world_points, noisy.world_points);
    let mut z: Vec<f64> = exact
        .frame
        .points
        .iter()
        .zip(&noisy.frame.points)
        .map(|(a, b)| (b.unwrap().norm() - a.unwrap().norm()) / sigma)
        .collect();
    z.sort_by(f64::total_cmp);
    // Kolmogorov-Smirnov statistic against the standard normal.
    let unit = StdNormal::new(0.0, 1.0).unwrap();
    let n = z.len() as f64;
    let d = z
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = unit.cdf(*x);
            (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 1.63 / n.sqrt(), "KS statistic {d} over {n} samples");
}

#[test]
fn masked_wall_section_has_no_depth() {
    let world = simulator::world("glass").unwrap();
    let traj = simulator::standard_trajectory("glass").unwrap();
    let surfaces = world.surfaces();
    for index in [0, 3] {
        let rendered = simulator::render_frame(&world, &traj, index).unwrap();
        let mut inside = 0;
        for k in 0..rendered.hits.len() {
            let (Some(Hit::Surface(s)), Some(p)) = (rendered.hits[k], rendered.world_points[k])
            else {
                continue;
            };
            let on_glass =
                surfaces[s].a.y == 2.0 && surfaces[s].b.y == 2.0 && (4.0..=7.0).contains(&p.x);
            if on_glass {
                inside += 1;
                assert_eq!(
                    rendered.frame.points[k].is_none(),
                    index > 0,
                    "frame {index} pixel {k}"
                );
            }
        }
        assert!(inside > 100, "frame {index} sees {inside} glass pixels");
    }
}

#[test]
fn outside_pose_is_rejected() {
    let world = simulator::world("box").unwrap();
    let mut traj = facing_wall(0.0);
    traj.poses[0].x = 7.0;
    assert!(matches!(
        simulator::render_frame(&world, &traj, 0),
        Err(Error::PoseOutsideWorld { .. })
    ));
}
