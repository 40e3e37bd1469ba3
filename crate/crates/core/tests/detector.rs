use procams::device::Device;
use procams::geometry::{project, rotation_from_axis_angle, Intrinsics, Pose, Vec3};
use procams::imaging::{add_noise, render_sharp_capture, Image, SceneTextures};
use procams::optics::{convolve, make_disk_psf};
use procams::scene::{marker_corners_3d, FiducialBoard, PrismTarget, Target};
use procams::vision::{detect_markers, oracle_detect, Detection, NoiseModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn focused(dev: &Device, z: f64) -> Intrinsics {
    let p = dev.etl.power_for_focus(z).unwrap().power;
    dev.intrinsics_at_power(p).unwrap()
}

fn capture(dev: &Device, scene: &SceneTextures, pose: &Pose, blur: f64, seed: u64) -> (Image, Intrinsics) {
    let intr = focused(dev, pose.translation.z);
    let sharp = render_sharp_capture(scene, pose, &intr, dev.raster(), &dev.capture).unwrap();
    (add_noise(convolve(&sharp, &make_disk_psf(blur)), dev.capture.noise_sigma, seed), intr)
}

/// Squared corner errors of detections against projected truth.
fn corner_errors(target: &Target, pose: &Pose, intr: &Intrinsics, dets: &[Detection]) -> Vec<f64> {
    let mut out = Vec::new();
    for d in dets {
        let truth = marker_corners_3d(target, d.marker_id).unwrap();
        for (c, x) in d.corners.iter().zip(truth) {
            out.push((c - project(intr, pose, &x).unwrap()).norm_squared());
        }
    }
    out
}

fn rms(v: &[f64]) -> f64 {
    (v.iter().sum::<f64>() / v.len() as f64).sqrt()
}

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let z = rng.random_range(70.0..250.0);
    let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let tilt = rng.random_range(0.0..35f64.to_radians());
    let spin = rng.random_range(-3.1..3.1);
    let rot = rotation_from_axis_angle(Vec3::new(phi.cos(), phi.sin(), 0.0) * tilt)
        * rotation_from_axis_angle(Vec3::z() * spin);
    let t = Vec3::new(rng.random_range(-0.05..0.05) * z, rng.random_range(-0.05..0.05) * z, z);
    Pose { rotation: rot, translation: t }
}

#[test]
fn sharp_frontal_board() {
    let dev = Device::default();
    let target = Target::Board(FiducialBoard::evaluation_default());
    let scene = SceneTextures::new(&target);
    let pose = Pose::from_translation(Vec3::new(0.0, 0.0, 150.0));
    let (img, intr) = capture(&dev, &scene, &pose, 0.0, 1);
    let dets = detect_markers(&img);
    assert_eq!(dets.len(), 1);
    assert_eq!(dets[0].marker_id, 6);
    assert!(dets[0].decode_confidence > 0.9);
    let e = rms(&corner_errors(&target, &pose, &intr, &dets));
    assert!(e <= 0.15, "corner rms {e}");
}

#[test]
fn random_poses_all_detected() {
    let dev = Device::default();
    let target = Target::Board(FiducialBoard::evaluation_default());
    let scene = SceneTextures::new(&target);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut errs = Vec::new();
    for k in 0..50 {
        let pose = random_pose(&mut rng);
        let (img, intr) = capture(&dev, &scene, &pose, 0.0, k);
        let dets = detect_markers(&img);
        assert_eq!(dets.iter().map(|d| d.marker_id).collect::<Vec<_>>(), vec![6], "pose {k}: {pose:?}");
        errs.extend(corner_errors(&target, &pose, &intr, &dets));
    }
    let e = rms(&errs);
    println!("random-pose corner rms {e:.4} px");
    assert!(e <= 0.15, "{e}");
}

#[test]
fn corner_error_grows_with_blur() {
    let dev = Device::default();
    let target = Target::Board(FiducialBoard::evaluation_default());
    let scene = SceneTextures::new(&target);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let poses: Vec<Pose> = (0..20)
        .map(|_| {
            let mut p = random_pose(&mut rng);
            p.translation.z = rng.random_range(70.0..170.0);
            p
        })
        .collect();
    let mut prev = 0.0;
    for blur in [0.0, 2.0, 4.0, 8.0] {
        let mut errs = Vec::new();
        for (k, pose) in poses.iter().enumerate() {
            let (img, intr) = capture(&dev, &scene, pose, blur, 100 + k as u64);
            let dets = detect_markers(&img);
            assert_eq!(dets.len(), 1, "blur {blur}, pose {k}");
            errs.extend(corner_errors(&target, pose, &intr, &dets));
        }
        let e = rms(&errs);
        println!("blur {blur}: corner rms {e:.4} px");
        assert!(e >= prev, "blur {blur}: {e} < {prev}");
        prev = e;
    }
}

#[test]
fn rotated_marker_keeps_corner_identity() {
    let dev = Device::default();
    let target = Target::Board(FiducialBoard::evaluation_default());
    let scene = SceneTextures::new(&target);
    for k in 0..4 {
        let spin = std::f64::consts::FRAC_PI_2 * k as f64 + 0.1;
        let pose = Pose::from_axis_angle(Vec3::z() * spin, Vec3::new(0.0, 0.0, 130.0));
        let (img, intr) = capture(&dev, &scene, &pose, 0.0, k);
        let dets = detect_markers(&img);
        assert_eq!(dets.len(), 1);
        for e in corner_errors(&target, &pose, &intr, &dets) {
            assert!(e.sqrt() < 0.3);
        }
    }
}

#[test]
fn oracle_agrees_with_image_detector() {
    let dev = Device::default();
    let target = Target::Board(FiducialBoard::evaluation_default());
    let scene = SceneTextures::new(&target);
    let noise = NoiseModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in 0..10 {
        let pose = random_pose(&mut rng);
        let (img, intr) = capture(&dev, &scene, &pose, 0.0, k);
        let a = detect_markers(&img);
        let b = oracle_detect(&target, &pose, &intr, 0.0, &NoiseModel::NOISELESS, k);
        assert_eq!(a.len(), b.len());
        for (p, q) in a[0].corners.iter().zip(b[0].corners) {
            assert!((p - q).norm() < 3.0 * noise.sigma(0.0) * 2f64.sqrt(), "{}", (p - q).norm());
        }
    }
}

#[test]
fn prism_faces_detected() {
    let dev = Device::default();
    let target = Target::Prism(PrismTarget::default_prism());
    let scene = SceneTextures::new(&target);
    let pose = Pose::from_axis_angle(Vec3::new(0.0, 0.35, 0.0), Vec3::new(0.0, 0.0, 120.0));
    let (img, intr) = capture(&dev, &scene, &pose, 0.0, 3);
    let dets = detect_markers(&img);
    let ids: Vec<u16> = dets.iter().map(|d| d.marker_id).collect();
    assert!(ids.contains(&0) && ids.contains(&1), "{ids:?}");
    let e = rms(&corner_errors(&target, &pose, &intr, &dets));
    assert!(e < 0.3, "{e}");
}

#[test]
fn heavy_defocus_at_near_range() {
    // lens left at 0 D with the board at 70 mm: the uncorrected first frame
    let dev = Device::default();
    let target = Target::Board(FiducialBoard::evaluation_default());
    let scene = SceneTextures::new(&target);
    let pose = Pose::from_translation(Vec3::new(0.0, 0.0, 70.0));
    let img = dev.capture(&scene, &pose, 0.0, 0).unwrap();
    let dets = detect_markers(&img);
    assert_eq!(dets.iter().map(|d| d.marker_id).collect::<Vec<_>>(), vec![6]);
}
