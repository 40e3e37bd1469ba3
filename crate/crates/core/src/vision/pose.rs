use nalgebra::Matrix3;

use super::{Detection, VisionError};
use crate::calibration::extrinsics_from_homography;
use crate::geometry::{homography_dlt, project, Intrinsics, Mat3, Pose, Vec2, Vec3};
use crate::optim::{levenberg_marquardt, LmOptions, Problem};
use crate::scene::{marker_corners_3d, PrismTarget, Target};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub pose: Pose,
    /// Reprojection RMS (px).
    pub rms: f64,
}

struct PoseProblem<'a> {
    intr: &'a Intrinsics,
    object: &'a [Vec3],
    image: &'a [Vec2],
}

impl Problem for PoseProblem<'_> {
    fn residual_count(&self) -> usize {
        2 * self.object.len()
    }

    fn residuals(&self, params: &[f64], out: &mut [f64]) -> bool {
        let pose = Pose::from_params(params);
        for (k, (x, u)) in self.object.iter().zip(self.image).enumerate() {
            match project(self.intr, &pose, x) {
                Ok(p) => {
                    out[2 * k] = p.x - u.x;
                    out[2 * k + 1] = p.y - u.y;
                }
                Err(_) => return false,
            }
        }
        true
    }
}

/// LM over the six pose parameters.
pub fn refine_pose(
    intr: &Intrinsics,
    object: &[Vec3],
    image: &[Vec2],
    init: &Pose,
) -> Result<PoseEstimate, VisionError> {
    let problem = PoseProblem { intr, object, image };
    let report = levenberg_marquardt(&problem, &init.to_params(), &LmOptions::default())
        .map_err(|e| VisionError::Refinement(e.to_string()))?;
    Ok(PoseEstimate { pose: Pose::from_params(report.params.as_slice()), rms: report.rms() })
}

/// Orthonormal frame with the points' best-fit plane as its xy-plane.
fn plane_frame(points: &[Vec3]) -> Result<Pose, VisionError> {
    let n = points.len() as f64;
    let c = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut idx = [0, 1, 2];
    idx.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
    let (l0, l1, l2) = (eig.eigenvalues[idx[0]], eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
    if !(l1 > 1e-9 * l0) || l2 > 1e-8 * l0 {
        return Err(VisionError::DegenerateConfiguration);
    }
    let e1 = eig.eigenvectors.column(idx[0]).into_owned();
    let e2 = eig.eigenvectors.column(idx[1]).into_owned();
    let e3 = e1.cross(&e2);
    Ok(Pose { rotation: Mat3::from_columns(&[e1, e2, e3]), translation: c })
}

/// Pose of a planar point set from pixel correspondences.
pub fn pnp_planar(intr: &Intrinsics, object: &[Vec3], image: &[Vec2]) -> Result<PoseEstimate, VisionError> {
    if object.len() != image.len() {
        return Err(VisionError::DegenerateConfiguration);
    }
    if object.len() < 4 {
        return Err(VisionError::InsufficientPoints(object.len()));
    }
    let frame = plane_frame(object)?;
    let to_plane = frame.inverse();
    let mut pairs = Vec::with_capacity(object.len());
    for (x, u) in object.iter().zip(image) {
        let q = to_plane.transform_point(x);
        let n = intr.pixel_to_normalized(*u).map_err(|_| VisionError::DegenerateConfiguration)?;
        pairs.push((Vec2::new(q.x, q.y), n));
    }
    let h = homography_dlt(&pairs).map_err(|_| VisionError::DegenerateConfiguration)?;
    let plane_pose = extrinsics_from_homography(&Intrinsics::pinhole(1.0, 1.0, 0.0, 0.0), &h)
        .map_err(|_| VisionError::DegenerateConfiguration)?;
    let init = plane_pose.compose(&to_plane);
    refine_pose(intr, object, image, &init)
}

/// Faces whose markers reproject within this many pixels agree with a pose.
const INLIER_RMS_PX: f64 = 4.0;

/// Pose of any target from its detected markers. Each detected face in turn
/// seeds a planar pose; faces that reproject under the seed and face the
/// camera count as its inliers. The seed with the most inliers, refined over
/// their correspondences, wins; ties go to the lower residual.
pub fn estimate_target_pose(
    target: &Target,
    detections: &[Detection],
    intr: &Intrinsics,
) -> Result<PoseEstimate, VisionError> {
    let mut groups: Vec<(usize, Vec<Vec3>, Vec<Vec2>)> = Vec::new();
    for d in detections {
        let Some((face, _)) = target.find_marker(d.marker_id) else { continue };
        let Ok(corners) = marker_corners_3d(target, d.marker_id) else { continue };
        let g = match groups.iter_mut().position(|g| g.0 == face) {
            Some(i) => &mut groups[i],
            None => {
                groups.push((face, Vec::new(), Vec::new()));
                groups.last_mut().unwrap()
            }
        };
        g.1.extend_from_slice(&corners);
        g.2.extend_from_slice(&d.corners);
    }
    if groups.is_empty() {
        return Err(VisionError::NoKnownMarkers);
    }
    let mut best: Option<(usize, PoseEstimate)> = None;
    let mut last_err = VisionError::DegenerateConfiguration;
    for (_, obj, img) in &groups {
        let init = match pnp_planar(intr, obj, img) {
            Ok(e) => e,
            Err(e) => {
                last_err = e;
                continue;
            }
        };
        let visible = target.visible_faces(&init.pose);
        let inliers: Vec<&(usize, Vec<Vec3>, Vec<Vec2>)> = groups
            .iter()
            .filter(|g| visible.contains(&g.0) && group_rms(intr, &init.pose, &g.1, &g.2) < INLIER_RMS_PX)
            .collect();
        if inliers.is_empty() {
            continue;
        }
        let est = if inliers.len() == 1 {
            Ok(init)
        } else {
            let object: Vec<Vec3> = inliers.iter().flat_map(|g| g.1.iter().copied()).collect();
            let image: Vec<Vec2> = inliers.iter().flat_map(|g| g.2.iter().copied()).collect();
            refine_pose(intr, &object, &image, &init.pose)
        };
        match est {
            Ok(e) if best.is_none_or(|(n, b)| inliers.len() > n || (inliers.len() == n && e.rms < b.rms)) => {
                best = Some((inliers.len(), e))
            }
            Ok(_) => {}
            Err(e) => last_err = e,
        }
    }
    best.map(|b| b.1).ok_or(last_err)
}

fn group_rms(intr: &Intrinsics, pose: &Pose, object: &[Vec3], image: &[Vec2]) -> f64 {
    let mut s = 0.0;
    for (x, u) in object.iter().zip(image) {
        match project(intr, pose, x) {
            Ok(p) => s += (p - u).norm_squared(),
            Err(_) => return f64::INFINITY,
        }
    }
    (s / object.len() as f64).sqrt()
}

/// Prism pose from all detected faces at once.
pub fn fuse_prism_pose(
    detections: &[Detection],
    prism: &PrismTarget,
    intr: &Intrinsics,
) -> Result<PoseEstimate, VisionError> {
    estimate_target_pose(&Target::Prism(prism.clone()), detections, intr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rotation_from_axis_angle;
    use crate::scene::FiducialBoard;
    use crate::vision::{oracle_detect, NoiseModel};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn intr() -> Intrinsics {
        Intrinsics::new(600.0, 600.0, 256.0, 256.0, -0.05, 0.01).unwrap()
    }

    fn marker_square(side: f64) -> Vec<Vec3> {
        let h = side / 2.0;
        vec![Vec3::new(-h, -h, 0.0), Vec3::new(h, -h, 0.0), Vec3::new(h, h, 0.0), Vec3::new(-h, h, 0.0)]
    }

    fn project_all(pose: &Pose, pts: &[Vec3]) -> Vec<Vec2> {
        pts.iter().map(|x| project(&intr(), pose, x).unwrap()).collect()
    }

    #[test]
    fn frontal_exact_recovery() {
        let truth = Pose::from_translation(Vec3::new(0.0, 0.0, 150.0));
        let obj = marker_square(13.0);
        let est = pnp_planar(&intr(), &obj, &project_all(&truth, &obj)).unwrap();
        let (dt, dr) = est.pose.difference(&truth);
        assert!(dt < 1e-4 && dr < 1e-6, "{dt} {dr}");
        assert!(est.rms < 1e-6);
    }

    #[test]
    fn too_few_or_collinear_points() {
        let obj = marker_square(13.0);
        let img = project_all(&Pose::from_translation(Vec3::new(0.0, 0.0, 150.0)), &obj);
        assert_eq!(pnp_planar(&intr(), &obj[..3], &img[..3]), Err(VisionError::InsufficientPoints(3)));
        let line: Vec<Vec3> = (0..5).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let img: Vec<Vec2> = (0..5).map(|i| Vec2::new(100.0 + i as f64, 100.0)).collect();
        assert_eq!(pnp_planar(&intr(), &line, &img), Err(VisionError::DegenerateConfiguration));
    }

    #[test]
    fn noisy_single_marker_depth() {
        let truth = Pose::from_axis_angle(Vec3::new(0.15, -0.1, 0.0), Vec3::new(0.0, 0.0, 150.0));
        let obj = marker_square(13.0);
        let exact = project_all(&truth, &obj);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let img: Vec<Vec2> =
            exact.iter().map(|p| p + Vec2::new(normal.sample(&mut rng), normal.sample(&mut rng))).collect();
        let est = pnp_planar(&intr(), &obj, &img).unwrap();
        assert!((est.pose.translation.z - 150.0).abs() < 1.5);
    }

    #[test]
    fn prism_single_face_exact() {
        let prism = PrismTarget::default_prism();
        let target = Target::Prism(prism.clone());
        let truth = Pose::from_axis_angle(Vec3::new(0.0, 0.05, 0.0), Vec3::new(1.0, 2.0, 180.0));
        let mut dets = oracle_detect(&target, &truth, &intr(), 0.0, &NoiseModel::NOISELESS, 0);
        dets.retain(|d| d.marker_id == 0);
        let est = fuse_prism_pose(&dets, &prism, &intr()).unwrap();
        let (dt, dr) = est.pose.difference(&truth);
        assert!(dt < 1e-4 && dr < 1e-6, "{dt} {dr}");
    }

    #[test]
    fn prism_two_faces_no_worse_on_average() {
        let prism = PrismTarget::default_prism();
        let target = Target::Prism(prism.clone());
        let truth = Pose::from_axis_angle(Vec3::new(0.0, 0.5, 0.0), Vec3::new(0.0, 0.0, 150.0));
        let noise = NoiseModel { sigma0: 0.1, eta: 0.0 };
        let (mut one, mut two) = (0.0, 0.0);
        for seed in 0..100 {
            let dets = oracle_detect(&target, &truth, &intr(), 0.0, &noise, seed);
            let ids: Vec<u16> = dets.iter().map(|d| d.marker_id).collect();
            assert!(ids.contains(&0) && ids.contains(&1) || ids.contains(&5));
            let both: Vec<Detection> = dets.iter().filter(|d| d.marker_id == 0 || d.marker_id == 5).cloned().collect();
            let single: Vec<Detection> = dets.iter().filter(|d| d.marker_id == 0).cloned().collect();
            one += (fuse_prism_pose(&single, &prism, &intr()).unwrap().pose.translation.z - 150.0).abs();
            two += (fuse_prism_pose(&both, &prism, &intr()).unwrap().pose.translation.z - 150.0).abs();
        }
        assert!(two <= one, "two faces {two} vs one {one}");
    }

    #[test]
    fn unknown_ids_rejected() {
        let prism = PrismTarget::default_prism();
        let det = Detection {
            marker_id: 500,
            corners: [Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0), Vec2::new(0.0, 10.0)],
            decode_confidence: 1.0,
        };
        assert_eq!(fuse_prism_pose(&[det], &prism, &intr()), Err(VisionError::NoKnownMarkers));
        assert_eq!(fuse_prism_pose(&[], &prism, &intr()), Err(VisionError::NoKnownMarkers));
    }

    #[test]
    fn misread_back_face_is_outvoted() {
        let prism = PrismTarget::default_prism();
        let target = Target::Prism(prism.clone());
        let truth = Pose::from_axis_angle(Vec3::new(0.0, 0.2, 0.0), Vec3::new(0.0, 0.0, 200.0));
        let mut dets = oracle_detect(&target, &truth, &intr(), 0.0, &NoiseModel::NOISELESS, 0);
        assert!(dets.len() >= 2);
        let visible = target.visible_faces(&truth);
        let hidden = (0..6).find(|i| !visible.contains(i)).unwrap();
        let mut ghost = dets[0].clone();
        ghost.marker_id = prism.markers[hidden].id;
        dets.push(ghost);
        let est = estimate_target_pose(&target, &dets, &intr()).unwrap();
        let (dt, _) = est.pose.difference(&truth);
        assert!(dt < 1e-3, "{dt}");
    }

    #[test]
    fn board_pose_from_calibration_grid() {
        let target = Target::Board(FiducialBoard::calibration_grid(4, 3, 10.0, 16));
        let truth = Pose::from_axis_angle(Vec3::new(0.3, 0.2, 0.1), Vec3::new(-5.0, 4.0, 160.0));
        let dets = oracle_detect(&target, &truth, &intr(), 0.0, &NoiseModel::NOISELESS, 0);
        assert_eq!(dets.len(), 12);
        let est = estimate_target_pose(&target, &dets, &intr()).unwrap();
        let (dt, dr) = est.pose.difference(&truth);
        assert!(dt < 1e-4 && dr < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn planar_round_trip(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
                             tilt in 0.0f64..1.04, spin in -3.1f64..3.1,
                             tx in -15.0f64..15.0, ty in -15.0f64..15.0, tz in 90.0f64..250.0) {
            let axis = Vec3::new(ax, ay, 0.0);
            let axis = if axis.norm() < 1e-3 { Vec3::x() } else { axis.normalize() };
            let _ = az;
            let r = rotation_from_axis_angle(axis * tilt) * rotation_from_axis_angle(Vec3::z() * spin);
            let truth = Pose { rotation: r, translation: Vec3::new(tx, ty, tz) };
            let obj: Vec<Vec3> = (0..3).flat_map(|i| (0..3).map(move |j| Vec3::new(i as f64 * 6.0 - 6.0, j as f64 * 6.0 - 6.0, 0.0))).collect();
            let img = project_all(&truth, &obj);
            let est = pnp_planar(&intr(), &obj, &img).unwrap();
            let (dt, dr) = est.pose.difference(&truth);
            prop_assert!(dt < 1e-5 && dr < 1e-7, "{} {}", dt, dr);
        }
    }
}
