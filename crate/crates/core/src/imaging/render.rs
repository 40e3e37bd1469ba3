//! Ray-cast rendering of planar targets for the device (capture and
//! projection) and for an external observer camera.

use nalgebra::{Matrix2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::texture::{bilinear_clamped, Texture};
use super::Image;
use crate::geometry::{project_camera_point, GeometryError, Homography, Intrinsics, Mat3, Pose, Vec2, Vec3};
use crate::optics::{convolve, make_disk_psf, Channel, EtlModel, OpticsError};
use crate::par;
use crate::scene::{Face, Target};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("no target face is visible from the camera")]
    NoVisibleSurface,
    #[error("device image is {got:?}, expected {expected:?}")]
    SizeMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Optics(#[from] OpticsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Sensor-side rendering parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaptureSettings {
    pub noise_sigma: f64,
    pub seed: u64,
    /// Subsamples per pixel side.
    pub supersample: usize,
    /// Capture value of zero albedo and of empty background.
    pub ambient_floor: f64,
}

impl Default for CaptureSettings {
    fn default() -> Self {
        Self { noise_sigma: 0.003, seed: 0, supersample: 2, ambient_floor: 0.02 }
    }
}

/// Target plus precomputed albedo textures, one per face.
#[derive(Debug, Clone)]
pub struct SceneTextures {
    target: Target,
    faces: Vec<Face>,
    albedo: Vec<Texture>,
}

impl SceneTextures {
    pub fn new(target: &Target) -> Self {
        let faces = target.faces();
        let texel = default_texel_mm(target);
        let albedo = faces
            .iter()
            .map(|f| {
                let idx = f.index;
                Texture::from_fn(f.half_width, f.half_height, texel, 1, 4, |p| [target.albedo(idx, p); 3])
            })
            .collect();
        Self { target: target.clone(), faces, albedo }
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn albedo(&self, face: usize) -> &Texture {
        &self.albedo[face]
    }
}

/// A sixteenth of the smallest printed feature, capped so no face exceeds
/// 2048 texels per side.
fn default_texel_mm(target: &Target) -> f64 {
    let mut feature = f64::INFINITY;
    for (_, m) in target.markers() {
        feature = feature.min(m.marker.side_mm / crate::scene::marker::GRID as f64);
    }
    if let Target::Board(b) = target {
        if !b.reference_dots.is_empty() {
            feature = feature.min(b.dot_radius_mm);
        }
    }
    let extent = target.faces().iter().map(|f| 2.0 * f.half_width.max(f.half_height)).fold(0.0, f64::max);
    if !feature.is_finite() {
        feature = extent / 64.0;
    }
    (feature / 16.0).max(extent / 2048.0)
}

/// Face mm → ideal (undistorted) pixel: `K · [r1 r2 t]` of the face in the camera frame.
pub fn face_homography(intr: &Intrinsics, pose: &Pose, face: &Face) -> Result<Homography, GeometryError> {
    Homography::new(intr.matrix() * face_plane_matrix(pose, face))
}

/// Device pixel (undistorted) → face mm, used to inverse-warp the albedo.
pub fn capture_homography(intr: &Intrinsics, pose: &Pose, face: &Face) -> Result<Homography, GeometryError> {
    Ok(face_homography(intr, pose, face)?.inverse())
}

/// Face mm → device pixel (undistorted): where each face point pulls its
/// irradiance from. The coaxial design makes this the capture homography's inverse.
pub fn projection_homography(intr: &Intrinsics, pose: &Pose, face: &Face) -> Result<Homography, GeometryError> {
    face_homography(intr, pose, face)
}

fn face_plane_matrix(pose: &Pose, face: &Face) -> Mat3 {
    let fp = pose.compose(&face.to_object);
    let r = fp.rotation;
    Mat3::from_columns(&[r.column(0).into_owned(), r.column(1).into_owned(), fp.translation])
}

/// Ray-face intersection in a given camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    pub face: usize,
    pub uv: Vec2,
    pub depth: f64,
    /// Approximate surface extent (mm) of one subsample.
    pub footprint_mm: f64,
}

struct FaceCast {
    index: usize,
    inv: Mat3,
    normal: Vec3,
    half_width: f64,
    half_height: f64,
}

fn face_casts(pose: &Pose, faces: &[Face]) -> Vec<FaceCast> {
    faces
        .iter()
        .filter_map(|f| {
            let inv = face_plane_matrix(pose, f).try_inverse()?;
            Some(FaceCast {
                index: f.index,
                inv,
                normal: pose.transform_vector(&f.normal()),
                half_width: f.half_width,
                half_height: f.half_height,
            })
        })
        .collect()
}

fn cast(casts: &[FaceCast], n: Vec2, mm_per_unit: f64) -> Option<Hit> {
    let ray = Vector3::new(n.x, n.y, 1.0);
    let mut best: Option<Hit> = None;
    for fc in casts {
        let facing = fc.normal.dot(&ray);
        if facing >= 0.0 {
            continue;
        }
        let q = fc.inv * ray;
        if q.z <= 0.0 {
            continue;
        }
        let depth = 1.0 / q.z;
        let uv = Vec2::new(q.x * depth, q.y * depth);
        if uv.x.abs() > fc.half_width || uv.y.abs() > fc.half_height {
            continue;
        }
        if best.is_some_and(|b| b.depth <= depth) {
            continue;
        }
        let cos = (-facing / ray.norm()).max(0.05);
        let footprint_mm = depth * mm_per_unit * ray.norm() / cos;
        best = Some(Hit { face: fc.index, uv, depth, footprint_mm });
    }
    best
}

/// Normalized ray of a pixel center and its derivative with respect to the
/// pixel position, from the inverse of the distortion Jacobian.
fn pixel_ray(intr: &Intrinsics, px: Vec2) -> Option<(Vec2, Matrix2<f64>)> {
    let n = intr.pixel_to_normalized(px).ok()?;
    let r2 = n.norm_squared();
    let f = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2;
    let df = 2.0 * (intr.k1 + 2.0 * intr.k2 * r2);
    let jd = Matrix2::identity() * f + n * n.transpose() * df;
    let k = Matrix2::new(intr.fx, intr.skew, 0.0, intr.fy);
    let jinv = (k * jd).try_inverse()?;
    Some((n, jinv))
}

/// Ray-casts every pixel of a `w × h` raster and averages `shade` over
/// `ss × ss` subsamples. Lens distortion is inverted at each pixel center and
/// linearized across the pixel.
pub fn raycast<F>(
    intr: &Intrinsics,
    pose: &Pose,
    faces: &[Face],
    wh: (usize, usize),
    supersample: usize,
    channels: usize,
    shade: F,
) -> Image
where
    F: Fn(Option<Hit>) -> [f64; 3] + Sync,
{
    raycast_adaptive(intr, pose, faces, wh, supersample, supersample, channels, shade)
}

/// As [`raycast`], but pixels whose `base × base` subsamples disagree are
/// re-sampled on a `refine × refine` grid.
#[allow(clippy::too_many_arguments)]
pub fn raycast_adaptive<F>(
    intr: &Intrinsics,
    pose: &Pose,
    faces: &[Face],
    (w, h): (usize, usize),
    base: usize,
    refine: usize,
    channels: usize,
    shade: F,
) -> Image
where
    F: Fn(Option<Hit>) -> [f64; 3] + Sync,
{
    let casts = face_casts(pose, faces);
    let base = base.max(1);
    let refine = refine.max(base);
    let mut data = vec![0.0; w * h * channels];
    par::for_each_row(&mut data, w * channels, |y, row| {
        let grid = |ray: &Option<(Vec2, Matrix2<f64>)>, ss: usize, out: &mut Vec<[f64; 3]>| {
            out.clear();
            let mm_per_unit = 1.0 / (intr.fx.min(intr.fy) * ss as f64);
            for sy in 0..ss {
                for sx in 0..ss {
                    // multi-jittered layout: all ss² x and y projections are distinct
                    let n = ss as f64;
                    let d = Vec2::new(
                        (sx as f64 + (sy as f64 + 0.5) / n) / n - 0.5,
                        (sy as f64 + (sx as f64 + 0.5) / n) / n - 0.5,
                    );
                    let hit = ray.as_ref().and_then(|(n0, j)| cast(&casts, n0 + j * d, mm_per_unit));
                    out.push(shade(hit));
                }
            }
        };
        let mut samples = Vec::with_capacity(refine * refine);
        for x in 0..w {
            let ray = pixel_ray(intr, Vec2::new(x as f64, y as f64));
            if refine > base {
                // an edge crossing the pixel separates at least two of its corners
                let corner = |dx: f64, dy: f64| {
                    let hit = ray.as_ref().and_then(|(n0, j)| cast(&casts, n0 + j * Vec2::new(dx, dy), 0.0));
                    shade(hit)
                };
                let cs = [corner(-0.5, -0.5), corner(0.5, -0.5), corner(0.5, 0.5), corner(-0.5, 0.5)];
                let uniform = cs.iter().all(|v| (0..channels).all(|c| (v[c] - cs[0][c]).abs() < 1e-12));
                grid(&ray, if uniform { base } else { refine }, &mut samples);
            } else {
                grid(&ray, base, &mut samples);
            }
            let n = samples.len() as f64;
            for c in 0..channels {
                row[x * channels + c] = samples.iter().map(|v| v[c]).sum::<f64>() / n;
            }
        }
    });
    Image::from_vec(w, h, channels, data)
}

fn require_visible(target: &Target, pose: &Pose) -> Result<Vec<usize>, RenderError> {
    let vis = target.visible_faces(pose);
    if vis.is_empty() {
        return Err(RenderError::NoVisibleSurface);
    }
    Ok(vis)
}

/// Subsample grid side for capture pixels that straddle an albedo edge.
const CAPTURE_REFINE: usize = 8;

/// Noise-free, blur-free IR capture with the given (already power-adjusted) intrinsics.
pub fn render_sharp_capture(
    scene: &SceneTextures,
    pose: &Pose,
    intr: &Intrinsics,
    device_wh: (usize, usize),
    settings: &CaptureSettings,
) -> Result<Image, RenderError> {
    require_visible(&scene.target, pose)?;
    let floor = settings.ambient_floor;
    let target = &scene.target;
    let refine = CAPTURE_REFINE.max(settings.supersample);
    Ok(raycast_adaptive(intr, pose, &scene.faces, device_wh, settings.supersample, refine, 1, |hit| match hit {
        Some(h) => [floor + (1.0 - floor) * target.albedo(h.face, h.uv); 3],
        None => [floor; 3],
    }))
}

/// IR capture: sharp render, defocus at the target-origin depth, sensor noise.
pub fn render_capture(
    scene: &SceneTextures,
    pose: &Pose,
    etl: &EtlModel,
    base: &Intrinsics,
    power: f64,
    device_wh: (usize, usize),
    settings: &CaptureSettings,
) -> Result<Image, RenderError> {
    let intr = etl.intrinsics_at_power(base, power)?;
    let sharp = render_sharp_capture(scene, pose, &intr, device_wh, settings)?;
    let blur = etl.blur_radius(pose.translation.z, power, Channel::Ir)?;
    let blurred = convolve(&sharp, &make_disk_psf(blur));
    Ok(add_noise(blurred, settings.noise_sigma, settings.seed))
}

/// I.i.d. Gaussian noise, clamped. Each row draws from its own ChaCha
/// stream so the result does not depend on thread scheduling.
pub fn add_noise(img: Image, sigma: f64, seed: u64) -> Image {
    if sigma <= 0.0 {
        return img;
    }
    let (w, h, ch) = img.dims();
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let mut data = img.into_data();
    par::for_each_row(&mut data, w * ch, |y, row| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(y as u64);
        for v in row.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    });
    Image::from_vec(w, h, ch, data)
}

/// Light arriving on each face, in face-texture coordinates. Faces that
/// cannot receive light hold `None`.
#[derive(Debug, Clone)]
pub struct SurfaceIrradiance {
    pub textures: Vec<Option<Texture>>,
}

impl SurfaceIrradiance {
    pub fn zero(faces: usize) -> Self {
        Self { textures: vec![None; faces] }
    }

    pub fn sample(&self, face: usize, p: Vec2, footprint_mm: f64, c: usize) -> f64 {
        match &self.textures[face] {
            Some(t) => t.sample(p, footprint_mm, c.min(t.channels() - 1)),
            None => 0.0,
        }
    }

    pub fn face(&self, face: usize) -> Option<&Texture> {
        self.textures.get(face).and_then(|t| t.as_ref())
    }
}

/// Casts `device_img` through the shared lens onto every visible face.
///
/// Each face texel looks up the device pixel it sees under
/// `intrinsics_at_power(power)`; visible-channel defocus is then applied in
/// texture space with a per-face scale of `depth / fx` mm per device pixel.
pub fn render_projection_on_surface(
    device_img: &Image,
    scene: &SceneTextures,
    pose: &Pose,
    etl: &EtlModel,
    base: &Intrinsics,
    power: f64,
    device_wh: (usize, usize),
) -> Result<SurfaceIrradiance, RenderError> {
    if (device_img.width(), device_img.height()) != device_wh {
        return Err(RenderError::SizeMismatch { expected: device_wh, got: (device_img.width(), device_img.height()) });
    }
    let intr = etl.intrinsics_at_power(base, power)?;
    let visible = require_visible(&scene.target, pose)?;
    let blur_vis = etl.blur_radius(pose.translation.z, power, Channel::Visible)?;
    let ch = device_img.channels();
    let mut textures = vec![None; scene.faces.len()];
    for &fi in &visible {
        let face = &scene.faces[fi];
        let grid = scene.albedo[fi].base();
        let (tw, th) = (grid.width(), grid.height());
        let albedo = &scene.albedo[fi];
        let fp = pose.compose(&face.to_object);
        let normal = pose.transform_vector(&face.normal());
        let mut data = vec![0.0; tw * th * ch];
        par::for_each_row(&mut data, tw * ch, |j, row| {
            for i in 0..tw {
                let uv = albedo.texel_center(i, j);
                let xc = fp.transform_point(&Vec3::new(uv.x, uv.y, 0.0));
                if normal.dot(&xc) >= 0.0 {
                    continue;
                }
                if let Ok(px) = project_camera_point(&intr, &xc) {
                    for c in 0..ch {
                        row[i * ch + c] = device_img.sample_bilinear(px.x, px.y, c);
                    }
                }
            }
        });
        let sharp = Image::from_vec(tw, th, ch, data);
        let mm_per_px = fp.translation.z / intr.fx;
        let radius_tex = blur_vis * mm_per_px / albedo.texel_mm();
        let blurred = convolve(&sharp, &make_disk_psf(radius_tex));
        textures[fi] = Some(Texture::from_image(face.half_width, face.half_height, albedo.texel_mm(), blurred));
    }
    Ok(SurfaceIrradiance { textures })
}

/// Observer camera looking at the scene from outside the device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExternalCamera {
    pub intrinsics: Intrinsics,
    pub width: usize,
    pub height: usize,
    /// Device frame → external camera frame.
    pub pose: Pose,
}

impl ExternalCamera {
    /// Camera at `distance` mm from `aim` (device frame), rotated `angle` rad
    /// about the device `y` axis from the optical axis toward `+x`.
    pub fn looking_at(
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
        aim: Vec3,
        distance: f64,
        angle: f64,
    ) -> Self {
        let center = aim + Vec3::new(angle.sin(), 0.0, -angle.cos()) * distance;
        let z = (aim - center).normalize();
        let x = Vec3::new(0.0, 1.0, 0.0).cross(&z).normalize();
        let y = z.cross(&x);
        let rotation = Mat3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self { intrinsics, width, height, pose: Pose { rotation, translation: -(rotation * center) } }
    }

    /// 800×600, f = 1000 px, 45° side view, 350 mm from a point 160 mm down the axis.
    pub fn evaluation_default() -> Self {
        Self::looking_at(
            Intrinsics::pinhole(1000.0, 1000.0, 399.5, 299.5),
            800,
            600,
            Vec3::new(0.0, 0.0, 160.0),
            350.0,
            std::f64::consts::FRAC_PI_4,
        )
    }
}

/// External view: `albedo · ambient + irradiance` per channel, clamped.
pub fn render_external(
    ext: &ExternalCamera,
    scene: &SceneTextures,
    pose: &Pose,
    irradiance: &SurfaceIrradiance,
    ambient: f64,
    supersample: usize,
) -> Image {
    let view = ext.pose.compose(pose);
    raycast(&ext.intrinsics, &view, &scene.faces, (ext.width, ext.height), supersample, 3, |hit| match hit {
        Some(h) => {
            let a = scene.albedo[h.face].sample(h.uv, h.footprint_mm, 0) * ambient;
            std::array::from_fn(|c| a + irradiance.sample(h.face, h.uv, h.footprint_mm, c))
        }
        None => [0.0; 3],
    })
}

/// Face-space image of arbitrary content, rendered into a camera raster.
pub fn render_content(
    intr: &Intrinsics,
    pose: &Pose,
    faces: &[Face],
    content: &[Option<Texture>],
    wh: (usize, usize),
    supersample: usize,
) -> Image {
    raycast(intr, pose, faces, wh, supersample, 3, |hit| match hit {
        Some(h) => match &content[h.face] {
            Some(t) => std::array::from_fn(|c| t.sample(h.uv, h.footprint_mm, c.min(t.channels() - 1))),
            None => [0.0; 3],
        },
        None => [0.0; 3],
    })
}

/// Bilinear lookup in texture space, in `[0, 1]` mm-grid texel units.
pub fn texel_bilinear(tex: &Texture, p: Vec2, c: usize) -> f64 {
    let t = tex.to_texel(p);
    bilinear_clamped(tex.base(), t.x, t.y, c)
}
