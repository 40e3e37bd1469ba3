//! Rasters, textures and the three renderers: what the device captures in
//! IR, what it casts onto the target in visible light, and what an external
//! observer sees.

mod image;
pub mod render;
mod texture;

pub use image::{centroid, psnr, Image, ImageError, Region};
pub use render::{
    add_noise, capture_homography, face_homography, projection_homography, render_capture, render_content,
    render_external, render_projection_on_surface, render_sharp_capture, CaptureSettings, ExternalCamera, Hit,
    RenderError, SceneTextures, SurfaceIrradiance,
};
pub use texture::{bilinear_clamped, Texture};
