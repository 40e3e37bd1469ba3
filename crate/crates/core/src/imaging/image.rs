use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("image dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize, usize), (usize, usize, usize)),
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("empty region")]
    EmptyRegion,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("codec: {0}")]
    Codec(String),
}

/// Row-major float raster with 1 or 3 interleaved channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self { width, height, channels, data: vec![value.clamp(0.0, 1.0); width * height * channels] }
    }

    /// Build from raw samples, clamping into `[0, 1]`.
    pub fn from_vec(width: usize, height: usize, channels: usize, mut data: Vec<f64>) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        assert_eq!(data.len(), width * height * channels, "data length mismatch");
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self { width, height, channels, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        let w = self.width;
        let ch = self.channels;
        self.data[(y * w + x) * ch + c] = v.clamp(0.0, 1.0);
    }

    /// Replicate-edge lookup with signed coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> f64 {
        let xi = x.clamp(0, self.width as isize - 1) as usize;
        let yi = y.clamp(0, self.height as isize - 1) as usize;
        self.get(xi, yi, c)
    }

    /// Bilinear sample at continuous pixel coordinates; zero outside the raster.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let at = |xx: isize, yy: isize| {
            if xx < 0 || yy < 0 || xx >= self.width as isize || yy >= self.height as isize {
                0.0
            } else {
                self.get(xx as usize, yy as usize, c)
            }
        };
        (1.0 - fy) * ((1.0 - fx) * at(xi, yi) + fx * at(xi + 1, yi))
            + fy * ((1.0 - fx) * at(xi, yi + 1) + fx * at(xi + 1, yi + 1))
    }

    /// Extract one channel as a grayscale image.
    pub fn channel(&self, c: usize) -> Image {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    /// Channel mean per pixel.
    pub fn luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.data.chunks(self.channels).map(|px| px.iter().sum::<f64>() / self.channels as f64).collect();
        Image { width: self.width, height: self.height, channels: 1, data }
    }

    /// Interleave three grayscale planes.
    pub fn from_planes(planes: &[Image]) -> Image {
        assert_eq!(planes.len(), 3);
        let (w, h) = (planes[0].width, planes[0].height);
        let mut data = vec![0.0; w * h * 3];
        for (c, p) in planes.iter().enumerate() {
            assert_eq!((p.width, p.height, p.channels), (w, h, 1));
            for (i, v) in p.data.iter().enumerate() {
                data[i * 3 + c] = *v;
            }
        }
        Image { width: w, height: h, channels: 3, data }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }

    pub fn max_abs_diff(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
    }

    fn quantized(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Binary PGM (1 channel) or PPM (3 channels), 8 bits per sample.
    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<(), ImageError> {
        use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
        use image::{ExtendedColorType, ImageEncoder};
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        let (subtype, color) = match self.channels {
            1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
            3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
            c => return Err(ImageError::Channels(c)),
        };
        PnmEncoder::new(file)
            .with_subtype(subtype)
            .write_image(&self.quantized(), self.width as u32, self.height as u32, color)
            .map_err(|e| ImageError::Codec(e.to_string()))
    }

    pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image, ImageError> {
        let reader = image::ImageReader::with_format(
            std::io::BufReader::new(std::fs::File::open(path)?),
            image::ImageFormat::Pnm,
        );
        let img = reader.decode().map_err(|e| ImageError::Codec(e.to_string()))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, bytes) = match img {
            image::DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
            other => (3, other.into_rgb8().into_raw()),
        };
        let data = bytes.into_iter().map(|b| b as f64 / 255.0).collect();
        Ok(Image { width: w, height: h, channels, data })
    }
}

/// Axis-aligned pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Region {
    pub fn full(img: &Image) -> Self {
        Self { x0: 0, y0: 0, x1: img.width(), y1: img.height() }
    }

    /// Square window of half-size `r` around `(cx, cy)`, clipped to the image.
    pub fn around(img: &Image, cx: f64, cy: f64, r: f64) -> Self {
        let clip = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
        Self {
            x0: clip((cx - r).floor(), img.width()),
            y0: clip((cy - r).floor(), img.height()),
            x1: clip((cx + r).ceil() + 1.0, img.width()),
            y1: clip((cy + r).ceil() + 1.0, img.height()),
        }
    }
}

/// Intensity-weighted centroid of pixels above `threshold`, weights reduced
/// by the threshold. Multi-channel images use the channel mean.
pub fn centroid(img: &Image, region: Region, threshold: f64) -> Result<(f64, f64), ImageError> {
    let (mut sw, mut sx, mut sy) = (0.0, 0.0, 0.0);
    let ch = img.channels();
    for y in region.y0..region.y1.min(img.height()) {
        for x in region.x0..region.x1.min(img.width()) {
            let v = (0..ch).map(|c| img.get(x, y, c)).sum::<f64>() / ch as f64;
            if v > threshold {
                let w = v - threshold;
                sw += w;
                sx += w * x as f64;
                sy += w * y as f64;
            }
        }
    }
    if sw <= 0.0 {
        return Err(ImageError::EmptyRegion);
    }
    Ok((sx / sw, sy / sw))
}

/// Peak signal-to-noise ratio for unit peak; identical images give `+∞`.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, ImageError> {
    if a.dims() != b.dims() {
        return Err(ImageError::DimensionMismatch(a.dims(), b.dims()));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}
