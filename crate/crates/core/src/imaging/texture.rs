use super::Image;
use crate::geometry::Vec2;
use crate::par;

/// Mip-mapped texture covering a face rectangle `[-hw, hw] × [-hh, hh]` mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    half_width: f64,
    half_height: f64,
    texel_mm: f64,
    levels: Vec<Image>,
}

impl Texture {
    /// Texel size is adjusted so an integer number of texels spans the face.
    pub fn from_fn<F>(
        half_width: f64,
        half_height: f64,
        texel_mm: f64,
        channels: usize,
        supersample: usize,
        f: F,
    ) -> Self
    where
        F: Fn(Vec2) -> [f64; 3] + Sync,
    {
        let tw = ((2.0 * half_width / texel_mm).ceil() as usize).max(1);
        let texel = 2.0 * half_width / tw as f64;
        let th = ((2.0 * half_height / texel).ceil() as usize).max(1);
        let s = supersample.max(1);
        let mut data = vec![0.0; tw * th * channels];
        par::for_each_row(&mut data, tw * channels, |j, row| {
            for i in 0..tw {
                let mut acc = [0.0; 3];
                for sy in 0..s {
                    for sx in 0..s {
                        let u = -half_width + (i as f64 + (sx as f64 + 0.5) / s as f64) * texel;
                        let v = -half_height + (j as f64 + (sy as f64 + 0.5) / s as f64) * texel;
                        let val = f(Vec2::new(u, v));
                        for c in 0..channels {
                            acc[c] += val[c];
                        }
                    }
                }
                for c in 0..channels {
                    row[i * channels + c] = acc[c] / (s * s) as f64;
                }
            }
        });
        let base = Image::from_vec(tw, th, channels, data);
        Self::from_image(half_width, half_height, texel, base)
    }

    /// Wraps an image whose texel `(i, j)` covers
    /// `[-hw + i·t, -hw + (i+1)·t] × [-hh + j·t, …]`.
    pub fn from_image(half_width: f64, half_height: f64, texel_mm: f64, base: Image) -> Self {
        let mut levels = vec![base];
        loop {
            let last = levels.last().unwrap();
            if last.width() <= 1 && last.height() <= 1 {
                break;
            }
            levels.push(downsample(last));
        }
        Self { half_width, half_height, texel_mm, levels }
    }

    pub fn texel_mm(&self) -> f64 {
        self.texel_mm
    }

    pub fn base(&self) -> &Image {
        &self.levels[0]
    }

    pub fn channels(&self) -> usize {
        self.levels[0].channels()
    }

    /// Face coordinates (mm) of base texel center `(i, j)`.
    pub fn texel_center(&self, i: usize, j: usize) -> Vec2 {
        Vec2::new(
            -self.half_width + (i as f64 + 0.5) * self.texel_mm,
            -self.half_height + (j as f64 + 0.5) * self.texel_mm,
        )
    }

    /// Base-level texel coordinates of a face point.
    pub fn to_texel(&self, p: Vec2) -> Vec2 {
        Vec2::new((p.x + self.half_width) / self.texel_mm - 0.5, (p.y + self.half_height) / self.texel_mm - 0.5)
    }

    /// Trilinear sample for a footprint of `footprint_mm`.
    pub fn sample(&self, p: Vec2, footprint_mm: f64, c: usize) -> f64 {
        let lod = (footprint_mm / self.texel_mm).max(1.0).log2();
        let l0 = (lod.floor() as usize).min(self.levels.len() - 1);
        let l1 = (l0 + 1).min(self.levels.len() - 1);
        let t = if l0 == l1 { 0.0 } else { lod - l0 as f64 };
        let a = self.sample_level(l0, p, c);
        if t <= 0.0 {
            return a;
        }
        a * (1.0 - t) + self.sample_level(l1, p, c) * t
    }

    fn sample_level(&self, level: usize, p: Vec2, c: usize) -> f64 {
        let img = &self.levels[level];
        let scale = (1usize << level) as f64;
        let tx = (p.x + self.half_width) / (self.texel_mm * scale) - 0.5;
        let ty = (p.y + self.half_height) / (self.texel_mm * scale) - 0.5;
        bilinear_clamped(img, tx, ty, c)
    }
}

/// Bilinear sampling with replicate edges.
pub fn bilinear_clamped(img: &Image, x: f64, y: f64, c: usize) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let (fx, fy) = (x - x0, y - y0);
    let (xi, yi) = (x0 as isize, y0 as isize);
    let g = |dx: isize, dy: isize| img.get_clamped(xi + dx, yi + dy, c);
    (g(0, 0) * (1.0 - fx) + g(1, 0) * fx) * (1.0 - fy) + (g(0, 1) * (1.0 - fx) + g(1, 1) * fx) * fy
}

/// 2×2 box average; odd trailing texels are replicated.
fn downsample(img: &Image) -> Image {
    let (w, h, ch) = img.dims();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut data = vec![0.0; nw * nh * ch];
    par::for_each_row(&mut data, nw * ch, |y, row| {
        for x in 0..nw {
            for c in 0..ch {
                let (sx, sy) = (2 * x as isize, 2 * y as isize);
                let s = img.get_clamped(sx, sy, c)
                    + img.get_clamped((sx + 1).min(w as isize - 1), sy, c)
                    + img.get_clamped(sx, (sy + 1).min(h as isize - 1), c)
                    + img.get_clamped((sx + 1).min(w as isize - 1), (sy + 1).min(h as isize - 1), c);
                row[x * ch + c] = s / 4.0;
            }
        }
    });
    Image::from_vec(nw, nh, ch, data)
}
