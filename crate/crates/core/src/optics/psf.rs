use rustfft::num_complex::Complex64;

use super::fft::Fft2d;
use crate::imaging::Image;
use crate::par;

/// Largest kernel side convolved directly; larger kernels go through the FFT.
pub const DIRECT_MAX_SIDE: usize = 15;

/// Normalized, antialiased disk kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct DiskPsf {
    radius: f64,
    side: usize,
    weights: Vec<f64>,
}

impl DiskPsf {
    pub fn identity() -> Self {
        Self { radius: 0.0, side: 1, weights: vec![1.0] }
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn half(&self) -> usize {
        self.side / 2
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dx, dy)` from the center.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let h = self.half() as isize;
        if dx.abs() > h || dy.abs() > h {
            return 0.0;
        }
        self.weights[((dy + h) as usize) * self.side + (dx + h) as usize]
    }

    pub fn is_identity(&self) -> bool {
        self.side == 1
    }
}

/// Disk of the given radius with per-cell coverage from 4×4 supersampling.
pub fn make_disk_psf(radius: f64) -> DiskPsf {
    if !(radius >= 0.5) {
        return DiskPsf::identity();
    }
    let half = radius.ceil() as usize;
    let side = 2 * half + 1;
    let r2 = radius * radius;
    let offsets = [-0.375, -0.125, 0.125, 0.375];
    let mut weights = vec![0.0; side * side];
    for j in 0..side {
        for i in 0..side {
            let (cx, cy) = (i as f64 - half as f64, j as f64 - half as f64);
            let mut hits = 0u32;
            for oy in offsets {
                for ox in offsets {
                    let (x, y) = (cx + ox, cy + oy);
                    if x * x + y * y <= r2 {
                        hits += 1;
                    }
                }
            }
            weights[j * side + i] = hits as f64 / 16.0;
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    DiskPsf { radius, side, weights }
}

/// 2-D convolution with replicate-edge boundaries.
pub fn convolve(img: &Image, psf: &DiskPsf) -> Image {
    if psf.is_identity() {
        return img.clone();
    }
    if psf.side() <= DIRECT_MAX_SIDE {
        convolve_direct(img, psf)
    } else {
        convolve_fft(img, psf)
    }
}

pub fn convolve_direct(img: &Image, psf: &DiskPsf) -> Image {
    let (w, h, ch) = img.dims();
    let half = psf.half() as isize;
    let mut out = vec![0.0; w * h * ch];
    par::for_each_row(&mut out, w * ch, |y, row| {
        for x in 0..w {
            for c in 0..ch {
                let mut acc = 0.0;
                for ky in -half..=half {
                    for kx in -half..=half {
                        let k = psf.at(kx, ky);
                        if k != 0.0 {
                            acc += k * img.get_clamped(x as isize - kx, y as isize - ky, c);
                        }
                    }
                }
                row[x * ch + c] = acc;
            }
        }
    });
    Image::from_vec(w, h, ch, out)
}

/// Kernel spectrum on an `fw × fh` grid, kernel centered at the origin.
fn kernel_spectrum(psf: &DiskPsf, fft: &Fft2d) -> Vec<Complex64> {
    let (fw, fh) = (fft.width(), fft.height());
    let half = psf.half() as isize;
    let mut k = vec![Complex64::new(0.0, 0.0); fw * fh];
    for dy in -half..=half {
        for dx in -half..=half {
            let x = dx.rem_euclid(fw as isize) as usize;
            let y = dy.rem_euclid(fh as isize) as usize;
            k[y * fw + x].re += psf.at(dx, dy);
        }
    }
    fft.forward(&mut k);
    k
}

pub fn convolve_fft(img: &Image, psf: &DiskPsf) -> Image {
    let (w, h, ch) = img.dims();
    let half = psf.half();
    let (ew, eh) = (w + 2 * half, h + 2 * half);
    let fft = Fft2d::new(ew.next_power_of_two(), eh.next_power_of_two());
    let (fw, fh) = (fft.width(), fft.height());
    let kspec = kernel_spectrum(psf, &fft);
    let mut out = vec![0.0; w * h * ch];
    for c in 0..ch {
        let mut buf = vec![Complex64::new(0.0, 0.0); fw * fh];
        for y in 0..eh {
            for x in 0..ew {
                let v = img.get_clamped(x as isize - half as isize, y as isize - half as isize, c);
                buf[y * fw + x] = Complex64::new(v, 0.0);
            }
        }
        fft.forward(&mut buf);
        for (b, k) in buf.iter_mut().zip(&kspec) {
            *b *= k;
        }
        fft.inverse(&mut buf);
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) * ch + c] = buf[(y + half) * fw + x + half].re;
            }
        }
    }
    Image::from_vec(w, h, ch, out)
}

/// Wiener precompensation `G = H* / (|H|² + nsr)`, zero-padded to the next
/// power of two per side, cropped back and clamped to `[0, 1]`.
pub fn wiener_precompensate(img: &Image, psf: &DiskPsf, nsr: f64) -> Image {
    assert!(nsr > 0.0, "nsr must be positive");
    if psf.is_identity() {
        return img.clone();
    }
    let (w, h, ch) = img.dims();
    let fft = Fft2d::new(w.next_power_of_two(), h.next_power_of_two());
    let (fw, fh) = (fft.width(), fft.height());
    let gain: Vec<Complex64> =
        kernel_spectrum(psf, &fft).into_iter().map(|hk| hk.conj() / (hk.norm_sqr() + nsr)).collect();
    let mut out = vec![0.0; w * h * ch];
    for c in 0..ch {
        let mut buf = vec![Complex64::new(0.0, 0.0); fw * fh];
        for y in 0..h {
            for x in 0..w {
                buf[y * fw + x].re = img.get(x, y, c);
            }
        }
        fft.forward(&mut buf);
        for (b, g) in buf.iter_mut().zip(&gain) {
            *b *= g;
        }
        fft.inverse(&mut buf);
        for y in 0..h {
            for x in 0..w {
                out[(y * w + x) * ch + c] = buf[y * fw + x].re;
            }
        }
    }
    Image::from_vec(w, h, ch, out)
}

/// Checkerboard of `square` px cells alternating between `lo` and `hi`.
pub fn checker_pattern(width: usize, height: usize, square: usize, lo: f64, hi: f64) -> Image {
    let data = (0..width * height)
        .map(|i| {
            let (x, y) = (i % width, i / width);
            if ((x / square) + (y / square)) % 2 == 0 {
                lo
            } else {
                hi
            }
        })
        .collect();
    Image::from_vec(width, height, 1, data)
}

/// Reference pattern for precompensation benefit: 8 px cells at 0.4 / 0.6,
/// leaving headroom for the filter's overshoot before clamping.
pub fn standard_checker(width: usize, height: usize) -> Image {
    checker_pattern(width, height, 8, 0.4, 0.6)
}

/// PSNR gain (dB) of `blur(precompensate(p))` over `blur(p)` against `p`.
pub fn precompensation_gain(pattern: &Image, psf: &DiskPsf, nsr: f64) -> f64 {
    let blurred = convolve(pattern, psf);
    let corrected = convolve(&wiener_precompensate(pattern, psf, nsr), psf);
    let p = |img: &Image| crate::imaging::psnr(img, pattern).expect("same size");
    p(&corrected) - p(&blurred)
}
