use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::par;

/// Row-column 2-D FFT over a `width × height` complex grid.
pub struct Fft2d {
    width: usize,
    height: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2d {
    pub fn new(width: usize, height: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            width,
            height,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_fwd, &self.col_fwd);
    }

    /// Inverse transform including the `1/(w·h)` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.row_inv, &self.col_inv);
        let s = 1.0 / (self.width * self.height) as f64;
        for v in data.iter_mut() {
            *v *= s;
        }
    }

    fn run(&self, data: &mut [Complex64], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(data.len(), self.width * self.height);
        par::for_each_row(data, self.width, |_, row| rows.process(row));
        let mut t = transpose(data, self.width, self.height);
        par::for_each_row(&mut t, self.height, |_, col| cols.process(col));
        let back = transpose(&t, self.height, self.width);
        data.copy_from_slice(&back);
    }
}

fn transpose(data: &[Complex64], w: usize, h: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); w * h];
    par::for_each_row(&mut out, h, |x, col| {
        for (y, v) in col.iter_mut().enumerate() {
            *v = data[y * w + x];
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_dc() {
        let (w, h) = (8, 4);
        let orig: Vec<Complex64> = (0..w * h).map(|i| Complex64::new((i as f64).sin(), 0.0)).collect();
        let f = Fft2d::new(w, h);
        let mut d = orig.clone();
        f.forward(&mut d);
        let dc: f64 = orig.iter().map(|c| c.re).sum();
        assert!((d[0].re - dc).abs() < 1e-12);
        f.inverse(&mut d);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
