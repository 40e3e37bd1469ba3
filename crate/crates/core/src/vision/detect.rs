//! Image-based fiducial detector.
//!
//! Adaptive threshold → 8-connected dark components → convex hull →
//! Douglas-Peucker quadrilateral → edge-line corner refinement → grid
//! sampling through the quad homography → decode.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::Detection;
use crate::geometry::{homography_dlt, Homography, Vec2};
use crate::imaging::{bilinear_clamped, Image};
use crate::par;
use crate::scene::marker::{decode_any_rotation, encode_payload, rotate_cw, Payload, GRID, MAX_ID, PAYLOAD};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// Side of the thresholding window (px).
    pub block: usize,
    pub offset: f64,
    /// Larger windows tried when the first pass finds nothing.
    pub fallback_blocks: Vec<usize>,
    /// Douglas-Peucker tolerance as a fraction of the hull perimeter.
    pub dp_epsilon: f64,
    pub min_area_px: f64,
    /// Gaussian pre-smoothing (px) of the image used for corner refinement.
    pub edge_sigma: f64,
    /// Allow likelihood decoding against the codebook when hard decoding fails.
    pub soft_decode: bool,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            block: 32,
            offset: 0.02,
            fallback_blocks: vec![64, 128],
            dp_epsilon: 0.03,
            min_area_px: 25.0,
            edge_sigma: 1.0,
            soft_decode: true,
        }
    }
}

pub fn detect_markers(img: &Image) -> Vec<Detection> {
    detect_markers_with(img, &DetectorParams::default())
}

pub fn detect_markers_with(img: &Image, params: &DetectorParams) -> Vec<Detection> {
    if img.width() < 64 || img.height() < 64 {
        return vec![];
    }
    let gray = if img.channels() == 1 { img.clone() } else { img.luminance() };
    let mut blocks = vec![params.block];
    blocks.extend(params.fallback_blocks.iter().copied());
    for block in blocks {
        let found = detect_pass(&gray, block, params);
        if !found.is_empty() {
            return found;
        }
    }
    vec![]
}

fn detect_pass(gray: &Image, block: usize, params: &DetectorParams) -> Vec<Detection> {
    let mask = threshold(gray, block, params.offset);
    let comps = components(&mask, gray.width(), gray.height());
    let smooth = gaussian_blur(gray, params.edge_sigma);
    let mut dets: Vec<Detection> = par::map_slice(&comps, |c| {
        let quad = quad_from_component(c, params)?;
        let refined = refine_corners(&smooth, &quad).unwrap_or(quad);
        if !is_convex(&refined) || signed_area(&refined) < params.min_area_px {
            return None;
        }
        decode_quad(gray, &refined, params.soft_decode)
    })
    .into_iter()
    .flatten()
    .collect();
    // keep the most confident detection per id
    dets.sort_by(|a, b| a.marker_id.cmp(&b.marker_id).then(b.decode_confidence.total_cmp(&a.decode_confidence)));
    dets.dedup_by_key(|d| d.marker_id);
    dets
}

/// `v < mean(block) − offset` using an integral image.
fn threshold(gray: &Image, block: usize, offset: f64) -> Vec<bool> {
    let (w, h) = (gray.width(), gray.height());
    let mut integral = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += gray.get(x, y, 0);
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let r = block as isize / 2;
    let mut mask = vec![false; w * h];
    par::for_each_row(&mut mask, w, |y, row| {
        let y0 = (y as isize - r).max(0) as usize;
        let y1 = ((y as isize + r) as usize).min(h - 1) + 1;
        for (x, m) in row.iter_mut().enumerate() {
            let x0 = (x as isize - r).max(0) as usize;
            let x1 = ((x as isize + r) as usize).min(w - 1) + 1;
            let s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
            let mean = s / ((x1 - x0) * (y1 - y0)) as f64;
            *m = gray.get(x, y, 0) < mean - offset;
        }
    });
    mask
}

/// Separable Gaussian with replicated borders.
fn gaussian_blur(gray: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        return gray.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    let k: Vec<f64> = k.iter().map(|v| v / s).collect();
    let (w, h) = (gray.width(), gray.height());
    let mut tmp = vec![0.0; w * h];
    par::for_each_row(&mut tmp, w, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = (-r..=r).map(|i| k[(i + r) as usize] * gray.get_clamped(x as isize + i, y as isize, 0)).sum();
        }
    });
    let tmp = Image::from_vec(w, h, 1, tmp);
    let mut out = vec![0.0; w * h];
    par::for_each_row(&mut out, w, |y, row| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = (-r..=r).map(|i| k[(i + r) as usize] * tmp.get_clamped(x as isize, y as isize + i, 0)).sum();
        }
    });
    Image::from_vec(w, h, 1, out)
}

/// Pixel lists of 8-connected components that do not touch the image border.
fn components(mask: &[bool], w: usize, h: usize) -> Vec<Vec<(i32, i32)>> {
    let mut label = vec![false; w * h];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask[start] || label[start] {
            continue;
        }
        label[start] = true;
        stack.push(start);
        let mut pixels = Vec::new();
        let mut touches = false;
        while let Some(i) = stack.pop() {
            let (x, y) = ((i % w) as i32, (i / w) as i32);
            pixels.push((x, y));
            if x == 0 || y == 0 || x as usize == w - 1 || y as usize == h - 1 {
                touches = true;
            }
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask[j] && !label[j] {
                        label[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if !touches && pixels.len() >= 20 && pixels.len() < w * h / 2 {
            out.push(pixels);
        }
    }
    out
}

fn cross(o: Vec2, a: Vec2, b: Vec2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Monotone-chain hull; counter-clockwise in x-right/y-up terms, so the
/// shoelace area is positive in image coordinates.
fn convex_hull(points: &[(i32, i32)]) -> Vec<Vec2> {
    let mut pts: Vec<(i32, i32)> = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    let pts: Vec<Vec2> = pts.into_iter().map(|(x, y)| Vec2::new(x as f64, y as f64)).collect();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Vec2> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], *p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], *p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn point_line_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let d = b - a;
    let len = d.norm();
    if len == 0.0 {
        return (p - a).norm();
    }
    (d.x * (p.y - a.y) - d.y * (p.x - a.x)).abs() / len
}

fn douglas_peucker(chain: &[Vec2], eps: f64, out: &mut Vec<Vec2>) {
    let (a, b) = (chain[0], chain[chain.len() - 1]);
    let mut best = (0.0, 0);
    for (i, p) in chain.iter().enumerate().take(chain.len() - 1).skip(1) {
        let d = point_line_distance(*p, a, b);
        if d > best.0 {
            best = (d, i);
        }
    }
    if best.0 > eps {
        douglas_peucker(&chain[..=best.1], eps, out);
        douglas_peucker(&chain[best.1..], eps, out);
    } else {
        out.push(a);
    }
}

/// Closed-polygon simplification split at the two mutually farthest vertices.
fn simplify_closed(poly: &[Vec2], eps: f64) -> Vec<Vec2> {
    let n = poly.len();
    if n < 4 {
        return poly.to_vec();
    }
    let mut far = (0.0, 0, 0);
    for i in 0..n {
        for j in i + 1..n {
            let d = (poly[i] - poly[j]).norm_squared();
            if d > far.0 {
                far = (d, i, j);
            }
        }
    }
    let (i, j) = (far.1, far.2);
    let chain_a: Vec<Vec2> = (i..=j).map(|k| poly[k]).collect();
    let chain_b: Vec<Vec2> = (j..=i + n).map(|k| poly[k % n]).collect();
    let mut out = Vec::new();
    douglas_peucker(&chain_a, eps, &mut out);
    douglas_peucker(&chain_b, eps, &mut out);
    out
}

fn signed_area(q: &[Vec2]) -> f64 {
    let n = q.len();
    (0..n).map(|i| q[i].x * q[(i + 1) % n].y - q[(i + 1) % n].x * q[i].y).sum::<f64>() / 2.0
}

fn is_convex(q: &[Vec2; 4]) -> bool {
    (0..4).all(|i| cross(q[i], q[(i + 1) % 4], q[(i + 2) % 4]) > 0.0)
}

fn quad_from_component(pixels: &[(i32, i32)], params: &DetectorParams) -> Option<[Vec2; 4]> {
    let hull = convex_hull(pixels);
    if hull.len() < 4 {
        return None;
    }
    let perimeter: f64 = (0..hull.len()).map(|i| (hull[(i + 1) % hull.len()] - hull[i]).norm()).sum();
    let poly = simplify_closed(&hull, params.dp_epsilon * perimeter);
    if poly.len() != 4 {
        return None;
    }
    let mut q = [poly[0], poly[1], poly[2], poly[3]];
    if signed_area(&q) < 0.0 {
        q.reverse();
    }
    if !is_convex(&q) || signed_area(&q) < params.min_area_px {
        return None;
    }
    Some(q)
}

fn intersect(l1: (Vec2, Vec2), l2: (Vec2, Vec2)) -> Option<Vec2> {
    // lines as (point, direction)
    let (p, r) = l1;
    let (q, s) = l2;
    let denom = r.x * s.y - r.y * s.x;
    if denom.abs() < 1e-9 {
        return None;
    }
    let t = ((q.x - p.x) * s.y - (q.y - p.y) * s.x) / denom;
    Some(p + r * t)
}

fn fit_line(points: &[Vec2]) -> Option<(Vec2, Vec2)> {
    if points.len() < 4 {
        return None;
    }
    let mean = points.iter().sum::<Vec2>() / points.len() as f64;
    let mut cov = nalgebra::Matrix2::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let k = if eig.eigenvalues[0] > eig.eigenvalues[1] { 0 } else { 1 };
    Some((mean, eig.eigenvectors.column(k).into_owned()))
}

/// Subpixel corners from lines fitted to the half-intensity crossings along
/// each side's normal.
fn refine_corners(gray: &Image, quad: &[Vec2; 4]) -> Option<[Vec2; 4]> {
    let mut q = *quad;
    for _ in 0..2 {
        let center = q.iter().sum::<Vec2>() / 4.0;
        let side = (0..4).map(|i| (q[(i + 1) % 4] - q[i]).norm()).sum::<f64>() / 4.0;
        let cell = side / GRID as f64;
        let (t_in, t_out) = (0.5 * cell, 0.75 * cell);
        let step = 0.05;
        let mut lines = Vec::with_capacity(4);
        for i in 0..4 {
            let (a, b) = (q[i], q[(i + 1) % 4]);
            let len = (b - a).norm();
            let d = (b - a) / len;
            let mut n = Vec2::new(d.y, -d.x);
            if n.dot(&((a + b) * 0.5 - center)) < 0.0 {
                n = -n;
            }
            let samples = ((len / 2.0) as usize).clamp(8, 48);
            let mut pts = Vec::with_capacity(samples);
            for k in 0..samples {
                let s = 0.15 + 0.7 * (k as f64 + 0.5) / samples as f64;
                let p0 = a + (b - a) * s;
                let at = |t: f64| {
                    let p = p0 + n * t;
                    bilinear_clamped(gray, p.x, p.y, 0)
                };
                let dark = at(-t_in);
                let bright = at(t_out);
                if bright - dark < 0.05 {
                    continue;
                }
                // area under the normalized profile locates the step
                let steps = ((t_in + t_out) / step).round() as usize;
                let h = (t_in + t_out) / steps as f64;
                let mut area = 0.0;
                for k in 0..=steps {
                    let w = if k == 0 || k == steps { 0.5 } else { 1.0 };
                    area += w * (at(-t_in + k as f64 * h) - dark) / (bright - dark);
                }
                let e = t_out - area * h;
                if e > -t_in && e < t_out {
                    pts.push(p0 + n * e);
                }
            }
            lines.push(fit_line(&pts)?);
        }
        let mut next = [Vec2::zeros(); 4];
        for i in 0..4 {
            next[i] = intersect(lines[(i + 3) % 4], lines[i])?;
        }
        // refinement must stay near the coarse quad
        if (0..4).any(|i| (next[i] - quad[i]).norm() > 0.5 * side) {
            return None;
        }
        q = next;
    }
    Some(q)
}

/// Mean of a 3×3 sub-grid inside grid cell coordinates `(gx, gy)` (cell units).
fn sample_cell(gray: &Image, h: &Homography, gx: f64, gy: f64) -> Option<f64> {
    let mut acc = 0.0;
    for oy in [-0.25, 0.0, 0.25] {
        for ox in [-0.25, 0.0, 0.25] {
            let p = h.apply(Vec2::new(gx + ox, gy + oy)).ok()?;
            acc += bilinear_clamped(gray, p.x, p.y, 0);
        }
    }
    Some(acc / 9.0)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn decode_quad(gray: &Image, q: &[Vec2; 4], soft: bool) -> Option<Detection> {
    let g = GRID as f64;
    let grid_corners = [Vec2::new(0.0, 0.0), Vec2::new(g, 0.0), Vec2::new(g, g), Vec2::new(0.0, g)];
    let pairs: Vec<(Vec2, Vec2)> = grid_corners.iter().copied().zip(q.iter().copied()).collect();
    let h = homography_dlt(&pairs).ok()?;
    let mut cells = [[0.0; GRID]; GRID];
    for (r, row) in cells.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = sample_cell(gray, &h, c as f64 + 0.5, r as f64 + 0.5)?;
        }
    }
    let mut border = Vec::new();
    for i in 0..GRID {
        for j in 0..GRID {
            if i == 0 || j == 0 || i == GRID - 1 || j == GRID - 1 {
                border.push(cells[i][j]);
            }
        }
    }
    let mut ring = Vec::new();
    for k in 0..GRID {
        let t = k as f64 + 0.5;
        for (x, y) in [(t, -0.5), (t, g + 0.5), (-0.5, t), (g + 0.5, t)] {
            ring.push(sample_cell(gray, &h, x, y)?);
        }
    }
    let black = median(&mut border);
    let white = median(&mut ring);
    if white - black < 0.05 {
        return None;
    }
    let norm: Vec<f64> = cells.iter().flat_map(|row| row.iter()).map(|v| (v - black) / (white - black)).collect();
    let border_white = (0..GRID * GRID)
        .filter(|i| {
            let (r, c) = (i / GRID, i % GRID);
            (r == 0 || c == 0 || r == GRID - 1 || c == GRID - 1) && norm[*i] > 0.5
        })
        .count();
    let confidence = norm.iter().filter(|v| (*v - 0.5).abs() > 0.15).count() as f64 / norm.len() as f64;

    let mut payload: Payload = [[false; PAYLOAD]; PAYLOAD];
    for r in 0..PAYLOAD {
        for c in 0..PAYLOAD {
            payload[r][c] = norm[(r + 1) * GRID + c + 1] > 0.5;
        }
    }
    let decoded = if border_white == 0 { decode_any_rotation(&payload) } else { None };
    let (id, k) = match decoded {
        Some(v) => v,
        None if soft => soft_decode(&norm)?,
        None => return None,
    };
    let corners = std::array::from_fn(|j| q[(j + k) % 4]);
    Some(Detection { marker_id: id, corners, decode_confidence: confidence })
}

/// Cell-sample responses of the marker grid under a disc blur of a given
/// radius in cells: a constant part from the border and white surround,
/// plus one column per payload cell.
struct BlurBasis {
    fixed: [f64; GRID * GRID],
    payload: [[f64; PAYLOAD * PAYLOAD]; GRID * GRID],
}

const BLUR_RADII_CELLS: [f64; 10] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.7, 2.0];

fn blur_bases() -> &'static [BlurBasis] {
    static BASES: OnceLock<Vec<BlurBasis>> = OnceLock::new();
    BASES.get_or_init(|| BLUR_RADII_CELLS.iter().map(|&rho| blur_basis(rho)).collect())
}

fn blur_basis(rho: f64) -> BlurBasis {
    const TAPS: usize = 24;
    let mut taps = Vec::new();
    if rho == 0.0 {
        taps.push((0.0, 0.0));
    } else {
        for i in 0..TAPS {
            for j in 0..TAPS {
                let dx = ((i as f64 + 0.5) / TAPS as f64 * 2.0 - 1.0) * rho;
                let dy = ((j as f64 + 0.5) / TAPS as f64 * 2.0 - 1.0) * rho;
                if dx * dx + dy * dy <= rho * rho {
                    taps.push((dx, dy));
                }
            }
        }
    }
    let offsets = [-0.25, 0.0, 0.25];
    let weight = 1.0 / (taps.len() * offsets.len() * offsets.len()) as f64;
    let inside = |v: isize| (0..GRID as isize).contains(&v);
    let inner = |v: isize| (1..=PAYLOAD as isize).contains(&v);
    let mut fixed = [0.0; GRID * GRID];
    let mut payload = [[0.0; PAYLOAD * PAYLOAD]; GRID * GRID];
    for r in 0..GRID {
        for c in 0..GRID {
            let k = r * GRID + c;
            for oy in offsets {
                for ox in offsets {
                    for (dx, dy) in &taps {
                        let x = (c as f64 + 0.5 + ox + dx).floor() as isize;
                        let y = (r as f64 + 0.5 + oy + dy).floor() as isize;
                        if !(inside(x) && inside(y)) {
                            fixed[k] += weight;
                        } else if inner(x) && inner(y) {
                            payload[k][(y as usize - 1) * PAYLOAD + x as usize - 1] += weight;
                        }
                    }
                }
            }
        }
    }
    BlurBasis { fixed, payload }
}

/// Likelihood decoding: every codeword in every rotation, under a set of
/// disc-blur models with an affine intensity fit.
fn soft_decode(norm: &[f64]) -> Option<(u16, usize)> {
    let bases = blur_bases();
    let mut best = (f64::INFINITY, 0u16, 0usize);
    let mut second = f64::INFINITY;
    let mut model = [0.0; GRID * GRID];
    for id in 0..=MAX_ID {
        let mut p = encode_payload(id);
        for k in 0..4 {
            let bits: Vec<usize> = (0..PAYLOAD * PAYLOAD).filter(|i| p[i / PAYLOAD][i % PAYLOAD]).collect();
            let mut id_best = f64::INFINITY;
            for basis in bases {
                for (j, m) in model.iter_mut().enumerate() {
                    *m = basis.fixed[j] + bits.iter().map(|&b| basis.payload[j][b]).sum::<f64>();
                }
                if let Some(res) = affine_residual(norm, &model) {
                    id_best = id_best.min(res);
                }
            }
            if id_best < best.0 {
                second = second.min(best.0);
                best = (id_best, id, k);
            } else {
                second = second.min(id_best);
            }
            p = rotate_cw(&p);
        }
    }
    let rms = (best.0 / norm.len() as f64).sqrt();
    (rms < 0.12 && best.0 < 0.9 * second).then_some((best.1, best.2))
}

/// Sum of squared residuals of `obs ≈ a + b·model` with `b ≥ 0.3`.
fn affine_residual(obs: &[f64], model: &[f64]) -> Option<f64> {
    let n = obs.len() as f64;
    let (mx, my) = (model.iter().sum::<f64>() / n, obs.iter().sum::<f64>() / n);
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in model.iter().zip(obs) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 0.0 {
        return None;
    }
    let b = sxy / sxx;
    if b < 0.3 {
        return None;
    }
    let a = my - b * mx;
    Some(model.iter().zip(obs).map(|(x, y)| (y - a - b * x).powi(2)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hull_and_simplification_of_a_square() {
        let mut px = Vec::new();
        for y in 10..40 {
            for x in 20..50 {
                px.push((x, y));
            }
        }
        let q = quad_from_component(&px, &DetectorParams::default()).unwrap();
        assert!(signed_area(&q) > 0.0);
        let mut xs: Vec<(i64, i64)> = q.iter().map(|p| (p.x as i64, p.y as i64)).collect();
        xs.sort();
        assert_eq!(xs, vec![(20, 10), (20, 39), (49, 10), (49, 39)]);
    }

    #[test]
    fn soft_decode_recovers_blurred_codeword() {
        for (id, k, level) in [(6u16, 0usize, 3usize), (300, 1, 5), (1023, 3, 8)] {
            let mut p = encode_payload(id);
            for _ in 0..k {
                p = rotate_cw(&p);
            }
            let basis = &blur_bases()[level];
            let obs: Vec<f64> = (0..GRID * GRID)
                .map(|j| {
                    let bits = (0..PAYLOAD * PAYLOAD).filter(|b| p[b / PAYLOAD][b % PAYLOAD]);
                    0.2 + 0.5 * (basis.fixed[j] + bits.map(|b| basis.payload[j][b]).sum::<f64>())
                })
                .collect();
            assert_eq!(soft_decode(&obs), Some((id, k)));
        }
        assert_eq!(soft_decode(&[0.3; 36]), None);
    }

    #[test]
    fn blur_basis_weights_are_a_partition() {
        for basis in blur_bases() {
            for j in 0..GRID * GRID {
                let border = 1.0 - basis.fixed[j] - basis.payload[j].iter().sum::<f64>();
                assert!((-1e-12..=1.0).contains(&border));
            }
        }
        let sharp = &blur_bases()[0];
        assert_eq!(sharp.fixed, [0.0; GRID * GRID]);
        assert!((sharp.payload[GRID + 1][0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blank_images_give_nothing() {
        assert!(detect_markers(&Image::filled(128, 128, 1, 0.5)).is_empty());
        assert!(detect_markers(&Image::filled(32, 32, 1, 0.5)).is_empty());
    }
}
