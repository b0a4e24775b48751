//! Binary and grey-level morphology on row-major grids.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Exact squared Euclidean distance from every pixel to the nearest `true`
/// pixel (Felzenszwalb–Huttenlocher lower-envelope algorithm, one pass over
/// columns then one over rows). Grids without any `true` pixel yield
/// `f64::INFINITY` everywhere.
pub fn squared_edt(mask: &[bool], width: usize, height: usize) -> Vec<f64> {
    assert_eq!(mask.len(), width * height);
    let n = width.max(height);
    let mut f = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0; n + 1];

    let mut out: Vec<f64> = mask
        .iter()
        .map(|&m| if m { 0.0 } else { f64::INFINITY })
        .collect();

    for x in 0..width {
        for y in 0..height {
            f[y] = out[y * width + x];
        }
        lower_envelope(&f[..height], &mut d[..height], &mut v, &mut z);
        for y in 0..height {
            out[y * width + x] = d[y];
        }
    }
    for y in 0..height {
        let row = &mut out[y * width..(y + 1) * width];
        f[..width].copy_from_slice(row);
        lower_envelope(&f[..width], &mut d[..width], &mut v, &mut z);
        row.copy_from_slice(&d[..width]);
    }
    out
}

fn lower_envelope(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + (q * q) as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let s = (fq - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        d.iter_mut().for_each(|x| *x = f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, dq) in d.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let dx = q as f64 - p as f64;
        *dq = dx * dx + f[p];
    }
}

/// Euclidean distance to the nearest `true` pixel.
pub fn edt(mask: &[bool], width: usize, height: usize) -> Vec<f64> {
    let mut d = squared_edt(mask, width, height);
    d.iter_mut().for_each(|x| *x = math::sqrt(*x));
    d
}

/// Dilation by a Euclidean disc of the given radius.
pub fn dilate_disc(mask: &[bool], width: usize, height: usize, radius: f64) -> Vec<bool> {
    let r2 = radius * radius + 1e-9;
    squared_edt(mask, width, height)
        .into_iter()
        .map(|d| d <= r2)
        .collect()
}

/// Erosion by a Euclidean disc of the given radius.
pub fn erode_disc(mask: &[bool], width: usize, height: usize, radius: f64) -> Vec<bool> {
    let inv: Vec<bool> = mask.iter().map(|&m| !m).collect();
    let r2 = radius * radius + 1e-9;
    squared_edt(&inv, width, height)
        .into_iter()
        .map(|d| d > r2)
        .collect()
}

fn box_1d(src: &[bool], dst: &mut [bool], radius: usize, want_all: bool) {
    let n = src.len();
    let mut prefix = vec![0u32; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + src[i] as u32;
    }
    for i in 0..n {
        let lo = i.saturating_sub(radius);
        let hi = (i + radius + 1).min(n);
        let count = prefix[hi] - prefix[lo];
        dst[i] = if want_all {
            // Pixels past the border count as set, so erosion does not eat
            // roads touching the raster edge.
            count as usize == hi - lo
        } else {
            count > 0
        };
    }
}

fn box_filter(
    mask: &[bool],
    width: usize,
    height: usize,
    radius: usize,
    want_all: bool,
) -> Vec<bool> {
    let mut tmp = vec![false; mask.len()];
    for y in 0..height {
        box_1d(
            &mask[y * width..(y + 1) * width],
            &mut tmp[y * width..(y + 1) * width],
            radius,
            want_all,
        );
    }
    let mut out = vec![false; mask.len()];
    let mut col = vec![false; height];
    let mut col_out = vec![false; height];
    for x in 0..width {
        for y in 0..height {
            col[y] = tmp[y * width + x];
        }
        box_1d(&col, &mut col_out, radius, want_all);
        for y in 0..height {
            out[y * width + x] = col_out[y];
        }
    }
    out
}

/// Closing (dilate then erode) with a `(2r+1)²` square.
pub fn close_square(mask: &[bool], width: usize, height: usize, radius: usize) -> Vec<bool> {
    if radius == 0 {
        return mask.to_vec();
    }
    let d = box_filter(mask, width, height, radius, false);
    box_filter(&d, width, height, radius, true)
}

/// Normalised 1D Gaussian kernel truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = math::ceil(3.0 * sigma).max(1.0) as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| math::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= s);
    k
}

/// Separable Gaussian blur with zero padding.
pub fn gaussian_blur(values: &[f32], width: usize, height: usize, sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0f32; values.len()];
    for y in 0..height {
        let row = &values[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0f64;
            for (i, w) in k.iter().enumerate() {
                let sx = x as isize + i as isize - r;
                if sx >= 0 && (sx as usize) < width {
                    acc += *w * row[sx as usize] as f64;
                }
            }
            tmp[y * width + x] = acc as f32;
        }
    }
    let mut out = vec![0.0f32; values.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0f64;
            for (i, w) in k.iter().enumerate() {
                let sy = y as isize + i as isize - r;
                if sy >= 0 && (sy as usize) < height {
                    acc += *w * tmp[sy as usize * width + x] as f64;
                }
            }
            out[y * width + x] = acc as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_sq(mask: &[bool], w: usize, h: usize) -> Vec<f64> {
        let sites: Vec<(usize, usize)> = (0..w * h)
            .filter(|&i| mask[i])
            .map(|i| (i % w, i / w))
            .collect();
        (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                sites
                    .iter()
                    .map(|&(sx, sy)| {
                        let dx = sx as f64 - x as f64;
                        let dy = sy as f64 - y as f64;
                        dx * dx + dy * dy
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn edt_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (w, h, p) in [(1, 1, 0.5), (7, 3, 0.2), (33, 17, 0.05), (64, 64, 0.01)] {
            let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(p)).collect();
            assert_eq!(squared_edt(&mask, w, h), brute_sq(&mask, w, h));
        }
    }

    #[test]
    fn edt_of_empty_grid_is_infinite() {
        assert!(edt(&[false; 12], 4, 3).iter().all(|d| d.is_infinite()));
    }

    #[test]
    fn closing_fills_pinholes() {
        let (w, h) = (20, 9);
        let mut mask: Vec<bool> = (0..w * h).map(|i| (2..7).contains(&(i / w))).collect();
        mask[4 * w + 10] = false;
        mask[3 * w + 4] = false;
        let closed = close_square(&mask, w, h, 1);
        assert!(closed[4 * w + 10] && closed[3 * w + 4]);
        assert_eq!(closed.iter().filter(|&&b| b).count(), 5 * w);
    }

    #[test]
    fn blur_preserves_mass_away_from_borders() {
        let (w, h) = (41, 41);
        let mut v = vec![0.0f32; w * h];
        v[20 * w + 20] = 1.0;
        let b = gaussian_blur(&v, w, h, 2.0);
        let s: f32 = b.iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
        assert!(b[20 * w + 20] > b[20 * w + 22]);
    }
}
