//! Separable Gaussian filtering on single-channel planes with replicated
//! borders.

/// Sampled Gaussian derivative kernel of the given order (0, 1 or 2),
/// centered, radius ⌈4σ⌉. Normalized so that it reproduces the exact
/// derivative of a polynomial of that order.
pub fn gaussian_kernel(sigma: f64, order: u8) -> Vec<f64> {
    assert!(sigma > 0.0);
    let radius = (4.0 * sigma).ceil().max(1.0) as i64;
    let s2 = sigma * sigma;
    let g: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * s2)).exp())
        .collect();
    let sum: f64 = g.iter().sum();
    let g: Vec<f64> = g.into_iter().map(|v| v / sum).collect();
    let offs = (-radius..=radius).map(|i| i as f64);
    match order {
        0 => g,
        1 => {
            let mut k: Vec<f64> = offs.zip(&g).map(|(x, &v)| -x / s2 * v).collect();
            // Σ i·k(i) = −1 makes (f*k)' exact for linear f.
            let m: f64 = (-radius..=radius).zip(&k).map(|(i, v)| i as f64 * v).sum();
            k.iter_mut().for_each(|v| *v /= -m);
            k
        }
        2 => {
            let mut k: Vec<f64> = offs
                .zip(&g)
                .map(|(x, &v)| (x * x / (s2 * s2) - 1.0 / s2) * v)
                .collect();
            let mean = k.iter().sum::<f64>() / k.len() as f64;
            k.iter_mut().for_each(|v| *v -= mean);
            let m: f64 = (-radius..=radius)
                .zip(&k)
                .map(|(i, v)| (i * i) as f64 / 2.0 * v)
                .sum();
            k.iter_mut().for_each(|v| *v /= m);
            k
        }
        _ => panic!("unsupported derivative order {order}"),
    }
}

fn convolve_rows(src: &[f64], width: usize, height: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let w = width as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        let dst = &mut out[y * width..(y + 1) * width];
        for (x, d) in dst.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                // correlation with a flipped kernel index = convolution
                let sx = (x as isize + r - j as isize).clamp(0, w - 1);
                acc += kv * row[sx as usize];
            }
            *d = acc;
        }
    }
    out
}

fn convolve_cols(src: &[f64], width: usize, height: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as isize;
    let h = height as isize;
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        let dst = &mut out[y * width..(y + 1) * width];
        for (j, kv) in k.iter().enumerate() {
            let sy = (y as isize + r - j as isize).clamp(0, h - 1) as usize;
            let row = &src[sy * width..(sy + 1) * width];
            for (d, s) in dst.iter_mut().zip(row) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Applies `kx` along x then `ky` along y.
pub fn separable(src: &[f64], width: usize, height: usize, kx: &[f64], ky: &[f64]) -> Vec<f64> {
    debug_assert_eq!(src.len(), width * height);
    let tmp = convolve_rows(src, width, height, kx);
    convolve_cols(&tmp, width, height, ky)
}

pub fn gaussian_blur(src: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma, 0);
    separable(src, width, height, &k, &k)
}

/// Central-difference gradient magnitude and orientation (radians, atan2
/// of dy/dx, y pointing down) with replicated borders.
pub fn gradient_polar(src: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mag = vec![0.0; src.len()];
    let mut ori = vec![0.0; src.len()];
    for y in 0..height {
        let ym = y.saturating_sub(1);
        let yp = (y + 1).min(height - 1);
        for x in 0..width {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(width - 1);
            let dx = src[y * width + xp] - src[y * width + xm];
            let dy = src[yp * width + x] - src[ym * width + x];
            let i = y * width + x;
            mag[i] = (dx * dx + dy * dy).sqrt();
            ori[i] = dy.atan2(dx);
        }
    }
    (mag, ori)
}
