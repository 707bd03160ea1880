//! SIFT descriptors on single planes, plus the per-channel color variants.

use std::collections::HashMap;
use std::f64::consts::TAU;

use crate::error::{Error, Result};
use crate::imaging::filter::{gaussian_blur, gradient_polar};
use crate::imaging::{ColorSpace, Raster};
use crate::interest::Keypoint;

pub const SIFT_DIM: usize = 128;
const GRID: usize = 4;
const ORI_BINS: usize = 8;
/// Descriptor window half-width in units of keypoint scale.
pub const MAGNIFICATION: f64 = 3.0;
const CLAMP: f64 = 0.2;
const MIN_ENERGY: f64 = 1e-12;
const ORI_HIST_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f64 = 1.5;
const ORI_PEAK_RATIO: f64 = 0.8;

/// Gradient magnitude/orientation of one plane smoothed at one scale.
#[derive(Debug, Clone)]
pub struct GradientField {
    width: usize,
    height: usize,
    mag: Vec<f64>,
    ori: Vec<f64>,
}

impl GradientField {
    pub fn new(plane: &[f64], width: usize, height: usize, sigma: f64) -> Self {
        let smooth = gaussian_blur(plane, width, height, sigma);
        let (mag, ori) = gradient_polar(&smooth, width, height);
        GradientField {
            width,
            height,
            mag,
            ori,
        }
    }

    /// Visits every in-image pixel within `radius` (box) of the keypoint.
    fn for_each_in_box<F: FnMut(f64, f64, f64, f64)>(&self, kp: &Keypoint, radius: f64, mut f: F) {
        let x0 = (kp.x - radius).ceil().max(0.0) as usize;
        let y0 = (kp.y - radius).ceil().max(0.0) as usize;
        let x1 = (kp.x + radius).floor().min(self.width as f64 - 1.0);
        let y1 = (kp.y + radius).floor().min(self.height as f64 - 1.0);
        if x1 < 0.0 || y1 < 0.0 {
            return;
        }
        for py in y0..=y1 as usize {
            for px in x0..=x1 as usize {
                let i = py * self.width + px;
                f(px as f64 - kp.x, py as f64 - kp.y, self.mag[i], self.ori[i]);
            }
        }
    }

    /// Dominant orientations: histogram peak first, then any local peak
    /// within 80% of it.
    pub fn orientations(&self, kp: &Keypoint) -> Vec<f64> {
        let sigma = ORI_SIGMA_FACTOR * kp.scale;
        let radius = 3.0 * sigma;
        let mut hist = [0.0f64; ORI_HIST_BINS];
        self.for_each_in_box(kp, radius, |dx, dy, mag, ori| {
            let r2 = dx * dx + dy * dy;
            if r2 > radius * radius || mag == 0.0 {
                return;
            }
            let w = (-r2 / (2.0 * sigma * sigma)).exp();
            let b = ((ori.rem_euclid(TAU)) / TAU * ORI_HIST_BINS as f64) as usize % ORI_HIST_BINS;
            hist[b] += w * mag;
        });
        for _ in 0..2 {
            let prev = hist;
            for i in 0..ORI_HIST_BINS {
                let l = prev[(i + ORI_HIST_BINS - 1) % ORI_HIST_BINS];
                let r = prev[(i + 1) % ORI_HIST_BINS];
                hist[i] = (l + prev[i] + r) / 3.0;
            }
        }
        let max = hist.iter().cloned().fold(0.0, f64::max);
        if max <= 0.0 {
            return vec![0.0];
        }
        let mut peaks: Vec<(f64, f64)> = Vec::new();
        for i in 0..ORI_HIST_BINS {
            let l = hist[(i + ORI_HIST_BINS - 1) % ORI_HIST_BINS];
            let r = hist[(i + 1) % ORI_HIST_BINS];
            let v = hist[i];
            if v > l && v >= r && v >= ORI_PEAK_RATIO * max {
                let denom = l - 2.0 * v + r;
                let off = if denom.abs() > 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
                let theta = ((i as f64 + 0.5 + off) / ORI_HIST_BINS as f64 * TAU).rem_euclid(TAU);
                peaks.push((v, theta));
            }
        }
        if peaks.is_empty() {
            return vec![0.0];
        }
        peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.total_cmp(&b.1)));
        peaks.into_iter().map(|p| p.1).collect()
    }

    /// 4×4×8 descriptor in the keypoint frame rotated by `theta`.
    pub fn descriptor(&self, kp: &Keypoint, theta: f64) -> Vec<f64> {
        let half = MAGNIFICATION * kp.scale;
        let radius = half * std::f64::consts::SQRT_2;
        let bin_width = 2.0 * half / GRID as f64;
        let sigma_w = 0.5 * radius;
        let (sin, cos) = theta.sin_cos();
        let mut hist = vec![0.0f64; SIFT_DIM];
        self.for_each_in_box(kp, radius, |dx, dy, mag, ori| {
            if mag == 0.0 {
                return;
            }
            let u = cos * dx + sin * dy;
            let v = -sin * dx + cos * dy;
            let bu = u / bin_width + GRID as f64 / 2.0 - 0.5;
            let bv = v / bin_width + GRID as f64 / 2.0 - 0.5;
            if bu <= -1.0 || bu >= GRID as f64 || bv <= -1.0 || bv >= GRID as f64 {
                return;
            }
            let w = mag * (-(u * u + v * v) / (2.0 * sigma_w * sigma_w)).exp();
            let rel = (ori - theta).rem_euclid(TAU);
            let bo = rel / TAU * ORI_BINS as f64;
            trilinear(&mut hist, bu, bv, bo, w);
        });
        normalize_sift(&mut hist);
        hist
    }
}

fn trilinear(hist: &mut [f64], bu: f64, bv: f64, bo: f64, w: f64) {
    let (u0, v0, o0) = (bu.floor(), bv.floor(), bo.floor());
    let (fu, fv, fo) = (bu - u0, bv - v0, bo - o0);
    for (du, wu) in [(0, 1.0 - fu), (1, fu)] {
        let u = u0 as isize + du;
        if !(0..GRID as isize).contains(&u) {
            continue;
        }
        for (dv, wv) in [(0, 1.0 - fv), (1, fv)] {
            let v = v0 as isize + dv;
            if !(0..GRID as isize).contains(&v) {
                continue;
            }
            for (dob, wo) in [(0, 1.0 - fo), (1, fo)] {
                let o = (o0 as usize + dob) % ORI_BINS;
                hist[(v as usize * GRID + u as usize) * ORI_BINS + o] += w * wu * wv * wo;
            }
        }
    }
}

/// L2-normalize, clamp at 0.2, renormalize. Near-zero input becomes zero.
pub fn normalize_sift(v: &mut [f64]) {
    let energy: f64 = v.iter().map(|x| x * x).sum();
    if energy < MIN_ENERGY {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let n = energy.sqrt();
    v.iter_mut().for_each(|x| *x = (*x / n).min(CLAMP));
    let n2 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n2 > 0.0 {
        v.iter_mut().for_each(|x| *x /= n2);
    }
}

pub(crate) fn check_inside(kp: &Keypoint, width: usize, height: usize) -> Result<()> {
    let inside = kp.x.is_finite()
        && kp.y.is_finite()
        && kp.x >= 0.0
        && kp.y >= 0.0
        && kp.x < width as f64
        && kp.y < height as f64;
    if !inside || !(kp.scale > 0.0) {
        return Err(Error::Domain(format!(
            "keypoint ({:.2},{:.2}) σ={} outside {width}x{height} image",
            kp.x, kp.y, kp.scale
        )));
    }
    Ok(())
}

/// Per-plane cache of gradient fields keyed by keypoint scale.
#[derive(Debug, Clone)]
pub struct PlaneGradients {
    width: usize,
    height: usize,
    fields: HashMap<u64, GradientField>,
}

impl PlaneGradients {
    pub fn new(plane: &Raster, scales: &[f64]) -> Self {
        let mut uniq: Vec<f64> = scales.to_vec();
        uniq.sort_by(f64::total_cmp);
        uniq.dedup();
        let (w, h) = (plane.width(), plane.height());
        let fields = crate::par::map(&uniq, |&s| (s.to_bits(), GradientField::new(plane.data(), w, h, s)));
        PlaneGradients {
            width: w,
            height: h,
            fields: fields.into_iter().collect(),
        }
    }

    fn field(&self, kp: &Keypoint) -> Result<&GradientField> {
        check_inside(kp, self.width, self.height)?;
        self.fields
            .get(&kp.scale.to_bits())
            .ok_or_else(|| Error::Domain(format!("no gradient field at scale {}", kp.scale)))
    }

    pub fn orientations(&self, kp: &Keypoint) -> Result<Vec<f64>> {
        Ok(self.field(kp)?.orientations(kp))
    }

    /// SIFT vector; uses the keypoint's orientation when set, otherwise the
    /// dominant orientation of this plane.
    pub fn describe(&self, kp: &Keypoint) -> Result<Vec<f64>> {
        let f = self.field(kp)?;
        let theta = match kp.orientation {
            Some(t) => t,
            None => f.orientations(kp)[0],
        };
        Ok(f.descriptor(kp, theta))
    }
}

pub fn describe_sift(gray: &Raster, kp: &Keypoint) -> Result<Vec<f64>> {
    gray.require(ColorSpace::Gray)?;
    check_inside(kp, gray.width(), gray.height())?;
    PlaneGradients::new(gray, &[kp.scale]).describe(kp)
}

/// Concatenated per-channel SIFT over an RGB, opponent or C-invariant raster.
pub fn describe_color_sift(img: &Raster, kp: &Keypoint) -> Result<Vec<f64>> {
    match img.space() {
        ColorSpace::Rgb | ColorSpace::Opponent | ColorSpace::CInvariant => {}
        other => {
            return Err(Error::ColorSpace {
                expected: "RGB, OPPONENT or C_INVARIANT".into(),
                actual: other.to_string(),
            })
        }
    }
    check_inside(kp, img.width(), img.height())?;
    let mut out = Vec::with_capacity(3 * SIFT_DIM);
    for c in 0..3 {
        out.extend(describe_sift(&img.channel(c), kp)?);
    }
    Ok(out)
}
