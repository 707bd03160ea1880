//! Generalized color moments and the 21 photometric invariants built from
//! them.

use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, Raster};
use crate::interest::Keypoint;

use super::sift::check_inside;

pub const MOMENT_INVARIANTS: usize = 21;
const EPS: f64 = 1e-9;
const CLAMP: f64 = 10.0;
/// Square patch side in units of keypoint scale.
pub const PATCH_SIDE_FACTOR: f64 = 6.0;

/// Inclusive pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchRegion {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PatchRegion {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        PatchRegion { x0, y0, x1, y1 }
    }

    /// Square of side 6σ centered on the keypoint, clipped to the image.
    pub fn around(kp: &Keypoint, width: usize, height: usize) -> Result<Self> {
        check_inside(kp, width, height)?;
        let half = PATCH_SIDE_FACTOR * kp.scale / 2.0;
        let x0 = (kp.x - half).ceil().max(0.0) as usize;
        let y0 = (kp.y - half).ceil().max(0.0) as usize;
        let x1 = ((kp.x + half).floor().max(0.0) as usize).min(width - 1);
        let y1 = ((kp.y + half).floor().max(0.0) as usize).min(height - 1);
        Ok(PatchRegion {
            x0,
            y0,
            x1: x1.max(x0),
            y1: y1.max(y0),
        })
    }

    pub fn pixel_count(&self) -> usize {
        (self.x1 + 1 - self.x0) * (self.y1 + 1 - self.y0)
    }

    fn check(&self, img: &Raster) -> Result<()> {
        if self.x1 < self.x0 || self.y1 < self.y0 || self.x1 >= img.width() || self.y1 >= img.height() {
            return Err(Error::Domain(format!("empty or out-of-image region {self:?}")));
        }
        Ok(())
    }

    // patch-centered coordinate rescaled to [-1, 1]
    fn norm_coord(v: usize, lo: usize, hi: usize) -> f64 {
        if hi == lo {
            0.0
        } else {
            2.0 * (v - lo) as f64 / (hi - lo) as f64 - 1.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralizedMoment {
    pub p: u32,
    pub q: u32,
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub value: f64,
}

/// M_pq^abc: mean over the region of x̂^p ŷ^q R^a G^b B^c.
pub fn compute_generalized_moment(
    img: &Raster,
    region: &PatchRegion,
    (p, q): (u32, u32),
    (a, b, c): (u32, u32, u32),
) -> Result<GeneralizedMoment> {
    img.require(ColorSpace::Rgb)?;
    region.check(img)?;
    if [p, q, a, b, c].iter().any(|&e| e > 2) {
        return Err(Error::Domain("moment orders and degrees must be in 0..=2".into()));
    }
    let mut sum = 0.0;
    for y in region.y0..=region.y1 {
        let yn = PatchRegion::norm_coord(y, region.y0, region.y1);
        for x in region.x0..=region.x1 {
            let xn = PatchRegion::norm_coord(x, region.x0, region.x1);
            let px = img.pixel(x, y);
            sum += xn.powi(p as i32)
                * yn.powi(q as i32)
                * px[0].powi(a as i32)
                * px[1].powi(b as i32)
                * px[2].powi(c as i32);
        }
    }
    Ok(GeneralizedMoment {
        p,
        q,
        a,
        b,
        c,
        value: sum / region.pixel_count() as f64,
    })
}

// Accumulated moments for one band: index by (p,q) over degree-1 and the
// degree-2 zero-order term.
#[derive(Default, Clone, Copy)]
struct BandMoments {
    m00: f64,
    m10: f64,
    m01: f64,
    m20: f64,
    m02: f64,
    m11: f64,
    m00_sq: f64,
}

fn ratio(num: f64, den: f64) -> f64 {
    (num / (den + EPS)).clamp(-CLAMP, CLAMP)
}

/// The 21 invariants over a region, in the order
/// [I1 I2 I3 I5 I6 I7] for R, G, B followed by I4 for (R,G), (R,B), (G,B).
pub fn moment_invariants(img: &Raster, region: &PatchRegion) -> Result<Vec<f64>> {
    img.require(ColorSpace::Rgb)?;
    region.check(img)?;
    let mut bands = [BandMoments::default(); 3];
    let mut cross = [0.0f64; 3];
    for y in region.y0..=region.y1 {
        let yn = PatchRegion::norm_coord(y, region.y0, region.y1);
        for x in region.x0..=region.x1 {
            let xn = PatchRegion::norm_coord(x, region.x0, region.x1);
            let px = img.pixel(x, y);
            for (band, &v) in bands.iter_mut().zip(px) {
                band.m00 += v;
                band.m10 += xn * v;
                band.m01 += yn * v;
                band.m20 += xn * xn * v;
                band.m02 += yn * yn * v;
                band.m11 += xn * yn * v;
                band.m00_sq += v * v;
            }
            cross[0] += px[0] * px[1];
            cross[1] += px[0] * px[2];
            cross[2] += px[1] * px[2];
        }
    }
    let n = region.pixel_count() as f64;
    for b in &mut bands {
        b.m00 /= n;
        b.m10 /= n;
        b.m01 /= n;
        b.m20 /= n;
        b.m02 /= n;
        b.m11 /= n;
        b.m00_sq /= n;
    }
    cross.iter_mut().for_each(|c| *c /= n);

    let mut out = Vec::with_capacity(MOMENT_INVARIANTS);
    for b in &bands {
        out.push(ratio(b.m00_sq, b.m00 * b.m00));
        out.push(ratio(b.m10, b.m00));
        out.push(ratio(b.m01, b.m00));
        out.push(ratio(b.m20, b.m00));
        out.push(ratio(b.m02, b.m00));
        out.push(ratio(b.m11, b.m00));
    }
    for (c, (u, v)) in cross.iter().zip([(0, 1), (0, 2), (1, 2)]) {
        out.push(ratio(*c, bands[u].m00 * bands[v].m00));
    }
    Ok(out)
}

pub fn describe_color_moment_invariants(img: &Raster, kp: &Keypoint) -> Result<Vec<f64>> {
    img.require(ColorSpace::Rgb)?;
    let region = PatchRegion::around(kp, img.width(), img.height())?;
    moment_invariants(img, &region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_order_moment_is_one() {
        let img = Raster::from_fn(7, 5, ColorSpace::Rgb, |x, y| [x as f64 / 7.0, y as f64 / 5.0, 0.2]).unwrap();
        let m = compute_generalized_moment(&img, &PatchRegion::new(1, 1, 5, 3), (0, 0), (0, 0, 0)).unwrap();
        assert_eq!(m.value, 1.0);
    }

    #[test]
    fn constant_red_mean() {
        let img = Raster::filled(4, 4, ColorSpace::Rgb, &[0.5, 0.5, 0.5]).unwrap();
        let m = compute_generalized_moment(&img, &PatchRegion::new(0, 0, 3, 3), (0, 0), (1, 0, 0)).unwrap();
        assert_eq!(m.value, 0.5);
    }

    #[test]
    fn two_pixel_first_order() {
        let img = Raster::new(2, 1, ColorSpace::Rgb, vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let m = compute_generalized_moment(&img, &PatchRegion::new(0, 0, 1, 0), (1, 0), (1, 0, 0)).unwrap();
        assert_eq!(m.value, 0.5);
    }

    #[test]
    fn rejects_bad_regions_and_orders() {
        let img = Raster::filled(4, 4, ColorSpace::Rgb, &[0.5, 0.5, 0.5]).unwrap();
        assert!(compute_generalized_moment(&img, &PatchRegion::new(2, 0, 1, 3), (0, 0), (0, 0, 0)).is_err());
        assert!(compute_generalized_moment(&img, &PatchRegion::new(0, 0, 4, 3), (0, 0), (0, 0, 0)).is_err());
        assert!(compute_generalized_moment(&img, &PatchRegion::new(0, 0, 1, 1), (3, 0), (0, 0, 0)).is_err());
    }

    #[test]
    fn constant_patch_pairwise_invariants_are_one() {
        let img = Raster::filled(30, 30, ColorSpace::Rgb, &[0.3, 0.6, 0.9]).unwrap();
        let v = describe_color_moment_invariants(&img, &Keypoint::new(15.0, 15.0, 2.0)).unwrap();
        assert_eq!(v.len(), MOMENT_INVARIANTS);
        for i4 in &v[18..] {
            assert!((i4 - 1.0).abs() < 1e-6, "{i4}");
        }
    }

    #[test]
    fn left_black_right_white_centroid() {
        let img = Raster::from_fn(4, 1, ColorSpace::Rgb, |x, _| {
            let v = if x >= 2 { 1.0 } else { 0.0 };
            [v, v, v]
        })
        .unwrap();
        let v = moment_invariants(&img, &PatchRegion::new(0, 0, 3, 0)).unwrap();
        // x̂ = (-1, -1/3, 1/3, 1): M10 = 1/3, M00 = 1/2
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-8, "{}", v[1]);
        assert!(v[1] > 0.0);
    }

    proptest! {
        #[test]
        fn invariant_to_per_channel_scaling(
            seed in 0u64..10_000,
            sr in 0.5..=1.0f64, sg in 0.5..=1.0f64, sb in 0.5..=1.0f64,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base: Vec<f64> = (0..12 * 12 * 3).map(|_| rng.random_range(0.05..1.0)).collect();
            let img = Raster::new(12, 12, ColorSpace::Rgb, base.clone()).unwrap();
            let scaled: Vec<f64> = base.chunks(3).flat_map(|p| [p[0] * sr, p[1] * sg, p[2] * sb]).collect();
            let img2 = Raster::new(12, 12, ColorSpace::Rgb, scaled).unwrap();
            let kp = Keypoint::new(6.0, 6.0, 1.5);
            let a = describe_color_moment_invariants(&img, &kp).unwrap();
            let b = describe_color_moment_invariants(&img2, &kp).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-4, "{x} vs {y}");
            }
        }
    }
}
