use crate::error::Result;
use crate::imaging::{ColorSpace, Raster};
use crate::interest::Keypoint;

use super::sift::check_inside;

pub const HUE_BINS: usize = 36;
/// Patch radius in units of keypoint scale.
pub const HUE_RADIUS_FACTOR: f64 = 3.0;

/// Saturation-weighted hue histogram over a disc of radius 3σ, L1-normalized.
pub fn describe_hue_histogram(hsv: &Raster, kp: &Keypoint) -> Result<Vec<f64>> {
    hsv.require(ColorSpace::Hsv)?;
    let (w, h) = (hsv.width(), hsv.height());
    check_inside(kp, w, h)?;
    let r = HUE_RADIUS_FACTOR * kp.scale;
    let mut hist = vec![0.0f64; HUE_BINS];
    let x0 = (kp.x - r).ceil().max(0.0) as usize;
    let y0 = (kp.y - r).ceil().max(0.0) as usize;
    let x1 = ((kp.x + r).floor() as usize).min(w - 1);
    let y1 = ((kp.y + r).floor() as usize).min(h - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - kp.x, y as f64 - kp.y);
            if dx * dx + dy * dy > r * r {
                continue;
            }
            let px = hsv.pixel(x, y);
            let bin = ((px[0] * HUE_BINS as f64) as usize).min(HUE_BINS - 1);
            hist[bin] += px[1];
        }
    }
    let total: f64 = hist.iter().sum();
    if total > 1e-12 {
        hist.iter_mut().for_each(|v| *v /= total);
    } else {
        hist.iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(hist)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::to_hsv;

    #[test]
    fn pure_red_fills_bin_zero() {
        let hsv = to_hsv(&Raster::filled(20, 20, ColorSpace::Rgb, &[1.0, 0.0, 0.0]).unwrap()).unwrap();
        let h = describe_hue_histogram(&hsv, &Keypoint::new(10.0, 10.0, 1.5)).unwrap();
        assert_eq!(h[0], 1.0);
        assert!(h[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gray_patch_is_zero() {
        let hsv = to_hsv(&Raster::filled(20, 20, ColorSpace::Rgb, &[0.4, 0.4, 0.4]).unwrap()).unwrap();
        let h = describe_hue_histogram(&hsv, &Keypoint::new(10.0, 10.0, 1.5)).unwrap();
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn red_cyan_split() {
        // split between columns 15 and 16; keypoint on the boundary
        let rgb = Raster::from_fn(32, 32, ColorSpace::Rgb, |x, _| {
            if x < 16 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 1.0] }
        })
        .unwrap();
        let hsv = to_hsv(&rgb).unwrap();
        let h = describe_hue_histogram(&hsv, &Keypoint::new(15.5, 16.0, 3.0)).unwrap();
        assert!((h[0] - 0.5).abs() <= 0.02, "{}", h[0]);
        assert!((h[18] - 0.5).abs() <= 0.02, "{}", h[18]);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_space_rejected() {
        let rgb = Raster::filled(20, 20, ColorSpace::Rgb, &[1.0, 0.0, 0.0]).unwrap();
        assert!(describe_hue_histogram(&rgb, &Keypoint::new(10.0, 10.0, 1.0)).is_err());
    }
}
