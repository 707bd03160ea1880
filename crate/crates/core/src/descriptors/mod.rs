//! The six per-keypoint descriptors: SIFT, RGB-SIFT, OpponentSIFT, C-SIFT,
//! saturation-weighted hue histograms and color moment invariants.

mod hue;
mod moments;
mod sift;

use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use hue::{describe_hue_histogram, HUE_BINS};
pub use moments::{
    compute_generalized_moment, describe_color_moment_invariants, moment_invariants,
    GeneralizedMoment, PatchRegion, MOMENT_INVARIANTS,
};
pub use sift::{
    describe_color_sift, describe_sift, normalize_sift, GradientField, PlaneGradients,
    MAGNIFICATION, SIFT_DIM,
};

use crate::error::{Error, Result};
use crate::imaging::{to_c_invariant, to_gray, to_hsv, to_opponent, Raster};
use crate::interest::Keypoint;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DescriptorChannel {
    Sift,
    RgbSift,
    OppSift,
    CSift,
    HueHist,
    ColorMomentInv,
}

impl DescriptorChannel {
    pub const ALL: [DescriptorChannel; 6] = [
        DescriptorChannel::Sift,
        DescriptorChannel::RgbSift,
        DescriptorChannel::OppSift,
        DescriptorChannel::CSift,
        DescriptorChannel::HueHist,
        DescriptorChannel::ColorMomentInv,
    ];

    pub fn dimension(self) -> usize {
        match self {
            DescriptorChannel::Sift => SIFT_DIM,
            DescriptorChannel::RgbSift | DescriptorChannel::OppSift | DescriptorChannel::CSift => {
                3 * SIFT_DIM
            }
            DescriptorChannel::HueHist => HUE_BINS,
            DescriptorChannel::ColorMomentInv => MOMENT_INVARIANTS,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn short_name(self) -> &'static str {
        match self {
            DescriptorChannel::Sift => "S",
            DescriptorChannel::RgbSift => "R-S",
            DescriptorChannel::OppSift => "O-S",
            DescriptorChannel::CSift => "C-S",
            DescriptorChannel::HueHist => "HH",
            DescriptorChannel::ColorMomentInv => "CMI",
        }
    }
}

impl fmt::Display for DescriptorChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DescriptorChannel::Sift => "SIFT",
            DescriptorChannel::RgbSift => "RGB_SIFT",
            DescriptorChannel::OppSift => "OPP_SIFT",
            DescriptorChannel::CSift => "C_SIFT",
            DescriptorChannel::HueHist => "HUE_HIST",
            DescriptorChannel::ColorMomentInv => "COLOR_MOMENT_INV",
        };
        f.write_str(s)
    }
}

impl FromStr for DescriptorChannel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        DescriptorChannel::ALL
            .into_iter()
            .find(|c| c.to_string().eq_ignore_ascii_case(s) || c.short_name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown descriptor channel {s}")))
    }
}

/// Per-keypoint vectors for all six channels, stored flat per channel.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DescriptorBundle {
    pub keypoints: Vec<Keypoint>,
    data: [Vec<f64>; 6],
}

impl DescriptorBundle {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn vector(&self, ch: DescriptorChannel, i: usize) -> &[f64] {
        let d = ch.dimension();
        &self.data[ch.index()][i * d..(i + 1) * d]
    }

    pub fn vectors(&self, ch: DescriptorChannel) -> impl Iterator<Item = &[f64]> {
        self.data[ch.index()].chunks_exact(ch.dimension())
    }

    pub fn channel_data(&self, ch: DescriptorChannel) -> &[f64] {
        &self.data[ch.index()]
    }

    pub fn push(&mut self, kp: Keypoint, vectors: [Vec<f64>; 6]) -> Result<()> {
        for (ch, v) in DescriptorChannel::ALL.iter().zip(&vectors) {
            if v.len() != ch.dimension() {
                return Err(Error::Domain(format!(
                    "{ch} vector has length {}, expected {}",
                    v.len(),
                    ch.dimension()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain(format!("{ch} vector has non-finite entries")));
            }
        }
        self.keypoints.push(kp);
        for (dst, v) in self.data.iter_mut().zip(vectors) {
            dst.extend(v);
        }
        Ok(())
    }

    /// Keeps keypoints for which `keep` returns true.
    pub fn retain<F: Fn(&Keypoint) -> bool>(&self, keep: F) -> DescriptorBundle {
        let mut out = DescriptorBundle::default();
        for (i, kp) in self.keypoints.iter().enumerate() {
            if keep(kp) {
                out.keypoints.push(*kp);
                for ch in DescriptorChannel::ALL {
                    out.data[ch.index()].extend_from_slice(self.vector(ch, i));
                }
            }
        }
        out
    }

    /// Stable content hash over keypoints and vectors (bit patterns).
    pub fn feature_hash(&self) -> u64 {
        let mut h = std::hash::DefaultHasher::new();
        self.keypoints.len().hash(&mut h);
        for kp in &self.keypoints {
            kp.x.to_bits().hash(&mut h);
            kp.y.to_bits().hash(&mut h);
            kp.scale.to_bits().hash(&mut h);
        }
        for ch in &self.data {
            for v in ch {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

/// Fraction of a keypoint's 6σ square window that lies inside the image.
pub fn patch_inside_fraction(kp: &Keypoint, width: usize, height: usize) -> f64 {
    let half = MAGNIFICATION * kp.scale;
    let span = |c: f64, n: usize| ((c + half).min(n as f64) - (c - half).max(0.0)).max(0.0);
    (span(kp.x, width) * span(kp.y, height)) / (4.0 * half * half)
}

/// Keypoints whose window is more than this fraction outside are dropped.
pub const MAX_OUTSIDE_FRACTION: f64 = 0.75;

/// Computes all six descriptors for the given keypoints of an RGB image.
///
/// Keypoints whose window is mostly outside the image are dropped. Each
/// remaining keypoint is assigned its dominant gray-level orientation(s);
/// secondary peaks yield duplicate keypoints. All SIFT-family channels
/// share that orientation.
pub fn extract_bundle(rgb: &Raster, keypoints: &[Keypoint]) -> Result<DescriptorBundle> {
    let (w, h) = (rgb.width(), rgb.height());
    let gray = to_gray(rgb)?;
    let kept: Vec<Keypoint> = keypoints
        .iter()
        .filter(|k| patch_inside_fraction(k, w, h) >= 1.0 - MAX_OUTSIDE_FRACTION)
        .copied()
        .collect();
    let scales: Vec<f64> = kept.iter().map(|k| k.scale).collect();
    let gray_grad = PlaneGradients::new(&gray, &scales);

    let mut oriented = Vec::with_capacity(kept.len());
    for kp in &kept {
        match kp.orientation {
            Some(_) => oriented.push(*kp),
            None => {
                for theta in gray_grad.orientations(kp)? {
                    oriented.push(kp.with_orientation(theta));
                }
            }
        }
    }

    let hsv = to_hsv(rgb)?;
    let opp = to_opponent(rgb)?;
    let cinv = to_c_invariant(rgb)?;
    let color_planes: Vec<Raster> = [rgb, &opp, &cinv]
        .iter()
        .flat_map(|img| (0..3).map(move |c| img.channel(c)))
        .collect();
    let color_grads: Vec<PlaneGradients> =
        color_planes.iter().map(|p| PlaneGradients::new(p, &scales)).collect();

    let rows = crate::par::try_map(&oriented, |kp| -> Result<[Vec<f64>; 6]> {
        let mut per = Vec::with_capacity(3);
        for block in color_grads.chunks(3) {
            let mut v = Vec::with_capacity(3 * SIFT_DIM);
            for g in block {
                v.extend(g.describe(kp)?);
            }
            per.push(v);
        }
        let mut per = per.into_iter();
        Ok([
            gray_grad.describe(kp)?,
            per.next().unwrap(),
            per.next().unwrap(),
            per.next().unwrap(),
            describe_hue_histogram(&hsv, kp)?,
            describe_color_moment_invariants(rgb, kp)?,
        ])
    })?;

    let mut bundle = DescriptorBundle::default();
    for (kp, vectors) in oriented.into_iter().zip(rows) {
        bundle.push(kp, vectors)?;
    }
    Ok(bundle)
}
