//! Rasters, image loading and the color-space transforms the descriptors use.

pub mod filter;

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Affine rescale constants mapping raw opponent channels into [0,1].
/// O1 and O2 are shifted by their analytic extreme and divided by twice it;
/// O3 is divided by its maximum √3.
pub const OPPONENT_O1_EXTREME: f64 = 1.0 / SQRT2;
pub const OPPONENT_O2_EXTREME: f64 = 2.0 / 2.449_489_742_783_178; // 2/√6
pub const OPPONENT_O3_MAX: f64 = 1.732_050_807_568_877_2; // √3
/// Division guard for the C-invariant ratios.
pub const C_INVARIANT_EPS: f64 = 1e-6;
/// Ratios are clamped to ±this band before mapping into [0,1].
pub const C_INVARIANT_CLAMP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ColorSpace {
    Rgb,
    Gray,
    Hsv,
    Opponent,
    CInvariant,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Gray => 1,
            _ => 3,
        }
    }
}

impl fmt::Display for ColorSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ColorSpace::Rgb => "RGB",
            ColorSpace::Gray => "GRAY",
            ColorSpace::Hsv => "HSV",
            ColorSpace::Opponent => "OPPONENT",
            ColorSpace::CInvariant => "C_INVARIANT",
        };
        f.write_str(s)
    }
}

/// Row-major, channel-interleaved image with samples in [0,1].
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    space: ColorSpace,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, space: ColorSpace, data: Vec<f64>) -> Result<Self> {
        let expected = width * height * space.channels();
        if data.len() != expected {
            return Err(Error::Domain(format!(
                "raster {width}x{height} {space} needs {expected} samples, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Domain(format!("sample {bad} outside [0,1]")));
        }
        Ok(Raster {
            width,
            height,
            space,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, space: ColorSpace, value: &[f64]) -> Result<Self> {
        if value.len() != space.channels() {
            return Err(Error::Domain("fill value has wrong channel count".into()));
        }
        let data = value
            .iter()
            .copied()
            .cycle()
            .take(width * height * value.len())
            .collect();
        Raster::new(width, height, space, data)
    }

    /// Builds a raster from a per-pixel closure returning channel values.
    pub fn from_fn<F>(width: usize, height: usize, space: ColorSpace, mut f: F) -> Result<Self>
    where
        F: FnMut(usize, usize) -> [f64; 3],
    {
        let c = space.channels();
        let mut data = Vec::with_capacity(width * height * c);
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                data.extend_from_slice(&px[..c]);
            }
        }
        Raster::new(width, height, space, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.space.channels()
    }

    pub fn space(&self) -> ColorSpace {
        self.space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels() + c]
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let c = self.channels();
        let i = (y * self.width + x) * c;
        &self.data[i..i + c]
    }

    /// Single channel `c` as a GRAY-tagged raster.
    pub fn channel(&self, c: usize) -> Raster {
        let n = self.channels();
        assert!(c < n, "channel {c} out of range");
        Raster {
            width: self.width,
            height: self.height,
            space: ColorSpace::Gray,
            data: self.data.iter().skip(c).step_by(n).copied().collect(),
        }
    }

    /// Retags the raster without touching samples.
    pub fn with_space(mut self, space: ColorSpace) -> Result<Self> {
        if space.channels() != self.channels() {
            return Err(Error::ColorSpace {
                expected: self.space.to_string(),
                actual: space.to_string(),
            });
        }
        self.space = space;
        Ok(self)
    }

    pub fn require(&self, space: ColorSpace) -> Result<()> {
        if self.space != space {
            return Err(Error::ColorSpace {
                expected: space.to_string(),
                actual: self.space.to_string(),
            });
        }
        Ok(())
    }

    /// Crop to `[x0, x0+w) × [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Raster> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Domain(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels();
        let mut data = Vec::with_capacity(w * h * c);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Ok(Raster {
            width: w,
            height: h,
            space: self.space,
            data,
        })
    }

    /// 8-bit interleaved samples (gray is replicated to RGB).
    pub fn to_rgb8(&self) -> Vec<u8> {
        let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
        match self.channels() {
            1 => self.data.iter().flat_map(|&v| [q(v); 3]).collect(),
            _ => self.data.iter().map(|&v| q(v)).collect(),
        }
    }

    fn map_pixels<F>(&self, space: ColorSpace, f: F) -> Raster
    where
        F: Fn(&[f64]) -> [f64; 3],
    {
        let out_c = space.channels();
        let mut data = Vec::with_capacity(self.width * self.height * out_c);
        for px in self.data.chunks_exact(self.channels()) {
            data.extend_from_slice(&f(px)[..out_c]);
        }
        Raster {
            width: self.width,
            height: self.height,
            space,
            data,
        }
    }
}

/// Loads a PPM (P6), PNG or JPEG file as an RGB raster in [0,1].
pub fn load_image(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn decode_image(bytes: &[u8]) -> Result<Raster> {
    let format = image::guess_format(bytes)
        .map_err(|_| Error::Format("unrecognized".into()))?;
    match format {
        image::ImageFormat::Png | image::ImageFormat::Jpeg | image::ImageFormat::Pnm => {}
        other => return Err(Error::Format(format!("{other:?}"))),
    }
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Format(format!("{format:?}: {e}")))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect();
    Raster::new(w as usize, h as usize, ColorSpace::Rgb, data)
}

pub fn to_gray(r: &Raster) -> Result<Raster> {
    r.require(ColorSpace::Rgb)?;
    Ok(r.map_pixels(ColorSpace::Gray, |p| {
        let v = (0.114 * p[2] + 0.587 * p[1] + 0.299 * p[0]).clamp(0.0, 1.0);
        [v, 0.0, 0.0]
    }))
}

/// Hexcone HSV for one pixel; hue in [0,1).
pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    if delta <= 0.0 {
        return [0.0, 0.0, max];
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = sector / 6.0;
    if h >= 1.0 {
        h -= 1.0;
    }
    [h, delta / max, max]
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    [r + m, g + m, b + m]
}

pub fn to_hsv(r: &Raster) -> Result<Raster> {
    r.require(ColorSpace::Rgb)?;
    Ok(r.map_pixels(ColorSpace::Hsv, |p| rgb_to_hsv(p[0], p[1], p[2])))
}

/// Raw opponent coordinates before rescaling.
pub fn opponent_raw(r: f64, g: f64, b: f64) -> [f64; 3] {
    [
        (r - g) / SQRT2,
        (r + g - 2.0 * b) / 6f64.sqrt(),
        (r + g + b) / OPPONENT_O3_MAX,
    ]
}

pub fn to_opponent(r: &Raster) -> Result<Raster> {
    r.require(ColorSpace::Rgb)?;
    Ok(r.map_pixels(ColorSpace::Opponent, |p| {
        let [o1, o2, o3] = opponent_raw(p[0], p[1], p[2]);
        [
            unit((o1 + OPPONENT_O1_EXTREME) / (2.0 * OPPONENT_O1_EXTREME)),
            unit((o2 + OPPONENT_O2_EXTREME) / (2.0 * OPPONENT_O2_EXTREME)),
            unit(o3 / OPPONENT_O3_MAX),
        ]
    }))
}

pub fn to_c_invariant(r: &Raster) -> Result<Raster> {
    r.require(ColorSpace::Rgb)?;
    let band = C_INVARIANT_CLAMP;
    Ok(r.map_pixels(ColorSpace::CInvariant, |p| {
        let [o1, o2, o3] = opponent_raw(p[0], p[1], p[2]);
        let c1 = (o1 / (o3 + C_INVARIANT_EPS)).clamp(-band, band);
        let c2 = (o2 / (o3 + C_INVARIANT_EPS)).clamp(-band, band);
        [
            (c1 + band) / (2.0 * band),
            (c2 + band) / (2.0 * band),
            unit(o3 / OPPONENT_O3_MAX),
        ]
    }))
}

// Float rounding can push an analytic [0,1] value a hair outside.
#[inline]
fn unit(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}
