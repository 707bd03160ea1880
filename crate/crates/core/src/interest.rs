//! Harris-Laplace interest points and corpus-level point sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::filter::{gaussian_kernel, separable};
use crate::imaging::{ColorSpace, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// σ of the detection level, in pixels (the Laplacian scale).
    pub scale: f64,
    /// Harris response normalized so the image maximum is 1.
    pub response: f64,
    /// Dominant gradient orientation in radians, once assigned.
    pub orientation: Option<f64>,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, scale: f64) -> Self {
        Keypoint {
            x,
            y,
            scale,
            response: 1.0,
            orientation: None,
        }
    }

    pub fn with_orientation(mut self, theta: f64) -> Self {
        self.orientation = Some(theta);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub sigma0: f64,
    pub scale_factor: f64,
    pub levels: usize,
    /// Integration σ as a multiple of the differentiation σ.
    pub integration_ratio: f64,
    pub kappa: f64,
    /// Minimum response relative to the image maximum.
    pub threshold: f64,
    pub max_points: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            sigma0: 1.6,
            scale_factor: 1.4,
            levels: 10,
            integration_ratio: 2.0,
            kappa: 0.06,
            threshold: 1e-8,
            max_points: 3000,
        }
    }
}

impl DetectorParams {
    pub fn level_sigma(&self, level: isize) -> f64 {
        self.sigma0 * self.scale_factor.powi(level as i32)
    }
}

/// Raw responses at or below this are numerical noise from flat content.
const ABSOLUTE_RESPONSE_FLOOR: f64 = 1e-12;
pub const MIN_DETECTION_SIZE: usize = 16;

struct Level {
    harris: Vec<f64>,
    sigma: f64,
}

// The level σ sits at the geometric mean of the differentiation and
// integration scales: σ_D = σ/√r, σ_I = σ·√r with r the integration ratio.
fn harris_level(img: &[f64], w: usize, h: usize, sigma: f64, p: &DetectorParams) -> Level {
    let root = p.integration_ratio.sqrt();
    let sigma_d = sigma / root;
    let g = gaussian_kernel(sigma_d, 0);
    let d = gaussian_kernel(sigma_d, 1);
    let lx = separable(img, w, h, &d, &g);
    let ly = separable(img, w, h, &g, &d);
    let s2 = sigma_d * sigma_d;
    let xx: Vec<f64> = lx.iter().map(|v| v * v * s2).collect();
    let yy: Vec<f64> = ly.iter().map(|v| v * v * s2).collect();
    let xy: Vec<f64> = lx.iter().zip(&ly).map(|(a, b)| a * b * s2).collect();
    let gi = gaussian_kernel(sigma * root, 0);
    let a = separable(&xx, w, h, &gi, &gi);
    let b = separable(&yy, w, h, &gi, &gi);
    let c = separable(&xy, w, h, &gi, &gi);
    let harris = a
        .iter()
        .zip(&b)
        .zip(&c)
        .map(|((a, b), c)| a * b - c * c - p.kappa * (a + b) * (a + b))
        .collect();
    Level { harris, sigma }
}

fn scale_normalized_log(img: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let g = gaussian_kernel(sigma, 0);
    let d2 = gaussian_kernel(sigma, 2);
    let lxx = separable(img, w, h, &d2, &g);
    let lyy = separable(img, w, h, &g, &d2);
    let s2 = sigma * sigma;
    lxx.iter().zip(&lyy).map(|(a, b)| s2 * (a + b).abs()).collect()
}

// Strict against earlier neighbors, non-strict against later ones, so a
// flat plateau yields a single maximum.
fn is_local_max(r: &[f64], w: usize, x: usize, y: usize) -> bool {
    let v = r[y * w + x];
    for dy in -1isize..=1 {
        for dx in -1isize..=1 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let q = r[(y as isize + dy) as usize * w + (x as isize + dx) as usize];
            let earlier = dy < 0 || (dy == 0 && dx < 0);
            if (earlier && q >= v) || (!earlier && q > v) {
                return false;
            }
        }
    }
    true
}

fn parabolic_offset(left: f64, center: f64, right: f64) -> f64 {
    let denom = left - 2.0 * center + right;
    if denom.abs() < 1e-300 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Harris-Laplace detection on a GRAY raster, sorted by descending response.
pub fn detect_harris_laplace(gray: &Raster, params: &DetectorParams) -> Result<Vec<Keypoint>> {
    gray.require(ColorSpace::Gray)?;
    let (w, h) = (gray.width(), gray.height());
    if w.min(h) < MIN_DETECTION_SIZE {
        return Err(Error::Detection(format!(
            "image {w}x{h} smaller than {MIN_DETECTION_SIZE} pixels"
        )));
    }
    if params.levels == 0 || params.max_points == 0 {
        return Ok(Vec::new());
    }
    let img = gray.data();
    let levels: Vec<Level> = crate::par::map_range(params.levels, |n| {
        harris_level(img, w, h, params.level_sigma(n as isize), params)
    });
    // LoG on one extra level each side so every detection level has two
    // scale neighbours.
    let logs: Vec<Vec<f64>> = crate::par::map_range(params.levels + 2, |n| {
        scale_normalized_log(img, w, h, params.level_sigma(n as isize - 1))
    });

    let max_response = levels
        .iter()
        .flat_map(|l| l.harris.iter())
        .fold(0.0f64, |m, &v| m.max(v));
    if max_response <= ABSOLUTE_RESPONSE_FLOOR {
        return Ok(Vec::new());
    }

    let mut points = Vec::new();
    for (n, level) in levels.iter().enumerate() {
        let r = &level.harris;
        let (below, here, above) = (&logs[n], &logs[n + 1], &logs[n + 2]);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let i = y * w + x;
                let v = r[i];
                if v <= ABSOLUTE_RESPONSE_FLOOR || v / max_response < params.threshold {
                    continue;
                }
                if !is_local_max(r, w, x, y) {
                    continue;
                }
                if !(here[i] > below[i] && here[i] > above[i]) {
                    continue;
                }
                let ox = parabolic_offset(r[i - 1], v, r[i + 1]);
                let oy = parabolic_offset(r[i - w], v, r[i + w]);
                points.push(Keypoint {
                    x: x as f64 + ox,
                    y: y as f64 + oy,
                    scale: level.sigma,
                    response: v / max_response,
                    orientation: None,
                });
            }
        }
    }
    points.sort_by(|a, b| {
        b.response
            .total_cmp(&a.response)
            .then(a.y.total_cmp(&b.y))
            .then(a.x.total_cmp(&b.x))
            .then(a.scale.total_cmp(&b.scale))
    });
    points.truncate(params.max_points);
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointBudget {
    pub total: usize,
}

impl PointBudget {
    pub fn new(total: usize) -> Result<Self> {
        if total == 0 {
            return Err(Error::Sampling("point budget must be at least 1".into()));
        }
        Ok(PointBudget { total })
    }
}

/// Uniform subsample of at most `budget.total` (image, keypoint) references
/// across a corpus, sorted by image then keypoint index.
pub fn sample_corpus_points(
    counts_per_image: &[usize],
    budget: PointBudget,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if budget.total == 0 {
        return Err(Error::Sampling("point budget must be at least 1".into()));
    }
    let total: usize = counts_per_image.iter().sum();
    if total == 0 {
        return Err(Error::Sampling("corpus contains no interest points".into()));
    }
    let mut offsets = Vec::with_capacity(counts_per_image.len());
    let mut acc = 0;
    for &c in counts_per_image {
        offsets.push(acc);
        acc += c;
    }
    let locate = |flat: usize| {
        let img = offsets.partition_point(|&o| o <= flat) - 1;
        (img, flat - offsets[img])
    };
    if total <= budget.total {
        return Ok((0..total).map(locate).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = rand::seq::index::sample(&mut rng, total, budget.total).into_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(locate).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_image(size: usize, lo: usize, hi: usize) -> Raster {
        Raster::from_fn(size, size, ColorSpace::Gray, |x, y| {
            let v = if (lo..hi).contains(&x) && (lo..hi).contains(&y) { 1.0 } else { 0.0 };
            [v, 0.0, 0.0]
        })
        .unwrap()
    }

    #[test]
    fn constant_image_has_no_points() {
        let r = Raster::filled(64, 64, ColorSpace::Gray, &[0.5]).unwrap();
        assert!(detect_harris_laplace(&r, &DetectorParams::default()).unwrap().is_empty());
    }

    #[test]
    fn too_small_is_an_error() {
        let r = Raster::filled(15, 64, ColorSpace::Gray, &[0.5]).unwrap();
        assert!(matches!(
            detect_harris_laplace(&r, &DetectorParams::default()),
            Err(Error::Detection(_))
        ));
    }

    fn near(kps: &[Keypoint], cx: f64, cy: f64, tol: f64) -> Option<&Keypoint> {
        kps.iter()
            .filter(|k| ((k.x - cx).powi(2) + (k.y - cy).powi(2)).sqrt() <= tol)
            .min_by(|a, b| {
                let da = (a.x - cx).powi(2) + (a.y - cy).powi(2);
                let db = (b.x - cx).powi(2) + (b.y - cy).powi(2);
                da.total_cmp(&db)
            })
    }

    #[test]
    fn finds_square_corners() {
        let img = square_image(64, 24, 40);
        let kps = detect_harris_laplace(&img, &DetectorParams::default()).unwrap();
        assert!(kps.len() >= 4, "{kps:?}");
        for (cx, cy) in [(24.0, 24.0), (39.0, 24.0), (24.0, 39.0), (39.0, 39.0)] {
            assert!(near(&kps, cx, cy, 3.0).is_some(), "no keypoint near ({cx},{cy}): {kps:?}");
        }
        for w in kps.windows(2) {
            assert!(w[0].response >= w[1].response);
        }
        assert!(kps.iter().all(|k| k.response > 0.0 && k.response <= 1.0 && k.scale > 0.0));
        assert!(kps.iter().all(|k| k.x >= 0.0 && k.x < 64.0 && k.y >= 0.0 && k.y < 64.0));
    }

    #[test]
    fn scale_follows_image_magnification() {
        let p = DetectorParams::default();
        let small = detect_harris_laplace(&square_image(64, 24, 40), &p).unwrap();
        let big = detect_harris_laplace(&square_image(128, 48, 80), &p).unwrap();
        let mut matched = 0;
        for (cx, cy) in [(24.0, 24.0), (39.0, 24.0), (24.0, 39.0), (39.0, 39.0)] {
            let a = near(&small, cx, cy, 3.0).unwrap();
            let b = near(&big, 2.0 * a.x + 0.5, 2.0 * a.y + 0.5, 6.0).expect("no match in 2x image");
            let ratio = b.scale / a.scale;
            assert!((ratio - 2.0).abs() <= 0.5, "scale ratio {ratio}");
            matched += 1;
        }
        assert_eq!(matched, 4);
    }

    fn scene(w: usize, h: usize, dx: usize, dy: usize) -> Raster {
        Raster::from_fn(w, h, ColorSpace::Gray, |x, y| {
            let (x, y) = (x as f64 - dx as f64, y as f64 - dy as f64);
            let mut v = 0.1;
            if (20.0..34.0).contains(&x) && (18.0..30.0).contains(&y) {
                v = 0.9;
            }
            if ((x - 45.0).powi(2) + (y - 44.0).powi(2)).sqrt() < 7.0 {
                v = 0.6;
            }
            if (14.0..22.0).contains(&x) && (40.0..52.0).contains(&y) {
                v = 0.4;
            }
            [v, 0.0, 0.0]
        })
        .unwrap()
    }

    #[test]
    fn integer_shift_moves_keypoints() {
        let p = DetectorParams::default();
        let base = detect_harris_laplace(&scene(96, 96, 12, 12), &p).unwrap();
        let moved = detect_harris_laplace(&scene(96, 96, 17, 14), &p).unwrap();
        assert!(!base.is_empty());
        assert_eq!(base.len(), moved.len());
        for k in &base {
            let m = near(&moved, k.x + 5.0, k.y + 2.0, 0.5).expect("shifted keypoint missing");
            assert_eq!(m.scale, k.scale);
        }
    }

    #[test]
    fn raising_threshold_never_adds_points() {
        let img = scene(80, 80, 4, 4);
        let mut p = DetectorParams::default();
        let mut prev = detect_harris_laplace(&img, &p).unwrap();
        for t in [1e-4, 1e-3, 1e-2, 0.1, 0.5] {
            p.threshold = t;
            let cur = detect_harris_laplace(&img, &p).unwrap();
            assert!(cur.iter().all(|k| prev.contains(k)));
            assert!(cur.len() <= prev.len());
            prev = cur;
        }
    }

    #[test]
    fn max_points_caps_output() {
        let img = scene(80, 80, 4, 4);
        let p = DetectorParams {
            max_points: 3,
            ..DetectorParams::default()
        };
        assert!(detect_harris_laplace(&img, &p).unwrap().len() <= 3);
    }

    #[test]
    fn sampling_under_budget_returns_everything() {
        let counts = vec![50; 10];
        let s = sample_corpus_points(&counts, PointBudget::new(1000).unwrap(), 1).unwrap();
        assert_eq!(s.len(), 500);
        assert_eq!(s[0], (0, 0));
        assert_eq!(s[499], (9, 49));
    }

    #[test]
    fn sampling_over_budget_is_exact_and_deterministic() {
        let counts = vec![50; 10];
        let b = PointBudget::new(100).unwrap();
        let s = sample_corpus_points(&counts, b, 7).unwrap();
        assert_eq!(s.len(), 100);
        let mut dedup = s.clone();
        dedup.dedup();
        assert_eq!(dedup.len(), 100);
        assert_eq!(s, sample_corpus_points(&counts, b, 7).unwrap());
        assert_ne!(s, sample_corpus_points(&counts, b, 8).unwrap());
    }

    #[test]
    fn sampling_keeps_proportions() {
        let counts = vec![400, 1200, 2400];
        let s = sample_corpus_points(&counts, PointBudget::new(1000).unwrap(), 3).unwrap();
        let total: usize = counts.iter().sum();
        for (img, &c) in counts.iter().enumerate() {
            let got = s.iter().filter(|p| p.0 == img).count() as f64;
            let want = 1000.0 * c as f64 / total as f64;
            assert!((got - want).abs() <= 0.1 * want, "image {img}: {got} vs {want}");
        }
    }

    #[test]
    fn sampling_errors() {
        assert!(PointBudget::new(0).is_err());
        assert!(matches!(
            sample_corpus_points(&[], PointBudget::new(5).unwrap(), 0),
            Err(Error::Sampling(_))
        ));
        assert!(sample_corpus_points(&[0, 0], PointBudget::new(5).unwrap(), 0).is_err());
    }
}
