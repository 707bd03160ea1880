//! Agglomerative mean-color segmentation and food-region selection.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, Raster};
use crate::interest::Keypoint;

/// Merges at or below this cost never separate distinct colors.
const ZERO_COST: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentParams {
    /// Region counts at which partitions are recorded, largest first.
    pub targets: Vec<usize>,
    /// Inputs with more pixels than this start from 2×2 blocks.
    pub superpixel_above: usize,
    pub selection_target: usize,
    pub merge_color_tol: f64,
    pub min_coverage: f64,
    /// Side fraction of the centered window used as the location prior.
    pub center_window: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            targets: vec![1024, 256, 64, 16, 4],
            superpixel_above: 256 * 256,
            selection_target: 16,
            merge_color_tol: 0.08,
            min_coverage: 0.05,
            center_window: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub id: usize,
    pub mean: [f64; 3],
    pub count: usize,
    /// Inclusive (x0, y0, x1, y1).
    pub bbox: (usize, usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Level {
    pub target: usize,
    /// Region id per pixel, row-major.
    pub labels: Vec<u32>,
    pub regions: Vec<Region>,
    /// Region id at the next coarser level, per region; empty for the last level.
    pub parents: Vec<usize>,
}

impl Level {
    pub fn mask(&self, width: usize, height: usize, region: usize) -> Mask {
        Mask {
            width,
            height,
            data: self.labels.iter().map(|&l| l as usize == region).collect(),
        }
    }

    /// Unordered pairs of 4-adjacent region ids.
    pub fn adjacency(&self, width: usize, height: usize) -> Vec<HashSet<usize>> {
        let mut adj = vec![HashSet::new(); self.regions.len()];
        for y in 0..height {
            for x in 0..width {
                let a = self.labels[y * width + x] as usize;
                let mut link = |b: usize| {
                    if a != b {
                        adj[a].insert(b);
                        adj[b].insert(a);
                    }
                };
                if x + 1 < width {
                    link(self.labels[y * width + x + 1] as usize);
                }
                if y + 1 < height {
                    link(self.labels[(y + 1) * width + x] as usize);
                }
            }
        }
        adj
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentHierarchy {
    pub width: usize,
    pub height: usize,
    /// Finest first.
    pub levels: Vec<Level>,
}

impl SegmentHierarchy {
    pub fn level_for(&self, target: usize) -> Option<&Level> {
        self.levels
            .iter()
            .find(|l| l.target == target)
            .or_else(|| self.levels.iter().min_by_key(|l| l.target.abs_diff(target)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    va: u32,
    vb: u32,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cost
            .total_cmp(&other.cost)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
            .then(self.va.cmp(&other.va))
            .then(self.vb.cmp(&other.vb))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn color_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

struct Merger {
    sums: Vec<[f64; 3]>,
    counts: Vec<usize>,
    adj: Vec<HashSet<usize>>,
    alive: Vec<bool>,
    version: Vec<u32>,
    parent: Vec<usize>,
    heap: BinaryHeap<Reverse<Candidate>>,
}

impl Merger {
    fn mean(&self, r: usize) -> [f64; 3] {
        let n = self.counts[r] as f64;
        [self.sums[r][0] / n, self.sums[r][1] / n, self.sums[r][2] / n]
    }

    fn push(&mut self, a: usize, b: usize) {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let cost = color_distance(&self.mean(a), &self.mean(b));
        self.heap.push(Reverse(Candidate {
            cost,
            a,
            b,
            va: self.version[a],
            vb: self.version[b],
        }));
    }

    fn valid(&self, c: &Candidate) -> bool {
        self.alive[c.a] && self.alive[c.b] && self.version[c.a] == c.va && self.version[c.b] == c.vb
    }

    fn next_cost(&mut self) -> Option<f64> {
        while let Some(Reverse(c)) = self.heap.peek() {
            if self.valid(c) {
                return Some(c.cost);
            }
            self.heap.pop();
        }
        None
    }

    fn merge_next(&mut self) {
        let Reverse(c) = self.heap.pop().expect("caller checked next_cost");
        let (a, b) = (c.a, c.b);
        let sb = self.sums[b];
        for (s, v) in self.sums[a].iter_mut().zip(sb) {
            *s += v;
        }
        self.counts[a] += self.counts[b];
        self.alive[b] = false;
        self.parent[b] = a;
        let nb = std::mem::take(&mut self.adj[b]);
        for n in nb {
            self.adj[n].remove(&b);
            if n != a {
                self.adj[n].insert(a);
                self.adj[a].insert(n);
            }
        }
        self.adj[a].remove(&b);
        self.version[a] += 1;
        let neighbours: Vec<usize> = self.adj[a].iter().copied().collect();
        for n in neighbours {
            self.push(a, n);
        }
    }
}

/// Greedy merging of 4-adjacent regions by mean-color distance, with
/// snapshots at the configured region counts.
pub fn hierarchical_segment(img: &Raster, params: &SegmentParams) -> Result<SegmentHierarchy> {
    img.require(ColorSpace::Rgb)?;
    let (w, h) = (img.width(), img.height());
    if w.min(h) < 32 {
        return Err(Error::Domain(format!("image {w}x{h} is too small to segment")));
    }
    let s = if w * h > params.superpixel_above { 2 } else { 1 };
    let (uw, uh) = (w.div_ceil(s), h.div_ceil(s));
    let n = uw * uh;
    let unit_of = |x: usize, y: usize| (y / s) * uw + x / s;

    let mut sums = vec![[0.0; 3]; n];
    let mut counts = vec![0usize; n];
    for y in 0..h {
        for x in 0..w {
            let u = unit_of(x, y);
            let p = img.pixel(x, y);
            for c in 0..3 {
                sums[u][c] += p[c];
            }
            counts[u] += 1;
        }
    }
    let mut adj = vec![HashSet::new(); n];
    for y in 0..uh {
        for x in 0..uw {
            let u = y * uw + x;
            if x + 1 < uw {
                adj[u].insert(u + 1);
                adj[u + 1].insert(u);
            }
            if y + 1 < uh {
                adj[u].insert(u + uw);
                adj[u + uw].insert(u);
            }
        }
    }
    let mut m = Merger {
        sums,
        counts,
        adj,
        alive: vec![true; n],
        version: vec![0; n],
        parent: (0..n).collect(),
        heap: BinaryHeap::new(),
    };
    for u in 0..n {
        let ns: Vec<usize> = m.adj[u].iter().copied().filter(|&v| v > u).collect();
        for v in ns {
            m.push(u, v);
        }
    }

    let mut targets = params.targets.clone();
    targets.sort_unstable_by(|a, b| b.cmp(a));
    targets.dedup();
    let mut count = n;
    let mut levels: Vec<Level> = Vec::with_capacity(targets.len());
    let mut ti = 0;
    while ti < targets.len() {
        let next = m.next_cost();
        let settled = next.is_none_or(|c| c > ZERO_COST);
        while ti < targets.len() && count <= targets[ti] && settled {
            levels.push(snapshot(&mut m, targets[ti], w, h, &unit_of));
            ti += 1;
        }
        if ti == targets.len() || next.is_none() {
            break;
        }
        m.merge_next();
        count -= 1;
    }
    while ti < targets.len() {
        levels.push(snapshot(&mut m, targets[ti], w, h, &unit_of));
        ti += 1;
    }
    for l in 0..levels.len().saturating_sub(1) {
        let parents = {
            let (fine, coarse) = (&levels[l], &levels[l + 1]);
            fine.regions
                .iter()
                .map(|r| coarse.labels[r.bbox_pixel(fine, w)] as usize)
                .collect()
        };
        levels[l].parents = parents;
    }
    Ok(SegmentHierarchy { width: w, height: h, levels })
}

impl Region {
    /// Some pixel that belongs to this region.
    fn bbox_pixel(&self, level: &Level, width: usize) -> usize {
        let (x0, y0, x1, y1) = self.bbox;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if level.labels[y * width + x] as usize == self.id {
                    return y * width + x;
                }
            }
        }
        unreachable!("region has at least one pixel")
    }
}

fn snapshot(m: &mut Merger, target: usize, w: usize, h: usize, unit_of: &dyn Fn(usize, usize) -> usize) -> Level {
    let n = m.parent.len();
    let roots: Vec<usize> = (0..n).map(|u| find(&mut m.parent, u)).collect();
    let mut dense = vec![usize::MAX; n];
    let mut next = 0;
    for (d, &alive) in dense.iter_mut().zip(&m.alive) {
        if alive {
            *d = next;
            next += 1;
        }
    }
    let mut regions: Vec<Region> = (0..n)
        .filter(|&r| m.alive[r])
        .map(|r| Region {
            id: dense[r],
            mean: m.mean(r),
            count: 0,
            bbox: (usize::MAX, usize::MAX, 0, 0),
        })
        .collect();
    let mut labels = vec![0u32; w * h];
    for y in 0..h {
        for x in 0..w {
            let id = dense[roots[unit_of(x, y)]];
            labels[y * w + x] = id as u32;
            let reg = &mut regions[id];
            reg.count += 1;
            reg.bbox.0 = reg.bbox.0.min(x);
            reg.bbox.1 = reg.bbox.1.min(y);
            reg.bbox.2 = reg.bbox.2.max(x);
            reg.bbox.3 = reg.bbox.3.max(y);
        }
    }
    Level {
        target,
        labels,
        regions,
        parents: Vec::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn full(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![true; width * height] }
    }

    /// Centered window covering `fraction` of each side.
    pub fn centered(width: usize, height: usize, fraction: f64) -> Self {
        let (x0, x1) = centered_span(width, fraction);
        let (y0, y1) = centered_span(height, fraction);
        Mask {
            width,
            height,
            data: (0..width * height)
                .map(|i| (x0..x1).contains(&(i % width)) && (y0..y1).contains(&(i / width)))
                .collect(),
        }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        x < self.width && y < self.height && self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    /// Inclusive (x0, y0, x1, y1), or `None` when empty.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for (i, _) in self.data.iter().enumerate().filter(|(_, &v)| v) {
            let (x, y) = (i % self.width, i / self.width);
            b = Some(match b {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
        b
    }

    pub fn iou(&self, other: &Mask) -> f64 {
        let inter = self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count();
        let union = self.data.iter().zip(&other.data).filter(|(a, b)| **a || **b).count();
        if union == 0 { 1.0 } else { inter as f64 / union as f64 }
    }

    /// 8-bit gray samples, 255 inside.
    pub fn to_gray8(&self) -> Vec<u8> {
        self.data.iter().map(|&b| if b { 255 } else { 0 }).collect()
    }
}

fn centered_span(len: usize, fraction: f64) -> (usize, usize) {
    let span = ((len as f64 * fraction).round() as usize).clamp(1, len);
    let start = (len - span) / 2;
    (start, start + span)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoodRegion {
    pub mask: Mask,
    /// The centered window was used instead of a segment.
    pub fallback: bool,
}

/// Region with the most pixels inside the centered window, grown through
/// adjacent regions of similar mean color.
pub fn select_food_region(h: &SegmentHierarchy, params: &SegmentParams) -> Result<FoodRegion> {
    let level = h
        .level_for(params.selection_target)
        .ok_or_else(|| Error::Domain("segment hierarchy is empty".into()))?;
    let (w, ht) = (h.width, h.height);
    let fallback = || FoodRegion {
        mask: Mask::centered(w, ht, params.center_window),
        fallback: true,
    };
    if level.regions.len() < 2 {
        return Ok(fallback());
    }
    let window = Mask::centered(w, ht, params.center_window);
    let mut score = vec![0usize; level.regions.len()];
    for (i, &l) in level.labels.iter().enumerate() {
        if window.data[i] {
            score[l as usize] += 1;
        }
    }
    let top = (0..score.len()).fold(0, |best, r| if score[r] > score[best] { r } else { best });
    let adj = level.adjacency(w, ht);
    let top_mean = level.regions[top].mean;
    let mut chosen = vec![false; level.regions.len()];
    chosen[top] = true;
    let mut frontier = vec![top];
    while let Some(r) = frontier.pop() {
        let mut ns: Vec<usize> = adj[r].iter().copied().collect();
        ns.sort_unstable();
        for n in ns {
            if !chosen[n] && color_distance(&level.regions[n].mean, &top_mean) < params.merge_color_tol {
                chosen[n] = true;
                frontier.push(n);
            }
        }
    }
    let mask = Mask {
        width: w,
        height: ht,
        data: level.labels.iter().map(|&l| chosen[l as usize]).collect(),
    };
    if mask.coverage() < params.min_coverage {
        log::warn!("food region covers {:.1}% of the image; using the centered window", 100.0 * mask.coverage());
        return Ok(fallback());
    }
    Ok(FoodRegion { mask, fallback: false })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedImage {
    pub image: Raster,
    /// The mask restricted to the crop.
    pub mask: Mask,
    pub offset: (usize, usize),
}

/// Crops to the mask's bounding box and zeroes pixels outside the mask.
pub fn apply_mask(img: &Raster, mask: &Mask) -> Result<MaskedImage> {
    if mask.width != img.width() || mask.height != img.height() {
        return Err(Error::Domain(format!(
            "mask {}x{} does not match image {}x{}",
            mask.width,
            mask.height,
            img.width(),
            img.height()
        )));
    }
    let (x0, y0, x1, y1) = mask.bbox().ok_or_else(|| Error::Domain("mask is empty".into()))?;
    let (cw, ch) = (x1 - x0 + 1, y1 - y0 + 1);
    let crop_mask = Mask {
        width: cw,
        height: ch,
        data: (0..cw * ch).map(|i| mask.get(x0 + i % cw, y0 + i / cw)).collect(),
    };
    let zero = [0.0; 3];
    let c = img.channels();
    let image = Raster::from_fn(cw, ch, img.space(), |x, y| {
        if crop_mask.get(x, y) {
            let p = img.pixel(x0 + x, y0 + y);
            let mut out = [0.0; 3];
            out[..c].copy_from_slice(p);
            out
        } else {
            zero
        }
    })?;
    Ok(MaskedImage {
        image,
        mask: crop_mask,
        offset: (x0, y0),
    })
}

/// Keeps keypoints whose nearest pixel lies inside the mask.
pub fn filter_keypoints(keypoints: &[Keypoint], mask: &Mask) -> Vec<Keypoint> {
    keypoints
        .iter()
        .filter(|k| {
            let (x, y) = (k.x.round(), k.y.round());
            x >= 0.0 && y >= 0.0 && mask.get(x as usize, y as usize)
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rgb(w: usize, h: usize, f: impl FnMut(usize, usize) -> [f64; 3]) -> Raster {
        Raster::from_fn(w, h, ColorSpace::Rgb, f).unwrap()
    }

    fn check_structure(h: &SegmentHierarchy) {
        let n = h.width * h.height;
        for (i, l) in h.levels.iter().enumerate() {
            assert_eq!(l.labels.len(), n);
            assert_eq!(l.regions.iter().map(|r| r.count).sum::<usize>(), n);
            assert!(l.regions.iter().all(|r| r.count > 0));
            if i + 1 < h.levels.len() {
                let next = &h.levels[i + 1];
                assert!(next.regions.len() <= l.regions.len());
                for p in 0..n {
                    assert_eq!(l.parents[l.labels[p] as usize], next.labels[p] as usize);
                }
            }
        }
    }

    #[test]
    fn two_halves() {
        let img = rgb(48, 40, |x, _| if x < 24 { [0.9, 0.1, 0.1] } else { [0.1, 0.1, 0.9] });
        let h = hierarchical_segment(&img, &SegmentParams::default()).unwrap();
        check_structure(&h);
        assert_eq!(h.levels.len(), 5);
        let four = h.level_for(4).unwrap();
        assert_eq!(four.regions.len(), 2);
        let left = four.labels[0];
        for y in 0..40 {
            for x in 0..48 {
                assert_eq!(four.labels[y * 48 + x] == left, x < 24);
            }
        }
    }

    #[test]
    fn constant_image() {
        let img = rgb(40, 40, |_, _| [0.3, 0.3, 0.3]);
        let h = hierarchical_segment(&img, &SegmentParams::default()).unwrap();
        assert!(h.levels.iter().all(|l| l.regions.len() == 1));
        let f = select_food_region(&h, &SegmentParams::default()).unwrap();
        assert!(f.fallback);
        assert_eq!(f.mask, Mask::centered(40, 40, 0.5));
        assert!(hierarchical_segment(&rgb(31, 64, |_, _| [0.0; 3]), &SegmentParams::default()).is_err());
    }

    fn disk(w: usize, h: usize, r: f64) -> Mask {
        let (cx, cy) = (w as f64 / 2.0 - 0.5, h as f64 / 2.0 - 0.5);
        Mask {
            width: w,
            height: h,
            data: (0..w * h)
                .map(|i| {
                    let (x, y) = ((i % w) as f64, (i / w) as f64);
                    (x - cx).hypot(y - cy) <= r
                })
                .collect(),
        }
    }

    #[test]
    fn dish_on_table() {
        let truth = disk(80, 72, 20.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = rgb(80, 72, |x, y| {
            let n = rng.random_range(-0.02..0.02);
            if truth.get(x, y) { [0.85 + n, 0.65 + n, 0.3 + n] } else { [0.15 + n, 0.1 + n, 0.08 + n] }
        });
        let h = hierarchical_segment(&img, &SegmentParams::default()).unwrap();
        check_structure(&h);
        let f = select_food_region(&h, &SegmentParams::default()).unwrap();
        assert!(!f.fallback);
        assert!(f.mask.iou(&truth) >= 0.7, "iou {}", f.mask.iou(&truth));
    }

    #[test]
    fn dish_fills_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = rgb(64, 64, |_, _| {
            let n = rng.random_range(-0.03..0.03);
            [0.7 + n, 0.5 - n, 0.2 + n]
        });
        let h = hierarchical_segment(&img, &SegmentParams::default()).unwrap();
        let f = select_food_region(&h, &SegmentParams::default()).unwrap();
        assert!(f.mask.coverage() >= 0.95, "{}", f.mask.coverage());
    }

    #[test]
    fn masking() {
        let img = rgb(40, 30, |x, y| [x as f64 / 40.0, y as f64 / 30.0, 0.5]);
        let full = apply_mask(&img, &Mask::full(40, 30)).unwrap();
        assert_eq!(full.image, img);
        let quad = Mask {
            width: 40,
            height: 30,
            data: (0..1200).map(|i| i % 40 < 20 && i / 40 < 15).collect(),
        };
        let q = apply_mask(&img, &quad).unwrap();
        assert_eq!((q.image.width(), q.image.height()), (20, 15));
        let empty = Mask { width: 40, height: 30, data: vec![false; 1200] };
        assert!(matches!(apply_mask(&img, &empty), Err(Error::Domain(_))));

        // ring mask: keypoints in the hole are dropped
        let ring = disk(40, 30, 12.0);
        let hole = disk(40, 30, 5.0);
        let m = Mask {
            width: 40,
            height: 30,
            data: ring.data.iter().zip(&hole.data).map(|(a, b)| *a && !*b).collect(),
        };
        let kps: Vec<Keypoint> = (0..30)
            .flat_map(|y| (0..40).map(move |x| Keypoint::new(x as f64, y as f64, 2.0)))
            .collect();
        let kept = filter_keypoints(&kps, &m);
        assert_eq!(kept.len(), m.count());
        assert!(kept.iter().all(|k| m.get(k.x as usize, k.y as usize)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]
        #[test]
        fn hierarchy_invariants(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = rgb(34, 33, |_, _| [rng.random(), rng.random(), rng.random()]);
            let h = hierarchical_segment(&img, &SegmentParams::default()).unwrap();
            check_structure(&h);
            let counts: Vec<usize> = h.levels.iter().map(|l| l.regions.len()).collect();
            prop_assert_eq!(counts, vec![1024, 256, 64, 16, 4]);
            prop_assert_eq!(&h, &hierarchical_segment(&img, &SegmentParams::default()).unwrap());
        }
    }
}
