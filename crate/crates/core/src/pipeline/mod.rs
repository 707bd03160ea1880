//! End-to-end orchestration: features, training, classification,
//! evaluation commands and the synthetic world generator.

mod commands;
mod config;
mod model_file;
mod synth;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::codebook::{count_distinct, kmeans_fit, quantize, Codebook};
use crate::context::{extract_geotag, load_restaurants, match_restaurants, GeoPoint, JsonMenuProvider, Restaurant};
use crate::descriptors::{extract_bundle, DescriptorBundle, DescriptorChannel};
use crate::error::{Error, Result, StageExt};
use crate::imaging::{load_image, to_gray, Raster};
use crate::interest::{detect_harris_laplace, sample_corpus_points, DetectorParams, PointBudget};
use crate::kernels::{build_cross_kernel_set, build_kernel_set, mean_pairwise_distance, KernelSet};
use crate::mkl::{argmax, grid_search, train_multiclass, SvmParams};
use crate::segmentation::{apply_mask, filter_keypoints, hierarchical_segment, select_food_region, FoodRegion, SegmentParams};

pub use commands::*;
pub use config::RunConfig;
pub use model_file::{ModelFile, FORMAT_VERSION, MAGIC};
pub use synth::{generate_synthetic_world, render_dish, GeneratorParams, Signature, TestManifest, TestManifestItem, WorldSummary};

/// File stem of the model trained on every restaurant's menu.
pub const UNION_MODEL_ID: &str = "__all__";
pub const MODEL_EXTENSION: &str = "ctxmkl";

/// Paths inside a data directory.
#[derive(Debug, Clone)]
pub struct World {
    pub root: PathBuf,
    pub restaurants: Vec<Restaurant>,
}

impl World {
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join("restaurants.json");
        if !path.is_file() {
            return Err(Error::schema(
                path.display().to_string(),
                "restaurant database not found",
            ));
        }
        Ok(World {
            root: root.to_path_buf(),
            restaurants: load_restaurants(&path)?,
        })
    }

    pub fn provider(&self) -> JsonMenuProvider {
        JsonMenuProvider::new(&self.root)
    }

    pub fn image_store(&self) -> PathBuf {
        self.root.join("images")
    }

    pub fn test_manifest(&self) -> PathBuf {
        self.root.join("test_manifest.json")
    }

    pub fn restaurant(&self, id: &str) -> Result<&Restaurant> {
        self.restaurants
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::NotFound(format!("restaurant {id:?}")))
    }
}

pub fn model_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("{id}.{MODEL_EXTENSION}"))
}

/// Harris-Laplace points and all six descriptors of a whole image.
pub fn image_features(rgb: &Raster, detector: &DetectorParams) -> Result<DescriptorBundle> {
    let gray = to_gray(rgb)?;
    let kps = detect_harris_laplace(&gray, detector)?;
    extract_bundle(rgb, &kps)
}

/// Features of a test image, restricted to the selected food region when
/// segmentation is enabled.
pub fn test_image_features(
    rgb: &Raster,
    detector: &DetectorParams,
    segment: bool,
) -> Result<(DescriptorBundle, Option<FoodRegion>)> {
    if !segment {
        return Ok((image_features(rgb, detector)?, None));
    }
    let params = SegmentParams::default();
    let hierarchy = hierarchical_segment(rgb, &params)?;
    let region = select_food_region(&hierarchy, &params)?;
    let masked = apply_mask(rgb, &region.mask)?;
    let gray = to_gray(&masked.image)?;
    let kps = detect_harris_laplace(&gray, detector)?;
    let kept = filter_keypoints(&kps, &masked.mask);
    Ok((extract_bundle(&masked.image, &kept)?, Some(region)))
}

/// Codebooks, training histograms and bandwidths for a labeled corpus.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pub channels: Vec<DescriptorChannel>,
    pub codebooks: Vec<Codebook>,
    /// `[channel][sample]`.
    pub histograms: Vec<Vec<Vec<f64>>>,
    pub bandwidths: Vec<f64>,
}

impl Vocabulary {
    pub fn kernel_set(&self) -> Result<KernelSet> {
        build_kernel_set(&self.histograms, &self.bandwidths)
    }
}

/// Histograms of one bundle against the given codebooks.
pub fn bundle_histograms(codebooks: &[Codebook], bundle: &DescriptorBundle, cfg: &RunConfig) -> Result<Vec<Vec<f64>>> {
    codebooks
        .iter()
        .map(|cb| {
            let ch = cb.channel.ok_or_else(|| Error::Model("codebook has no channel".into()))?;
            Ok(quantize(cb, bundle.channel_data(ch), cfg.scaling)?.values)
        })
        .collect()
}

pub fn fit_vocabulary(bundles: &[&DescriptorBundle], cfg: &RunConfig) -> Result<Vocabulary> {
    let counts: Vec<usize> = bundles.iter().map(|b| b.len()).collect();
    let budget = PointBudget::new(cfg.point_budget)?;
    let picks = sample_corpus_points(&counts, budget, cfg.seed).stage("sample_points")?;
    let channels = DescriptorChannel::ALL.to_vec();
    let mut codebooks = Vec::with_capacity(channels.len());
    for &ch in &channels {
        let mut data = Vec::with_capacity(picks.len() * ch.dimension());
        for &(img, kp) in &picks {
            data.extend_from_slice(bundles[img].vector(ch, kp));
        }
        let dim = ch.dimension();
        let distinct = count_distinct(&data, dim);
        let k = cfg.codebook_k.min(distinct);
        if k < cfg.codebook_k {
            log::warn!("{ch}: only {distinct} distinct descriptors; using k = {k}");
        }
        let seed = cfg.seed.wrapping_add(ch.index() as u64);
        let mut cb = kmeans_fit(&data, dim, k, seed).stage("fit_codebooks")?;
        cb.channel = Some(ch);
        codebooks.push(cb);
    }
    let per_sample = crate::par::try_map(bundles, |b| bundle_histograms(&codebooks, b, cfg)).stage("quantize")?;
    let histograms: Vec<Vec<Vec<f64>>> = (0..channels.len())
        .map(|c| per_sample.iter().map(|h| h[c].clone()).collect())
        .collect();
    let bandwidths = histograms
        .iter()
        .map(|h| mean_pairwise_distance(h).map(|b| b.a))
        .collect::<Result<Vec<_>>>()
        .stage("kernels")?;
    Ok(Vocabulary { channels, codebooks, histograms, bandwidths })
}

/// Trains the MKL model on a subset of the vocabulary's channels.
pub fn fit_model(
    id: &str,
    classes: &[String],
    labels: &[usize],
    vocab: &Vocabulary,
    channel_subset: &[usize],
    cfg: &RunConfig,
) -> Result<ModelFile> {
    let full = vocab.kernel_set().stage("kernels")?;
    let ks = full.subset(channel_subset);
    let mut params: SvmParams = cfg.svm;
    if cfg.grid_search {
        let r = grid_search(&ks, labels, classes.len(), &cfg.grid_c, &cfg.grid_gamma, cfg.grid_folds, cfg.seed, &cfg.svm, cfg.p)
            .stage("grid_search")?;
        log::info!("{id}: grid search chose C = {}, gamma_scale = {} ({:.1}%)", r.best.c, r.best.gamma_scale, 100.0 * r.accuracy);
        params = r.best;
    }
    let mkl = train_multiclass(&ks, labels, classes.len(), &params, cfg.p).stage("train_mkl")?;
    Ok(ModelFile {
        restaurant_id: id.to_string(),
        classes: classes.to_vec(),
        channels: channel_subset.iter().map(|&c| vocab.channels[c]).collect(),
        codebooks: channel_subset.iter().map(|&c| vocab.codebooks[c].clone()).collect(),
        bandwidths: channel_subset.iter().map(|&c| vocab.bandwidths[c]).collect(),
        histograms: channel_subset.iter().map(|&c| vocab.histograms[c].clone()).collect(),
        mkl,
        config: cfg.to_text(),
    })
}

impl ModelFile {
    /// Per-class decision values for one test bundle.
    pub fn decision_values(&self, bundle: &DescriptorBundle, cfg: &RunConfig) -> Result<Vec<f64>> {
        let test: Vec<Vec<Vec<f64>>> = bundle_histograms(&self.codebooks, bundle, cfg)?
            .into_iter()
            .map(|h| vec![h])
            .collect();
        let cross = build_cross_kernel_set(&test, &self.histograms, &self.bandwidths)?;
        Ok(self.mkl.decision_values(&cross)?.remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchedRestaurant {
    pub id: String,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecisionValue {
    pub model: String,
    pub slug: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recognition {
    pub image: String,
    pub geotag: Option<GeoPoint>,
    pub matched_restaurants: Vec<MatchedRestaurant>,
    pub label_space: Vec<String>,
    pub predicted_slug: String,
    pub decision_values: Vec<DecisionValue>,
    pub low_confidence: bool,
    pub mask_fallback: Option<bool>,
    pub feature_hash: u64,
}

/// Argmax over the concatenated decision values of several models; ties go
/// to the earliest entry.
pub fn classify_bundle(models: &[&ModelFile], bundle: &DescriptorBundle, cfg: &RunConfig) -> Result<(String, Vec<DecisionValue>)> {
    if models.is_empty() {
        return Err(Error::NotTrained("no model to classify with".into()));
    }
    let mut all = Vec::new();
    for m in models {
        let values = m.decision_values(bundle, cfg)?;
        all.extend(m.classes.iter().zip(values).map(|(slug, value)| DecisionValue {
            model: m.restaurant_id.clone(),
            slug: slug.clone(),
            value,
        }));
    }
    let raw: Vec<f64> = all.iter().map(|d| d.value).collect();
    let best = all[argmax(&raw)].slug.clone();
    Ok((best, all))
}

/// Models loaded from a model directory, keyed by restaurant id.
#[derive(Debug, Default)]
pub struct ModelStore {
    pub models: BTreeMap<String, ModelFile>,
}

impl ModelStore {
    pub fn load(dir: &Path) -> Result<Self> {
        let mut models = BTreeMap::new();
        if dir.is_dir() {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == MODEL_EXTENSION))
                .collect();
            paths.sort();
            for p in paths {
                let m = ModelFile::load(&p)?;
                models.insert(m.restaurant_id.clone(), m);
            }
        }
        if models.is_empty() {
            return Err(Error::NotTrained(format!("no models in {}", dir.display())));
        }
        Ok(ModelStore { models })
    }

    pub fn get(&self, id: &str) -> Option<&ModelFile> {
        self.models.get(id)
    }
}

/// Geotag-driven model selection for one image.
#[derive(Debug, Clone)]
pub struct Selection<'a> {
    pub geotag: Option<GeoPoint>,
    pub matched: Vec<MatchedRestaurant>,
    pub models: Vec<&'a ModelFile>,
    pub low_confidence: bool,
}

pub fn select_models<'a>(
    store: &'a ModelStore,
    world: &World,
    image: &Path,
    restaurant: Option<&str>,
    cfg: &RunConfig,
) -> Result<Selection<'a>> {
    if let Some(id) = restaurant {
        world.restaurant(id)?;
        let m = store
            .get(id)
            .ok_or_else(|| Error::NotTrained(format!("no model for restaurant {id:?}")))?;
        return Ok(Selection { geotag: None, matched: Vec::new(), models: vec![m], low_confidence: false });
    }
    let geotag = extract_geotag(image)?
        .ok_or_else(|| Error::Context(format!("{} has no geotag; pass --restaurant", image.display())))?;
    let matches = match_restaurants(geotag, &world.restaurants, cfg.radius_m)?;
    let matched: Vec<MatchedRestaurant> = matches
        .iter()
        .map(|m| MatchedRestaurant { id: m.restaurant.id.clone(), distance_m: m.distance_m })
        .collect();
    let models: Vec<&ModelFile> = matched.iter().filter_map(|m| store.get(&m.id)).collect();
    if !models.is_empty() {
        return Ok(Selection { geotag: Some(geotag), matched, models, low_confidence: false });
    }
    let union = store.get(UNION_MODEL_ID).ok_or_else(|| {
        Error::NotTrained(format!(
            "no restaurant model near ({:.6}, {:.6}) and no all-restaurant model",
            geotag.lat, geotag.lon
        ))
    })?;
    log::warn!("no trained restaurant near the geotag; using the all-restaurant model");
    Ok(Selection { geotag: Some(geotag), matched, models: vec![union], low_confidence: true })
}

pub fn classify_image(
    store: &ModelStore,
    world: &World,
    image: &Path,
    restaurant: Option<&str>,
    cfg: &RunConfig,
    dump_mask: bool,
) -> Result<Recognition> {
    let sel = select_models(store, world, image, restaurant, cfg).stage("select_models")?;
    let rgb = load_image(image).stage("load_image")?;
    let (bundle, region) = test_image_features(&rgb, &cfg.detector, cfg.segment_test_images).stage("extract_features")?;
    if dump_mask {
        if let Some(r) = &region {
            write_mask(image, r)?;
        }
    }
    let (predicted, decisions) = classify_bundle(&sel.models, &bundle, cfg).stage("predict")?;
    let mut label_space = Vec::new();
    for m in &sel.models {
        for c in &m.classes {
            if !label_space.contains(c) {
                label_space.push(c.clone());
            }
        }
    }
    Ok(Recognition {
        image: image.display().to_string(),
        geotag: sel.geotag,
        matched_restaurants: sel.matched,
        label_space,
        predicted_slug: predicted,
        decision_values: decisions,
        low_confidence: sel.low_confidence,
        mask_fallback: region.map(|r| r.fallback),
        feature_hash: bundle.feature_hash(),
    })
}

pub fn mask_path(image: &Path) -> PathBuf {
    let stem = image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    image.with_file_name(format!("{stem}.mask.png"))
}

fn write_mask(image: &Path, region: &FoodRegion) -> Result<()> {
    let path = mask_path(image);
    let m = &region.mask;
    let buf = image::GrayImage::from_raw(m.width as u32, m.height as u32, m.to_gray8())
        .ok_or_else(|| Error::Domain("mask buffer size".into()))?;
    buf.save(&path)
        .map_err(|e| Error::io(&path, std::io::Error::other(e.to_string())))
}
