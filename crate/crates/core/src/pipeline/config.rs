//! `key = value` run configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::codebook::HistogramScaling;
use crate::error::{Error, Result};
use crate::interest::DetectorParams;
use crate::mkl::SvmParams;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub detector: DetectorParams,
    pub codebook_k: usize,
    pub point_budget: usize,
    pub images_per_item: usize,
    pub scaling: HistogramScaling,
    pub svm: SvmParams,
    pub p: f64,
    pub grid_search: bool,
    pub grid_c: Vec<f64>,
    pub grid_gamma: Vec<f64>,
    pub grid_folds: usize,
    pub radius_m: f64,
    pub seed: u64,
    pub segment_test_images: bool,
    pub data_dir: PathBuf,
    pub model_dir: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            detector: DetectorParams::default(),
            codebook_k: 200,
            point_budget: 20_000,
            images_per_item: 12,
            scaling: HistogramScaling::Max,
            svm: SvmParams::default(),
            p: 2.0,
            grid_search: false,
            grid_c: vec![0.25, 1.0, 4.0, 16.0, 64.0],
            grid_gamma: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            grid_folds: 3,
            radius_m: crate::context::DEFAULT_RADIUS_M,
            seed: 42,
            segment_test_images: true,
            data_dir: PathBuf::from("world"),
            model_dir: PathBuf::from("models"),
            report_dir: PathBuf::from("reports"),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {value:?}"))),
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "detector.sigma0" => self.detector.sigma0 = parse(key, v)?,
            "detector.scale_factor" => self.detector.scale_factor = parse(key, v)?,
            "detector.levels" => self.detector.levels = parse(key, v)?,
            "detector.integration_ratio" => self.detector.integration_ratio = parse(key, v)?,
            "detector.kappa" => self.detector.kappa = parse(key, v)?,
            "detector.threshold" => self.detector.threshold = parse(key, v)?,
            "detector.max_points" => self.detector.max_points = parse(key, v)?,
            "codebook.k" => self.codebook_k = parse(key, v)?,
            "codebook.point_budget" => self.point_budget = parse(key, v)?,
            "codebook.scaling" => {
                self.scaling = match v {
                    "max" => HistogramScaling::Max,
                    "l1" => HistogramScaling::L1,
                    _ => return Err(Error::Config(format!("{key}: expected max or l1, got {v:?}"))),
                }
            }
            "training.images_per_item" => self.images_per_item = parse(key, v)?,
            "svm.c" => self.svm.c = parse(key, v)?,
            "svm.kkt_tol" => self.svm.kkt_tol = parse(key, v)?,
            "svm.max_passes" => self.svm.max_passes = parse(key, v)?,
            "svm.gamma_scale" => self.svm.gamma_scale = parse(key, v)?,
            "mkl.p" => self.p = parse(key, v)?,
            "grid.enabled" => self.grid_search = parse_bool(key, v)?,
            "grid.c" => self.grid_c = parse_list(key, v)?,
            "grid.gamma_scale" => self.grid_gamma = parse_list(key, v)?,
            "grid.folds" => self.grid_folds = parse(key, v)?,
            "context.radius_m" => self.radius_m = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "segmentation.enabled" => self.segment_test_images = parse_bool(key, v)?,
            "paths.data" => self.data_dir = PathBuf::from(v),
            "paths.models" => self.model_dir = PathBuf::from(v),
            "paths.reports" => self.report_dir = PathBuf::from(v),
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.svm.validate()?;
        let d = &self.detector;
        if !(d.sigma0 > 0.0 && d.scale_factor > 1.0 && d.levels >= 1 && d.integration_ratio > 0.0) {
            return Err(Error::Config("detector scales must be positive and increasing".into()));
        }
        if d.max_points == 0 {
            return Err(Error::Config("detector.max_points must be positive".into()));
        }
        if self.codebook_k == 0 || self.point_budget == 0 || self.images_per_item == 0 {
            return Err(Error::Config("k, point budget and images per item must be positive".into()));
        }
        if !(self.p > 1.0 && self.p.is_finite()) {
            return Err(Error::Config(format!("mkl.p must exceed 1, got {}", self.p)));
        }
        if !(self.radius_m > 0.0) {
            return Err(Error::Config("context.radius_m must be positive".into()));
        }
        if self.grid_search && (self.grid_c.is_empty() || self.grid_gamma.is_empty() || self.grid_folds < 2) {
            return Err(Error::Config("grid search needs nonempty grids and at least 2 folds".into()));
        }
        Ok(())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        let d = &self.detector;
        let scaling = match self.scaling {
            HistogramScaling::Max => "max",
            HistogramScaling::L1 => "l1",
        };
        [
            ("detector.sigma0", d.sigma0.to_string()),
            ("detector.scale_factor", d.scale_factor.to_string()),
            ("detector.levels", d.levels.to_string()),
            ("detector.integration_ratio", d.integration_ratio.to_string()),
            ("detector.kappa", d.kappa.to_string()),
            ("detector.threshold", d.threshold.to_string()),
            ("detector.max_points", d.max_points.to_string()),
            ("codebook.k", self.codebook_k.to_string()),
            ("codebook.point_budget", self.point_budget.to_string()),
            ("codebook.scaling", scaling.to_string()),
            ("training.images_per_item", self.images_per_item.to_string()),
            ("svm.c", self.svm.c.to_string()),
            ("svm.kkt_tol", self.svm.kkt_tol.to_string()),
            ("svm.max_passes", self.svm.max_passes.to_string()),
            ("svm.gamma_scale", self.svm.gamma_scale.to_string()),
            ("mkl.p", self.p.to_string()),
            ("grid.enabled", self.grid_search.to_string()),
            ("grid.c", join(&self.grid_c)),
            ("grid.gamma_scale", join(&self.grid_gamma)),
            ("grid.folds", self.grid_folds.to_string()),
            ("context.radius_m", self.radius_m.to_string()),
            ("seed", self.seed.to_string()),
            ("segmentation.enabled", self.segment_test_images.to_string()),
            ("paths.data", self.data_dir.display().to_string()),
            ("paths.models", self.model_dir.display().to_string()),
            ("paths.reports", self.report_dir.display().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn to_text(&self) -> String {
        self.to_map()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}
