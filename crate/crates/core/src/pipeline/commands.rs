//! Subcommand implementations shared by the CLI and the tests.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::Serialize;

use super::{
    classify_image, fit_model, fit_vocabulary, image_features, model_path, select_models, test_image_features,
    ModelFile, ModelStore, Recognition, RunConfig, TestManifest, World, UNION_MODEL_ID,
};
use crate::context::{assemble_training_set, MenuProvider, TrainingManifest};
use crate::descriptors::{DescriptorBundle, DescriptorChannel};
use crate::error::{Error, Result, StageExt};
use crate::evaluation::{
    ablate_location, evaluate, pfid_protocol_split, AblationReport, EvaluationReport, PfidCategory, Prediction,
    TestGroup, TestItem, PFID_INSTANCES,
};
use crate::imaging::load_image;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrainTarget {
    Restaurant(String),
    All,
}

#[derive(Debug, Default)]
pub struct TrainSummary {
    pub trained: Vec<(String, PathBuf)>,
    pub failed: Vec<(String, Error)>,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn extract_all(paths: &[&PathBuf], cfg: &RunConfig) -> Result<HashMap<PathBuf, DescriptorBundle>> {
    let bundles = crate::par::try_map(paths, |p| {
        let rgb = load_image(p)?;
        image_features(&rgb, &cfg.detector)
    })?;
    Ok(paths.iter().map(|p| (*p).clone()).zip(bundles).collect())
}

/// Classes and per-image labels of one or more manifests; equal slugs share
/// a class.
fn labeled_images(manifests: &[&TrainingManifest]) -> (Vec<String>, Vec<(PathBuf, usize)>) {
    let mut classes: Vec<String> = Vec::new();
    let mut images = Vec::new();
    for m in manifests {
        for item in &m.items {
            let c = match classes.iter().position(|s| s == &item.slug) {
                Some(c) => c,
                None => {
                    classes.push(item.slug.clone());
                    classes.len() - 1
                }
            };
            images.extend(item.images.iter().map(|p| (p.clone(), c)));
        }
    }
    (classes, images)
}

fn train_one(
    id: &str,
    manifests: &[&TrainingManifest],
    features: &HashMap<PathBuf, DescriptorBundle>,
    cfg: &RunConfig,
) -> Result<ModelFile> {
    let (classes, images) = labeled_images(manifests);
    if classes.len() < 2 {
        return Err(Error::Training(format!("{id} has {} trainable dishes, need 2", classes.len())));
    }
    let bundles: Vec<&DescriptorBundle> = images.iter().map(|(p, _)| &features[p]).collect();
    let labels: Vec<usize> = images.iter().map(|(_, c)| *c).collect();
    let vocab = fit_vocabulary(&bundles, cfg)?;
    let all: Vec<usize> = (0..vocab.channels.len()).collect();
    fit_model(id, &classes, &labels, &vocab, &all, cfg)
}

/// Trains one restaurant, or every restaurant plus the all-restaurant model.
pub fn cmd_train(cfg: &RunConfig, target: &TrainTarget) -> Result<TrainSummary> {
    cfg.validate()?;
    let world = World::open(&cfg.data_dir).stage("load_fixtures")?;
    let provider = world.provider();
    let ids: Vec<String> = match target {
        TrainTarget::Restaurant(id) => {
            world.restaurant(id)?;
            vec![id.clone()]
        }
        TrainTarget::All => world.restaurants.iter().map(|r| r.id.clone()).collect(),
    };
    let single = matches!(target, TrainTarget::Restaurant(_));

    let mut summary = TrainSummary::default();
    let mut manifests: Vec<(String, TrainingManifest)> = Vec::new();
    for id in &ids {
        let r = world.restaurant(id)?;
        let m = provider
            .fetch_menu(r)
            .stage("fetch_menu")
            .and_then(|menu| assemble_training_set(&menu, &world.image_store(), cfg.images_per_item).stage("assemble_training_set"));
        match m {
            Ok(m) => manifests.push((id.clone(), m)),
            Err(e) if single => return Err(e),
            Err(e) => {
                log::error!("{id}: {e}");
                summary.failed.push((id.clone(), e));
            }
        }
    }

    let mut paths: Vec<&PathBuf> = manifests
        .iter()
        .flat_map(|(_, m)| m.items.iter().flat_map(|i| i.images.iter()))
        .collect();
    paths.sort();
    paths.dedup();
    log::info!("extracting features from {} training images", paths.len());
    let features = extract_all(&paths, cfg).stage("extract_features")?;

    let mut jobs: Vec<(String, Vec<&TrainingManifest>)> =
        manifests.iter().map(|(id, m)| (id.clone(), vec![m])).collect();
    if !single && !manifests.is_empty() {
        jobs.push((UNION_MODEL_ID.to_string(), manifests.iter().map(|(_, m)| m).collect()));
    }
    let results = crate::par::map(&jobs, |(id, ms)| {
        log::info!("training {id}");
        train_one(id, ms, &features, cfg)
    });
    for ((id, _), result) in jobs.iter().zip(results) {
        match result.and_then(|m| {
            let path = model_path(&cfg.model_dir, id);
            m.save(&path).stage("save_model")?;
            Ok(path)
        }) {
            Ok(path) => summary.trained.push((id.clone(), path)),
            Err(e) if single => return Err(e),
            Err(e) => {
                log::error!("{id}: {e}");
                summary.failed.push((id.clone(), e));
            }
        }
    }
    Ok(summary)
}

pub fn cmd_classify(cfg: &RunConfig, image: &Path, restaurant: Option<&str>, dump_mask: bool) -> Result<Recognition> {
    cfg.validate()?;
    let world = World::open(&cfg.data_dir).stage("load_fixtures")?;
    let store = ModelStore::load(&cfg.model_dir)?;
    classify_image(&store, &world, image, restaurant, cfg, dump_mask)
}

fn wild_groups(world: &World, store: &ModelStore, manifest: &TestManifest) -> Result<Vec<TestGroup>> {
    let mut groups = Vec::new();
    for r in &world.restaurants {
        let items: Vec<TestItem> = manifest
            .items
            .iter()
            .filter(|i| i.restaurant_id == r.id)
            .map(|i| TestItem { id: i.image.display().to_string(), label: i.label.clone() })
            .collect();
        if items.is_empty() {
            continue;
        }
        let label_space = match store.get(&r.id) {
            Some(m) => m.classes.clone(),
            None => world.provider().fetch_menu(r)?.items.into_iter().map(|i| i.slug).collect(),
        };
        groups.push(TestGroup { name: r.id.clone(), label_space, items });
    }
    if let Some(i) = manifest.items.iter().find(|i| world.restaurant(&i.restaurant_id).is_err()) {
        return Err(Error::schema("test_manifest.json", format!("restaurant_id: unknown {:?}", i.restaurant_id)));
    }
    Ok(groups)
}

fn write_report(cfg: &RunConfig, name: &str, report: &EvaluationReport) -> Result<()> {
    write_text(&cfg.report_dir.join(format!("{name}.json")), &report.to_json())?;
    write_text(&cfg.report_dir.join(format!("{name}.txt")), &report.to_table())?;
    for g in &report.groups {
        write_text(&cfg.report_dir.join(format!("{name}_{}_confusion.csv", g.name)), &g.confusion.to_csv())?;
    }
    Ok(())
}

/// Classifies every test photo through its geotag and reports per-restaurant accuracy.
pub fn cmd_evaluate_wild(cfg: &RunConfig, dump_masks: bool) -> Result<EvaluationReport> {
    cfg.validate()?;
    let world = World::open(&cfg.data_dir).stage("load_fixtures")?;
    let store = ModelStore::load(&cfg.model_dir)?;
    let manifest = TestManifest::load(&world.test_manifest())?;
    let groups = wild_groups(&world, &store, &manifest)?;
    let report = evaluate(&groups, cfg.to_map(), |_, item| {
        let path = world.root.join(&item.id);
        let r = classify_image(&store, &world, &path, None, cfg, dump_masks)?;
        Ok(Prediction { label: r.predicted_slug, feature_hash: Some(r.feature_hash) })
    })?;
    write_report(cfg, "evaluation_wild", &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfidRow {
    pub fold: usize,
    pub method: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PfidReport {
    pub rows: Vec<PfidRow>,
    /// Mean over folds, per method.
    pub mean: Vec<(String, f64)>,
    pub config: BTreeMap<String, String>,
}

impl PfidReport {
    pub fn to_table(&self) -> String {
        let mut s = format!("{:<8}  {:>6}  {:>9}\n", "method", "fold", "accuracy");
        for r in &self.rows {
            s.push_str(&format!("{:<8}  {:>6}  {:>8.2}%\n", r.method, r.fold, r.accuracy));
        }
        for (m, a) in &self.mean {
            s.push_str(&format!("{:<8}  {:>6}  {:>8.2}%\n", m, "mean", a));
        }
        s
    }
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    v.sort();
    Ok(v)
}

/// Reads `<root>/<category>/<instance>/<views>`.
pub fn load_pfid(root: &Path) -> Result<Vec<PfidCategory<PathBuf>>> {
    if !root.is_dir() {
        return Err(Error::schema(root.display().to_string(), "PFID directory not found"));
    }
    let mut cats = Vec::new();
    for cat in sorted_subdirs(root)? {
        let instances = sorted_subdirs(&cat)?
            .iter()
            .map(|i| crate::context::sorted_images(i))
            .collect::<Result<Vec<_>>>()?;
        let name = cat.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        cats.push(PfidCategory { name, instances });
    }
    if cats.is_empty() {
        return Err(Error::schema(root.display().to_string(), "no categories"));
    }
    Ok(cats)
}

/// Leave-one-instance-out comparison of each descriptor alone against MKL
/// over all six.
pub fn cmd_evaluate_pfid(cfg: &RunConfig, root: &Path) -> Result<PfidReport> {
    cfg.validate()?;
    let cats = load_pfid(root)?;
    let names: Vec<String> = cats.iter().map(|c| c.name.clone()).collect();
    let mut all: Vec<&PathBuf> = cats.iter().flat_map(|c| c.instances.iter().flatten()).collect();
    all.sort();
    let features = extract_all(&all, cfg).stage("extract_features")?;
    let mut methods: Vec<(String, Vec<usize>)> = DescriptorChannel::ALL
        .iter()
        .map(|c| (c.short_name().to_string(), vec![c.index()]))
        .collect();
    methods.push(("MKL".to_string(), (0..DescriptorChannel::ALL.len()).collect()));

    let mut rows = Vec::new();
    for fold in 0..PFID_INSTANCES {
        let (train, test) = pfid_protocol_split(&cats, fold)?;
        let label = |n: &String| names.iter().position(|c| c == n).expect("category from the list");
        let bundles: Vec<&DescriptorBundle> = train.iter().map(|(_, p)| &features[p]).collect();
        let labels: Vec<usize> = train.iter().map(|(n, _)| label(n)).collect();
        let vocab = fit_vocabulary(&bundles, cfg)?;
        for (method, subset) in &methods {
            let model = fit_model("pfid", &names, &labels, &vocab, subset, cfg)?;
            let mut correct = 0;
            for (n, p) in &test {
                let d = model.decision_values(&features[p], cfg)?;
                if crate::mkl::argmax(&d) == label(n) {
                    correct += 1;
                }
            }
            let accuracy = 100.0 * correct as f64 / test.len() as f64;
            log::info!("fold {fold} {method}: {accuracy:.2}%");
            rows.push(PfidRow { fold, method: method.clone(), accuracy });
        }
    }
    let mean = methods
        .iter()
        .map(|(m, _)| {
            let v: Vec<f64> = rows.iter().filter(|r| &r.method == m).map(|r| r.accuracy).collect();
            (m.clone(), v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let report = PfidReport { rows, mean, config: cfg.to_map() };
    write_text(
        &cfg.report_dir.join("evaluation_pfid.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    write_text(&cfg.report_dir.join("evaluation_pfid.txt"), &report.to_table())?;
    Ok(report)
}

/// Restaurant-restricted models against the all-restaurant model on the
/// same test features.
pub fn cmd_ablate_location(cfg: &RunConfig) -> Result<AblationReport> {
    cfg.validate()?;
    let world = World::open(&cfg.data_dir).stage("load_fixtures")?;
    let store = ModelStore::load(&cfg.model_dir)?;
    let union = store
        .get(UNION_MODEL_ID)
        .ok_or_else(|| Error::NotTrained("no all-restaurant model; run train --all".into()))?;
    let manifest = TestManifest::load(&world.test_manifest())?;
    let groups = wild_groups(&world, &store, &manifest)?;

    let items: Vec<&TestItem> = groups.iter().flat_map(|g| g.items.iter()).collect();
    let features = crate::par::try_map(&items, |item| {
        let rgb = load_image(&world.root.join(&item.id))?;
        Ok::<_, Error>(test_image_features(&rgb, &cfg.detector, cfg.segment_test_images)?.0)
    })
    .stage("extract_features")?;
    let features: HashMap<&str, DescriptorBundle> = items.iter().map(|i| i.id.as_str()).zip(features).collect();

    let mut restricted_cfg = cfg.to_map();
    restricted_cfg.insert("condition".into(), "restricted".into());
    restricted_cfg.insert("models".into(), "per-restaurant, selected by geotag".into());
    let mut unrestricted_cfg = union
        .config
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect::<BTreeMap<_, _>>();
    unrestricted_cfg.insert("condition".into(), "unrestricted".into());
    unrestricted_cfg.insert("models".into(), UNION_MODEL_ID.into());

    let report = ablate_location(
        &groups,
        &union.classes,
        restricted_cfg,
        unrestricted_cfg,
        |_, item| {
            let bundle = &features[item.id.as_str()];
            let sel = select_models(&store, &world, &world.root.join(&item.id), None, cfg)?;
            let (label, _) = super::classify_bundle(&sel.models, bundle, cfg)?;
            Ok(Prediction { label, feature_hash: Some(bundle.feature_hash()) })
        },
        |_, item| {
            let bundle = &features[item.id.as_str()];
            let (label, _) = super::classify_bundle(&[union], bundle, cfg)?;
            Ok(Prediction { label, feature_hash: Some(bundle.feature_hash()) })
        },
    )?;
    write_text(&cfg.report_dir.join("ablation.json"), &report.to_json())?;
    let text = format!(
        "restricted (per-restaurant)\n{}\nunrestricted (all restaurants)\n{}\ndelta: {:+.2} points\n",
        report.restricted.to_table(),
        report.unrestricted.to_table(),
        report.delta
    );
    write_text(&cfg.report_dir.join("ablation.txt"), &text)?;
    Ok(report)
}

/// Runs `script <slug> <dest-dir> <count>` for every menu item to populate
/// the image store.
pub fn cmd_fetch(cfg: &RunConfig, script: &Path) -> Result<usize> {
    let world = World::open(&cfg.data_dir).stage("load_fixtures")?;
    let provider = world.provider();
    let mut runs = 0;
    for r in &world.restaurants {
        let menu = provider.fetch_menu(r)?;
        for item in &menu.items {
            let dest = world.image_store().join(&item.slug);
            fs::create_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
            let status = Command::new(script)
                .arg(&item.slug)
                .arg(&dest)
                .arg(cfg.images_per_item.to_string())
                .status()
                .map_err(|e| Error::io(script, e))?;
            if !status.success() {
                return Err(Error::Assembly(format!("fetch script failed for {:?}: {status}", item.slug)));
            }
            runs += 1;
        }
    }
    Ok(runs)
}
