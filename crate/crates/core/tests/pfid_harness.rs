use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ctxfood::pipeline::{cmd_evaluate_pfid, load_pfid, render_dish, RunConfig, Signature};

fn write_png(path: &Path, r: &ctxfood::imaging::Raster) {
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    image::RgbImage::from_raw(r.width() as u32, r.height() as u32, r.to_rgb8())
        .unwrap()
        .save(path)
        .unwrap();
}

/// Three categories, three instances of six views each.
fn fake_pfid(root: &Path) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for c in 0..3 {
        let sig = Signature { hue: c as f64 / 3.0, saturation: 0.8, shade: 0.93, pattern: c as u8, frequency: 3.0 };
        for i in 0..3 {
            for v in 0..6 {
                let img = render_dish(&sig, 64, false, &mut rng).unwrap();
                write_png(&root.join(format!("cat{c}/inst{i}/view{v}.png")), &img);
            }
        }
    }
}

#[test]
fn harness_runs_the_descriptor_comparison_layout() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("pfid");
    fake_pfid(&root);
    let cats = load_pfid(&root).unwrap();
    assert_eq!(cats.len(), 3);
    assert!(cats.iter().all(|c| c.instances.len() == 3 && c.instances.iter().all(|i| i.len() == 6)));

    let cfg = RunConfig { codebook_k: 20, report_dir: dir.path().join("reports"), ..RunConfig::default() };
    let report = cmd_evaluate_pfid(&cfg, &root).unwrap();
    let methods: Vec<&str> = report.mean.iter().map(|(m, _)| m.as_str()).collect();
    assert_eq!(methods, ["S", "R-S", "O-S", "C-S", "HH", "CMI", "MKL"]);
    assert_eq!(report.rows.len(), 3 * 7);
    assert!(report.rows.iter().all(|r| (0.0..=100.0).contains(&r.accuracy)));
    let mkl = report.mean.iter().find(|(m, _)| m == "MKL").unwrap().1;
    assert!(mkl > 100.0 / 3.0, "MKL at chance: {mkl}");
    assert!(dir.path().join("reports/evaluation_pfid.txt").exists());
}

#[test]
fn malformed_pfid_tree_is_a_protocol_error() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("pfid");
    fake_pfid(&root);
    std::fs::remove_file(root.join("cat1/inst2/view5.png")).unwrap();
    let cfg = RunConfig { codebook_k: 20, report_dir: dir.path().join("reports"), ..RunConfig::default() };
    let e = cmd_evaluate_pfid(&cfg, &root).unwrap_err();
    assert!(e.to_string().contains("views"), "{e}");
    assert!(load_pfid(&dir.path().join("absent")).is_err());
}
