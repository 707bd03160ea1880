//! Procedural desk-scale world: restaurants, menus, textured dish images
//! and geotagged test photos.

use std::f64::consts::PI;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{embed_gps, sidecar_path, write_restaurants, GeoPoint, MenuItem, Restaurant, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::imaging::{hsv_to_rgb, ColorSpace, Raster};

const DISH_NAMES: [&str; 16] = [
    "pad-thai", "green-curry", "spring-rolls", "tom-yum", "margherita", "lasagna", "tiramisu", "risotto",
    "tacos", "burrito", "nachos", "enchiladas", "ramen", "sushi", "gyoza", "tempura",
];
const CUISINES: [&str; 4] = ["thai", "italian", "mexican", "japanese"];
const BASE_LAT: f64 = 33.7756;
const BASE_LON: f64 = -84.3963;
/// About 1.1 km between neighbouring restaurants.
const RESTAURANT_SPACING_DEG: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    pub seed: u64,
    pub restaurants: usize,
    pub dishes: usize,
    pub images_per_dish: usize,
    pub test_per_dish: usize,
    /// Reuse the same dish appearances in every restaurant.
    pub collision: bool,
    pub train_size: usize,
    pub test_size: usize,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            seed: 42,
            restaurants: 2,
            dishes: 4,
            images_per_dish: 12,
            test_per_dish: 5,
            collision: true,
            train_size: 96,
            test_size: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Signature {
    pub hue: f64,
    pub saturation: f64,
    /// Brightness of the second pattern color relative to the first.
    pub shade: f64,
    /// 0 stripes, 1 checker, 2 dots, 3 rings.
    pub pattern: u8,
    /// Cycles across the dish radius.
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestManifestItem {
    pub image: PathBuf,
    pub restaurant_id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestManifest {
    pub schema_version: u32,
    pub items: Vec<TestManifestItem>,
}

impl TestManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: TestManifest =
            serde_json::from_str(&text).map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::schema(
                path.display().to_string(),
                format!("schema_version {} is not supported", m.schema_version),
            ));
        }
        Ok(m)
    }
}

/// Generator record written next to the fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSummary {
    pub params: GeneratorParams,
    pub signatures: Vec<Signature>,
    /// (slug, signature index) for every dish.
    pub dishes: Vec<(String, usize)>,
    pub train_images: usize,
    pub test_images: usize,
}

fn make_signatures(n: usize, rng: &mut ChaCha8Rng) -> Vec<Signature> {
    (0..n)
        .map(|i| {
            Signature {
                hue: (i as f64 / n as f64 + rng.random_range(0.0..0.3 / n as f64)).fract(),
                saturation: rng.random_range(0.65..0.9),
                shade: rng.random_range(0.92..0.94),
                pattern: (i % 4) as u8,
                frequency: rng.random_range(2.5..4.5),
            }
        })
        .collect()
}

fn pattern_value(sig: &Signature, u: f64, v: f64) -> bool {
    let f = sig.frequency;
    match sig.pattern {
        0 => (2.0 * PI * f * u).sin() > 0.0,
        1 => (2.0 * PI * f * u).sin() * (2.0 * PI * f * v).sin() > 0.0,
        2 => {
            let (cu, cv) = ((u * f).rem_euclid(1.0) - 0.5, (v * f).rem_euclid(1.0) - 0.5);
            cu.hypot(cv) < 0.3
        }
        _ => (2.0 * PI * f * u.hypot(v)).sin() > 0.0,
    }
}

/// One dish photo. `table` switches to a dark cluttered tabletop with a
/// smaller dish, as in the test photos.
pub fn render_dish(sig: &Signature, size: usize, table: bool, rng: &mut ChaCha8Rng) -> Result<Raster> {
    let n = size as f64;
    let cx = n / 2.0 + rng.random_range(-0.06..0.06) * n;
    let cy = n / 2.0 + rng.random_range(-0.06..0.06) * n;
    let radius = if table { rng.random_range(0.26..0.32) } else { rng.random_range(0.32..0.40) } * n;
    let rot = rng.random_range(0.0..2.0 * PI);
    let (sr, cr) = rot.sin_cos();
    let light = rng.random_range(0.85..1.05);
    let color_a = hsv_to_rgb(sig.hue, sig.saturation, 0.9);
    let color_b = color_a.map(|c| c * sig.shade);
    let background = if table {
        let v = rng.random_range(0.12..0.22);
        [v * 1.2, v, v * 0.8]
    } else {
        let v = rng.random_range(0.02..0.12);
        let tint = rng.random_range(-0.02..0.02);
        [v + tint, v, v - tint]
    };
    let seed = rng.random::<u64>();
    let mut noise = ChaCha8Rng::seed_from_u64(seed);
    Raster::from_fn(size, size, ColorSpace::Rgb, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        let base = if dx.hypot(dy) <= radius {
            let u = (cr * dx - sr * dy) / radius;
            let v = (sr * dx + cr * dy) / radius;
            if pattern_value(sig, u, v) { color_a } else { color_b }
        } else {
            background
        };
        let e = noise.random_range(-0.015..0.015);
        [
            (base[0] * light + e).clamp(0.0, 1.0),
            (base[1] * light + e).clamp(0.0, 1.0),
            (base[2] * light + e).clamp(0.0, 1.0),
        ]
    })
}

fn encode(r: &Raster, format: image::ImageFormat) -> Result<Vec<u8>> {
    let img = image::RgbImage::from_raw(r.width() as u32, r.height() as u32, r.to_rgb8())
        .ok_or_else(|| Error::Domain("raster size".into()))?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, format)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(buf.into_inner())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

const OUTPUTS: [&str; 6] = ["restaurants.json", "menus", "images", "test", "test_manifest.json", "generator.json"];

pub fn generate_synthetic_world(out: &Path, params: &GeneratorParams, force: bool) -> Result<WorldSummary> {
    if params.restaurants < 2 || params.dishes < 2 {
        return Err(Error::Config("need at least 2 restaurants and 2 dishes".into()));
    }
    if params.restaurants * params.dishes > DISH_NAMES.len() * CUISINES.len() {
        return Err(Error::Config("too many dishes for the built-in name list".into()));
    }
    if params.images_per_dish == 0 || params.train_size < 32 || params.test_size < 32 {
        return Err(Error::Config("images must be at least 32 pixels and one per dish".into()));
    }
    if out.exists() && fs::read_dir(out).map_err(|e| Error::io(out, e))?.next().is_some() {
        if !force {
            return Err(Error::Config(format!(
                "{} already exists; pass --force to overwrite",
                out.display()
            )));
        }
        for name in OUTPUTS {
            let p = out.join(name);
            if p.is_dir() {
                fs::remove_dir_all(&p).map_err(|e| Error::io(&p, e))?;
            } else if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
    }
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let pool = if params.collision { params.dishes } else { params.restaurants * params.dishes };
    let signatures = make_signatures(pool, &mut rng);

    let mut restaurants = Vec::new();
    let mut dishes = Vec::new();
    let mut manifest = Vec::new();
    let mut train_images = 0;
    for r in 0..params.restaurants {
        let id = format!("r{r}");
        let restaurant = Restaurant {
            id: id.clone(),
            name: format!("Restaurant {r}"),
            lat: BASE_LAT + r as f64 * RESTAURANT_SPACING_DEG,
            lon: BASE_LON,
            cuisine: CUISINES[r % CUISINES.len()].to_string(),
            menu_ref: id.clone(),
        };
        let mut items = Vec::new();
        for d in 0..params.dishes {
            let name = DISH_NAMES[(r * params.dishes + d) % DISH_NAMES.len()];
            let slug = format!("{id}-{name}");
            let sig_index = if params.collision { d } else { r * params.dishes + d };
            let sig = &signatures[sig_index];
            items.push(MenuItem { slug: slug.clone(), name: name.replace('-', " ") });
            dishes.push((slug.clone(), sig_index));
            for i in 0..params.images_per_dish {
                let img = render_dish(sig, params.train_size, false, &mut rng)?;
                let path = out.join("images").join(&slug).join(format!("{i:03}.png"));
                write(&path, &encode(&img, image::ImageFormat::Png)?)?;
                train_images += 1;
            }
            for i in 0..params.test_per_dish {
                let img = render_dish(sig, params.test_size, true, &mut rng)?;
                let point = GeoPoint::new(
                    restaurant.lat + rng.random_range(-1e-4..1e-4),
                    restaurant.lon + rng.random_range(-1e-4..1e-4),
                )?;
                let rel = if i % 2 == 0 {
                    let rel = PathBuf::from("test").join(&id).join(format!("{slug}-{i:02}.png"));
                    let path = out.join(&rel);
                    write(&path, &encode(&img, image::ImageFormat::Png)?)?;
                    let side = serde_json::json!({ "lat": point.lat, "lon": point.lon });
                    write(&sidecar_path(&path), side.to_string().as_bytes())?;
                    rel
                } else {
                    let rel = PathBuf::from("test").join(&id).join(format!("{slug}-{i:02}.jpg"));
                    let jpeg = embed_gps(&encode(&img, image::ImageFormat::Jpeg)?, point)?;
                    write(&out.join(&rel), &jpeg)?;
                    rel
                };
                manifest.push(TestManifestItem { image: rel, restaurant_id: id.clone(), label: slug.clone() });
            }
        }
        let menu = serde_json::json!({
            "schema_version": SCHEMA_VERSION,
            "restaurant_id": id,
            "items": items,
        });
        write(
            &out.join("menus").join(format!("{id}.json")),
            serde_json::to_string_pretty(&menu).expect("menu serializes").as_bytes(),
        )?;
        restaurants.push(restaurant);
    }
    write_restaurants(&out.join("restaurants.json"), &restaurants)?;
    let test_images = manifest.len();
    let tm = TestManifest { schema_version: SCHEMA_VERSION, items: manifest };
    write(
        &out.join("test_manifest.json"),
        serde_json::to_string_pretty(&tm).expect("manifest serializes").as_bytes(),
    )?;
    let summary = WorldSummary { params: params.clone(), signatures, dishes, train_images, test_images };
    write(
        &out.join("generator.json"),
        serde_json::to_string_pretty(&summary).expect("summary serializes").as_bytes(),
    )?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::{extract_geotag, haversine_m, load_restaurants};

    fn small() -> GeneratorParams {
        GeneratorParams { images_per_dish: 2, test_per_dish: 2, train_size: 40, test_size: 48, ..Default::default() }
    }

    fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for e in fs::read_dir(&d).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
                }
            }
        }
        out.sort();
        out
    }

    #[test]
    fn deterministic_under_seed() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        generate_synthetic_world(a.path(), &small(), false).unwrap();
        generate_synthetic_world(b.path(), &small(), false).unwrap();
        assert_eq!(snapshot(a.path()), snapshot(b.path()));
        let c = tempfile::tempdir().unwrap();
        generate_synthetic_world(c.path(), &GeneratorParams { seed: 7, ..small() }, false).unwrap();
        assert_ne!(snapshot(a.path()), snapshot(c.path()));
    }

    #[test]
    fn collision_shares_signatures() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_synthetic_world(dir.path(), &small(), false).unwrap();
        assert_eq!(s.signatures.len(), 4);
        assert_eq!(s.dishes[0].1, s.dishes[4].1);
        assert_eq!(s.train_images, 16);
        assert_eq!(s.test_images, 16);

        let dir = tempfile::tempdir().unwrap();
        let s = generate_synthetic_world(dir.path(), &GeneratorParams { collision: false, ..small() }, false).unwrap();
        let mut used: Vec<usize> = s.dishes.iter().map(|d| d.1).collect();
        used.dedup();
        assert_eq!(used.len(), 8);
    }

    #[test]
    fn test_photos_carry_geotags_near_their_restaurant() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic_world(dir.path(), &small(), false).unwrap();
        let restaurants = load_restaurants(&dir.path().join("restaurants.json")).unwrap();
        let m = TestManifest::load(&dir.path().join("test_manifest.json")).unwrap();
        assert!(m.items.iter().any(|i| i.image.extension().unwrap() == "jpg"));
        for item in &m.items {
            let g = extract_geotag(&dir.path().join(&item.image)).unwrap().unwrap();
            let r = restaurants.iter().find(|r| r.id == item.restaurant_id).unwrap();
            let d = haversine_m(g, GeoPoint::new(r.lat, r.lon).unwrap());
            assert!(d < 25.0, "{d}");
            assert!(item.label.starts_with(&item.restaurant_id));
        }
    }

    #[test]
    fn refuses_non_empty_directory_without_force() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("notes.txt"), "keep").unwrap();
        let e = generate_synthetic_world(dir.path(), &small(), false).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        generate_synthetic_world(dir.path(), &small(), true).unwrap();
        generate_synthetic_world(dir.path(), &small(), true).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("notes.txt")).unwrap(), "keep");
    }
}
