//! Geotags, restaurant matching, menus and weakly-labeled training sets.

use std::collections::HashSet;
use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;
pub const DEFAULT_RADIUS_M: f64 = 75.0;
pub const SCHEMA_VERSION: u32 = 1;
const IMAGE_EXTENSIONS: [&str; 6] = ["png", "jpg", "jpeg", "ppm", "pgm", "pnm"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() || lat.abs() > 90.0 || lon.abs() > 180.0 {
            return Err(Error::Domain(format!("invalid coordinates ({lat}, {lon})")));
        }
        Ok(GeoPoint { lat, lon })
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

fn is_jpeg(bytes: &[u8]) -> bool {
    bytes.starts_with(&[0xFF, 0xD8])
}

fn dms_to_degrees(field: &exif::Field, name: &str) -> Result<f64> {
    match &field.value {
        exif::Value::Rational(r) if r.len() == 3 => {
            let mut parts = [0.0; 3];
            for (slot, v) in parts.iter_mut().zip(r) {
                if v.denom == 0 {
                    return Err(Error::GeotagParse(format!("{name} has a zero denominator")));
                }
                *slot = v.num as f64 / v.denom as f64;
            }
            Ok(parts[0] + parts[1] / 60.0 + parts[2] / 3600.0)
        }
        other => Err(Error::GeotagParse(format!("{name} is not three rationals: {other:?}"))),
    }
}

fn hemisphere(field: Option<&exif::Field>, name: &str, positive: u8, negative: u8) -> Result<f64> {
    let Some(field) = field else {
        return Ok(1.0);
    };
    let letter = match &field.value {
        exif::Value::Ascii(v) => v.first().and_then(|s| s.first()).copied(),
        _ => None,
    };
    match letter {
        Some(c) if c.eq_ignore_ascii_case(&positive) => Ok(1.0),
        Some(c) if c.eq_ignore_ascii_case(&negative) => Ok(-1.0),
        _ => Err(Error::GeotagParse(format!("bad {name} reference"))),
    }
}

fn exif_geotag(bytes: &[u8]) -> Result<Option<GeoPoint>> {
    let parsed = exif::Reader::new().read_from_container(&mut Cursor::new(bytes));
    let exif = match parsed {
        Ok(e) => e,
        Err(exif::Error::NotFound(_)) => return Ok(None),
        Err(e) => return Err(Error::GeotagParse(e.to_string())),
    };
    let lat = exif.get_field(exif::Tag::GPSLatitude, exif::In::PRIMARY);
    let lon = exif.get_field(exif::Tag::GPSLongitude, exif::In::PRIMARY);
    let (lat, lon) = match (lat, lon) {
        (None, None) => return Ok(None),
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::GeotagParse("only one of latitude/longitude present".into())),
    };
    let lat_sign = hemisphere(
        exif.get_field(exif::Tag::GPSLatitudeRef, exif::In::PRIMARY),
        "latitude",
        b'N',
        b'S',
    )?;
    let lon_sign = hemisphere(
        exif.get_field(exif::Tag::GPSLongitudeRef, exif::In::PRIMARY),
        "longitude",
        b'E',
        b'W',
    )?;
    let point = GeoPoint::new(
        lat_sign * dms_to_degrees(lat, "latitude")?,
        lon_sign * dms_to_degrees(lon, "longitude")?,
    )
    .map_err(|e| Error::GeotagParse(e.to_string()))?;
    Ok(Some(point))
}

#[derive(Deserialize)]
struct Sidecar {
    lat: f64,
    lon: f64,
}

pub fn sidecar_path(image: &Path) -> PathBuf {
    let mut s = image.as_os_str().to_owned();
    s.push(".geo.json");
    PathBuf::from(s)
}

/// EXIF GPS for JPEGs, else a `<image>.geo.json` sidecar, else `None`.
pub fn extract_geotag(path: &Path) -> Result<Option<GeoPoint>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if is_jpeg(&bytes) {
        if let Some(p) = exif_geotag(&bytes)? {
            return Ok(Some(p));
        }
    }
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let s: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::schema(side.display().to_string(), e.to_string()))?;
    GeoPoint::new(s.lat, s.lon)
        .map(Some)
        .map_err(|e| Error::schema(side.display().to_string(), format!("lat/lon: {e}")))
}

/// Unsigned rational (numerator, denominator) triples for degrees, minutes, seconds.
pub type Dms = [(u32, u32); 3];

pub fn degrees_to_dms(value: f64) -> Dms {
    let v = value.abs();
    let mut deg = v.floor();
    let mut min = ((v - deg) * 60.0).floor();
    let mut sec_e4 = ((v - deg - min / 60.0) * 3600.0 * 10_000.0).round();
    if sec_e4 >= 600_000.0 {
        sec_e4 -= 600_000.0;
        min += 1.0;
    }
    if min >= 60.0 {
        min -= 60.0;
        deg += 1.0;
    }
    [(deg as u32, 1), (min as u32, 1), (sec_e4 as u32, 10_000)]
}

/// An APP1 segment (marker included) holding a GPS IFD.
pub fn gps_app1_segment(lat_ref: u8, lat: Dms, lon_ref: u8, lon: Dms) -> Vec<u8> {
    let mut t: Vec<u8> = Vec::new();
    t.extend_from_slice(b"II\x2A\x00");
    t.extend_from_slice(&8u32.to_le_bytes());
    // IFD0 with the GPS pointer
    let gps_ifd = 8 + 2 + 12 + 4;
    t.extend_from_slice(&1u16.to_le_bytes());
    entry(&mut t, 0x8825, 4, 1, gps_ifd as u32);
    t.extend_from_slice(&0u32.to_le_bytes());
    let entries = 5u16;
    let data = gps_ifd + 2 + 12 * entries as usize + 4;
    t.extend_from_slice(&entries.to_le_bytes());
    entry(&mut t, 0x0000, 1, 4, u32::from_le_bytes([2, 3, 0, 0]));
    entry(&mut t, 0x0001, 2, 2, lat_ref as u32);
    entry(&mut t, 0x0002, 5, 3, data as u32);
    entry(&mut t, 0x0003, 2, 2, lon_ref as u32);
    entry(&mut t, 0x0004, 5, 3, (data + 24) as u32);
    t.extend_from_slice(&0u32.to_le_bytes());
    for (n, d) in lat.iter().chain(lon.iter()) {
        t.extend_from_slice(&n.to_le_bytes());
        t.extend_from_slice(&d.to_le_bytes());
    }
    let mut seg = vec![0xFF, 0xE1];
    let len = (2 + 6 + t.len()) as u16;
    seg.extend_from_slice(&len.to_be_bytes());
    seg.extend_from_slice(b"Exif\0\0");
    seg.extend_from_slice(&t);
    seg
}

fn entry(t: &mut Vec<u8>, tag: u16, kind: u16, count: u32, value: u32) {
    t.extend_from_slice(&tag.to_le_bytes());
    t.extend_from_slice(&kind.to_le_bytes());
    t.extend_from_slice(&count.to_le_bytes());
    t.extend_from_slice(&value.to_le_bytes());
}

/// Inserts a GPS APP1 segment right after the JPEG start-of-image marker.
pub fn embed_gps(jpeg: &[u8], point: GeoPoint) -> Result<Vec<u8>> {
    let lat_ref = if point.lat < 0.0 { b'S' } else { b'N' };
    let lon_ref = if point.lon < 0.0 { b'W' } else { b'E' };
    let seg = gps_app1_segment(lat_ref, degrees_to_dms(point.lat), lon_ref, degrees_to_dms(point.lon));
    embed_segment(jpeg, &seg)
}

pub fn embed_segment(jpeg: &[u8], segment: &[u8]) -> Result<Vec<u8>> {
    if !is_jpeg(jpeg) {
        return Err(Error::Format("not a JPEG stream".into()));
    }
    let mut out = Vec::with_capacity(jpeg.len() + segment.len());
    out.extend_from_slice(&jpeg[..2]);
    out.extend_from_slice(segment);
    out.extend_from_slice(&jpeg[2..]);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restaurant {
    pub id: String,
    pub name: String,
    pub lat: f64,
    pub lon: f64,
    pub cuisine: String,
    pub menu_ref: String,
}

impl Restaurant {
    pub fn location(&self) -> GeoPoint {
        GeoPoint { lat: self.lat, lon: self.lon }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RestaurantFile {
    List(Vec<Restaurant>),
    Versioned {
        schema_version: u32,
        restaurants: Vec<Restaurant>,
    },
}

pub fn parse_restaurants(text: &str, file: &str) -> Result<Vec<Restaurant>> {
    // parse the bare array first so field errors are reported precisely
    let list = match serde_json::from_str::<Vec<Restaurant>>(text) {
        Ok(l) => l,
        Err(array_err) => match serde_json::from_str::<RestaurantFile>(text) {
            Ok(RestaurantFile::Versioned { schema_version, restaurants }) => {
                if schema_version != SCHEMA_VERSION {
                    return Err(Error::schema(file, format!("schema_version {schema_version} is not supported")));
                }
                restaurants
            }
            Ok(RestaurantFile::List(l)) => l,
            Err(_) => return Err(Error::schema(file, array_err.to_string())),
        },
    };
    let mut seen = HashSet::new();
    for r in &list {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::schema(file, format!("id: duplicate restaurant id {:?}", r.id)));
        }
        if GeoPoint::new(r.lat, r.lon).is_err() {
            return Err(Error::schema(file, format!("lat/lon: out of range for {:?}", r.id)));
        }
        if r.menu_ref.is_empty() {
            return Err(Error::schema(file, format!("menu_ref: empty for {:?}", r.id)));
        }
    }
    Ok(list)
}

pub fn load_restaurants(path: &Path) -> Result<Vec<Restaurant>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_restaurants(&text, &path.display().to_string())
}

pub fn write_restaurants(path: &Path, list: &[Restaurant]) -> Result<()> {
    let text = serde_json::to_string_pretty(list).map_err(|e| Error::schema(path.display().to_string(), e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct RestaurantMatch {
    pub restaurant: Restaurant,
    pub distance_m: f64,
}

/// Restaurants within `radius_m`, nearest first.
pub fn match_restaurants(point: GeoPoint, db: &[Restaurant], radius_m: f64) -> Result<Vec<RestaurantMatch>> {
    if !(radius_m > 0.0) {
        return Err(Error::Domain(format!("radius must be positive, got {radius_m}")));
    }
    let mut out: Vec<RestaurantMatch> = db
        .iter()
        .map(|r| RestaurantMatch {
            distance_m: haversine_m(point, r.location()),
            restaurant: r.clone(),
        })
        .filter(|m| m.distance_m <= radius_m)
        .collect();
    out.sort_by(|a, b| {
        a.distance_m
            .total_cmp(&b.distance_m)
            .then_with(|| a.restaurant.id.cmp(&b.restaurant.id))
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MenuItem {
    pub slug: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Menu {
    pub restaurant_id: String,
    pub items: Vec<MenuItem>,
}

impl Menu {
    pub fn is_trainable(&self) -> bool {
        !self.items.is_empty()
    }
}

#[derive(Deserialize)]
struct MenuFile {
    #[serde(default)]
    schema_version: Option<u32>,
    restaurant_id: String,
    items: Vec<MenuItem>,
}

pub fn parse_menu(text: &str, file: &str) -> Result<Menu> {
    let m: MenuFile = serde_json::from_str(text).map_err(|e| Error::schema(file, e.to_string()))?;
    if let Some(v) = m.schema_version {
        if v != SCHEMA_VERSION {
            return Err(Error::schema(file, format!("schema_version {v} is not supported")));
        }
    }
    let mut seen = HashSet::new();
    for item in &m.items {
        if item.slug.is_empty() || item.slug.contains(['/', '\\']) || item.slug.starts_with('.') {
            return Err(Error::schema(file, format!("slug: invalid slug {:?}", item.slug)));
        }
        if !seen.insert(item.slug.as_str()) {
            return Err(Error::schema(file, format!("slug: duplicate slug {:?}", item.slug)));
        }
    }
    Ok(Menu {
        restaurant_id: m.restaurant_id,
        items: m.items,
    })
}

pub trait MenuProvider: Send + Sync {
    fn fetch_menu(&self, restaurant: &Restaurant) -> Result<Menu>;
}

/// Reads `<root>/menus/<menu_ref>.json`.
#[derive(Debug, Clone)]
pub struct JsonMenuProvider {
    pub root: PathBuf,
}

impl JsonMenuProvider {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        JsonMenuProvider { root: root.into() }
    }

    pub fn menu_path(&self, menu_ref: &str) -> PathBuf {
        self.root.join("menus").join(format!("{menu_ref}.json"))
    }
}

impl MenuProvider for JsonMenuProvider {
    fn fetch_menu(&self, restaurant: &Restaurant) -> Result<Menu> {
        let path = self.menu_path(&restaurant.menu_ref);
        if !path.is_file() {
            return Err(Error::NotFound(format!(
                "no menu for restaurant {:?} at {}",
                restaurant.id,
                path.display()
            )));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let menu = parse_menu(&text, &path.display().to_string())?;
        if menu.restaurant_id != restaurant.id {
            return Err(Error::schema(
                path.display().to_string(),
                format!("restaurant_id: {:?} does not match {:?}", menu.restaurant_id, restaurant.id),
            ));
        }
        Ok(menu)
    }
}

pub fn fetch_menu(restaurant: &Restaurant, provider: &dyn MenuProvider) -> Result<Menu> {
    provider.fetch_menu(restaurant)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestItem {
    pub slug: String,
    pub name: String,
    pub images: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingManifest {
    pub restaurant_id: String,
    pub images_per_item: usize,
    pub items: Vec<ManifestItem>,
}

impl TrainingManifest {
    pub fn total_images(&self) -> usize {
        self.items.iter().map(|i| i.images.len()).sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

pub fn is_image_file(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files directly inside `dir`, sorted by file name.
pub fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

/// The first `images_per_item` files, by name, of each `<store>/<slug>/`.
pub fn assemble_training_set(menu: &Menu, store: &Path, images_per_item: usize) -> Result<TrainingManifest> {
    if images_per_item == 0 {
        return Err(Error::Config("images_per_item must be positive".into()));
    }
    let mut items = Vec::new();
    for item in &menu.items {
        let mut images = sorted_images(&store.join(&item.slug))?;
        if images.is_empty() {
            log::warn!("no training images for {:?}; dropping it", item.slug);
            continue;
        }
        if images.len() < images_per_item {
            log::warn!(
                "{:?} has {} training images, wanted {images_per_item}",
                item.slug,
                images.len()
            );
        }
        images.truncate(images_per_item);
        items.push(ManifestItem {
            slug: item.slug.clone(),
            name: item.name.clone(),
            images,
        });
    }
    if items.is_empty() {
        return Err(Error::Assembly(format!(
            "no training images for any item of {:?} under {}",
            menu.restaurant_id,
            store.display()
        )));
    }
    Ok(TrainingManifest {
        restaurant_id: menu.restaurant_id.clone(),
        images_per_item,
        items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_jpeg() -> Vec<u8> {
        let img = image::RgbImage::from_pixel(8, 8, image::Rgb([120, 40, 200]));
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Jpeg).unwrap();
        buf.into_inner()
    }

    fn restaurant(id: &str, lat: f64, lon: f64) -> Restaurant {
        Restaurant {
            id: id.into(),
            name: id.into(),
            lat,
            lon,
            cuisine: "x".into(),
            menu_ref: id.into(),
        }
    }

    #[test]
    fn exif_gps_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let seg = gps_app1_segment(b'N', [(33, 1), (46, 1), (48, 1)], b'W', [(84, 1), (23, 1), (24, 1)]);
        let path = dir.path().join("a.jpg");
        fs::write(&path, embed_segment(&tiny_jpeg(), &seg).unwrap()).unwrap();
        let p = extract_geotag(&path).unwrap().unwrap();
        assert!((p.lat - 33.78).abs() < 1e-9 && (p.lon + 84.39).abs() < 1e-9);

        let q = GeoPoint::new(-12.345678, 150.5).unwrap();
        fs::write(&path, embed_gps(&tiny_jpeg(), q).unwrap()).unwrap();
        let p = extract_geotag(&path).unwrap().unwrap();
        assert!((p.lat - q.lat).abs() < 1e-7 && (p.lon - q.lon).abs() < 1e-7);
    }

    #[test]
    fn absent_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let jpg = dir.path().join("plain.jpg");
        fs::write(&jpg, tiny_jpeg()).unwrap();
        assert_eq!(extract_geotag(&jpg).unwrap(), None);

        let png = dir.path().join("b.png");
        image::RgbImage::new(4, 4).save(&png).unwrap();
        assert_eq!(extract_geotag(&png).unwrap(), None);
        fs::write(sidecar_path(&png), r#"{"lat": 0, "lon": 0}"#).unwrap();
        assert_eq!(extract_geotag(&png).unwrap(), Some(GeoPoint { lat: 0.0, lon: 0.0 }));
        fs::write(sidecar_path(&png), r#"{"lat": 0}"#).unwrap();
        assert!(matches!(extract_geotag(&png), Err(Error::Schema { .. })));
    }

    #[test]
    fn malformed_rationals_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let seg = gps_app1_segment(b'N', [(33, 0), (46, 1), (48, 1)], b'W', [(84, 1), (23, 1), (24, 1)]);
        let path = dir.path().join("bad.jpg");
        fs::write(&path, embed_segment(&tiny_jpeg(), &seg).unwrap()).unwrap();
        assert!(matches!(extract_geotag(&path), Err(Error::GeotagParse(_))));
    }

    #[test]
    fn matching() {
        let origin = GeoPoint::new(0.0, 0.0).unwrap();
        // 1e-5 degrees of latitude is about 1.11 m
        let db = vec![
            restaurant("far", 0.0, 0.001),
            restaurant("sixty", 60.0 / 111_194.9, 0.0),
            restaurant("twenty", 20.0 / 111_194.9, 0.0),
        ];
        let d = haversine_m(origin, db[0].location());
        assert!((d - 111.19).abs() < 0.05, "{d}");
        let m = match_restaurants(origin, &db, DEFAULT_RADIUS_M).unwrap();
        let ids: Vec<&str> = m.iter().map(|m| m.restaurant.id.as_str()).collect();
        assert_eq!(ids, vec!["twenty", "sixty"]);
        assert!(match_restaurants(origin, &db, 0.0).is_err());
    }

    #[test]
    fn restaurant_file_forms() {
        let arr = r#"[{"id":"a","name":"A","lat":1,"lon":2,"cuisine":"c","menu_ref":"a"}]"#;
        assert_eq!(parse_restaurants(arr, "r").unwrap().len(), 1);
        let ver = format!(r#"{{"schema_version":1,"restaurants":{arr}}}"#);
        assert_eq!(parse_restaurants(&ver, "r").unwrap().len(), 1);
        let missing = r#"[{"id":"a","name":"A","lon":2,"cuisine":"c","menu_ref":"a"}]"#;
        match parse_restaurants(missing, "r") {
            Err(Error::Schema { message, .. }) => assert!(message.contains("lat"), "{message}"),
            other => panic!("{other:?}"),
        }
        let dup = r#"[{"id":"a","name":"A","lat":1,"lon":2,"cuisine":"c","menu_ref":"a"},
                      {"id":"a","name":"B","lat":1,"lon":2,"cuisine":"c","menu_ref":"b"}]"#;
        assert!(matches!(parse_restaurants(dup, "r"), Err(Error::Schema { .. })));
    }

    #[test]
    fn menus() {
        let dir = tempfile::tempdir().unwrap();
        let provider = JsonMenuProvider::new(dir.path());
        fs::create_dir_all(dir.path().join("menus")).unwrap();
        let r = restaurant("r1", 0.0, 0.0);
        assert!(matches!(provider.fetch_menu(&r), Err(Error::NotFound(_))));

        let items: Vec<String> = (0..15).map(|i| format!(r#"{{"slug":"d{i}","name":"Dish {i}"}}"#)).collect();
        let text = format!(r#"{{"restaurant_id":"r1","items":[{}]}}"#, items.join(","));
        fs::write(provider.menu_path("r1"), text).unwrap();
        let m = fetch_menu(&r, &provider).unwrap();
        assert_eq!(m.items.len(), 15);
        assert!(m.is_trainable());

        fs::write(provider.menu_path("r1"), r#"{"restaurant_id":"r1","items":[{"slug":"a","name":"x"},{"slug":"a","name":"y"}]}"#).unwrap();
        match provider.fetch_menu(&r) {
            Err(Error::Schema { message, .. }) => assert!(message.contains("slug")),
            other => panic!("{other:?}"),
        }
        fs::write(provider.menu_path("r1"), r#"{"restaurant_id":"r1","items":[]}"#).unwrap();
        assert!(!provider.fetch_menu(&r).unwrap().is_trainable());
    }

    #[test]
    fn assembly() {
        let dir = tempfile::tempdir().unwrap();
        let menu = Menu {
            restaurant_id: "r".into(),
            items: vec![
                MenuItem { slug: "a".into(), name: "A".into() },
                MenuItem { slug: "b".into(), name: "B".into() },
                MenuItem { slug: "c".into(), name: "C".into() },
            ],
        };
        assert!(matches!(assemble_training_set(&menu, dir.path(), 5), Err(Error::Assembly(_))));
        fs::create_dir_all(dir.path().join("a")).unwrap();
        fs::create_dir_all(dir.path().join("b")).unwrap();
        for i in (0..7).rev() {
            fs::write(dir.path().join("a").join(format!("{i:02}.png")), b"x").unwrap();
        }
        for i in 0..3 {
            fs::write(dir.path().join("b").join(format!("{i}.jpg")), b"x").unwrap();
        }
        fs::write(dir.path().join("b").join("notes.txt"), b"x").unwrap();
        let m = assemble_training_set(&menu, dir.path(), 5).unwrap();
        assert_eq!(m.items.len(), 2);
        assert_eq!(m.items[0].images.len(), 5);
        assert!(m.items[0].images[0].ends_with("00.png"));
        assert_eq!(m.items[1].images.len(), 3);
        assert_eq!(m.to_json(), assemble_training_set(&menu, dir.path(), 5).unwrap().to_json());
    }

    fn point() -> impl Strategy<Value = GeoPoint> {
        (-89.0f64..89.0, -179.0f64..179.0).prop_map(|(lat, lon)| GeoPoint { lat, lon })
    }

    proptest! {
        #[test]
        fn haversine_symmetry(a in point(), b in point()) {
            prop_assert_eq!(haversine_m(a, a), 0.0);
            prop_assert!((haversine_m(a, b) - haversine_m(b, a)).abs() < 1e-6);
        }

        #[test]
        fn matching_monotone_in_radius(a in point(), offs in proptest::collection::vec((-0.002f64..0.002, -0.002f64..0.002), 1..8),
                                       r1 in 1.0f64..200.0, extra in 0.0f64..200.0) {
            let db: Vec<Restaurant> = offs.iter().enumerate()
                .map(|(i, (dl, dn))| restaurant(&format!("r{i}"), a.lat + dl, a.lon + dn)).collect();
            let small: HashSet<String> = match_restaurants(a, &db, r1).unwrap().into_iter().map(|m| m.restaurant.id).collect();
            let big: HashSet<String> = match_restaurants(a, &db, r1 + extra).unwrap().into_iter().map(|m| m.restaurant.id).collect();
            prop_assert!(small.is_subset(&big));
        }

        #[test]
        fn dms_round_trip(v in 0.0f64..179.99) {
            let d = degrees_to_dms(v);
            let back = d[0].0 as f64 + d[1].0 as f64 / 60.0 + d[2].0 as f64 / 10_000.0 / 3600.0;
            prop_assert!((back - v).abs() < 1e-7);
        }
    }
}
