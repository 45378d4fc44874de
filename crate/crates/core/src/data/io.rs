//! On-disk layout shared by real and toy datasets:
//!
//! ```text
//! <root>/rgb/<id>.png          8-bit RGB
//! <root>/depth/<id>.png        16-bit, centimeters
//! <root>/semantic/<id>.png     color-coded labels
//! <root>/sparse/<id>.png       optional 16-bit centimeters, pre-drawn sparse input
//! <root>/intrinsics/<id>.txt   optional "fx fy cx cy"
//! <root>/classes.txt           "id r g b name" per line
//! <root>/split.txt             [train] / [val] / [test] sections
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};

use super::{DatasetSplit, DepthMap, ImageSample, Intrinsics, LabelMap, RgbImage};
use crate::error::{Error, Result};

/// Virtual KITTI 2 camera (1242x375 frames).
pub const VKITTI2_INTRINSICS: Intrinsics = Intrinsics {
    fx: 725.0087,
    fy: 725.0087,
    cx: 620.5,
    cy: 187.0,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassEntry {
    pub id: u32,
    pub color: [u8; 3],
    pub name: String,
}

/// Color to class-id table. Colors not listed decode to `background`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    entries: Vec<ClassEntry>,
    background: u32,
}

impl ClassMap {
    pub fn new(entries: Vec<ClassEntry>, background: u32) -> Result<Self> {
        let mut ids: Vec<u32> = entries.iter().map(|e| e.id).collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| id != i as u32) {
            return Err(Error::Dataset("class ids must be exactly 0..nc".into()));
        }
        if background as usize >= entries.len() {
            return Err(Error::InvalidClassId {
                id: background,
                nc: entries.len(),
            });
        }
        let mut entries = entries;
        entries.sort_by_key(|e| e.id);
        Ok(Self { entries, background })
    }

    /// The Virtual KITTI 2 semantic palette with "Undefined" as class 0.
    pub fn vkitti2() -> Self {
        let table: [(&str, [u8; 3]); 15] = [
            ("Undefined", [0, 0, 0]),
            ("Terrain", [210, 0, 200]),
            ("Sky", [90, 200, 255]),
            ("Tree", [0, 199, 0]),
            ("Vegetation", [90, 240, 0]),
            ("Building", [140, 140, 140]),
            ("Road", [100, 60, 100]),
            ("GuardRail", [250, 100, 255]),
            ("TrafficSign", [255, 255, 0]),
            ("TrafficLight", [200, 200, 0]),
            ("Pole", [255, 130, 0]),
            ("Misc", [80, 80, 80]),
            ("Truck", [160, 60, 60]),
            ("Car", [255, 127, 80]),
            ("Van", [0, 139, 139]),
        ];
        let entries = table
            .iter()
            .enumerate()
            .map(|(i, (name, color))| ClassEntry {
                id: i as u32,
                color: *color,
                name: (*name).to_owned(),
            })
            .collect();
        Self { entries, background: 0 }
    }

    /// Label colors for toy scenes: class 0 is black, the rest spread over hue.
    pub fn toy(nc: usize) -> Self {
        let entries = (0..nc as u32)
            .map(|id| ClassEntry {
                id,
                color: if id == 0 {
                    [0, 0, 0]
                } else {
                    super::toy::class_color(id, nc).map(|c| (c * 255.0).round() as u8)
                },
                name: if id == 0 { "ground".into() } else { format!("object{id}") },
            })
            .collect();
        Self { entries, background: 0 }
    }

    pub fn nc(&self) -> usize {
        self.entries.len()
    }

    pub fn background(&self) -> u32 {
        self.background
    }

    pub fn entries(&self) -> &[ClassEntry] {
        &self.entries
    }

    pub fn id_for(&self, color: [u8; 3]) -> Option<u32> {
        self.entries.iter().find(|e| e.color == color).map(|e| e.id)
    }

    pub fn color_for(&self, id: u32) -> [u8; 3] {
        self.entries[id as usize].color
    }

    /// One `id r g b name` line per class; the background class comes first.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let bg = &self.entries[self.background as usize];
        for e in std::iter::once(bg).chain(self.entries.iter().filter(|e| e.id != self.background)) {
            let [r, g, b] = e.color;
            let _ = writeln!(out, "{} {r} {g} {b} {}", e.id, e.name);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Dataset(format!("classes line {}: expected `id r g b name`", lineno + 1));
            let mut fields = line.split_whitespace();
            let mut num = || fields.next().and_then(|f| f.parse::<u32>().ok()).ok_or_else(bad);
            let id = num()?;
            let rgb = [num()?, num()?, num()?];
            let color = rgb.map(|c| c.min(255) as u8);
            let name = line.splitn(5, char::is_whitespace).nth(4).unwrap_or("").trim().to_owned();
            entries.push(ClassEntry { id, color, name });
        }
        let background = entries.first().map_or(0, |e| e.id);
        Self::new(entries, background)
    }
}

/// A decoded sample plus the number of label pixels whose color was not in
/// the class map.
#[derive(Clone, Debug, PartialEq)]
pub struct LoadedSample {
    pub sample: ImageSample,
    pub unknown_colors: usize,
}

fn require(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_owned()))
    }
}

fn read_rgb(path: &Path) -> Result<RgbImage> {
    require(path)?;
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    RgbImage::new(h as usize, w as usize, data)
}

/// 16-bit centimeter image to millimeters.
fn read_depth_cm(path: &Path) -> Result<DepthMap> {
    require(path)?;
    let img = image::open(path)?.to_luma16();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0[0] as f64 * 10.0).collect();
    DepthMap::new(h as usize, w as usize, data)
}

fn read_labels(path: &Path, classes: &ClassMap) -> Result<(LabelMap, usize)> {
    require(path)?;
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let lookup: HashMap<[u8; 3], u32> = classes.entries.iter().map(|e| (e.color, e.id)).collect();
    let mut unknown = 0;
    let data = img
        .pixels()
        .map(|p| {
            lookup.get(&p.0).copied().unwrap_or_else(|| {
                unknown += 1;
                classes.background
            })
        })
        .collect();
    Ok((LabelMap::new(h as usize, w as usize, data)?, unknown))
}

fn write_rgb(path: &Path, rgb: &RgbImage) -> Result<()> {
    let (h, w) = rgb.dims();
    let buf: Vec<u8> = rgb
        .data()
        .iter()
        .flat_map(|px| px.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    let img: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(w as u32, h as u32, buf).expect("buffer size");
    img.save(path)?;
    Ok(())
}

/// Millimeters to 16-bit centimeters, rounding and saturating.
fn write_depth_cm(path: &Path, depth: &DepthMap) -> Result<()> {
    let (h, w) = depth.dims();
    let buf: Vec<u16> = depth
        .data()
        .iter()
        .map(|&mm| (mm / 10.0).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, _> = ImageBuffer::from_raw(w as u32, h as u32, buf).expect("buffer size");
    img.save(path)?;
    Ok(())
}

fn write_labels(path: &Path, labels: &LabelMap, classes: &ClassMap) -> Result<()> {
    let (h, w) = labels.dims();
    let mut buf = Vec::with_capacity(h * w * 3);
    for &id in labels.data() {
        if id as usize >= classes.nc() {
            return Err(Error::InvalidClassId { id, nc: classes.nc() });
        }
        buf.extend_from_slice(&classes.color_for(id));
    }
    let img: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(w as u32, h as u32, buf).expect("buffer size");
    img.save(path)?;
    Ok(())
}

/// Reads one Virtual KITTI 2 frame with the stock camera intrinsics. The
/// sample id is the rgb file stem; sparse depth is left empty.
pub fn load_vkitti2_sample(
    rgb_path: &Path,
    depth_path: &Path,
    semantic_path: &Path,
    class_map: &ClassMap,
) -> Result<LoadedSample> {
    let rgb = read_rgb(rgb_path)?;
    let depth = read_depth_cm(depth_path)?;
    let (labels, unknown_colors) = read_labels(semantic_path, class_map)?;
    let dims = rgb.dims();
    if depth.dims() != dims || labels.dims() != dims {
        return Err(Error::ShapeMismatch(format!(
            "rgb {dims:?}, depth {:?}, semantic {:?}",
            depth.dims(),
            labels.dims()
        )));
    }
    if unknown_colors > 0 {
        log::warn!(
            "{}: {unknown_colors} label pixels with unmapped colors set to class {}",
            semantic_path.display(),
            class_map.background
        );
    }
    let sample_id = rgb_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(LoadedSample {
        sample: ImageSample {
            sample_id,
            rgb,
            sparse_depth: None,
            dense_depth_gt: Some(depth),
            semantic_gt: Some(labels),
            intrinsics: VKITTI2_INTRINSICS,
        },
        unknown_colors,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetPaths {
    pub root: PathBuf,
}

impl DatasetPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    fn file(&self, dir: &str, id: &str, ext: &str) -> PathBuf {
        self.root.join(dir).join(format!("{id}.{ext}"))
    }

    pub fn rgb(&self, id: &str) -> PathBuf {
        self.file("rgb", id, "png")
    }

    pub fn depth(&self, id: &str) -> PathBuf {
        self.file("depth", id, "png")
    }

    pub fn semantic(&self, id: &str) -> PathBuf {
        self.file("semantic", id, "png")
    }

    pub fn sparse(&self, id: &str) -> PathBuf {
        self.file("sparse", id, "png")
    }

    pub fn intrinsics(&self, id: &str) -> PathBuf {
        self.file("intrinsics", id, "txt")
    }

    pub fn classes(&self) -> PathBuf {
        self.root.join("classes.txt")
    }

    pub fn split(&self) -> PathBuf {
        self.root.join("split.txt")
    }
}

/// Writes `samples` in the dataset layout. Depth is stored in whole
/// centimeters, so sub-centimeter detail does not survive a round trip.
pub fn write_dataset(root: &Path, samples: &[ImageSample], classes: &ClassMap, split: &DatasetSplit) -> Result<()> {
    let paths = DatasetPaths::new(root);
    for dir in ["rgb", "depth", "semantic", "sparse", "intrinsics"] {
        fs::create_dir_all(root.join(dir))?;
    }
    for s in samples {
        let id = &s.sample_id;
        write_rgb(&paths.rgb(id), &s.rgb)?;
        let dense = s.dense_depth_gt.as_ref().ok_or(Error::MissingInput("dense_depth_gt"))?;
        write_depth_cm(&paths.depth(id), dense)?;
        let labels = s.semantic_gt.as_ref().ok_or(Error::MissingInput("semantic_gt"))?;
        write_labels(&paths.semantic(id), labels, classes)?;
        if let Some(sparse) = &s.sparse_depth {
            write_depth_cm(&paths.sparse(id), sparse)?;
        }
        let k = s.intrinsics;
        fs::write(paths.intrinsics(id), format!("{} {} {} {}\n", k.fx, k.fy, k.cx, k.cy))?;
    }
    fs::write(paths.classes(), classes.to_text())?;
    fs::write(paths.split(), split.to_text())?;
    Ok(())
}

/// A dataset directory with its class table and split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub paths: DatasetPaths,
    pub classes: ClassMap,
    pub split: DatasetSplit,
}

/// Opens `root`. Without `classes.txt` the Virtual KITTI 2 palette is assumed.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let paths = DatasetPaths::new(root);
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_owned()));
    }
    let classes = match fs::read_to_string(paths.classes()) {
        Ok(text) => ClassMap::parse(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => ClassMap::vkitti2(),
        Err(e) => return Err(e.into()),
    };
    require(&paths.split())?;
    let split = DatasetSplit::parse(&fs::read_to_string(paths.split())?)?;
    Ok(Dataset { paths, classes, split })
}

impl Dataset {
    pub fn nc(&self) -> usize {
        self.classes.nc()
    }

    /// Loads one sample, picking up the optional sparse map and per-sample
    /// intrinsics when present.
    pub fn load_sample(&self, id: &str) -> Result<LoadedSample> {
        let p = &self.paths;
        let mut loaded = load_vkitti2_sample(&p.rgb(id), &p.depth(id), &p.semantic(id), &self.classes)?;
        loaded.sample.sample_id = id.to_owned();
        let sparse = p.sparse(id);
        if sparse.is_file() {
            loaded.sample.sparse_depth = Some(read_depth_cm(&sparse)?);
        }
        let intr = p.intrinsics(id);
        if intr.is_file() {
            let text = fs::read_to_string(&intr)?;
            let v: Vec<f64> = text.split_whitespace().filter_map(|t| t.parse().ok()).collect();
            if v.len() != 4 {
                return Err(Error::Dataset(format!("{}: expected `fx fy cx cy`", intr.display())));
            }
            loaded.sample.intrinsics = Intrinsics {
                fx: v[0],
                fy: v[1],
                cx: v[2],
                cy: v[3],
            };
        }
        Ok(loaded)
    }

    pub fn load_all(&self, ids: &[String]) -> Result<Vec<ImageSample>> {
        ids.iter().map(|id| self.load_sample(id).map(|l| l.sample)).collect()
    }
}
