//! COCO-style annotation and detection files, anchor grids, and seeded
//! synthetic tiny-object scenes.
//!
//! COCO boxes are `[x, y, w, h]` with `(x, y)` the top-left corner. They are
//! converted to center-size form when read and back when written; nothing
//! else in the crate sees corner-origin boxes.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::nms::Detection;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundTruth {
    pub bbox: BoundingBox,
    pub category_id: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedImage {
    pub image_id: u64,
    pub width: u32,
    pub height: u32,
    pub gts: Vec<GroundTruth>,
}

impl AnnotatedImage {
    pub fn boxes(&self) -> Vec<BoundingBox> {
        self.gts.iter().map(|g| g.bbox).collect()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Clip ground truths to the image rectangle.
    pub clip: bool,
}

#[derive(Deserialize)]
struct RawImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Deserialize)]
struct RawAnnotation {
    image_id: u64,
    bbox: [f64; 4],
    category_id: i64,
}

#[derive(Serialize)]
struct OutImage {
    id: u64,
    width: u32,
    height: u32,
}

#[derive(Serialize)]
struct OutAnnotation {
    id: u64,
    image_id: u64,
    category_id: i64,
    bbox: [f64; 4],
    area: f64,
    iscrowd: u8,
}

#[derive(Serialize)]
struct OutCategory {
    id: i64,
    name: String,
}

#[derive(Serialize)]
struct OutCoco {
    images: Vec<OutImage>,
    annotations: Vec<OutAnnotation>,
    categories: Vec<OutCategory>,
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn record_err(path: &Path, record: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Record {
        path: path.to_path_buf(),
        record: record.into(),
        message: message.into(),
    }
}

fn array_field<'a>(path: &Path, root: &'a Value, key: &str) -> Result<&'a Vec<Value>> {
    root.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| record_err(path, "<root>", format!("missing array `{key}`")))
}

/// Reads a COCO annotation file with default options.
pub fn load_coco(path: impl AsRef<Path>) -> Result<Vec<AnnotatedImage>> {
    load_coco_with(path, &LoadOptions::default())
}

/// Reads a COCO annotation file. Images keep their file order; each image's
/// ground truths keep annotation order.
pub fn load_coco_with(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<Vec<AnnotatedImage>> {
    let path = path.as_ref();
    let root = read_json(path)?;
    let raw_images = array_field(path, &root, "images")?;
    let raw_annotations = array_field(path, &root, "annotations")?;
    array_field(path, &root, "categories")?;

    let mut images = Vec::with_capacity(raw_images.len());
    let mut slot: HashMap<u64, usize> = HashMap::new();
    for (k, v) in raw_images.iter().enumerate() {
        let img: RawImage = serde_json::from_value(v.clone())
            .map_err(|e| record_err(path, format!("images[{k}]"), e.to_string()))?;
        if img.width == 0 || img.height == 0 {
            return Err(record_err(
                path,
                format!("images[{k}] (id {})", img.id),
                "image width and height must be positive",
            ));
        }
        if slot.insert(img.id, images.len()).is_some() {
            return Err(record_err(
                path,
                format!("images[{k}] (id {})", img.id),
                "duplicate image id",
            ));
        }
        images.push(AnnotatedImage {
            image_id: img.id,
            width: img.width,
            height: img.height,
            gts: Vec::new(),
        });
    }

    for (k, v) in raw_annotations.iter().enumerate() {
        let record = || {
            let id = v
                .get("id")
                .map(|i| i.to_string())
                .unwrap_or_else(|| "?".into());
            format!("annotations[{k}] (id {id})")
        };
        let ann: RawAnnotation = serde_json::from_value(v.clone())
            .map_err(|e| record_err(path, record(), e.to_string()))?;
        let [x, y, w, h] = ann.bbox;
        let mut bbox = BoundingBox::from_xywh(x, y, w, h)
            .map_err(|e| record_err(path, record(), e.to_string()))?;
        let idx = *slot.get(&ann.image_id).ok_or_else(|| {
            record_err(path, record(), format!("unknown image_id {}", ann.image_id))
        })?;
        let image = &mut images[idx];
        if opts.clip {
            bbox = bbox
                .clipped(image.width as f64, image.height as f64)
                .map_err(|e| record_err(path, record(), format!("after clipping: {e}")))?;
        }
        image.gts.push(GroundTruth {
            bbox,
            category_id: ann.category_id,
        });
    }
    Ok(images)
}

/// Serializes images back to COCO JSON. Annotation ids are assigned
/// sequentially from 1; categories are the distinct ids in ascending order.
pub fn to_coco_json(images: &[AnnotatedImage]) -> String {
    let mut annotations = Vec::new();
    let mut categories = BTreeMap::new();
    for img in images {
        for gt in &img.gts {
            categories.insert(gt.category_id, ());
            annotations.push(OutAnnotation {
                id: annotations.len() as u64 + 1,
                image_id: img.image_id,
                category_id: gt.category_id,
                bbox: gt.bbox.to_xywh(),
                area: gt.bbox.area(),
                iscrowd: 0,
            });
        }
    }
    let out = OutCoco {
        images: images
            .iter()
            .map(|i| OutImage {
                id: i.image_id,
                width: i.width,
                height: i.height,
            })
            .collect(),
        annotations,
        categories: categories
            .into_keys()
            .map(|id| OutCategory {
                id,
                name: format!("category_{id}"),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&out).expect("COCO output serializes");
    s.push('\n');
    s
}

pub fn save_coco(images: &[AnnotatedImage], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &to_coco_json(images))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One entry of a detection file: `{bbox: [cx, cy, w, h], score, category_id, image_id}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub bbox: BoundingBox,
    pub score: f64,
    pub category_id: i64,
    pub image_id: u64,
}

impl DetectionRecord {
    pub fn detection(&self) -> Detection {
        Detection::new(self.bbox, self.score, self.category_id)
    }
}

/// Reads a detection file. Boxes are center-size; scores must lie in `[0, 1]`.
pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let root = read_json(path)?;
    let items = root
        .as_array()
        .ok_or_else(|| record_err(path, "<root>", "expected a JSON array of detections"))?;
    items
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let rec: DetectionRecord = serde_json::from_value(v.clone())
                .map_err(|e| record_err(path, format!("[{k}]"), e.to_string()))?;
            if !(0.0..=1.0).contains(&rec.score) {
                return Err(record_err(
                    path,
                    format!("[{k}]"),
                    format!("score {} outside [0, 1]", rec.score),
                ));
            }
            Ok(rec)
        })
        .collect()
}

pub fn detections_to_json(records: &[DetectionRecord]) -> String {
    let mut s = serde_json::to_string_pretty(records).expect("detections serialize");
    s.push('\n');
    s
}

pub fn save_detections(records: &[DetectionRecord], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &detections_to_json(records))
}

/// Anchor layout: one anchor per (scale, ratio) at every grid cell of every
/// stride. Ratios are `h / w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorGridConfig {
    pub strides: Vec<u32>,
    pub scales: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl AnchorGridConfig {
    pub fn new(strides: Vec<u32>, scales: Vec<f64>, ratios: Vec<f64>) -> Result<Self> {
        let cfg = Self {
            strides,
            scales,
            ratios,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: &f64| *v > 0.0 && v.is_finite();
        if self.strides.is_empty() || self.scales.is_empty() || self.ratios.is_empty() {
            return Err(Error::InvalidParameters(
                "anchor strides, scales and ratios must be nonempty".into(),
            ));
        }
        if self.strides.contains(&0)
            || !self.scales.iter().all(positive)
            || !self.ratios.iter().all(positive)
        {
            return Err(Error::InvalidParameters(
                "anchor strides, scales and ratios must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Number of anchors [`generate_anchors`] yields for an image.
    pub fn anchor_count(&self, width: u32, height: u32) -> usize {
        let per_center = self.scales.len() * self.ratios.len();
        self.strides
            .iter()
            .map(|&s| width.div_ceil(s) as usize * height.div_ceil(s) as usize * per_center)
            .sum()
    }
}

impl Default for AnchorGridConfig {
    /// Five-level FPN layout with one scale and three aspect ratios.
    fn default() -> Self {
        Self {
            strides: vec![4, 8, 16, 32, 64],
            scales: vec![8.0],
            ratios: vec![0.5, 1.0, 2.0],
        }
    }
}

/// Generates anchors for a `width × height` image.
///
/// For stride `s`, centers sit at `(s/2 + i·s, s/2 + j·s)` for every cell
/// that starts inside the image. Each anchor has area `(scale·s)²` with
/// `w = scale·s/√ratio` and `h = scale·s·√ratio`. Order: stride, row, column,
/// scale, ratio.
pub fn generate_anchors(
    width: u32,
    height: u32,
    cfg: &AnchorGridConfig,
) -> Result<Vec<BoundingBox>> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::InvalidParameters(format!(
            "image size {width}x{height} must be positive"
        )));
    }
    let mut anchors = Vec::with_capacity(cfg.anchor_count(width, height));
    for &stride in &cfg.strides {
        let s = stride as f64;
        let shapes: Vec<(f64, f64)> = cfg
            .scales
            .iter()
            .flat_map(|&scale| {
                cfg.ratios.iter().map(move |&ratio| {
                    let root = ratio.sqrt();
                    (scale * s / root, scale * s * root)
                })
            })
            .collect();
        for j in 0..height.div_ceil(stride) {
            let cy = s / 2.0 + j as f64 * s;
            for i in 0..width.div_ceil(stride) {
                let cx = s / 2.0 + i as f64 * s;
                for &(w, h) in &shapes {
                    anchors.push(BoundingBox::new(cx, cy, w, h)?);
                }
            }
        }
    }
    Ok(anchors)
}

/// Random tiny objects with integer corners and integer side lengths drawn
/// uniformly from `size_range`, placed fully inside a square image.
pub fn synth_tiny_scene(
    seed: u64,
    n_objects: usize,
    size_range: (u32, u32),
    image_size: u32,
) -> Result<AnnotatedImage> {
    let (min, max) = size_range;
    if min < 2 || min > max || max > image_size {
        return Err(Error::InvalidParameters(format!(
            "size range [{min}, {max}] must satisfy 2 <= min <= max <= image size {image_size}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut gts = Vec::with_capacity(n_objects);
    for _ in 0..n_objects {
        let w = rng.int_inclusive(min as i64, max as i64);
        let h = rng.int_inclusive(min as i64, max as i64);
        let x = rng.int_inclusive(0, image_size as i64 - w);
        let y = rng.int_inclusive(0, image_size as i64 - h);
        gts.push(GroundTruth {
            bbox: BoundingBox::from_xywh(x as f64, y as f64, w as f64, h as f64)?,
            category_id: 1,
        });
    }
    Ok(AnnotatedImage {
        image_id: seed,
        width: image_size,
        height: image_size,
        gts,
    })
}

/// Parameters for [`synth_offset_scene`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetSceneSpec {
    pub n_objects: usize,
    /// Side of every square ground truth, in pixels.
    pub gt_size: u32,
    /// Anchor grid stride; anchor centers sit at `stride/2 + k·stride`.
    pub stride: u32,
    /// Inclusive range of the per-axis diagonal offset from the anchor center.
    pub offset_range: (u32, u32),
    pub image_size: u32,
}

impl OffsetSceneSpec {
    /// 25 ground truths of 6×6 displaced 2 to 4 pixels diagonally from the
    /// centers of a stride-8 grid in a 128×128 image. Paired with 8×8
    /// anchors (stride 8, scale 1, ratio 1), every ground truth is
    /// off-center from its nearest anchor.
    pub fn supervision_fixture() -> Self {
        Self {
            n_objects: 25,
            gt_size: 6,
            stride: 8,
            offset_range: (2, 4),
            image_size: 128,
        }
    }

    pub fn fixture_anchors() -> AnchorGridConfig {
        AnchorGridConfig {
            strides: vec![8],
            scales: vec![1.0],
            ratios: vec![1.0],
        }
    }
}

/// Square ground truths displaced diagonally from anchor-grid centers.
///
/// Objects occupy distinct cells on every third row and column of the grid
/// (starting at the second), so no two objects share a nearest anchor. Each
/// offset is `(±d, ±d)` with `d` drawn from `offset_range` and independent
/// signs.
pub fn synth_offset_scene(seed: u64, spec: &OffsetSceneSpec) -> Result<AnnotatedImage> {
    let (lo, hi) = spec.offset_range;
    if spec.stride == 0 || spec.gt_size == 0 || lo > hi {
        return Err(Error::InvalidParameters(
            "offset scene needs positive stride and size and an ordered offset range".into(),
        ));
    }
    let s = spec.stride as f64;
    let reach = hi as f64 + spec.gt_size as f64 / 2.0;
    let cells = spec.image_size.div_ceil(spec.stride);
    let fits = |k: u32| {
        let c = s / 2.0 + k as f64 * s;
        c - reach >= 0.0 && c + reach <= spec.image_size as f64
    };
    let mut slots: Vec<(u32, u32)> = (1..cells)
        .step_by(3)
        .filter(|&j| fits(j))
        .flat_map(|j| {
            (1..cells)
                .step_by(3)
                .filter(|&i| fits(i))
                .map(move |i| (i, j))
        })
        .collect();
    if slots.len() < spec.n_objects {
        return Err(Error::InvalidParameters(format!(
            "image of {} px holds only {} offset objects, {} requested",
            spec.image_size,
            slots.len(),
            spec.n_objects
        )));
    }
    let mut rng = SeededRng::new(seed);
    rng.shuffle(&mut slots);
    slots.truncate(spec.n_objects);
    slots.sort_unstable_by_key(|&(i, j)| (j, i));

    let side = spec.gt_size as f64;
    let mut gts = Vec::with_capacity(spec.n_objects);
    for (i, j) in slots {
        let d = rng.int_inclusive(lo as i64, hi as i64) as f64;
        let sx = if rng.coin() { 1.0 } else { -1.0 };
        let sy = if rng.coin() { 1.0 } else { -1.0 };
        let cx = s / 2.0 + i as f64 * s + sx * d;
        let cy = s / 2.0 + j as f64 * s + sy * d;
        gts.push(GroundTruth {
            bbox: BoundingBox::new(cx, cy, side, side)?,
            category_id: 1,
        });
    }
    Ok(AnnotatedImage {
        image_id: seed,
        width: spec.image_size,
        height: spec.image_size,
        gts,
    })
}
