//! Real-image ingestion, two-view augmentation and a synthetic labeled
//! shapes dataset.
//!
//! A split lives in `<root>/<split>/` next to a `manifest.tsv` of
//! `relative_path<TAB>class_id` lines; class id `-1` marks an unlabeled
//! image. Labels are carried alongside images but training code only ever
//! sees [`RealBatch::images`].

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use c3gan_tensor::{par, Array};
use image::imageops::FilterType;
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::perturb::{AffineParams, Fill, PerturbPolicy, WarpPlan};
use crate::rng::Rng;

pub const MANIFEST_FILE: &str = "manifest.tsv";
/// Largest tolerated fraction of undecodable files.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" => Ok(Split::Eval),
            other => Err(invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// One manifest line.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: Option<usize>,
}

/// Image list of one split.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    /// Directory holding the split's images and manifest.
    pub root: PathBuf,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
    pub image_size: usize,
}

impl DatasetManifest {
    /// Reads `<data_dir>/<split>/manifest.tsv`.
    pub fn read(data_dir: &Path, split: Split, image_size: usize) -> Result<Self> {
        let root = data_dir.join(split.dir_name());
        let file = root.join(MANIFEST_FILE);
        if !data_dir.is_dir() || !file.is_file() {
            return Err(Error::DatasetNotFound(data_dir.to_path_buf()));
        }
        let entries = parse_manifest(&fs::read_to_string(&file)?)?;
        let manifest = Self { root, split, entries, image_size };
        manifest.check_labels()?;
        Ok(manifest)
    }

    /// Writes the manifest file (images are written separately).
    pub fn write(&self) -> Result<()> {
        fs::create_dir_all(&self.root)?;
        let mut text = String::new();
        for e in &self.entries {
            let label = e.label.map_or(-1, |l| l as i64);
            text.push_str(&format!("{}\t{label}\n", e.path.display()));
        }
        fs::write(self.root.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    /// True when every entry carries a class id.
    pub fn is_labeled(&self) -> bool {
        !self.entries.is_empty() && self.entries.iter().all(|e| e.label.is_some())
    }

    /// Number of distinct classes among labeled entries.
    pub fn num_classes(&self) -> usize {
        self.entries.iter().filter_map(|e| e.label).max().map_or(0, |m| m + 1)
    }

    fn check_labels(&self) -> Result<()> {
        let y = self.num_classes();
        let mut seen = vec![false; y];
        for l in self.entries.iter().filter_map(|e| e.label) {
            seen[l] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Dataset(format!("class ids must be contiguous from 0; id {missing} is unused")));
        }
        Ok(())
    }
}

fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Dataset(format!("manifest line {}: expected path<TAB>class_id, got {line:?}", n + 1));
        let (path, id) = line.split_once('\t').ok_or_else(bad)?;
        let id: i64 = id.trim().parse().map_err(|_| bad())?;
        let label = match id {
            -1 => None,
            id if id >= 0 => Some(id as usize),
            _ => return Err(bad()),
        };
        entries.push(ManifestEntry { path: PathBuf::from(path), label });
    }
    Ok(entries)
}

/// Decoded images of a split, stored as planar `u8` RGB.
#[derive(Clone, Debug)]
pub struct Dataset {
    image_size: usize,
    pixels: Vec<u8>,
    labels: Vec<Option<usize>>,
    paths: Vec<PathBuf>,
}

/// Center-crops to a square and resizes to `size × size`.
pub fn square_resize(img: &RgbImage, size: usize) -> RgbImage {
    let (w, h) = img.dimensions();
    let side = w.min(h);
    let cropped = image::imageops::crop_imm(img, (w - side) / 2, (h - side) / 2, side, side).to_image();
    if side as usize == size {
        cropped
    } else {
        image::imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle)
    }
}

/// Decodes every manifest entry in parallel. Undecodable files are
/// skipped with a warning unless they exceed [`MAX_FAILURE_RATE`].
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    let size = manifest.image_size;
    let decoded = par::map_indexed(manifest.entries.len(), |i| {
        let path = manifest.root.join(&manifest.entries[i].path);
        image::open(&path).map(|img| square_resize(&img.to_rgb8(), size)).map_err(|e| (path, e))
    });
    let mut images = Vec::with_capacity(decoded.len());
    let mut labels = Vec::with_capacity(decoded.len());
    let mut paths = Vec::with_capacity(decoded.len());
    let mut failures = Vec::new();
    for (entry, result) in manifest.entries.iter().zip(decoded) {
        match result {
            Ok(img) => {
                images.push(img);
                labels.push(entry.label);
                paths.push(entry.path.clone());
            }
            Err((path, e)) => {
                log::warn!("skipping {}: {e}", path.display());
                failures.push(Error::Image { path, source: e });
            }
        }
    }
    let total = manifest.entries.len().max(1) as f64;
    if failures.len() as f64 / total > MAX_FAILURE_RATE {
        let first = failures.swap_remove(0);
        return Err(Error::Dataset(format!("{} of {} images failed to load (first: {first})", failures.len() + 1, manifest.entries.len())));
    }
    let mut ds = Dataset::from_images(&images, labels, size)?;
    ds.paths = paths;
    Ok(ds)
}

impl Dataset {
    /// Builds a dataset from in-memory images already at `image_size`.
    pub fn from_images(images: &[RgbImage], labels: Vec<Option<usize>>, image_size: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(invalid(format!("{} images but {} labels", images.len(), labels.len())));
        }
        let hw = image_size * image_size;
        let mut pixels = vec![0u8; images.len() * 3 * hw];
        for (img, out) in images.iter().zip(pixels.chunks_mut(3 * hw)) {
            if img.dimensions() != (image_size as u32, image_size as u32) {
                return Err(invalid(format!("image is {:?}, expected {image_size}²", img.dimensions())));
            }
            for (k, p) in img.pixels().enumerate() {
                for c in 0..3 {
                    out[c * hw + k] = p[c];
                }
            }
        }
        let paths = (0..images.len()).map(|i| PathBuf::from(format!("#{i}"))).collect();
        Ok(Self { image_size, pixels, labels, paths })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    /// Manifest-relative paths in dataset order.
    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    /// Ground-truth labels if every image has one.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.labels.iter().copied().collect()
    }

    /// Images `indices` as `[B, 3, H, W]` in `[-1, 1]`.
    pub fn batch(&self, indices: &[usize]) -> RealBatch {
        let len = 3 * self.image_size * self.image_size;
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend(self.pixels[i * len..(i + 1) * len].iter().map(|&v| v as f32 / 127.5 - 1.0));
        }
        RealBatch {
            images: Array::new(&[indices.len(), 3, self.image_size, self.image_size], data),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            indices: indices.to_vec(),
        }
    }

    /// Permutation of the dataset for `epoch`, a pure function of `(seed, epoch)`.
    pub fn epoch_order(&self, seed: u64, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(&mut Rng::seed_from(seed).fork(epoch));
        order
    }

    /// Full batches per epoch; the remainder is dropped.
    pub fn batches_per_epoch(&self, batch_size: usize) -> usize {
        self.len().checked_div(batch_size).unwrap_or(0)
    }

    /// Batch consumed at global iteration `step`.
    pub fn batch_at(&self, seed: u64, step: u64, batch_size: usize) -> Result<(u64, RealBatch)> {
        let per_epoch = self.batches_per_epoch(batch_size) as u64;
        if per_epoch == 0 {
            return Err(invalid(format!("dataset of {} images cannot fill a batch of {batch_size}", self.len())));
        }
        let epoch = step / per_epoch;
        let k = (step % per_epoch) as usize;
        let order = self.epoch_order(seed, epoch);
        Ok((epoch, self.batch(&order[k * batch_size..(k + 1) * batch_size])))
    }

    /// Batches of one epoch in shuffled order.
    pub fn epoch(&self, seed: u64, epoch: u64, batch_size: usize) -> impl Iterator<Item = RealBatch> + '_ {
        let order = self.epoch_order(seed, epoch);
        let n = self.batches_per_epoch(batch_size);
        (0..n).map(move |k| self.batch(&order[k * batch_size..(k + 1) * batch_size]))
    }

    /// Consecutive batches in dataset order, the last one possibly short.
    pub fn sequential(&self, batch_size: usize) -> impl Iterator<Item = RealBatch> + '_ {
        let idx: Vec<usize> = (0..self.len()).collect();
        let chunks: Vec<Vec<usize>> = idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
        chunks.into_iter().map(move |c| self.batch(&c))
    }
}

/// A batch of real images with their (hidden) labels.
#[derive(Clone, Debug)]
pub struct RealBatch {
    images: Array<f32>,
    labels: Vec<Option<usize>>,
    indices: Vec<usize>,
}

impl RealBatch {
    /// Images-only view handed to training.
    pub fn images(&self) -> &Array<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    /// Dataset indices of the batch rows.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Geometric augmentation for the two-view contrastive loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentPolicy {
    /// Smallest crop area as a fraction of the image.
    pub min_area: f64,
    pub flip_prob: f64,
    pub jitter: PerturbPolicy,
}

impl AugmentPolicy {
    pub fn new(jitter: PerturbPolicy) -> Self {
        Self { min_area: 0.6, flip_prob: 0.5, jitter }
    }

    /// Always returns the input unchanged.
    pub fn identity() -> Self {
        Self { min_area: 1.0, flip_prob: 0.0, jitter: PerturbPolicy::identity() }
    }
}

/// Two independently augmented, index-aligned views.
#[derive(Clone, Debug)]
pub struct AugmentedPair {
    pub view_a: Array<f32>,
    pub view_b: Array<f32>,
}

#[derive(Clone, Copy, Debug)]
struct ViewTransform {
    /// Half-extent of the square crop in normalized coordinates.
    side: f64,
    center: (f64, f64),
    flip: bool,
    jitter: AffineParams,
}

impl ViewTransform {
    fn sample(policy: &AugmentPolicy, rng: &mut Rng) -> Self {
        let area = if policy.min_area >= 1.0 { 1.0 } else { rng.random_range(policy.min_area..=1.0) };
        let side = area.sqrt();
        let slack = 1.0 - side;
        let mut offset = || if slack > 0.0 { rng.random_range(-slack..=slack) } else { 0.0 };
        let center = (offset(), offset());
        let flip = policy.flip_prob > 0.0 && rng.random_bool(policy.flip_prob.min(1.0));
        let jitter = crate::perturb::sample_affine(&policy.jitter, 1, rng)[0];
        Self { side, center, flip, jitter }
    }

    /// Crop, then flip, then jitter; this maps output to source.
    fn inverse_map(&self, x: f64, y: f64) -> (f64, f64) {
        let (mut qx, qy) = self.jitter.inverse_map(x, y);
        if self.flip {
            qx = -qx;
        }
        (self.center.0 + self.side * qx, self.center.1 + self.side * qy)
    }
}

fn augment_view(images: &Array<f32>, policy: &AugmentPolicy, rng: &mut Rng) -> Array<f32> {
    let &[b, _, h, w] = images.shape() else { unreachable!() };
    let transforms: Vec<ViewTransform> = (0..b).map(|_| ViewTransform::sample(policy, rng)).collect();
    WarpPlan::from_inverse_map(b, h, w, Fill::Clamp, |i, x, y| transforms[i].inverse_map(x, y)).warp_array(images)
}

/// Two stochastic geometric views of each image: random square crop
/// resized back, horizontal flip and a small affine jitter. Colors are
/// never altered.
pub fn augment_pair(images: &Array<f32>, policy: &AugmentPolicy, rng: &mut Rng) -> Result<AugmentedPair> {
    let s = images.shape();
    if s.len() != 4 || s[0] == 0 || s[1] != 3 {
        return Err(invalid(format!("augment_pair expects a nonempty [B,3,H,W] batch, got {s:?}")));
    }
    let view_a = augment_view(images, policy, rng);
    let view_b = augment_view(images, policy, rng);
    Ok(AugmentedPair { view_a, view_b })
}

/// Shape of a synthetic class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Triangle,
    Square,
    Cross,
}

impl Shape {
    /// Membership test in local coordinates scaled to the unit circle.
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Circle => u * u + v * v <= 1.0,
            Shape::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            Shape::Triangle => [270f64, 30.0, 150.0].iter().all(|a| {
                let (s, c) = a.to_radians().sin_cos();
                u * c + v * s <= 0.5
            }),
            Shape::Cross => (u.abs() <= 0.3 && v.abs() <= 0.9) || (v.abs() <= 0.3 && u.abs() <= 0.9),
        }
    }
}

/// `(shape, hue in degrees)` of each synthetic class.
pub const SYNTH_CLASSES: [(Shape, f64); 8] = [
    (Shape::Circle, 0.0),
    (Shape::Triangle, 135.0),
    (Shape::Square, 225.0),
    (Shape::Cross, 45.0),
    (Shape::Circle, 180.0),
    (Shape::Triangle, 270.0),
    (Shape::Square, 90.0),
    (Shape::Cross, 315.0),
];

/// Generated shapes dataset with per-image foreground coverage.
#[derive(Clone, Debug)]
pub struct SynthData {
    pub image_size: usize,
    pub images: Vec<RgbImage>,
    pub labels: Vec<usize>,
    /// Foreground coverage in `[0, 1]` per pixel, row-major.
    pub masks: Vec<Vec<f32>>,
}

impl SynthData {
    pub fn dataset(&self) -> Result<Dataset> {
        Dataset::from_images(&self.images, self.labels.iter().map(|&l| Some(l)).collect(), self.image_size)
    }

    /// Writes `img_NNNNN.png` files and the manifest under `<data_dir>/<split>/`.
    pub fn write(&self, data_dir: &Path, split: Split) -> Result<DatasetManifest> {
        let root = data_dir.join(split.dir_name());
        fs::create_dir_all(&root)?;
        let entries: Vec<ManifestEntry> = self
            .labels
            .iter()
            .enumerate()
            .map(|(i, &l)| ManifestEntry { path: PathBuf::from(format!("img_{i:05}.png")), label: Some(l) })
            .collect();
        let results = par::map_indexed(entries.len(), |i| {
            let path = root.join(&entries[i].path);
            self.images[i].save(&path).map_err(|source| Error::Image { path, source })
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
        let manifest = DatasetManifest { root, split, entries, image_size: self.image_size };
        manifest.write()?;
        Ok(manifest)
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Subsamples per pixel side used for anti-aliasing.
const SUPERSAMPLE: usize = 3;

fn render(class: usize, size: usize, rng: &mut Rng) -> (RgbImage, Vec<f32>) {
    let (shape, hue) = SYNTH_CLASSES[class];
    let sz = size as f64;

    // Desaturated background: a gray level, a faint tint and a sinusoidal texture.
    let bg_base = hsv(rng.random_range(0.0..360.0), rng.random_range(0.0..0.15), rng.random_range(0.25..0.75));
    let freq = rng.random_range(2.0..6.0) * std::f64::consts::TAU / sz;
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (fa_s, fa_c) = angle.sin_cos();
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = rng.random_range(0.03..0.12);

    let fg = hsv(hue + rng.random_range(-8.0..8.0), rng.random_range(0.75..1.0), rng.random_range(0.7..1.0));
    let radius = rng.random_range(0.22..0.35) * sz;
    let cx = rng.random_range(radius..sz - radius);
    let cy = rng.random_range(radius..sz - radius);
    let (rot_s, rot_c) = rng.random_range(0.0..std::f64::consts::TAU).sin_cos();

    let mut img = RgbImage::new(size as u32, size as u32);
    let mut mask = vec![0f32; size * size];
    for py in 0..size {
        for px in 0..size {
            let mut inside = 0usize;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - cx;
                    let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - cy;
                    let (u, v) = ((rot_c * x + rot_s * y) / radius, (-rot_s * x + rot_c * y) / radius);
                    inside += shape.contains(u, v) as usize;
                }
            }
            let alpha = inside as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let wave = amp * ((px as f64 * fa_c + py as f64 * fa_s) * freq + phase).sin();
            let noise = rng.random_range(-0.03..0.03);
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let v = (1.0 - alpha) * (bg_base[c] + wave) + alpha * fg[c] + noise;
                rgb[c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            img.put_pixel(px as u32, py as u32, Rgb(rgb));
            mask[py * size + px] = alpha as f32;
        }
    }
    (img, mask)
}

/// `n_per_class` images of each of the first `num_classes` synthetic
/// classes, interleaved by class. Image `i` depends only on `(rng, i)`.
pub fn synth_shapes(num_classes: usize, n_per_class: usize, image_size: usize, rng: &Rng) -> Result<SynthData> {
    if !(2..=SYNTH_CLASSES.len()).contains(&num_classes) {
        return Err(invalid(format!("synthetic class count must be in [2, 8], got {num_classes}")));
    }
    if image_size != 32 && image_size != 64 {
        return Err(invalid(format!("synthetic image size must be 32 or 64, got {image_size}")));
    }
    let n = num_classes * n_per_class;
    let rendered = par::map_indexed(n, |i| render(i % num_classes, image_size, &mut rng.fork(i as u64)));
    let labels = (0..n).map(|i| i % num_classes).collect();
    let (images, masks) = rendered.into_iter().unzip();
    Ok(SynthData { image_size, images, labels, masks })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_parsing() {
        let e = parse_manifest("a.png\t0\nb/c.jpg\t-1\n\n").unwrap();
        assert_eq!(e[0], ManifestEntry { path: "a.png".into(), label: Some(0) });
        assert_eq!(e[1].label, None);
        assert!(parse_manifest("a.png 0\n").is_err());
        assert!(parse_manifest("a.png\t-2\n").is_err());
    }

    #[test]
    fn synth_rejects_out_of_range() {
        let rng = Rng::seed_from(0);
        assert!(synth_shapes(1, 2, 32, &rng).is_err());
        assert!(synth_shapes(9, 2, 32, &rng).is_err());
        assert!(synth_shapes(4, 2, 48, &rng).is_err());
    }

    #[test]
    fn shapes_have_distinct_areas() {
        let area = |s: Shape| {
            let n = 400;
            let mut k = 0;
            for i in 0..n {
                for j in 0..n {
                    let (u, v) = (2.0 * i as f64 / n as f64 - 1.0, 2.0 * j as f64 / n as f64 - 1.0);
                    k += s.contains(u, v) as usize;
                }
            }
            k as f64 * 4.0 / (n * n) as f64
        };
        let a: Vec<f64> = [Shape::Circle, Shape::Triangle, Shape::Square, Shape::Cross].into_iter().map(area).collect();
        assert!((a[0] - std::f64::consts::PI).abs() < 0.02);
        assert!((a[1] - 3.0 * 3f64.sqrt() / 4.0).abs() < 0.02);
        assert!((a[2] - 2.56).abs() < 0.02);
    }

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv(120.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hsv(240.0, 1.0, 1.0), [0.0, 0.0, 1.0]);
        assert_eq!(hsv(77.0, 0.0, 0.5), [0.5, 0.5, 0.5]);
    }
}
