//! Image ingestion, manifests, and masked-input assembly.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::imageops::FilterType;
use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::tensor::Tensor;

/// Batched RGB image data, `[batch, 3, h, w]`, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(t: Tensor) -> Result<Self> {
        let [_, c, h, w] = t.dims4()?;
        if c != 3 {
            return Err(Error::Shape(format!("image tensor needs 3 channels, got {c}")));
        }
        if h != w {
            return Err(Error::Shape(format!("image tensor must be square, got {h}x{w}")));
        }
        if let Some(v) = t.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Data(format!("image value {v} outside [0, 1]")));
        }
        Ok(Self(t))
    }

    pub fn filled(batch: usize, resolution: usize, value: f64) -> Self {
        Self(Tensor::full(&[batch, 3, resolution, resolution], value.clamp(0.0, 1.0)))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn batch(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn resolution(&self) -> usize {
        self.0.shape()[2]
    }

    pub fn item(&self, index: usize) -> Result<ImageTensor> {
        Ok(Self(self.0.batch_slice(index, 1)?))
    }

    pub fn stack(items: &[ImageTensor]) -> Result<ImageTensor> {
        let ts: Vec<Tensor> = items.iter().map(|i| i.0.clone()).collect();
        Ok(Self(Tensor::stack_batch(&ts)?))
    }

    /// Converts batch item `index` to an 8-bit image, rounding half to even.
    pub fn to_rgb8(&self, index: usize) -> Result<RgbImage> {
        let [n, _, h, w] = self.0.dims4()?;
        if index >= n {
            return Err(Error::Shape(format!("batch index {index} out of range for {n}")));
        }
        let plane = h * w;
        let base = index * 3 * plane;
        let d = self.0.data();
        Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = y as usize * w + x as usize;
            image::Rgb([0, 1, 2].map(|c| quantize(d[base + c * plane + p])))
        }))
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<ImageTensor> {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let plane = h * w;
        let mut data = vec![0.0; 3 * plane];
        for (x, y, px) in img.enumerate_pixels() {
            let p = y as usize * w + x as usize;
            for c in 0..3 {
                data[c * plane + p] = px[c] as f64 / 255.0;
            }
        }
        ImageTensor::new(Tensor::new(&[1, 3, h, w], data)?)
    }
}

/// Maps `[0, 1]` to `0..=255`, rounding half to even.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}

/// Decodes an image file, converts it to RGB, and resizes it (bilinear) to a
/// `resolution`×`resolution` tensor.
pub fn load_image(path: &Path, resolution: usize) -> Result<ImageTensor> {
    let decoded = image::open(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut rgb = decoded.to_rgb8();
    if rgb.width() as usize != resolution || rgb.height() as usize != resolution {
        rgb = image::imageops::resize(
            &rgb,
            resolution as u32,
            resolution as u32,
            FilterType::Triangle,
        );
    }
    ImageTensor::from_rgb8(&rgb)
}

pub fn save_png(img: &ImageTensor, index: usize, path: &Path) -> Result<()> {
    img.to_rgb8(index)?.save(path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            other => Err(Error::Data(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path relative to the dataset root, `/`-separated. Doubles as the image id.
    pub path: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
    pub resolution: usize,
}

/// A manifest plus the files that were found but could not be decoded.
#[derive(Debug, Clone)]
pub struct ManifestBuild {
    pub manifest: DatasetManifest,
    pub skipped: Vec<(String, String)>,
}

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

impl DatasetManifest {
    /// Assigns splits to `paths` (in the given order) with a seeded shuffle.
    /// Exactly `round(val_fraction * n)` entries land in `val`.
    pub fn split(paths: Vec<String>, val_fraction: f64, seed: u64, resolution: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must be in [0, 1), got {val_fraction}"
            )));
        }
        let n = paths.len();
        let n_val = (val_fraction * n as f64).round() as usize;
        if n_val >= n {
            return Err(Error::Data(format!(
                "val_fraction {val_fraction} leaves no training images out of {n}"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut splits = vec![Split::Train; n];
        for &i in &order[..n_val] {
            splits[i] = Split::Val;
        }
        let entries = paths
            .into_iter()
            .zip(splits)
            .map(|(path, split)| ManifestEntry { path, split })
            .collect();
        Ok(Self { entries, resolution })
    }

    pub fn ids(&self, split: Split) -> impl Iterator<Item = &str> {
        self.entries
            .iter()
            .filter(move |e| e.split == split)
            .map(|e| e.path.as_str())
    }

    pub fn count(&self, split: Split) -> usize {
        self.ids(split).count()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&e.path);
            out.push('\t');
            out.push_str(&e.split.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str, resolution: usize) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (path, split) = line.split_once('\t').ok_or_else(|| {
                Error::Data(format!("manifest line {}: expected `path<TAB>split`", lineno + 1))
            })?;
            entries.push(ManifestEntry {
                path: path.to_string(),
                split: split.trim_end().parse()?,
            });
        }
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.path.as_str()) {
                return Err(Error::Data(format!("manifest lists `{}` twice", e.path)));
            }
        }
        Ok(Self { entries, resolution })
    }

    pub fn read(path: &Path, resolution: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tsv(&text, resolution)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Scans `root` recursively for decodable images and splits them.
///
/// Files are visited in sorted path order, so the result depends only on
/// the directory contents, `val_fraction`, and `seed`.
pub fn build_manifest(root: &Path, val_fraction: f64, seed: u64, resolution: usize) -> Result<ManifestBuild> {
    let mut candidates = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Data(format!("walking {}: {e}", root.display())))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let ext = entry
            .path()
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            candidates.push(entry.into_path());
        }
    }
    candidates.sort();

    let mut paths = Vec::new();
    let mut skipped = Vec::new();
    for p in candidates {
        let rel = relative_id(root, &p);
        match image::open(&p) {
            Ok(_) => paths.push(rel),
            Err(e) => skipped.push((rel, e.to_string())),
        }
    }
    if paths.is_empty() {
        return Err(Error::NoImages(root.to_path_buf()));
    }
    let manifest = DatasetManifest::split(paths, val_fraction, seed, resolution)?;
    Ok(ManifestBuild { manifest, skipped })
}

fn relative_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Resolves a manifest id against the dataset root.
pub fn resolve_id(root: &Path, id: &str) -> PathBuf {
    id.split('/').fold(root.to_path_buf(), |acc, part| acc.join(part))
}

/// Value written into occluded pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Fill {
    #[default]
    Zeros,
    /// Per-channel RGB mean of the training data.
    DatasetMean([f64; 3]),
}

/// Masked image and the 4-channel generator input `[masked, mask]`.
#[derive(Debug, Clone)]
pub struct MaskedInput {
    pub masked: ImageTensor,
    pub generator_input: Tensor,
}

/// `masked = image ⊙ (1 − mask) + fill ⊙ mask`; the mask is appended as a
/// fourth channel of the generator input. Unmasked pixels are copied exactly.
pub fn apply_mask(image: &ImageTensor, mask: &Mask, fill: Fill) -> Result<MaskedInput> {
    let [n, c, h, w] = image.tensor().dims4()?;
    if mask.tensor().shape() != [n, 1, h, w] {
        return Err(Error::Shape(format!(
            "mask {:?} does not match image {:?}",
            mask.tensor().shape(),
            image.tensor().shape()
        )));
    }
    let fill_values = match fill {
        Fill::Zeros => [0.0; 3],
        Fill::DatasetMean(m) => m,
    };
    let plane = h * w;
    let mut masked = image.tensor().clone();
    for bi in 0..n {
        let m = &mask.tensor().data()[bi * plane..(bi + 1) * plane];
        for (ci, fv) in fill_values.iter().enumerate().take(c) {
            let off = (bi * c + ci) * plane;
            for (v, &mv) in masked.data_mut()[off..off + plane].iter_mut().zip(m) {
                if mv != 0.0 {
                    *v = *fv;
                }
            }
        }
    }
    let generator_input = Tensor::concat_channels(&[&masked, mask.tensor()])?;
    Ok(MaskedInput {
        masked: ImageTensor::new(masked)?,
        generator_input,
    })
}

/// Mean RGB over a set of images.
pub fn channel_means(images: &[ImageTensor]) -> [f64; 3] {
    let mut sums = [0.0; 3];
    let mut count = 0usize;
    for img in images {
        let [n, _, h, w] = img.tensor().dims4().expect("image tensors are rank 4");
        let plane = h * w;
        for bi in 0..n {
            for (c, s) in sums.iter_mut().enumerate() {
                let off = (bi * 3 + c) * plane;
                *s += img.tensor().data()[off..off + plane].iter().sum::<f64>();
            }
        }
        count += n * plane;
    }
    sums.map(|s| if count == 0 { 0.0 } else { s / count as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::center_mask;
    use proptest::prelude::*;

    #[test]
    fn large_split_has_exact_val_count() {
        let paths: Vec<String> = (0..30_000).map(|i| format!("img_{i:05}.png")).collect();
        let m = DatasetManifest::split(paths, 0.1, 3, 128).unwrap();
        assert_eq!(m.count(Split::Train), 27_000);
        assert_eq!(m.count(Split::Val), 3_000);
    }

    #[test]
    fn zero_val_fraction_keeps_everything_in_train() {
        let paths: Vec<String> = (0..10).map(|i| format!("{i}.png")).collect();
        let m = DatasetManifest::split(paths, 0.0, 0, 128).unwrap();
        assert_eq!(m.count(Split::Train), 10);
        assert_eq!(m.count(Split::Val), 0);
    }

    #[test]
    fn split_is_seed_deterministic() {
        let paths: Vec<String> = (0..50).map(|i| format!("{i}.png")).collect();
        let a = DatasetManifest::split(paths.clone(), 0.3, 9, 64).unwrap();
        let b = DatasetManifest::split(paths.clone(), 0.3, 9, 64).unwrap();
        let c = DatasetManifest::split(paths, 0.3, 10, 64).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn tsv_round_trip() {
        let paths: Vec<String> = (0..6).map(|i| format!("sub/{i}.png")).collect();
        let m = DatasetManifest::split(paths, 0.5, 1, 32).unwrap();
        let text = m.to_tsv();
        assert!(text.lines().all(|l| l.split('\t').count() == 2));
        assert_eq!(DatasetManifest::from_tsv(&text, 32).unwrap(), m);
        assert!(DatasetManifest::from_tsv("a.png\tholdout\n", 32).is_err());
        assert!(DatasetManifest::from_tsv("a.png\ttrain\na.png\tval\n", 32).is_err());
    }

    #[test]
    fn quantize_rounds_half_to_even() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128); // 127.5 -> 128
        assert_eq!(quantize(1.5 / 255.0), 2);
        assert_eq!(quantize(2.5 / 255.0), 2);
        assert_eq!(quantize(-3.0), 0);
    }

    #[test]
    fn apply_mask_examples() {
        let img = ImageTensor::filled(1, 128, 0.8);
        let none = Mask::new(Tensor::zeros(&[1, 1, 128, 128])).unwrap();
        assert_eq!(apply_mask(&img, &none, Fill::Zeros).unwrap().masked, img);

        let all = Mask::new(Tensor::full(&[1, 1, 128, 128], 1.0)).unwrap();
        let out = apply_mask(&img, &all, Fill::Zeros).unwrap();
        assert!(out.masked.tensor().data().iter().all(|&v| v == 0.0));

        let center = center_mask(128, 64).unwrap();
        let out = apply_mask(&img, &center, Fill::Zeros).unwrap();
        assert!((out.masked.tensor().mean() - 0.6).abs() < 1e-12);
        assert_eq!(out.generator_input.shape(), &[1, 4, 128, 128]);

        let out = apply_mask(&img, &center, Fill::DatasetMean([0.1, 0.2, 0.3])).unwrap();
        let t = out.masked.tensor();
        assert_eq!(t.data()[64 * 128 + 64], 0.1);
        assert_eq!(t.data()[2 * 128 * 128 + 64 * 128 + 64], 0.3);
    }

    #[test]
    fn apply_mask_rejects_shape_mismatch() {
        let img = ImageTensor::filled(1, 32, 0.5);
        let m = center_mask(16, 8).unwrap();
        assert!(matches!(apply_mask(&img, &m, Fill::Zeros), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn unmasked_pixels_survive_bit_exactly(
            seed in any::<u64>(),
            pixels in prop::collection::vec(0.0f64..=1.0, 3 * 8 * 8),
        ) {
            let img = ImageTensor::new(Tensor::new(&[1, 3, 8, 8], pixels).unwrap()).unwrap();
            let mut state = seed;
            let m = Tensor::from_fn(&[1, 1, 8, 8], |_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (state >> 63) as f64
            });
            let mask = Mask::new(m).unwrap();
            let out = apply_mask(&img, &mask, Fill::DatasetMean([0.3, 0.3, 0.3])).unwrap();
            for c in 0..3 {
                for p in 0..64 {
                    if mask.tensor().data()[p] == 0.0 {
                        let i = c * 64 + p;
                        prop_assert_eq!(
                            out.masked.tensor().data()[i].to_bits(),
                            img.tensor().data()[i].to_bits()
                        );
                    }
                }
            }
        }
    }
}
