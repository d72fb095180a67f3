//! Dataset scanning, HR/LR pairing and the in-memory pair store used by
//! the trainer.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use super::bicubic::degrade;
use super::image_io::{is_image_path, read_rgb8, write_rgb8, Rgb8};
use crate::error::{io_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bumped whenever the degradation kernel changes, so stale cached LR
/// files are never reused.
pub const KERNEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    /// HR directories, scanned and concatenated in order.
    pub hr_dirs: Vec<PathBuf>,
    /// Optional LR directory matched by filename stem; LR is generated by
    /// bicubic degradation when absent.
    pub lr_dir: Option<PathBuf>,
    pub scale: usize,
    /// Patch side; an HR size unless `patch_is_lr` is set.
    pub patch: usize,
    pub patch_is_lr: bool,
    pub augment: bool,
    /// Keep generated LR images in `<hr_dir>_LRx<scale>`.
    pub cache_lr: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            hr_dirs: Vec::new(),
            lr_dir: None,
            scale: 4,
            patch: 192,
            patch_is_lr: false,
            augment: true,
            cache_lr: false,
        }
    }
}

impl DatasetSpec {
    pub fn patch_hr(&self) -> usize {
        if self.patch_is_lr {
            self.patch * self.scale
        } else {
            self.patch
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::Config("data.scale must be at least 1".into()));
        }
        if self.hr_dirs.is_empty() {
            return Err(Error::Config("data.hr_dir is not set".into()));
        }
        let p = self.patch_hr();
        if p == 0 || !p.is_multiple_of(self.scale) {
            return Err(Error::Config(format!("HR patch {p} is not a positive multiple of scale {}", self.scale)));
        }
        Ok(())
    }
}

/// One dataset item before decoding.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageEntry {
    pub stem: String,
    pub hr_path: PathBuf,
    /// `None` means the LR image is generated on load.
    pub lr_path: Option<PathBuf>,
}

#[derive(Clone, Debug, Default)]
pub struct ScanReport {
    pub entries: Vec<ImageEntry>,
    pub warnings: Vec<String>,
}

fn list_images(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("directory not found: {}", dir.display())));
    }
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = e.map_err(io_err(dir))?.path();
        if path.is_file() && is_image_path(&path) {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            out.insert(stem, path);
        }
    }
    Ok(out)
}

/// Lists the dataset in lexicographic stem order per HR directory. Stems
/// present on only one side of an HR/LR pairing are reported as warnings
/// and left out.
pub fn scan_dataset(spec: &DatasetSpec) -> Result<ScanReport> {
    spec.validate()?;
    let mut hr = Vec::new();
    for dir in &spec.hr_dirs {
        hr.extend(list_images(dir)?);
    }
    let mut report = ScanReport::default();
    match &spec.lr_dir {
        None => {
            report.entries = hr.into_iter().map(|(stem, hr_path)| ImageEntry { stem, hr_path, lr_path: None }).collect();
        }
        Some(lr_dir) => {
            let mut lr = list_images(lr_dir)?;
            for (stem, hr_path) in hr {
                match lr.remove(&stem) {
                    Some(lr_path) => report.entries.push(ImageEntry { stem, hr_path, lr_path: Some(lr_path) }),
                    None => report.warnings.push(format!("{stem}: HR image {} has no LR match", hr_path.display())),
                }
            }
            for (stem, lr_path) in lr {
                report.warnings.push(format!("{stem}: LR image {} has no HR match", lr_path.display()));
            }
        }
    }
    if report.entries.is_empty() {
        let dirs: Vec<String> = spec.hr_dirs.iter().map(|d| d.display().to_string()).collect();
        return Err(Error::Dataset(format!("no usable images in {}", dirs.join(", "))));
    }
    Ok(report)
}

/// Decoded HR/LR pair in 8-bit form. `hr` dimensions are exact multiples of
/// `scale` and `lr` is exactly `hr / scale`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairRgb8 {
    pub hr: Rgb8,
    pub lr: Rgb8,
    pub scale: usize,
}

/// Decoded pair as `(1, 3, h, w)` tensors in `[0,1]`.
#[derive(Clone, Debug)]
pub struct ImagePair<T> {
    pub hr: Tensor<T>,
    pub lr: Tensor<T>,
    pub source_path: PathBuf,
    pub scale: usize,
}

impl PairRgb8 {
    /// Crops `hr` down to a multiple of `scale` and degrades it.
    pub fn from_hr(hr: Rgb8, scale: usize) -> Result<Self> {
        let hr = crop_to_multiple(&hr, scale)?;
        let lr = Rgb8::from_tensor(&degrade(&hr.to_tensor::<f64>(), scale)?)?;
        Ok(PairRgb8 { hr, lr, scale })
    }

    pub fn to_pair<T: Scalar>(&self, source_path: PathBuf) -> ImagePair<T> {
        ImagePair { hr: self.hr.to_tensor(), lr: self.lr.to_tensor(), source_path, scale: self.scale }
    }
}

/// Crops to the largest top-left window whose sides are multiples of `scale`.
pub fn crop_to_multiple(img: &Rgb8, scale: usize) -> Result<Rgb8> {
    let (h, w) = (img.height / scale * scale, img.width / scale * scale);
    if h == 0 || w == 0 {
        return Err(Error::Dataset(format!("{}x{} image is smaller than scale {scale}", img.height, img.width)));
    }
    Ok(if (h, w) == (img.height, img.width) { img.clone() } else { img.crop(0, 0, h, w) })
}

pub fn lr_cache_path(hr_path: &Path, stem: &str, scale: usize) -> PathBuf {
    let dir = hr_path.parent().unwrap_or(Path::new("."));
    let name = dir.file_name().and_then(|s| s.to_str()).unwrap_or("hr");
    dir.with_file_name(format!("{name}_LRx{scale}")).join(format!("{stem}.k{KERNEL_VERSION}.png"))
}

fn dataset_err(path: &Path, detail: impl std::fmt::Display) -> Error {
    Error::Dataset(format!("{}: {detail}", path.display()))
}

pub fn load_pair_rgb8(entry: &ImageEntry, spec: &DatasetSpec) -> Result<PairRgb8> {
    let s = spec.scale;
    let hr = crop_to_multiple(&read_rgb8(&entry.hr_path)?, s)?;
    let (lh, lw) = (hr.height / s, hr.width / s);
    let lr = match &entry.lr_path {
        Some(p) => {
            let lr = read_rgb8(p)?;
            if lr.height < lh || lr.width < lw {
                return Err(dataset_err(p, format!("LR is {}x{} but HR needs at least {lh}x{lw}", lr.height, lr.width)));
            }
            if (lr.height, lr.width) == (lh, lw) {
                lr
            } else {
                lr.crop(0, 0, lh, lw)
            }
        }
        None if spec.cache_lr => {
            let cached = lr_cache_path(&entry.hr_path, &entry.stem, s);
            match read_rgb8(&cached) {
                Ok(lr) if (lr.height, lr.width) == (lh, lw) => lr,
                _ => {
                    let lr = PairRgb8::from_hr(hr.clone(), s)?.lr;
                    if let Some(dir) = cached.parent() {
                        fs::create_dir_all(dir).map_err(io_err(dir))?;
                    }
                    write_rgb8(&cached, &lr)?;
                    lr
                }
            }
        }
        None => return PairRgb8::from_hr(hr, s),
    };
    Ok(PairRgb8 { hr, lr, scale: s })
}

pub fn load_pair<T: Scalar>(entry: &ImageEntry, spec: &DatasetSpec) -> Result<ImagePair<T>> {
    Ok(load_pair_rgb8(entry, spec)?.to_pair(entry.hr_path.clone()))
}

/// Training pairs, decoded lazily and kept in memory up to a byte budget.
/// Items past the budget are decoded again on every access, which keeps
/// results identical regardless of the budget.
pub struct PairStore {
    spec: DatasetSpec,
    entries: Vec<Option<ImageEntry>>,
    loaded: Vec<Option<Rc<PairRgb8>>>,
    budget: usize,
    used: usize,
}

impl PairStore {
    pub fn from_entries(spec: DatasetSpec, entries: Vec<ImageEntry>, budget_bytes: usize) -> Self {
        let n = entries.len();
        PairStore { spec, entries: entries.into_iter().map(Some).collect(), loaded: vec![None; n], budget: budget_bytes, used: 0 }
    }

    pub fn from_pairs(pairs: Vec<PairRgb8>) -> Self {
        let scale = pairs.first().map_or(1, |p| p.scale);
        let used = pairs.iter().map(|p| p.hr.data.len() + p.lr.data.len()).sum();
        PairStore {
            spec: DatasetSpec { scale, ..DatasetSpec::default() },
            entries: vec![None; pairs.len()],
            loaded: pairs.into_iter().map(|p| Some(Rc::new(p))).collect(),
            budget: used,
            used,
        }
    }

    pub fn len(&self) -> usize {
        self.loaded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.loaded.is_empty()
    }

    pub fn scale(&self) -> usize {
        self.spec.scale
    }

    pub fn get(&mut self, i: usize) -> Result<Rc<PairRgb8>> {
        if let Some(p) = &self.loaded[i] {
            return Ok(p.clone());
        }
        let entry = self.entries[i].as_ref().ok_or_else(|| Error::Dataset(format!("item {i} has no source")))?;
        let pair = Rc::new(load_pair_rgb8(entry, &self.spec)?);
        let bytes = pair.hr.data.len() + pair.lr.data.len();
        if self.used + bytes <= self.budget {
            self.used += bytes;
            self.loaded[i] = Some(pair.clone());
        }
        Ok(pair)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_floors_to_multiple() {
        let img = Rgb8 { height: 7, width: 10, data: vec![0; 7 * 10 * 3] };
        let c = crop_to_multiple(&img, 4).unwrap();
        assert_eq!((c.height, c.width), (4, 8));
        assert!(crop_to_multiple(&Rgb8 { height: 3, width: 9, data: vec![0; 81] }, 4).is_err());
    }

    #[test]
    fn cache_path_is_sibling() {
        let p = lr_cache_path(Path::new("/d/train_HR/0001.png"), "0001", 4);
        assert_eq!(p, Path::new("/d/train_HR_LRx4/0001.k1.png"));
    }

    #[test]
    fn patch_reading() {
        let s = DatasetSpec { patch: 48, patch_is_lr: true, hr_dirs: vec!["x".into()], ..Default::default() };
        assert_eq!(s.patch_hr(), 192);
        assert!(DatasetSpec { patch: 50, hr_dirs: vec!["x".into()], ..Default::default() }.validate().is_err());
    }
}
