//! Fundus datasets: on-disk layouts, patch augmentation and a synthetic
//! vessel generator.

mod augment;
mod synth;

pub use augment::{make_patches, replay_image, replay_mask, AugmentSpec, PatchRecord, PatchSet};
pub use synth::{synth_fundus, two_domain_synth, DomainStyle, SynthSpec, VesselParams};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{Image, SegMask};

/// Image count of one DRIVE split and of the labelled STARE set.
pub const DRIVE_SPLIT_SIZE: usize = 20;
pub const STARE_SIZE: usize = 20;

const IMAGE_EXTENSIONS: &[&str] = &["png", "tif", "tiff", "ppm", "pgm", "gif", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    #[default]
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `images/NN_{training,test}.tif`, `1st_manual/NN_manual1.gif`, `mask/NN_{split}_mask.gif`.
    Drive,
    /// Flat directory of `imNNNN.ppm` with `imNNNN.ah.ppm` (or `.vk.ppm`) labels.
    Stare,
    /// `images/`, optional `labels/` and `masks/`, matched by file stem.
    Generic,
}

#[derive(Debug, Clone)]
pub struct FundusDataset {
    pub name: String,
    /// One identifier per image, used for file names on export.
    pub ids: Vec<String>,
    pub images: Vec<Image>,
    pub labels: Option<Vec<SegMask>>,
    pub fov_masks: Option<Vec<SegMask>>,
    pub split: Split,
}

impl FundusDataset {
    pub fn new(
        name: impl Into<String>,
        ids: Vec<String>,
        images: Vec<Image>,
        labels: Option<Vec<SegMask>>,
        fov_masks: Option<Vec<SegMask>>,
        split: Split,
    ) -> Result<Self> {
        let ds = Self { name: name.into(), ids, images, labels, fov_masks, split };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ids.len() != self.images.len() {
            return Err(Error::DimMismatch(format!(
                "{}: {} ids for {} images",
                self.name,
                self.ids.len(),
                self.images.len()
            )));
        }
        for (what, masks) in [("label", &self.labels), ("fov mask", &self.fov_masks)] {
            let Some(masks) = masks else { continue };
            if masks.len() != self.images.len() {
                return Err(Error::DimMismatch(format!(
                    "{}: {} {what}s for {} images",
                    self.name,
                    masks.len(),
                    self.images.len()
                )));
            }
            for ((id, im), m) in self.ids.iter().zip(&self.images).zip(masks) {
                if (im.height(), im.width()) != m.dims() {
                    return Err(Error::DimMismatch(format!(
                        "{}: image {id} is {}x{} but its {what} is {}x{}",
                        self.name,
                        im.height(),
                        im.width(),
                        m.height(),
                        m.width()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn labels(&self) -> Result<&[SegMask]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Config(format!("dataset {} has no labels", self.name)))
    }

    /// Writes the generic layout under `root`.
    pub fn export_generic(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        fs::create_dir_all(root.join("images"))?;
        for (id, im) in self.ids.iter().zip(&self.images) {
            im.save(root.join("images").join(format!("{id}.png")))?;
        }
        for (dir, masks) in [("labels", &self.labels), ("masks", &self.fov_masks)] {
            let Some(masks) = masks else { continue };
            fs::create_dir_all(root.join(dir))?;
            for (id, m) in self.ids.iter().zip(masks) {
                m.save(root.join(dir).join(format!("{id}.png")))?;
            }
        }
        Ok(())
    }
}

fn dataset_err(root: &Path, message: impl Into<String>) -> Error {
    Error::Dataset { root: root.to_path_buf(), message: message.into() }
}

fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| dataset_err(dir, format!("cannot read directory: {e}")))? {
        let path = entry?.path();
        if path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn require_dir(root: &Path, sub: &str) -> Result<PathBuf> {
    let d = root.join(sub);
    if !d.is_dir() {
        return Err(dataset_err(root, format!("expected subdirectory {sub}/")));
    }
    Ok(d)
}

fn missing_error(root: &Path, what: &str, missing: &[(String, PathBuf)]) -> Error {
    let list: Vec<String> = missing
        .iter()
        .map(|(id, p)| format!("{id} (expected {})", p.display()))
        .collect();
    dataset_err(root, format!("{} image(s) without {what}: {}", missing.len(), list.join(", ")))
}

fn check_count(root: &Path, found: usize, expected: usize, what: &str) -> Result<()> {
    if found != expected {
        return Err(dataset_err(root, format!("expected {expected} {what}, found {found}")));
    }
    Ok(())
}

/// Loads and validates a dataset stored in `layout` under `root`.
pub fn ingest_dataset(root: impl AsRef<Path>, layout: Layout) -> Result<FundusDataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(dataset_err(root, "directory does not exist"));
    }
    match layout {
        Layout::Drive => ingest_drive(root),
        Layout::Stare => ingest_stare(root),
        Layout::Generic => ingest_generic(root),
    }
}

struct Entry {
    id: String,
    image: PathBuf,
    label: Option<PathBuf>,
    fov: Option<PathBuf>,
}

fn load_entries(root: &Path, name: String, entries: Vec<Entry>, split: Split) -> Result<FundusDataset> {
    let has_labels = entries.iter().any(|e| e.label.is_some());
    let has_fov = entries.iter().any(|e| e.fov.is_some());
    let mut ids = Vec::new();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut fovs = Vec::new();
    for e in entries {
        images.push(Image::load(&e.image)?);
        if let Some(p) = &e.label {
            labels.push(SegMask::load(p)?);
        }
        if let Some(p) = &e.fov {
            fovs.push(SegMask::load(p)?);
        }
        ids.push(e.id);
    }
    FundusDataset::new(
        name,
        ids,
        images,
        has_labels.then_some(labels),
        has_fov.then_some(fovs),
        split,
    )
    .map_err(|e| dataset_err(root, e.to_string()))
}

fn ingest_drive(root: &Path) -> Result<FundusDataset> {
    let images_dir = require_dir(root, "images")?;
    let manual_dir = require_dir(root, "1st_manual")?;
    let mask_dir = require_dir(root, "mask")?;
    let mut entries = Vec::new();
    let mut split = None;
    for path in sorted_files(&images_dir)? {
        let name = file_name(&path);
        let Some((id, tag)) = name
            .strip_suffix(".tif")
            .or_else(|| name.strip_suffix(".tiff"))
            .and_then(|stem| stem.split_once('_'))
        else {
            continue;
        };
        let this = match tag {
            "training" => Split::Train,
            "test" => Split::Test,
            _ => continue,
        };
        if split.is_some_and(|s| s != this) {
            return Err(dataset_err(root, "images/ mixes training and test files"));
        }
        split = Some(this);
        entries.push(Entry {
            id: id.to_string(),
            image: path.clone(),
            label: Some(manual_dir.join(format!("{id}_manual1.gif"))),
            fov: Some(mask_dir.join(format!("{id}_{tag}_mask.gif"))),
        });
    }
    check_count(root, entries.len(), DRIVE_SPLIT_SIZE, "images in images/")?;
    for (what, pick) in [
        ("a manual label", (|e: &Entry| e.label.clone()) as fn(&Entry) -> Option<PathBuf>),
        ("a FOV mask", |e: &Entry| e.fov.clone()),
    ] {
        let missing: Vec<_> = entries
            .iter()
            .filter_map(|e| pick(e).filter(|p| !p.is_file()).map(|p| (e.id.clone(), p)))
            .collect();
        if !missing.is_empty() {
            return Err(missing_error(root, what, &missing));
        }
    }
    let split = split.unwrap_or_default();
    let name = match split {
        Split::Train => "drive-training",
        Split::Test => "drive-test",
        Split::All => "drive",
    };
    load_entries(root, name.into(), entries, split)
}

fn ingest_stare(root: &Path) -> Result<FundusDataset> {
    let files = sorted_files(root)?;
    let mut entries = Vec::new();
    for path in &files {
        let name = file_name(path);
        let Some(stem) = name.strip_suffix(".ppm") else { continue };
        if stem.contains('.') {
            continue;
        }
        let label = ["ah", "vk"]
            .iter()
            .map(|obs| root.join(format!("{stem}.{obs}.ppm")))
            .find(|p| p.is_file());
        entries.push(Entry {
            id: stem.to_string(),
            image: path.clone(),
            label: Some(label.unwrap_or_else(|| root.join(format!("{stem}.ah.ppm")))),
            fov: None,
        });
    }
    check_count(root, entries.len(), STARE_SIZE, "imNNNN.ppm images")?;
    let missing: Vec<_> = entries
        .iter()
        .filter_map(|e| e.label.clone().filter(|p| !p.is_file()).map(|p| (e.id.clone(), p)))
        .collect();
    if !missing.is_empty() {
        return Err(missing_error(root, "a .ah.ppm or .vk.ppm label", &missing));
    }
    load_entries(root, "stare".into(), entries, Split::All)
}

fn stem_map(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut map = BTreeMap::new();
    for path in sorted_files(dir)? {
        let ext = path.extension().map(|e| e.to_string_lossy().to_lowercase()).unwrap_or_default();
        if !IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            continue;
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if map.insert(stem.clone(), path).is_some() {
            return Err(dataset_err(dir, format!("two files share the stem {stem}")));
        }
    }
    Ok(map)
}

fn ingest_generic(root: &Path) -> Result<FundusDataset> {
    let images = stem_map(&require_dir(root, "images")?)?;
    if images.is_empty() {
        return Err(dataset_err(root, "images/ contains no images"));
    }
    let optional = |sub: &str| -> Result<Option<BTreeMap<String, PathBuf>>> {
        let d = root.join(sub);
        if d.is_dir() {
            stem_map(&d).map(Some)
        } else {
            Ok(None)
        }
    };
    let labels = optional("labels")?;
    let masks = optional("masks")?;
    for (sub, map) in [("labels", &labels), ("masks", &masks)] {
        let Some(map) = map else { continue };
        let missing: Vec<_> = images
            .keys()
            .filter(|id| !map.contains_key(*id))
            .map(|id| (id.clone(), root.join(sub).join(format!("{id}.*"))))
            .collect();
        if !missing.is_empty() {
            return Err(missing_error(root, &format!("a file in {sub}/"), &missing));
        }
        if let Some(extra) = map.keys().find(|k| !images.contains_key(*k)) {
            return Err(dataset_err(root, format!("{sub}/{extra} has no matching image")));
        }
    }
    let entries = images
        .into_iter()
        .map(|(id, image)| Entry {
            label: labels.as_ref().map(|m| m[&id].clone()),
            fov: masks.as_ref().map(|m| m[&id].clone()),
            id,
            image,
        })
        .collect();
    let name = root.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "generic".into());
    load_entries(root, name, entries, Split::All)
}
