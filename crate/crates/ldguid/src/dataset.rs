//! On-disk bitemporal datasets.
//!
//! Layout: `<root>/{A,B,label}/<id>.<ext>` with pre images in `A`, post images
//! in `B` and masks in `label`. An optional `<root>/splits.json` maps split
//! names to id lists; without it every split is the whole root. Synthetic sets
//! also carry `<root>/nuisance.json` mapping id to brightness shift.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ldguid_core::image::BitemporalSample;
use ldguid_core::synth::SyntheticSample;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::raster;

pub const PRE_DIR: &str = "A";
pub const POST_DIR: &str = "B";
pub const LABEL_DIR: &str = "label";
const SUPPORTED: [&str; 2] = ["png", "rten"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split {other}; expected train, val or test"))),
        }
    }
}

/// Files of one subdirectory keyed by stem.
fn index_dir(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(Error::io(dir))? {
        let path = entry.map_err(Error::io(dir))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
        if stem.starts_with('.') || !path.is_file() {
            continue;
        }
        match raster::extension(&path) {
            Some(ext) if SUPPORTED.contains(&ext.as_str()) => {}
            _ => return Err(Error::UnsupportedFormat(path)),
        }
        if let Some(prev) = out.insert(stem.to_string(), path.clone()) {
            return Err(Error::malformed(&path, format!("id {stem} also provided by {}", prev.display())));
        }
    }
    Ok(out)
}

fn read_splits(root: &Path) -> Result<Option<BTreeMap<String, Vec<String>>>> {
    let path = root.join("splits.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::malformed(&path, e))
}

/// Loads one split, sorted by id. Every id in `A` must exist in `B` and
/// `label` and vice versa.
pub fn load_dataset(root: &Path, split: Split) -> Result<Vec<BitemporalSample>> {
    let pre = index_dir(&root.join(PRE_DIR))?;
    let post = index_dir(&root.join(POST_DIR))?;
    let label = index_dir(&root.join(LABEL_DIR))?;
    for (id, _) in pre.iter() {
        for (name, other) in [(POST_DIR, &post), (LABEL_DIR, &label)] {
            if !other.contains_key(id) {
                return Err(Error::NameMismatch { id: id.clone(), missing_in: root.join(name) });
            }
        }
    }
    for id in post.keys().chain(label.keys()) {
        if !pre.contains_key(id) {
            return Err(Error::NameMismatch { id: id.clone(), missing_in: root.join(PRE_DIR) });
        }
    }
    let ids: Vec<String> = match read_splits(root)? {
        None => pre.keys().cloned().collect(),
        Some(splits) => {
            let listed = splits.get(split.name()).ok_or_else(|| Error::UnknownSplit {
                path: root.join("splits.json"),
                split: split.name().to_string(),
            })?;
            let mut ids = listed.clone();
            ids.sort();
            ids.dedup();
            if let Some(id) = ids.iter().find(|id| !pre.contains_key(*id)) {
                return Err(Error::NameMismatch { id: id.clone(), missing_in: root.join(PRE_DIR) });
            }
            ids
        }
    };
    ids.into_iter().map(|id| load_sample(&id, &pre[&id], &post[&id], &label[&id])).collect()
}

fn load_sample(id: &str, pre_path: &Path, post_path: &Path, label_path: &Path) -> Result<BitemporalSample> {
    let pre = raster::read_image(pre_path)?;
    let post = raster::read_image(post_path)?;
    if pre.dims() != post.dims() {
        return Err(Error::ShapeMismatch {
            path: post_path.to_path_buf(),
            detail: format!("post image is {:?}, pre image {} is {:?}", post.dims(), pre_path.display(), pre.dims()),
        });
    }
    let mask = raster::read_mask(label_path)?;
    if (mask.height(), mask.width()) != (pre.height(), pre.width()) {
        return Err(Error::ShapeMismatch {
            path: label_path.to_path_buf(),
            detail: format!("mask is {}×{}, images are {}×{}", mask.height(), mask.width(), pre.height(), pre.width()),
        });
    }
    BitemporalSample::new(id, pre, post, mask).map_err(|e| Error::malformed(label_path, e))
}

/// Brightness shift per id of a synthetic set.
pub fn load_nuisance(root: &Path) -> Result<BTreeMap<String, f64>> {
    let path = root.join("nuisance.json");
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    serde_json::from_str(&text).map_err(|e| Error::malformed(&path, e))
}

/// Fractions of a synthetic set assigned to train and val; the rest is test.
pub const SYNTH_SPLIT: (f64, f64) = (0.6, 0.2);

/// Split assignment by position: the first 60% train, the next 20% val.
pub fn split_ids(ids: &[String]) -> BTreeMap<String, Vec<String>> {
    let n = ids.len();
    let n_train = ((n as f64) * SYNTH_SPLIT.0).round() as usize;
    let n_val = ((n as f64) * SYNTH_SPLIT.1).round() as usize;
    let n_val = n_val.min(n - n_train);
    BTreeMap::from([
        ("train".to_string(), ids[..n_train].to_vec()),
        ("val".to_string(), ids[n_train..n_train + n_val].to_vec()),
        ("test".to_string(), ids[n_train + n_val..].to_vec()),
    ])
}

/// Writes a synthetic set: `.rten` images, PNG masks, `nuisance.json` and
/// `splits.json`. Output bytes depend only on the samples.
pub fn write_synthetic(root: &Path, samples: &[SyntheticSample]) -> Result<()> {
    for dir in [PRE_DIR, POST_DIR, LABEL_DIR] {
        let d = root.join(dir);
        fs::create_dir_all(&d).map_err(Error::io(&d))?;
    }
    let mut nuisance = BTreeMap::new();
    for s in samples {
        let id = &s.sample.id;
        raster::write_rten(&root.join(PRE_DIR).join(format!("{id}.rten")), &s.sample.pre)?;
        raster::write_rten(&root.join(POST_DIR).join(format!("{id}.rten")), &s.sample.post)?;
        raster::write_mask_png(&root.join(LABEL_DIR).join(format!("{id}.png")), &s.sample.mask)?;
        nuisance.insert(id.clone(), s.nuisance);
    }
    let ids: Vec<String> = samples.iter().map(|s| s.sample.id.clone()).collect();
    write_json(&root.join("nuisance.json"), &nuisance)?;
    write_json(&root.join("splits.json"), &split_ids(&ids))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).map_err(Error::io(path))
}

/// SHA-256 over ids, image bytes and masks, in order.
pub fn dataset_hash(samples: &[BitemporalSample]) -> String {
    let mut h = Sha256::new();
    for s in samples {
        h.update(s.id.as_bytes());
        h.update([0]);
        for img in [&s.pre, &s.post] {
            let (a, b, c) = img.dims();
            for d in [a, b, c] {
                h.update((d as u64).to_le_bytes());
            }
            for v in img.data() {
                h.update(v.to_le_bytes());
            }
        }
        h.update(s.mask.data());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
