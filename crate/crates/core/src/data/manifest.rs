//! Line-oriented sample manifests and patient-grouped k-fold splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::raster::{write_gray_png, write_hu16};
use super::synth::SyntheticSample;
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "medseg-manifest v1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SampleRecord {
    pub patient_id: String,
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
}

/// Ordered records. Relative paths resolve against `base_dir`, the
/// directory the manifest was read from.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<SampleRecord>, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let m = Manifest {
            records,
            base_dir: base_dir.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.patient_id.is_empty() {
                return Err(Error::Validation(format!("record {i}: empty patient id")));
            }
            if !seen.insert(&r.image_path) {
                return Err(Error::Validation(format!(
                    "record {i}: duplicate image path {}",
                    r.image_path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
            other => {
                return Err(Error::Validation(format!(
                    "line 1: expected header `{MANIFEST_HEADER}`, found {:?}",
                    other.map(|(_, l)| l).unwrap_or("")
                )))
            }
        }
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (i, line) in lines {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [pid, img, mask] = fields[..] else {
                return Err(Error::Validation(format!(
                    "line {}: expected 3 tab-separated fields, found {}",
                    i + 1,
                    fields.len()
                )));
            };
            if pid.is_empty() || img.is_empty() || mask.is_empty() {
                return Err(Error::Validation(format!("line {}: empty field", i + 1)));
            }
            if !seen.insert(img.to_string()) {
                return Err(Error::Validation(format!("line {}: duplicate image path {img}", i + 1)));
            }
            records.push(SampleRecord {
                patient_id: pid.to_string(),
                image_path: img.into(),
                mask_path: mask.into(),
            });
        }
        Manifest::new(records, base_dir)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Manifest::parse(&text, base)
    }

    pub fn render(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\n",
                r.patient_id,
                r.image_path.display(),
                r.mask_path.display()
            ));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Distinct patient ids in sorted order.
    pub fn patients(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.patient_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Manifest {
        Manifest {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            base_dir: self.base_dir.clone(),
        }
    }
}

/// Write images, masks (0/255), raw HU grids and `manifest.tsv` under `dir`.
pub fn write_synthetic(dir: &Path, samples: &[SyntheticSample]) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image_path = PathBuf::from(format!("images/{i:04}.png"));
        let mask_path = PathBuf::from(format!("masks/{i:04}.png"));
        write_gray_png(&dir.join(&image_path), s.size, s.size, &s.image)?;
        let mask: Vec<u8> = s.mask.iter().map(|&m| m * 255).collect();
        write_gray_png(&dir.join(&mask_path), s.size, s.size, &mask)?;
        write_hu16(&dir.join(format!("hu/{i:04}.hu16")), s.size, s.size, &s.hu)?;
        records.push(SampleRecord {
            patient_id: s.patient_id.clone(),
            image_path,
            mask_path,
        });
    }
    let manifest = Manifest::new(records, dir)?;
    manifest.write(&dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub validation_patients: Vec<String>,
}

/// Patient-grouped k-fold split over record indices.
///
/// Patients are sorted, shuffled with `seed`, and cut into `k` contiguous
/// groups whose sizes differ by at most one; fold `i` validates on group `i`.
pub fn kfold_split(manifest: &Manifest, k: usize, seed: u64) -> Result<Vec<Fold>> {
    let ids: Vec<&str> = manifest.records.iter().map(|r| r.patient_id.as_str()).collect();
    kfold_split_ids(&ids, k, seed)
}

/// [`kfold_split`] over a bare list of per-record patient ids.
pub fn kfold_split_ids<S: AsRef<str>>(patient_ids: &[S], k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Validation(format!("k-fold needs k ≥ 2, got {k}")));
    }
    let mut patients: Vec<String> = patient_ids
        .iter()
        .map(|p| p.as_ref().to_string())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if patients.len() < k {
        return Err(Error::Validation(format!(
            "{} patients cannot fill {k} folds",
            patients.len()
        )));
    }
    patients.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (q, r) = (patients.len() / k, patients.len() % k);
    let mut group_of: BTreeMap<String, usize> = BTreeMap::new();
    let mut start = 0;
    let mut groups = Vec::with_capacity(k);
    for g in 0..k {
        let len = q + usize::from(g < r);
        let mut members: Vec<String> = patients[start..start + len].to_vec();
        for p in &members {
            group_of.insert(p.clone(), g);
        }
        members.sort();
        groups.push(members);
        start += len;
    }
    Ok((0..k)
        .map(|g| {
            let (mut train, mut validation) = (Vec::new(), Vec::new());
            for (i, p) in patient_ids.iter().enumerate() {
                if group_of[p.as_ref()] == g {
                    validation.push(i);
                } else {
                    train.push(i);
                }
            }
            Fold {
                train,
                validation,
                validation_patients: groups[g].clone(),
            }
        })
        .collect())
}
