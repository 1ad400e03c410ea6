//! Cohort data: feature bags, genomic embeddings, survival labels, and the
//! on-disk formats that hold them.

mod bins;
mod format;
mod synthetic;

use std::collections::HashSet;
use std::path::{Path, PathBuf};

pub use bins::{assign_bins, percentile_linear, BinCuts, NUM_BINS};
pub use format::{
    decode_matrix, encode_matrix, quantize_f32, read_matrix, write_matrix, CohortManifest,
    ManifestEntry, Precision, HEADER_LEN, MAGIC_F32, MAGIC_F64, MANIFEST_HEADER,
};
pub use synthetic::{
    concordance_with_planted_risk, generate_synthetic_cohort, sample_event_time, SyntheticCohort,
    SyntheticConfig,
};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One patient's `N_p x d` patch features.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBag {
    pub sample_id: String,
    pub features: Matrix,
}

impl FeatureBag {
    pub fn num_patches(&self) -> usize {
        self.features.rows()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenomicEmbedding {
    pub sample_id: String,
    pub embedding: Vec<f64>,
}

/// Follow-up outcome; `censored == true` means the patient outlived follow-up.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalRecord {
    pub sample_id: String,
    pub time: f64,
    pub censored: bool,
    pub bin: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patient {
    pub bag: FeatureBag,
    pub genomic: Option<GenomicEmbedding>,
    pub survival: SurvivalRecord,
    pub fold: usize,
}

impl Patient {
    pub fn id(&self) -> &str {
        &self.bag.sample_id
    }
}

/// Materialised cohort; immutable once loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    pub dim: usize,
    pub patients: Vec<Patient>,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn num_folds(&self) -> usize {
        self.patients.iter().map(|p| p.fold + 1).max().unwrap_or(0)
    }

    /// `(train, test)` patient indices for a fold.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.patients.len()).partition(|&i| self.patients[i].fold != fold)
    }

    pub fn records(&self) -> Vec<SurvivalRecord> {
        self.patients.iter().map(|p| p.survival.clone()).collect()
    }

    /// Writes the manifest plus one matrix file per bag/embedding under `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let bag_dir = dir.join("bags");
        let gen_dir = dir.join("genomic");
        for sub in [&bag_dir, &gen_dir] {
            std::fs::create_dir_all(sub).map_err(|e| Error::io(sub, e))?;
        }
        let mut entries = Vec::with_capacity(self.patients.len());
        for p in &self.patients {
            let bag_rel = PathBuf::from("bags").join(format!("{}.bin", p.id()));
            write_matrix(&dir.join(&bag_rel), &p.bag.features, Precision::F32)?;
            let genomic = match &p.genomic {
                Some(g) => {
                    let rel = PathBuf::from("genomic").join(format!("{}.bin", p.id()));
                    write_matrix(
                        &dir.join(&rel),
                        &Matrix::row_vector(&g.embedding),
                        Precision::F32,
                    )?;
                    Some(rel)
                }
                None => None,
            };
            entries.push(ManifestEntry {
                sample_id: p.id().to_string(),
                bag: bag_rel,
                genomic,
                time: p.survival.time,
                censor: p.survival.censored,
                fold: p.fold,
            });
        }
        let path = dir.join("manifest.tsv");
        CohortManifest { entries }.write(&path)?;
        Ok(path)
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a manifest and every file it references. Paths are resolved
/// relative to the manifest's directory. A genomic file that is listed but
/// missing on disk is treated as absent.
pub fn load_cohort(manifest_path: &Path) -> Result<Cohort> {
    let manifest = CohortManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut seen = HashSet::new();
    let mut dim: Option<usize> = None;
    let mut patients = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        if !seen.insert(e.sample_id.clone()) {
            return Err(Error::load(&e.sample_id, "duplicate sample_id"));
        }
        let bag_path = resolve(base, &e.bag);
        if !bag_path.exists() {
            return Err(Error::load(
                &e.sample_id,
                format!("bag file {} not found", bag_path.display()),
            ));
        }
        let features = read_matrix(&bag_path)?;
        if features.rows() == 0 {
            return Err(Error::load(&e.sample_id, "empty bag"));
        }
        let d = *dim.get_or_insert(features.cols());
        if features.cols() != d {
            return Err(Error::load(
                &e.sample_id,
                format!(
                    "bag dimension {} does not match cohort dimension {d}",
                    features.cols()
                ),
            ));
        }
        let genomic = match &e.genomic {
            Some(rel) => {
                let path = resolve(base, rel);
                if path.exists() {
                    let m = read_matrix(&path)?;
                    if m.len() != d {
                        return Err(Error::load(
                            &e.sample_id,
                            format!(
                                "genomic length {} does not match cohort dimension {d}",
                                m.len()
                            ),
                        ));
                    }
                    Some(GenomicEmbedding {
                        sample_id: e.sample_id.clone(),
                        embedding: m.into_vec(),
                    })
                } else {
                    None
                }
            }
            None => None,
        };
        patients.push(Patient {
            bag: FeatureBag {
                sample_id: e.sample_id.clone(),
                features,
            },
            genomic,
            survival: SurvivalRecord {
                sample_id: e.sample_id.clone(),
                time: e.time,
                censored: e.censor,
                bin: None,
            },
            fold: e.fold,
        });
    }
    let dim = dim.ok_or_else(|| Error::load("manifest", "no entries"))?;
    Ok(Cohort { dim, patients })
}
