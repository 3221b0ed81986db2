//! Dataset directory format.
//!
//! ```text
//! <dir>/meta.json          resolution, ROI sizes, seed, noise std, splits
//! <dir>/labels.csv         id,coarse_label
//! <dir>/voxels_<ROI>.csv   id,v0,...,v{n-1}
//! <dir>/stimuli/<id>.pgm   16-bit grayscale
//! <dir>/truth.json         synthetic worlds only, see `save_truth`
//! ```
//!
//! Voxel values are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces them bit for bit.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::category::N_COARSE;
use super::image::{GrayImage, MaskConfig};
use super::pgm::{encode_pgm, read_pgm};
use super::voxels::{Roi, VoxelRecord};
use super::world::WorldTruth;
use crate::error::{Error, Result};
use crate::fsio;
use crate::generator::GeneratorConfig;

pub const TRUTH_FILE: &str = "truth.json";

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub voxels: VoxelRecord,
    /// Coarse category, `< 10`.
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub resolution: usize,
    /// Voxel count per ROI in V1, V2, V3, V4, LO order.
    pub roi_sizes: [usize; 5],
    pub seed: u64,
    pub noise_std: f64,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
    /// Generator that produced the stimuli (synthetic worlds).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
    #[serde(default)]
    pub mask: MaskConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn samples(&self) -> impl Iterator<Item = &Sample> {
        self.train.iter().chain(&self.test)
    }

    pub fn find(&self, id: &str) -> Option<&Sample> {
        self.samples().find(|s| s.id == id)
    }

    /// SHA-256 over metadata, ids, labels, voxel bits and pixel bits.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.meta).expect("metadata serializes"));
        for s in self.samples() {
            h.update((s.id.len() as u64).to_le_bytes());
            h.update(s.id.as_bytes());
            h.update((s.label as u64).to_le_bytes());
            for roi in Roi::ALL {
                for v in s.voxels.get(roi) {
                    h.update(v.to_bits().to_le_bytes());
                }
            }
            for p in s.image.pixels() {
                h.update(p.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Copy with voxels z-scored by statistics fitted on the training split.
    pub fn zscored(&self) -> Result<Dataset> {
        let train: Vec<VoxelRecord> = self.train.iter().map(|s| s.voxels.clone()).collect();
        let test: Vec<VoxelRecord> = self.test.iter().map(|s| s.voxels.clone()).collect();
        let (train_z, test_z, _) = super::voxels::zscore_fit_apply(&train, &test)?;
        let swap = |samples: &[Sample], voxels: Vec<VoxelRecord>| {
            samples
                .iter()
                .zip(voxels)
                .map(|(s, v)| Sample {
                    voxels: v,
                    ..s.clone()
                })
                .collect()
        };
        Ok(Dataset {
            meta: self.meta.clone(),
            train: swap(&self.train, train_z),
            test: swap(&self.test, test_z),
        })
    }

    fn validate(&self) -> Result<()> {
        for s in self.samples() {
            if s.label >= N_COARSE {
                return Err(Error::invalid(format!("sample {} has label {} >= {N_COARSE}", s.id, s.label)));
            }
            if s.voxels.sizes() != self.meta.roi_sizes {
                return Err(Error::shape(
                    "dataset",
                    format!("sample {} has ROI sizes {:?}, meta says {:?}", s.id, s.voxels.sizes(), self.meta.roi_sizes),
                ));
            }
            if s.image.height() != self.meta.resolution || s.image.width() != self.meta.resolution {
                return Err(Error::shape("dataset", format!("sample {} image is not {0}x{0}", self.meta.resolution)));
            }
        }
        Ok(())
    }
}

fn image_path(dir: &Path, id: &str) -> PathBuf {
    dir.join("stimuli").join(format!("{id}.pgm"))
}

fn voxel_path(dir: &Path, roi: Roi) -> PathBuf {
    dir.join(format!("voxels_{roi}.csv"))
}

fn csv_bytes(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::invalid(format!("csv encoding: {e}"));
    w.write_record(&header).map_err(to_err)?;
    for row in rows {
        w.write_record(&row).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv encoding: {e}")))
}

pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    fsio::write_json(&dir.join("meta.json"), &dataset.meta)?;
    let labels = csv_bytes(
        vec!["id".into(), "coarse_label".into()],
        dataset.samples().map(|s| vec![s.id.clone(), s.label.to_string()]),
    )?;
    fsio::write(&dir.join("labels.csv"), &labels)?;
    for roi in Roi::ALL {
        let n = dataset.meta.roi_sizes[roi.index()];
        let header = std::iter::once("id".to_string()).chain((0..n).map(|i| format!("v{i}"))).collect();
        let rows = dataset.samples().map(|s| {
            std::iter::once(s.id.clone())
                .chain(s.voxels.get(roi).iter().map(|v| v.to_string()))
                .collect()
        });
        fsio::write(&voxel_path(dir, roi), &csv_bytes(header, rows)?)?;
    }
    for s in dataset.samples() {
        fsio::write(&image_path(dir, &s.id), encode_pgm(&s.image))?;
    }
    Ok(())
}

/// Rows of a CSV file keyed by id, checking the header's first column.
fn read_csv_rows(path: &Path, expected_header: &[String]) -> Result<HashMap<String, Vec<String>>> {
    let bytes = fsio::read(path)?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header = r
        .headers()
        .map_err(|e| Error::format(path, "header", e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    if header != expected_header {
        return Err(Error::format(
            path,
            "header",
            format!("expected {} columns starting with `{}`", expected_header.len(), expected_header[0]),
        ));
    }
    let mut rows = HashMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, format!("row {}", line + 1), e.to_string()))?;
        let mut fields = rec.iter().map(str::to_string);
        let id = fields.next().unwrap_or_default();
        if rows.insert(id.clone(), fields.collect()).is_some() {
            return Err(Error::format(path, "id", format!("duplicate id `{id}`")));
        }
    }
    Ok(rows)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = fsio::read_json(&dir.join("meta.json"))?;
    let labels_path = dir.join("labels.csv");
    let labels = read_csv_rows(&labels_path, &["id".into(), "coarse_label".into()])?;
    let mut voxels: Vec<HashMap<String, Vec<String>>> = Vec::new();
    for roi in Roi::ALL {
        let n = meta.roi_sizes[roi.index()];
        let header: Vec<String> = std::iter::once("id".to_string()).chain((0..n).map(|i| format!("v{i}"))).collect();
        voxels.push(read_csv_rows(&voxel_path(dir, roi), &header)?);
    }

    let ids: Vec<&String> = meta.train_ids.iter().chain(&meta.test_ids).collect();
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !image_path(dir, id).is_file())
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingSamples { ids: missing });
    }

    let mut samples = Vec::with_capacity(ids.len());
    for id in ids {
        let label_field = labels
            .get(id)
            .and_then(|r| r.first())
            .ok_or_else(|| Error::format(&labels_path, "coarse_label", format!("no row for `{id}`")))?;
        let label: usize = label_field
            .parse()
            .ok()
            .filter(|&l| l < N_COARSE)
            .ok_or_else(|| Error::format(&labels_path, "coarse_label", format!("`{label_field}` for `{id}`")))?;
        let mut record = VoxelRecord::default();
        for roi in Roi::ALL {
            let path = voxel_path(dir, roi);
            let row = voxels[roi.index()]
                .get(id)
                .ok_or_else(|| Error::format(&path, "id", format!("no row for `{id}`")))?;
            if row.len() != meta.roi_sizes[roi.index()] {
                return Err(Error::format(
                    &path,
                    "values",
                    format!("`{id}` has {} values, meta says {}", row.len(), meta.roi_sizes[roi.index()]),
                ));
            }
            *record.get_mut(roi) = row
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::format(&path, format!("v{i}"), format!("`{v}` for `{id}`")))
                })
                .collect::<Result<_>>()?;
        }
        let image = read_pgm(&image_path(dir, id))?;
        samples.push(Sample {
            id: id.clone(),
            image,
            voxels: record,
            label,
        });
    }
    let test = samples.split_off(meta.train_ids.len());
    let dataset = Dataset {
        meta,
        train: samples,
        test,
    };
    dataset.validate().map_err(|e| Error::format(dir, "dataset", e.to_string()))?;
    Ok(dataset)
}

pub fn save_truth(truth: &WorldTruth, dir: &Path) -> Result<()> {
    truth.save(&dir.join(TRUTH_FILE))
}

pub fn load_truth(dir: &Path) -> Result<WorldTruth> {
    WorldTruth::load(&dir.join(TRUTH_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Dataset {
        let sample = |id: &str, label: usize, shift: f64| Sample {
            id: id.into(),
            image: GrayImage::new(4, 4, (0..16).map(|i| (i as f64 / 15.0 + shift).min(1.0)).collect()).unwrap(),
            voxels: VoxelRecord::new([
                vec![0.1 + shift, -2.5e-17, 1.0 / 3.0],
                vec![std::f64::consts::PI],
                vec![-1e300, 5.0],
                vec![0.0],
                vec![1.25, 7.0],
            ]),
            label,
        };
        Dataset {
            meta: DatasetMeta {
                resolution: 4,
                roi_sizes: [3, 1, 2, 1, 2],
                seed: 1,
                noise_std: 0.5,
                train_ids: vec!["a".into(), "b".into()],
                test_ids: vec!["c".into()],
                generator: None,
                mask: MaskConfig::default(),
            },
            train: vec![sample("a", 0, 0.0), sample("b", 9, 0.1)],
            test: vec![sample("c", 3, 0.2)],
        }
    }

    #[test]
    fn content_hash_sees_every_field() {
        let base = toy();
        let h = base.content_hash();
        assert_eq!(h.len(), 64);
        assert_eq!(h, base.clone().content_hash());
        let mut voxel = base.clone();
        voxel.test[0].voxels.get_mut(Roi::LO)[1] = f64::from_bits(7.0f64.to_bits() + 1);
        let mut label = base.clone();
        label.train[1].label = 8;
        let mut pixel = base.clone();
        pixel.train[0].image = GrayImage::filled(4, 4, 0.5).unwrap();
        let mut meta = base.clone();
        meta.meta.noise_std = 0.25;
        for changed in [voxel, label, pixel, meta] {
            assert_ne!(changed.content_hash(), h);
        }
    }

    #[test]
    fn content_hash_is_stable_across_reloads() {
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        save_dataset(&toy(), d1.path()).unwrap();
        let once = load_dataset(d1.path()).unwrap();
        save_dataset(&once, d2.path()).unwrap();
        assert_eq!(load_dataset(d2.path()).unwrap().content_hash(), once.content_hash());
    }

    #[test]
    fn round_trip_is_bit_exact_for_voxels() {
        let dir = tempfile::tempdir().unwrap();
        let ds = toy();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.meta, ds.meta);
        for (a, b) in ds.samples().zip(back.samples()) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.label, b.label);
            for roi in Roi::ALL {
                let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a.voxels.get(roi)), bits(b.voxels.get(roi)));
            }
            for (p, q) in a.image.pixels().iter().zip(b.image.pixels()) {
                assert!((p - q).abs() <= 0.5 / 65535.0 + 1e-15);
            }
        }
    }

    #[test]
    fn missing_image_lists_the_id() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&toy(), dir.path()).unwrap();
        std::fs::remove_file(dir.path().join("stimuli/b.pgm")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::MissingSamples { ids }) => assert_eq!(ids, vec!["b".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn short_voxel_row_is_rejected_with_file_name() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&toy(), dir.path()).unwrap();
        let path = dir.path().join("voxels_V3.csv");
        let text = std::fs::read_to_string(&path).unwrap();
        let cut = text.trim_end().rfind(',').unwrap();
        std::fs::write(&path, format!("{}\n", &text[..cut])).unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("voxels_V3.csv"), "{err}");
    }

    #[test]
    fn corrupt_value_names_the_column() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&toy(), dir.path()).unwrap();
        let path = dir.path().join("voxels_LO.csv");
        let text = std::fs::read_to_string(&path).unwrap().replace("a,1.25", "a,abc");
        std::fs::write(&path, text).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.is_input_error());
        assert!(err.to_string().contains("v0"), "{err}");
    }

    #[test]
    fn inconsistent_roi_sizes_are_rejected_on_save() {
        let mut ds = toy();
        ds.test[0].voxels.get_mut(Roi::V1).push(1.0);
        assert!(save_dataset(&ds, tempfile::tempdir().unwrap().path()).is_err());
    }

    #[test]
    fn zscored_uses_training_statistics() {
        let z = toy().zscored().unwrap();
        let v: Vec<f64> = z.train.iter().map(|s| s.voxels.get(Roi::V1)[0]).collect();
        assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);
        // test sample at shift 0.2 lies three half-spreads from the mean
        assert!((z.test[0].voxels.get(Roi::V1)[0] - 3.0).abs() < 1e-9);
        // constant voxel maps to zero
        assert_eq!(z.test[0].voxels.get(Roi::V2), &[0.0]);
    }
}
