//! On-disk formats and dataset validation.
//!
//! * images: JSON lines `{"image_id", "reader_ids"}`
//! * marks: JSON lines `{"mark_id", "image_id", "reader_id", "cx_mm", "cy_mm", "r1_mm", "r2_mm", "theta_rad"}`
//! * candidates: CSV with header `image_id,candidate_id,x_mm,y_mm,<feature names...>`
//!
//! Geometry is millimeters throughout; the unit suffixes in the field names
//! are required.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::Candidate;
use crate::marks::EllipseMark;
use crate::objective::{ModelWeights, Normalization};
use crate::optimizer::FitResult;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageRecord {
    pub image_id: u64,
    pub reader_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub images: Vec<ImageRecord>,
    pub marks: Vec<EllipseMark>,
    pub candidates: Vec<Candidate>,
    pub feature_names: Vec<String>,
}

impl Dataset {
    /// Checks id uniqueness, references between records and dimensions.
    pub fn validate(&self) -> Result<()> {
        let mut rosters: BTreeMap<u64, BTreeSet<u64>> = BTreeMap::new();
        for img in &self.images {
            let readers: BTreeSet<u64> = img.reader_ids.iter().copied().collect();
            if readers.len() != img.reader_ids.len() {
                return Err(Error::validation(format!(
                    "image {}: duplicate reader id",
                    img.image_id
                )));
            }
            if readers.is_empty() {
                return Err(Error::validation(format!(
                    "image {}: empty reader roster",
                    img.image_id
                )));
            }
            if rosters.insert(img.image_id, readers).is_some() {
                return Err(Error::validation(format!(
                    "duplicate image id {}",
                    img.image_id
                )));
            }
        }
        let mut mark_ids = BTreeSet::new();
        for m in &self.marks {
            m.validate()?;
            if !mark_ids.insert(m.mark_id) {
                return Err(Error::validation(format!(
                    "duplicate mark id {}",
                    m.mark_id
                )));
            }
            let roster = rosters.get(&m.image_id).ok_or_else(|| {
                Error::validation(format!(
                    "mark {} references unknown image {}",
                    m.mark_id, m.image_id
                ))
            })?;
            if !roster.contains(&m.reader_id) {
                return Err(Error::validation(format!(
                    "mark {}: reader {} is not on the roster of image {}",
                    m.mark_id, m.reader_id, m.image_id
                )));
            }
        }
        let mut cand_ids = BTreeSet::new();
        for c in &self.candidates {
            if !cand_ids.insert(c.candidate_id) {
                return Err(Error::validation(format!(
                    "duplicate candidate id {}",
                    c.candidate_id
                )));
            }
            if !rosters.contains_key(&c.image_id) {
                return Err(Error::validation(format!(
                    "candidate {} references unknown image {}",
                    c.candidate_id, c.image_id
                )));
            }
            if c.features.len() != self.feature_names.len() {
                return Err(Error::validation(format!(
                    "candidate {} has {} features, expected {}",
                    c.candidate_id,
                    c.features.len(),
                    self.feature_names.len()
                )));
            }
            if !(c.x_mm.is_finite() && c.y_mm.is_finite())
                || c.features.iter().any(|v| !v.is_finite())
            {
                return Err(Error::validation(format!(
                    "candidate {} has non-finite values",
                    c.candidate_id
                )));
            }
        }
        Ok(())
    }

    pub fn readers_per_image(&self) -> BTreeMap<u64, usize> {
        self.images
            .iter()
            .map(|i| (i.image_id, i.reader_ids.len()))
            .collect()
    }

    pub fn rosters(&self) -> BTreeMap<u64, Vec<u64>> {
        self.images
            .iter()
            .map(|i| (i.image_id, i.reader_ids.clone()))
            .collect()
    }

    pub fn image_ids(&self) -> Vec<u64> {
        self.images.iter().map(|i| i.image_id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub images: PathBuf,
    pub marks: PathBuf,
    pub candidates: PathBuf,
}

impl DatasetPaths {
    /// Conventional file names inside one directory.
    pub fn in_dir(dir: &Path) -> Self {
        DatasetPaths {
            images: dir.join("images.jsonl"),
            marks: dir.join("marks.jsonl"),
            candidates: dir.join("candidates.csv"),
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: i + 1,
            field: field_from_serde(&e.to_string()),
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// Best-effort field name from a serde error message.
fn field_from_serde(msg: &str) -> String {
    msg.split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "record".to_string())
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkRecord {
    mark_id: u64,
    image_id: u64,
    reader_id: u64,
    cx_mm: f64,
    cy_mm: f64,
    r1_mm: f64,
    r2_mm: f64,
    theta_rad: f64,
}

pub fn read_marks(path: &Path) -> Result<Vec<EllipseMark>> {
    let records: Vec<MarkRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            EllipseMark::new(
                r.mark_id,
                r.image_id,
                r.reader_id,
                (r.cx_mm, r.cy_mm),
                (r.r1_mm, r.r2_mm),
                r.theta_rad,
            )
            .map_err(|e| Error::Parse {
                file: path.to_path_buf(),
                line: i + 1,
                field: "r1_mm/r2_mm".into(),
                message: e.to_string(),
            })
        })
        .collect()
}

const CANDIDATE_KEYS: [&str; 4] = ["image_id", "candidate_id", "x_mm", "y_mm"];

/// Reads the candidate table; returns candidates and feature names.
pub fn read_candidates(path: &Path) -> Result<(Vec<Candidate>, Vec<String>)> {
    let parse_err = |line: usize, field: &str, message: String| Error::Parse {
        file: path.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| parse_err(1, "header", e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, "header", e.to_string()))?
        .clone();
    for (k, expected) in CANDIDATE_KEYS.iter().enumerate() {
        if headers.get(k) != Some(*expected) {
            return Err(parse_err(
                1,
                expected,
                format!(
                    "header column {} must be `{expected}` (units in mm are required)",
                    k + 1
                ),
            ));
        }
    }
    let feature_names: Vec<String> = headers
        .iter()
        .skip(CANDIDATE_KEYS.len())
        .map(str::to_string)
        .collect();
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| parse_err(line, "record", e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_err(
                line,
                "record",
                format!("expected {} columns, found {}", headers.len(), record.len()),
            ));
        }
        let int = |k: usize| -> Result<u64> {
            record[k]
                .trim()
                .parse()
                .map_err(|e| parse_err(line, &headers[k], format!("{e}")))
        };
        let real = |k: usize| -> Result<f64> {
            let v: f64 = record[k]
                .trim()
                .parse()
                .map_err(|e| parse_err(line, &headers[k], format!("{e}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, &headers[k], "value is not finite".into()));
            }
            Ok(v)
        };
        out.push(Candidate {
            image_id: int(0)?,
            candidate_id: int(1)?,
            x_mm: real(2)?,
            y_mm: real(3)?,
            features: (CANDIDATE_KEYS.len()..record.len())
                .map(real)
                .collect::<Result<_>>()?,
        });
    }
    Ok((out, feature_names))
}

pub fn write_candidates(
    path: &Path,
    candidates: &[Candidate],
    feature_names: &[String],
) -> Result<()> {
    let wrap = |e: csv::Error| Error::validation(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(wrap)?;
    let header: Vec<&str> = CANDIDATE_KEYS
        .iter()
        .copied()
        .chain(feature_names.iter().map(String::as_str))
        .collect();
    w.write_record(&header).map_err(wrap)?;
    for c in candidates {
        let mut row = vec![
            c.image_id.to_string(),
            c.candidate_id.to_string(),
            c.x_mm.to_string(),
            c.y_mm.to_string(),
        ];
        row.extend(c.features.iter().map(f64::to_string));
        w.write_record(&row).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads and validates a dataset.
pub fn ingest(paths: &DatasetPaths) -> Result<Dataset> {
    let images: Vec<ImageRecord> = read_jsonl(&paths.images)?;
    let marks = read_marks(&paths.marks)?;
    let (candidates, feature_names) = read_candidates(&paths.candidates)?;
    let dataset = Dataset {
        images,
        marks,
        candidates,
        feature_names,
    };
    dataset.validate()?;
    Ok(dataset)
}

pub fn export(dataset: &Dataset, paths: &DatasetPaths) -> Result<()> {
    write_jsonl(&paths.images, &dataset.images)?;
    write_jsonl(&paths.marks, &dataset.marks)?;
    write_candidates(
        &paths.candidates,
        &dataset.candidates,
        &dataset.feature_names,
    )
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Serialized trained model. Zero weights are omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub lambda: f64,
    pub normalization: Normalization,
    pub annotator_weights: bool,
    pub feature_names: Vec<String>,
    pub weights: IndexMap<String, f64>,
    pub intercept: f64,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub nnz: usize,
}

impl ModelFile {
    pub fn from_fit(
        fit: &FitResult,
        feature_names: &[String],
        lambda: f64,
        normalization: Normalization,
        annotator_weights: bool,
    ) -> Result<Self> {
        let w = &fit.weights.w;
        if w.len() != feature_names.len() + 1 {
            return Err(Error::validation(format!(
                "model has {} weights for {} features plus intercept",
                w.len(),
                feature_names.len()
            )));
        }
        let weights = feature_names
            .iter()
            .zip(w)
            .filter(|(_, &v)| v != 0.0)
            .map(|(n, &v)| (n.clone(), v))
            .collect();
        Ok(ModelFile {
            version: MODEL_FORMAT_VERSION,
            lambda,
            normalization,
            annotator_weights,
            feature_names: feature_names.to_vec(),
            weights,
            intercept: w[feature_names.len()],
            objective_value: fit.objective_value,
            iterations: fit.iterations,
            converged: fit.converged,
            nnz: fit.nnz,
        })
    }

    /// Dense weights in `feature_names` order plus the trailing intercept.
    pub fn model_weights(&self) -> Result<ModelWeights> {
        for name in self.weights.keys() {
            if !self.feature_names.contains(name) {
                return Err(Error::validation(format!(
                    "model weight for unknown feature `{name}`"
                )));
            }
        }
        let mut w: Vec<f64> = self
            .feature_names
            .iter()
            .map(|n| self.weights.get(n).copied().unwrap_or(0.0))
            .collect();
        w.push(self.intercept);
        let mut penalized = vec![true; w.len()];
        *penalized.last_mut().expect("intercept present") = false;
        ModelWeights::from_parts(w, penalized)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: ModelFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: e.line(),
            field: field_from_serde(&e.to_string()),
            message: e.to_string(),
        })?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "{}: unsupported model version {}",
                path.display(),
                model.version
            )));
        }
        Ok(model)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    fn paths(dir: &Path, images: &str, marks: &str, candidates: &str) -> DatasetPaths {
        DatasetPaths {
            images: write(dir, "images.jsonl", images),
            marks: write(dir, "marks.jsonl", marks),
            candidates: write(dir, "candidates.csv", candidates),
        }
    }

    const IMAGES: &str =
        "{\"image_id\":1,\"reader_ids\":[1,2,3,4]}\n{\"image_id\":2,\"reader_ids\":[1,2,3,4,5]}\n";
    const CANDS: &str =
        "image_id,candidate_id,x_mm,y_mm,contrast,size\n1,10,5.5,6,0.25,-1\n2,11,0,0,1e-3,2\n";

    #[test]
    fn empty_marks_file_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let ds = ingest(&paths(dir.path(), IMAGES, "", CANDS)).unwrap();
        assert!(ds.marks.is_empty());
        assert_eq!(ds.feature_names, vec!["contrast", "size"]);
        assert_eq!(ds.candidates[1].features, vec![1e-3, 2.0]);
    }

    #[test]
    fn unknown_image_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let cands = "image_id,candidate_id,x_mm,y_mm,f\n9,10,0,0,1\n";
        let err = ingest(&paths(dir.path(), IMAGES, "", cands)).unwrap_err();
        assert!(err.to_string().contains("unknown image 9"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let cands = "image_id,candidate_id,x_mm,y_mm,f\n1,10,0,0,1\n1,11,zero,0,1\n";
        let err = ingest(&paths(dir.path(), IMAGES, "", cands)).unwrap_err();
        match err {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "x_mm");
            }
            other => panic!("unexpected {other}"),
        }
        let marks =
            "{\"mark_id\":1,\"image_id\":1,\"reader_id\":1,\"cx_mm\":0,\"cy_mm\":0,\"r1_mm\":3}\n";
        let err = ingest(&paths(dir.path(), IMAGES, marks, CANDS)).unwrap_err();
        assert!(
            matches!(err, Error::Parse { line: 1, ref field, .. } if field == "r2_mm"),
            "{err}"
        );
    }

    #[test]
    fn header_must_carry_units() {
        let dir = tempfile::tempdir().unwrap();
        let cands = "image_id,candidate_id,x,y,f\n1,10,0,0,1\n";
        assert!(ingest(&paths(dir.path(), IMAGES, "", cands)).is_err());
    }

    #[test]
    fn mark_reader_must_be_on_roster() {
        let dir = tempfile::tempdir().unwrap();
        let marks = "{\"mark_id\":1,\"image_id\":1,\"reader_id\":5,\"cx_mm\":0,\"cy_mm\":0,\"r1_mm\":3,\"r2_mm\":2,\"theta_rad\":0}\n";
        let err = ingest(&paths(dir.path(), IMAGES, marks, CANDS)).unwrap_err();
        assert!(err.to_string().contains("roster"), "{err}");
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cands = "image_id,candidate_id,x_mm,y_mm,f\n1,10,0,0,1\n2,10,0,0,1\n";
        assert!(ingest(&paths(dir.path(), IMAGES, "", cands)).is_err());
        let images = "{\"image_id\":1,\"reader_ids\":[1]}\n{\"image_id\":1,\"reader_ids\":[2]}\n";
        assert!(ingest(&paths(dir.path(), images, "", CANDS)).is_err());
    }

    #[test]
    fn model_file_round_trip_omits_zeros() {
        let names = vec!["a".to_string(), "b".to_string(), "c".to_string()];
        let fit = FitResult {
            weights: ModelWeights::from_parts(
                vec![0.5, 0.0, -1.25, 0.1],
                vec![true, true, true, false],
            )
            .unwrap(),
            objective_value: 0.3,
            iterations: 12,
            converged: true,
            nnz: 2,
            history: Vec::new(),
        };
        let model =
            ModelFile::from_fit(&fit, &names, 0.06, Normalization::PerSample, true).unwrap();
        assert_eq!(model.weights.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.write(&path).unwrap();
        let back = ModelFile::read(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.model_weights().unwrap(), fit.weights);
    }
}
