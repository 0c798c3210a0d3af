//! On-disk container for paired language/visual features.
//!
//! A dataset is a directory holding `manifest.json` plus two packed blobs,
//! `lang.f32` and `vis.f32`, of little-endian IEEE-754 32-bit floats. The
//! manifest lists records in blob order; offsets are implied by cumulative
//! `token_count`, so the files carry no per-record framing. Loading validates
//! and rejects malformed input rather than repairing it.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor2D};

/// Magic tag every manifest must carry.
pub const MAGIC: &str = "XMPB";
/// Only supported container version.
pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LANG_BLOB_FILE: &str = "lang.f32";
pub const VIS_BLOB_FILE: &str = "vis.f32";

/// Dataset-wide metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetHeader {
    pub format_version: u32,
    /// Width of each language token vector.
    pub d_l: usize,
    /// Width of each visual vector.
    pub d_v: usize,
    pub record_count: usize,
    /// Free-text note about which extractor produced the features.
    pub source_tag: String,
    /// Fraction of context left visible, for masking-sweep files.
    pub context_visibility: Option<f64>,
}

/// One paired (language sequence, visual vector) sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub record_id: u64,
    /// Object category `o`.
    pub category_id: u64,
    pub image_id: u64,
    pub caption_id: u64,
    /// Number of language token vectors; always at least 1.
    pub token_count: usize,
    pub adjective_count: u32,
    /// Float offset of the first token in the language blob.
    pub lang_offset: usize,
    /// Float offset of the vector in the visual blob.
    pub vis_offset: usize,
}

/// A fully loaded, immutable dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<PairRecord>,
    pub lang_blob: Vec<f32>,
    pub vis_blob: Vec<f32>,
    by_id: HashMap<u64, usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    magic: String,
    version: u32,
    #[serde(rename = "d_L")]
    d_l: usize,
    #[serde(rename = "d_V")]
    d_v: usize,
    record_count: usize,
    source_tag: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    context_visibility: Option<f64>,
    records: Vec<ManifestRecord>,
}

#[derive(Serialize, Deserialize)]
struct ManifestRecord {
    record_id: u64,
    category_id: u64,
    image_id: u64,
    caption_id: u64,
    token_count: usize,
    adjective_count: u32,
}

/// A single rule breach found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// Two records claim the same (image, category) pair.
    DuplicatePair {
        image_id: u64,
        category_id: u64,
        record_ids: Vec<u64>,
    },
    DuplicateRecordId { record_id: u64 },
    /// Record ids must cover 0..record_count without holes.
    SparseRecordIds { missing: u64 },
    ZeroTokens { record_id: u64 },
    /// Claimed token counts disagree with the language blob extent.
    LangExtent { claimed_floats: usize, actual_floats: usize },
    /// Visual blob length disagrees with record_count * d_V.
    VisExtent { claimed_floats: usize, actual_floats: usize },
    NonFinite { record_id: u64, side: &'static str },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicatePair {
                image_id,
                category_id,
                record_ids,
            } => write!(
                f,
                "records {record_ids:?} share (image_id={image_id}, category_id={category_id})"
            ),
            Violation::DuplicateRecordId { record_id } => {
                write!(f, "record_id {record_id} appears more than once")
            }
            Violation::SparseRecordIds { missing } => {
                write!(f, "record ids are not dense: id {missing} is missing")
            }
            Violation::ZeroTokens { record_id } => {
                write!(f, "record {record_id} has token_count 0")
            }
            Violation::LangExtent {
                claimed_floats,
                actual_floats,
            } => write!(
                f,
                "language blob holds {actual_floats} floats but records claim {claimed_floats}"
            ),
            Violation::VisExtent {
                claimed_floats,
                actual_floats,
            } => write!(
                f,
                "visual blob holds {actual_floats} floats but records claim {claimed_floats}"
            ),
            Violation::NonFinite { record_id, side } => {
                write!(f, "record {record_id} has a non-finite {side} value")
            }
        }
    }
}

/// Outcome of [`validate_dataset`]: violations block writing; warnings do not.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

impl Dataset {
    /// Assembles a dataset from parts, recomputing blob offsets from record
    /// order. Rejects structurally broken input (bad counts, short blobs).
    pub fn from_parts(
        header: DatasetHeader,
        mut records: Vec<PairRecord>,
        lang_blob: Vec<f32>,
        vis_blob: Vec<f32>,
    ) -> Result<Self> {
        if header.d_l == 0 || header.d_v == 0 {
            return Err(Error::Format(format!(
                "feature widths must be positive (d_L={}, d_V={})",
                header.d_l, header.d_v
            )));
        }
        if header.record_count != records.len() {
            return Err(Error::Format(format!(
                "manifest claims {} records but lists {}",
                header.record_count,
                records.len()
            )));
        }
        let mut lang_offset = 0usize;
        for (i, rec) in records.iter_mut().enumerate() {
            if rec.token_count == 0 {
                return Err(Error::Data {
                    record_id: rec.record_id,
                    message: "token_count must be at least 1".into(),
                });
            }
            rec.lang_offset = lang_offset;
            rec.vis_offset = i * header.d_v;
            lang_offset += rec.token_count * header.d_l;
        }
        if lang_blob.len() != lang_offset {
            return Err(Error::Format(format!(
                "language blob holds {} floats but records claim {}",
                lang_blob.len(),
                lang_offset
            )));
        }
        if vis_blob.len() != records.len() * header.d_v {
            return Err(Error::Format(format!(
                "visual blob holds {} floats but records claim {}",
                vis_blob.len(),
                records.len() * header.d_v
            )));
        }
        for rec in &records {
            let lang = &lang_blob[rec.lang_offset..rec.lang_offset + rec.token_count * header.d_l];
            if lang.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data {
                    record_id: rec.record_id,
                    message: "non-finite language feature".into(),
                });
            }
            let vis = &vis_blob[rec.vis_offset..rec.vis_offset + header.d_v];
            if vis.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data {
                    record_id: rec.record_id,
                    message: "non-finite visual feature".into(),
                });
            }
        }
        let mut by_id = HashMap::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            if by_id.insert(rec.record_id, i).is_some() {
                return Err(Error::Data {
                    record_id: rec.record_id,
                    message: "duplicate record_id".into(),
                });
            }
        }
        Ok(Dataset {
            header,
            records,
            lang_blob,
            vis_blob,
            by_id,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Index of a record by id.
    pub fn index_of(&self, record_id: u64) -> Result<usize> {
        self.by_id.get(&record_id).copied().ok_or(Error::Data {
            record_id,
            message: "record not present in dataset".into(),
        })
    }

    /// Flat language features of one record: `token_count * d_L` floats.
    pub fn lang(&self, index: usize) -> &[f32] {
        let rec = &self.records[index];
        &self.lang_blob[rec.lang_offset..rec.lang_offset + rec.token_count * self.header.d_l]
    }

    /// Visual vector of one record: `d_V` floats.
    pub fn vis(&self, index: usize) -> &[f32] {
        let rec = &self.records[index];
        &self.vis_blob[rec.vis_offset..rec.vis_offset + self.header.d_v]
    }

    /// Language sequence as a `token_count x d_L` tensor in precision `F`.
    pub fn lang_tensor<F: Scalar>(&self, index: usize) -> Tensor2D<F> {
        let rec = &self.records[index];
        let data = self.lang(index).iter().map(|&v| F::from_f64(v as f64)).collect();
        Tensor2D::from_vec(rec.token_count, self.header.d_l, data)
            .expect("record extents are validated at construction")
    }

    /// Visual vector in precision `F`.
    pub fn vis_vector<F: Scalar>(&self, index: usize) -> Vec<F> {
        self.vis(index).iter().map(|&v| F::from_f64(v as f64)).collect()
    }

    /// Sorted list of distinct category ids.
    pub fn category_ids(&self) -> Vec<u64> {
        let mut ids: Vec<u64> = self.records.iter().map(|r| r.category_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Replaces the visual vector of `index` in a cloned blob. Used by the
    /// control-permutation view; the receiver itself stays untouched.
    pub fn with_visual_rows(&self, replacement: Vec<f32>) -> Result<Dataset> {
        if replacement.len() != self.vis_blob.len() {
            return Err(Error::shape(
                "with_visual_rows",
                self.vis_blob.len().to_string(),
                replacement.len().to_string(),
            ));
        }
        Dataset::from_parts(
            self.header.clone(),
            self.records.clone(),
            self.lang_blob.clone(),
            replacement,
        )
    }
}

/// Checks the §-level rules that loads and writes must uphold: pair
/// uniqueness, dense record ids, positive token counts, blob extents, and
/// finiteness. Empty categories inside a contiguous id range are warnings.
pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut report = ValidationReport::default();
    let header = &dataset.header;

    let mut seen_ids: HashMap<u64, u64> = HashMap::new();
    let mut pairs: HashMap<(u64, u64), Vec<u64>> = HashMap::new();
    let mut claimed_lang = 0usize;
    for rec in &dataset.records {
        if rec.token_count == 0 {
            report.violations.push(Violation::ZeroTokens {
                record_id: rec.record_id,
            });
        }
        claimed_lang += rec.token_count * header.d_l;
        *seen_ids.entry(rec.record_id).or_insert(0) += 1;
        pairs
            .entry((rec.image_id, rec.category_id))
            .or_default()
            .push(rec.record_id);
    }
    for (record_id, count) in &seen_ids {
        if *count > 1 {
            report
                .violations
                .push(Violation::DuplicateRecordId { record_id: *record_id });
        }
    }
    for id in 0..dataset.records.len() as u64 {
        if !seen_ids.contains_key(&id) {
            report.violations.push(Violation::SparseRecordIds { missing: id });
            break;
        }
    }
    for ((image_id, category_id), mut ids) in pairs {
        if ids.len() > 1 {
            ids.sort_unstable();
            report.violations.push(Violation::DuplicatePair {
                image_id,
                category_id,
                record_ids: ids,
            });
        }
    }
    if claimed_lang != dataset.lang_blob.len() {
        report.violations.push(Violation::LangExtent {
            claimed_floats: claimed_lang,
            actual_floats: dataset.lang_blob.len(),
        });
    }
    let claimed_vis = dataset.records.len() * header.d_v;
    if claimed_vis != dataset.vis_blob.len() {
        report.violations.push(Violation::VisExtent {
            claimed_floats: claimed_vis,
            actual_floats: dataset.vis_blob.len(),
        });
    }
    for rec in &dataset.records {
        let lang_end = rec.lang_offset + rec.token_count * header.d_l;
        if lang_end <= dataset.lang_blob.len()
            && dataset.lang_blob[rec.lang_offset..lang_end]
                .iter()
                .any(|v| !v.is_finite())
        {
            report.violations.push(Violation::NonFinite {
                record_id: rec.record_id,
                side: "language",
            });
        }
        let vis_end = rec.vis_offset + header.d_v;
        if vis_end <= dataset.vis_blob.len()
            && dataset.vis_blob[rec.vis_offset..vis_end]
                .iter()
                .any(|v| !v.is_finite())
        {
            report.violations.push(Violation::NonFinite {
                record_id: rec.record_id,
                side: "visual",
            });
        }
    }
    // Gaps in an otherwise contiguous category range usually mean an upstream
    // filter dropped everything in a category; worth flagging, not fatal.
    let cats = dataset.category_ids();
    if let (Some(&lo), Some(&hi)) = (cats.first(), cats.last()) {
        let span = (hi - lo + 1) as usize;
        if span != cats.len() {
            report.warnings.push(format!(
                "category ids span {lo}..={hi} but only {} are populated",
                cats.len()
            ));
        }
    }
    report
}

/// Reads and fully validates a dataset directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let (dataset, report) = load_dataset_lenient(dir)?;
    if let Some(first) = report.violations.first() {
        return Err(Error::Format(format!(
            "dataset fails validation with {} violation(s), first: {first}",
            report.violations.len()
        )));
    }
    Ok(dataset)
}

/// Reads a dataset directory and returns the validation findings alongside
/// it instead of failing on them. Structural problems that prevent even
/// assembling the in-memory form (unreadable files, wrong blob sizes,
/// duplicate ids, non-finite features) are still hard errors.
pub fn load_dataset_lenient(dir: &Path) -> Result<(Dataset, ValidationReport)> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest_text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&manifest_text)?;
    if manifest.magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?} in {} (expected {MAGIC:?})",
            manifest.magic,
            manifest_path.display()
        )));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {} (expected {FORMAT_VERSION})",
            manifest.version
        )));
    }
    if manifest.d_l == 0 || manifest.d_v == 0 {
        return Err(Error::Format(format!(
            "feature widths must be positive (d_L={}, d_V={})",
            manifest.d_l, manifest.d_v
        )));
    }
    if manifest.record_count != manifest.records.len() {
        return Err(Error::Format(format!(
            "manifest claims {} records but lists {}",
            manifest.record_count,
            manifest.records.len()
        )));
    }

    let expected_lang: usize = manifest
        .records
        .iter()
        .map(|r| r.token_count * manifest.d_l)
        .sum();
    let expected_vis = manifest.records.len() * manifest.d_v;
    let lang_blob = read_blob(&dir.join(LANG_BLOB_FILE), expected_lang)?;
    let vis_blob = read_blob(&dir.join(VIS_BLOB_FILE), expected_vis)?;

    let header = DatasetHeader {
        format_version: manifest.version,
        d_l: manifest.d_l,
        d_v: manifest.d_v,
        record_count: manifest.record_count,
        source_tag: manifest.source_tag,
        context_visibility: manifest.context_visibility,
    };
    let records = manifest
        .records
        .into_iter()
        .map(|r| PairRecord {
            record_id: r.record_id,
            category_id: r.category_id,
            image_id: r.image_id,
            caption_id: r.caption_id,
            token_count: r.token_count,
            adjective_count: r.adjective_count,
            lang_offset: 0,
            vis_offset: 0,
        })
        .collect();
    let dataset = Dataset::from_parts(header, records, lang_blob, vis_blob)?;
    let report = validate_dataset(&dataset);
    Ok((dataset, report))
}

/// Writes the three container files. Refuses datasets that fail validation.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<Vec<PathBuf>> {
    let report = validate_dataset(dataset);
    if let Some(first) = report.violations.first() {
        return Err(Error::Format(format!(
            "refusing to write: {} validation violation(s), first: {first}",
            report.violations.len()
        )));
    }
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        magic: MAGIC.to_string(),
        version: FORMAT_VERSION,
        d_l: dataset.header.d_l,
        d_v: dataset.header.d_v,
        record_count: dataset.records.len(),
        source_tag: dataset.header.source_tag.clone(),
        context_visibility: dataset.header.context_visibility,
        records: dataset
            .records
            .iter()
            .map(|r| ManifestRecord {
                record_id: r.record_id,
                category_id: r.category_id,
                image_id: r.image_id,
                caption_id: r.caption_id,
                token_count: r.token_count,
                adjective_count: r.adjective_count,
            })
            .collect(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let lang_path = dir.join(LANG_BLOB_FILE);
    let vis_path = dir.join(VIS_BLOB_FILE);
    let mut manifest_text = serde_json::to_string_pretty(&manifest)?;
    manifest_text.push('\n');
    fs::write(&manifest_path, manifest_text)?;
    fs::write(&lang_path, floats_to_le_bytes(&dataset.lang_blob))?;
    fs::write(&vis_path, floats_to_le_bytes(&dataset.vis_blob))?;
    Ok(vec![manifest_path, lang_path, vis_path])
}

fn read_blob(path: &Path, expected_floats: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected_floats * 4 {
        return Err(Error::Truncated {
            path: path.display().to_string(),
            expected: (expected_floats * 4) as u64,
            found: bytes.len() as u64,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn floats_to_le_bytes(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Incrementally assembles a dataset, assigning dense record ids in push
/// order and keeping blob offsets consistent.
#[derive(Debug)]
pub struct DatasetBuilder {
    d_l: usize,
    d_v: usize,
    source_tag: String,
    context_visibility: Option<f64>,
    records: Vec<PairRecord>,
    lang_blob: Vec<f32>,
    vis_blob: Vec<f32>,
}

impl DatasetBuilder {
    pub fn new(d_l: usize, d_v: usize, source_tag: impl Into<String>) -> Self {
        DatasetBuilder {
            d_l,
            d_v,
            source_tag: source_tag.into(),
            context_visibility: None,
            records: Vec::new(),
            lang_blob: Vec::new(),
            vis_blob: Vec::new(),
        }
    }

    pub fn context_visibility(mut self, visibility: f64) -> Self {
        self.context_visibility = Some(visibility);
        self
    }

    /// Appends one pair. `lang` is the flat token sequence
    /// (`token_count * d_L` floats); `vis` has exactly `d_V` floats.
    pub fn push(
        &mut self,
        category_id: u64,
        image_id: u64,
        caption_id: u64,
        adjective_count: u32,
        lang: &[f32],
        vis: &[f32],
    ) -> Result<u64> {
        if lang.is_empty() || lang.len() % self.d_l != 0 {
            return Err(Error::shape(
                "DatasetBuilder::push",
                format!("nonzero multiple of d_L={}", self.d_l),
                lang.len().to_string(),
            ));
        }
        if vis.len() != self.d_v {
            return Err(Error::shape(
                "DatasetBuilder::push",
                format!("d_V={}", self.d_v),
                vis.len().to_string(),
            ));
        }
        let record_id = self.records.len() as u64;
        self.records.push(PairRecord {
            record_id,
            category_id,
            image_id,
            caption_id,
            token_count: lang.len() / self.d_l,
            adjective_count,
            lang_offset: self.lang_blob.len(),
            vis_offset: self.vis_blob.len(),
        });
        self.lang_blob.extend_from_slice(lang);
        self.vis_blob.extend_from_slice(vis);
        Ok(record_id)
    }

    pub fn finish(self) -> Result<Dataset> {
        let header = DatasetHeader {
            format_version: FORMAT_VERSION,
            d_l: self.d_l,
            d_v: self.d_v,
            record_count: self.records.len(),
            source_tag: self.source_tag,
            context_visibility: self.context_visibility,
        };
        Dataset::from_parts(header, self.records, self.lang_blob, self.vis_blob)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small deterministic dataset: `n` records over 3 categories with
    /// varying token counts.
    fn sample_dataset(n: usize, d_l: usize, d_v: usize) -> Dataset {
        let mut builder = DatasetBuilder::new(d_l, d_v, "unit-test");
        for i in 0..n {
            let token_count = 1 + i % 3;
            let lang: Vec<f32> = (0..token_count * d_l)
                .map(|j| (i * 31 + j) as f32 * 0.01 - 0.5)
                .collect();
            let vis: Vec<f32> = (0..d_v).map(|j| (i * 17 + j) as f32 * 0.02 - 1.0).collect();
            builder
                .push((i % 3) as u64, i as u64, (i * 2) as u64, (i % 2) as u32, &lang, &vis)
                .unwrap();
        }
        builder.finish().unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let original = sample_dataset(9, 4, 6);
        write_dataset(&original, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();

        assert_eq!(original.header, loaded.header);
        assert_eq!(original.records, loaded.records);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&original.lang_blob), bits(&loaded.lang_blob));
        assert_eq!(bits(&original.vis_blob), bits(&loaded.vis_blob));
    }

    #[test]
    fn writing_twice_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let dataset = sample_dataset(5, 3, 4);
        write_dataset(&dataset, a.path()).unwrap();
        write_dataset(&dataset, b.path()).unwrap();
        for file in [MANIFEST_FILE, LANG_BLOB_FILE, VIS_BLOB_FILE] {
            assert_eq!(
                fs::read(a.path().join(file)).unwrap(),
                fs::read(b.path().join(file)).unwrap(),
                "{file} differs between identical writes"
            );
        }
    }

    #[test]
    fn blob_sizes_follow_the_format_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = sample_dataset(8, 4, 6);
        write_dataset(&dataset, dir.path()).unwrap();
        let total_tokens: usize = dataset.records.iter().map(|r| r.token_count).sum();
        let lang_len = fs::metadata(dir.path().join(LANG_BLOB_FILE)).unwrap().len();
        let vis_len = fs::metadata(dir.path().join(VIS_BLOB_FILE)).unwrap().len();
        assert_eq!(lang_len, 4 * 4 * total_tokens as u64);
        assert_eq!(vis_len, 4 * 6 * 8);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = DatasetBuilder::new(3, 5, "empty").finish().unwrap();
        write_dataset(&dataset, dir.path()).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.len(), 0);
        assert_eq!(loaded.header.record_count, 0);
    }

    #[test]
    fn shortened_visual_blob_is_a_truncation_error() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&sample_dataset(4, 3, 4), dir.path()).unwrap();
        let path = dir.path().join(VIS_BLOB_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&path, bytes).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Truncated { expected, found, .. }) => {
                assert_eq!(expected, 4 * 4 * 4);
                assert_eq!(found, 4 * 4 * 4 - 4);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn planted_nan_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let dataset = sample_dataset(9, 3, 4);
        write_dataset(&dataset, dir.path()).unwrap();
        // Overwrite the first float of record 7's visual vector with NaN.
        let path = dir.path().join(VIS_BLOB_FILE);
        let mut bytes = fs::read(&path).unwrap();
        let offset = dataset.records[7].vis_offset * 4;
        bytes[offset..offset + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&path, bytes).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Data { record_id, .. }) => assert_eq!(record_id, 7),
            other => panic!("expected data error for record 7, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&sample_dataset(2, 3, 4), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("XMPB", "NOPE");
        fs::write(&path, text).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Format(msg)) => assert!(msg.contains("magic"), "{msg}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_version_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&sample_dataset(2, 3, 4), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)
            .unwrap()
            .replace("\"version\": 1", "\"version\": 99");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Format(_))));
    }

    #[test]
    fn duplicate_pair_violation_names_both_records() {
        let mut dataset = sample_dataset(6, 3, 4);
        // Force records 1 and 4 onto the same (image, category) pair.
        dataset.records[4].image_id = dataset.records[1].image_id;
        dataset.records[4].category_id = dataset.records[1].category_id;
        let report = validate_dataset(&dataset);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::DuplicatePair { record_ids, .. }
                if record_ids == &vec![1, 4])));
    }

    #[test]
    fn token_count_lie_is_an_extent_violation() {
        let mut dataset = sample_dataset(4, 3, 4);
        dataset.records[2].token_count += 1;
        let report = validate_dataset(&dataset);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::LangExtent { .. })));
    }

    #[test]
    fn sparse_record_ids_are_flagged() {
        let mut dataset = sample_dataset(4, 3, 4);
        dataset.records[1].record_id = 17;
        let report = validate_dataset(&dataset);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::SparseRecordIds { missing: 1 })));
    }

    #[test]
    fn clean_dataset_validates_clean() {
        let report = validate_dataset(&sample_dataset(12, 3, 4));
        assert!(report.is_clean(), "{:?}", report.violations);
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn category_gap_is_a_warning_not_a_violation() {
        let mut builder = DatasetBuilder::new(2, 2, "gap");
        for i in 0..4u64 {
            let cat = if i < 2 { 0 } else { 5 };
            builder
                .push(cat, i, i, 0, &[0.1, 0.2], &[0.3, 0.4])
                .unwrap();
        }
        let dataset = builder.finish().unwrap();
        let report = validate_dataset(&dataset);
        assert!(report.is_clean());
        assert_eq!(report.warnings.len(), 1);
    }

    #[test]
    fn write_refuses_invalid_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let mut dataset = sample_dataset(4, 3, 4);
        dataset.records[3].image_id = dataset.records[0].image_id;
        dataset.records[3].category_id = dataset.records[0].category_id;
        assert!(matches!(
            write_dataset(&dataset, dir.path()),
            Err(Error::Format(_))
        ));
        assert!(!dir.path().join(MANIFEST_FILE).exists());
    }
}
