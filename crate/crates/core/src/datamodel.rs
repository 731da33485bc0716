//! Dataset manifests, annotations and persisted detection dumps.
//!
//! Every file is line-delimited JSON: a header record
//! `{"format_version":1,"name":...}` followed by one record per image.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const FORMAT_VERSION: u32 = 1;

/// One fully annotated character.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharAnnotation {
    pub bbox: BBox,
    /// Provenance only; detection is binary text/background.
    pub label: Option<char>,
}

/// Word or text-line boxes attached to an image.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeakAnnotation {
    pub boxes: Vec<BBox>,
}

/// A detector-proposed box with its text confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharCandidate {
    pub bbox: BBox,
    pub score: f64,
}

impl CharCandidate {
    pub fn new(bbox: BBox, score: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(Error::validation(format!("score {score} outside [0, 1]")));
        }
        Ok(Self { bbox, score })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Full,
    Weak,
    None,
}

/// Which mining filter produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTier {
    Semi,
    Weak,
}

/// Origin of a record added by mining.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_manifest: String,
    pub source_tier: SourceTier,
    pub round: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub tier: Tier,
    pub chars: Vec<CharAnnotation>,
    pub words: WeakAnnotation,
    pub provenance: Option<Provenance>,
}

impl ImageRecord {
    pub fn char_boxes(&self) -> Vec<BBox> {
        self.chars.iter().map(|c| c.bbox).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub name: String,
    pub version: String,
    pub records: Vec<ImageRecord>,
    /// Directory relative image paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

/// What `load_manifest` had to fix up.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub clipped: usize,
    pub dropped: usize,
    pub warnings: Vec<String>,
}

impl LoadReport {
    pub fn warning_count(&self) -> usize {
        self.warnings.len()
    }
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            version: "1".to_string(),
            records: Vec::new(),
            base_dir: None,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.records.iter().find(|r| r.image_id == image_id)
    }

    pub fn resolve_path(&self, record: &ImageRecord) -> PathBuf {
        match &self.base_dir {
            Some(dir) if record.image_path.is_relative() => dir.join(&record.image_path),
            _ => record.image_path.clone(),
        }
    }

    /// Checks id uniqueness, tier/annotation consistency and box bounds.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate image_id {:?} in manifest {:?}",
                    r.image_id, self.name
                )));
            }
            check_tier(r)?;
            let (w, h) = (r.width as f64, r.height as f64);
            let inside = r.chars.iter().map(|c| &c.bbox).chain(&r.words.boxes);
            for b in inside {
                if !b.is_within(w, h) {
                    return Err(Error::validation(format!(
                        "box {b:?} outside image {}",
                        r.image_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Total number of character annotations.
    pub fn char_count(&self) -> usize {
        self.records.iter().map(|r| r.chars.len()).sum()
    }

    /// SHA-256 of the serialized name, version and records. The base
    /// directory is excluded so a moved dataset keeps its digest.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        let header = Header {
            format_version: FORMAT_VERSION,
            name: self.name.clone(),
            version: Some(self.version.clone()),
        };
        h.update(serde_json::to_vec(&header).expect("header serializes"));
        for r in &self.records {
            h.update(b"\n");
            h.update(serde_json::to_vec(&to_raw(r)).expect("record serializes"));
        }
        hex::encode(h.finalize())
    }
}

fn check_tier(r: &ImageRecord) -> Result<()> {
    // Full-tier records may carry word boxes: held-out test sets use them as
    // line-level ground truth.
    let bad = match r.tier {
        Tier::Full => false,
        Tier::Weak => !r.chars.is_empty(),
        Tier::None => !r.chars.is_empty() || !r.words.boxes.is_empty(),
    };
    if bad {
        return Err(Error::validation(format!(
            "record {} has annotations not allowed for tier {:?}",
            r.image_id, r.tier
        )));
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    version: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    image_id: String,
    image_path: PathBuf,
    width: u32,
    height: u32,
    tier: Tier,
    #[serde(default)]
    chars: Vec<[f64; 4]>,
    #[serde(default)]
    words: Vec<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<Option<char>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

struct JsonlReader {
    path: PathBuf,
    lines: std::iter::Enumerate<std::io::Lines<BufReader<File>>>,
}

impl JsonlReader {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            lines: BufReader::new(file).lines().enumerate(),
        })
    }

    fn format_err(&self, line: usize, message: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.clone(),
            line,
            message: message.into(),
        }
    }

    /// Next non-blank record with its 1-based line number.
    fn next_record<T: DeserializeOwned>(&mut self) -> Result<Option<(usize, T)>> {
        loop {
            let Some((idx, line)) = self.lines.next() else {
                return Ok(None);
            };
            let line = line.map_err(|e| Error::io(&self.path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let value = serde_json::from_str(&line)
                .map_err(|e| self.format_err(idx + 1, e.to_string()))?;
            return Ok(Some((idx + 1, value)));
        }
    }

    fn header(&mut self) -> Result<Header> {
        let (_, header): (usize, Header) = self
            .next_record()?
            .ok_or_else(|| self.format_err(1, "missing header record"))?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        Ok(header)
    }
}

fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(BufWriter::new(file))
}

fn write_json_line<T: Serialize>(w: &mut impl Write, value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

/// Reads a manifest, clipping out-of-bounds boxes and validating the rest.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(DatasetManifest, LoadReport)> {
    let path = path.as_ref();
    let mut reader = JsonlReader::open(path)?;
    let header = reader.header()?;
    let mut manifest = DatasetManifest {
        name: header.name,
        version: header.version.unwrap_or_else(|| "1".to_string()),
        records: Vec::new(),
        base_dir: path.parent().map(Path::to_path_buf),
    };
    let mut report = LoadReport::default();
    while let Some((line, raw)) = reader.next_record::<RawRecord>()? {
        let record = from_raw(raw, &mut report).map_err(|e| match e {
            Error::Validation(m) => reader.format_err(line, m),
            other => other,
        })?;
        manifest.records.push(record);
    }
    manifest.validate()?;
    Ok((manifest, report))
}

fn from_raw(raw: RawRecord, report: &mut LoadReport) -> Result<ImageRecord> {
    let (w, h) = (raw.width as f64, raw.height as f64);
    if raw.width == 0 || raw.height == 0 {
        return Err(Error::validation("image with zero extent"));
    }
    if let Some(labels) = &raw.labels {
        if labels.len() != raw.chars.len() {
            return Err(Error::validation("labels and chars differ in length"));
        }
    }
    let mut fix = |v: [f64; 4], what: &str| -> Result<Option<BBox>> {
        let b = BBox::from_array(v)?;
        if b.is_within(w, h) {
            return Ok(Some(b));
        }
        match b.clip(w, h) {
            Some(c) => {
                report.clipped += 1;
                report
                    .warnings
                    .push(format!("{}: {what} box {b:?} clipped to {c:?}", raw.image_id));
                Ok(Some(c))
            }
            None => {
                report.dropped += 1;
                report
                    .warnings
                    .push(format!("{}: {what} box {b:?} dropped", raw.image_id));
                Ok(None)
            }
        }
    };
    let mut chars = Vec::with_capacity(raw.chars.len());
    for (i, v) in raw.chars.iter().enumerate() {
        if let Some(bbox) = fix(*v, "char")? {
            let label = raw.labels.as_ref().and_then(|l| l[i]);
            chars.push(CharAnnotation { bbox, label });
        }
    }
    let mut words = Vec::with_capacity(raw.words.len());
    for v in &raw.words {
        if let Some(b) = fix(*v, "word")? {
            words.push(b);
        }
    }
    Ok(ImageRecord {
        image_id: raw.image_id,
        image_path: raw.image_path,
        width: raw.width,
        height: raw.height,
        tier: raw.tier,
        chars,
        words: WeakAnnotation { boxes: words },
        provenance: raw.provenance,
    })
}

fn to_raw(r: &ImageRecord) -> RawRecord {
    let labels = r
        .chars
        .iter()
        .any(|c| c.label.is_some())
        .then(|| r.chars.iter().map(|c| c.label).collect());
    RawRecord {
        image_id: r.image_id.clone(),
        image_path: r.image_path.clone(),
        width: r.width,
        height: r.height,
        tier: r.tier,
        chars: r.chars.iter().map(|c| c.bbox.to_array()).collect(),
        words: r.words.boxes.iter().map(BBox::to_array).collect(),
        labels,
        provenance: r.provenance.clone(),
    }
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    let mut w = create_writer(path)?;
    let header = Header {
        format_version: FORMAT_VERSION,
        name: manifest.name.clone(),
        version: Some(manifest.version.clone()),
    };
    write_json_line(&mut w, &header, path)?;
    for r in &manifest.records {
        write_json_line(&mut w, &to_raw(r), path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Candidates per image, in file order.
pub type DetectionSet = IndexMap<String, Vec<CharCandidate>>;

#[derive(Serialize, Deserialize)]
struct RawDetections {
    image_id: String,
    boxes: Vec<[f64; 5]>,
}

/// Streams a `detections.jsonl` dump one image at a time.
pub struct DetectionWriter {
    path: PathBuf,
    inner: BufWriter<File>,
}

impl DetectionWriter {
    pub fn create(path: impl AsRef<Path>, name: &str) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut inner = create_writer(&path)?;
        let header = Header {
            format_version: FORMAT_VERSION,
            name: name.to_string(),
            version: None,
        };
        write_json_line(&mut inner, &header, &path)?;
        Ok(Self { path, inner })
    }

    pub fn write(&mut self, image_id: &str, candidates: &[CharCandidate]) -> Result<()> {
        let raw = RawDetections {
            image_id: image_id.to_string(),
            boxes: candidates
                .iter()
                .map(|c| {
                    let [x0, y0, x1, y1] = c.bbox.to_array();
                    [x0, y0, x1, y1, c.score]
                })
                .collect(),
        };
        write_json_line(&mut self.inner, &raw, &self.path)
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn save_detections(path: impl AsRef<Path>, name: &str, dets: &DetectionSet) -> Result<()> {
    let mut w = DetectionWriter::create(path, name)?;
    for (id, cands) in dets {
        w.write(id, cands)?;
    }
    w.finish()
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<DetectionSet> {
    let path = path.as_ref();
    let mut reader = JsonlReader::open(path)?;
    reader.header()?;
    let mut out = DetectionSet::new();
    while let Some((line, raw)) = reader.next_record::<RawDetections>()? {
        let mut cands = Vec::with_capacity(raw.boxes.len());
        for [x0, y0, x1, y1, s] in raw.boxes {
            let c = BBox::new(x0, y0, x1, y1)
                .and_then(|b| CharCandidate::new(b, s))
                .map_err(|e| reader.format_err(line, e.to_string()))?;
            cands.push(c);
        }
        if out.insert(raw.image_id.clone(), cands).is_some() {
            return Err(reader.format_err(line, format!("duplicate image_id {}", raw.image_id)));
        }
    }
    Ok(out)
}

/// Writes a pretty JSON document (reports, metadata sidecars).
pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut w = create_writer(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Writes any header-prefixed JSONL file with caller-defined records.
pub(crate) fn write_jsonl<T: Serialize>(
    path: &Path,
    name: &str,
    records: impl IntoIterator<Item = T>,
) -> Result<()> {
    let mut w = create_writer(path)?;
    let header = Header {
        format_version: FORMAT_VERSION,
        name: name.to_string(),
        version: None,
    };
    write_json_line(&mut w, &header, path)?;
    for r in records {
        write_json_line(&mut w, &r, path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(String, Vec<T>)> {
    let mut reader = JsonlReader::open(path)?;
    let header = reader.header()?;
    let mut out = Vec::new();
    while let Some((_, r)) = reader.next_record()? {
        out.push(r);
    }
    Ok((header.name, out))
}
