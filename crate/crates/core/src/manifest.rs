//! Sample catalog: loading, writing, class counts and the seeded
//! stratified split.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::label::{ClassLabel, NUM_CLASSES};
use crate::rng;

pub const MANIFEST_HEADER: &str = "image_path,mask_path,label,split";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub label: ClassLabel,
    pub split: Option<Split>,
}

/// Ordered catalog of samples. Relative paths in records are resolved
/// against `root`, the directory the manifest was read from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<SampleRecord>,
    pub source_id: String,
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<SampleRecord>, source_id: impl Into<String>) -> Result<Self> {
        let source_id = source_id.into();
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if r.image_path.as_os_str().is_empty() {
                return Err(Error::MalformedRow {
                    source_id,
                    row: i + 1,
                    message: "empty image_path".into(),
                });
            }
            if !seen.insert(r.image_path.clone()) {
                return Err(Error::DuplicateImage {
                    source_id,
                    row: i + 1,
                    path: r.image_path.display().to_string(),
                });
            }
        }
        Ok(Self {
            records,
            source_id,
            root: PathBuf::from("."),
        })
    }

    pub fn empty(source_id: impl Into<String>) -> Self {
        Self {
            records: Vec::new(),
            source_id: source_id.into(),
            root: PathBuf::from("."),
        }
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn image_path(&self, index: usize) -> PathBuf {
        self.resolve(&self.records[index].image_path)
    }

    pub fn mask_path(&self, index: usize) -> Option<PathBuf> {
        self.records[index]
            .mask_path
            .as_deref()
            .map(|p| self.resolve(p))
    }

    /// Serialized form, header first. Paths are written as stored and
    /// quoted when they contain delimiters.
    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let row_err = "writing to memory cannot fail";
        w.write_record(MANIFEST_HEADER.split(',')).expect(row_err);
        for r in &self.records {
            let mask = r
                .mask_path
                .as_ref()
                .map(|m| m.to_string_lossy())
                .unwrap_or_default();
            w.write_record([
                r.image_path.to_string_lossy().as_ref(),
                mask.as_ref(),
                r.label.code(),
                r.split.map_or("", Split::as_str),
            ])
            .expect(row_err);
        }
        String::from_utf8(w.into_inner().expect(row_err)).expect("input strings are UTF-8")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    parse_manifest(&text, &path.display().to_string()).map(|m| m.with_root(root))
}

pub fn parse_manifest(text: &str, source_id: &str) -> Result<Manifest> {
    let malformed = |row: usize, message: String| Error::MalformedRow {
        source_id: source_id.to_string(),
        row,
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    let mut header_seen = false;
    for result in reader.records() {
        let fields = result.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            malformed(row, e.to_string())
        })?;
        let row = fields.position().map_or(0, |p| p.line() as usize);
        if fields.iter().all(str::is_empty) {
            continue;
        }
        if !header_seen {
            if fields.iter().collect::<Vec<_>>().join(",") != MANIFEST_HEADER {
                return Err(malformed(
                    row,
                    format!(
                        "expected header {MANIFEST_HEADER:?}, found {:?}",
                        fields.as_slice()
                    ),
                ));
            }
            header_seen = true;
            continue;
        }
        if fields.len() != 4 {
            return Err(malformed(
                row,
                format!("expected 4 comma-separated fields, found {}", fields.len()),
            ));
        }
        let image = &fields[0];
        if image.is_empty() {
            return Err(malformed(row, "empty image_path".into()));
        }
        let mask = &fields[1];
        let label = fields[2]
            .parse::<ClassLabel>()
            .map_err(|_| Error::UnknownLabelInRow {
                source_id: source_id.to_string(),
                row,
                code: fields[2].to_string(),
            })?;
        let split = match &fields[3] {
            "" => None,
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            other => return Err(malformed(row, format!("invalid split tag {other:?}"))),
        };
        records.push((
            row,
            SampleRecord {
                image_path: PathBuf::from(image),
                mask_path: (!mask.is_empty()).then(|| PathBuf::from(mask)),
                label,
                split,
            },
        ));
    }
    if !header_seen {
        return Err(malformed(1, "missing header line".into()));
    }

    let mut seen = HashSet::new();
    for (row, r) in &records {
        if !seen.insert(r.image_path.clone()) {
            return Err(Error::DuplicateImage {
                source_id: source_id.to_string(),
                row: *row,
                path: r.image_path.display().to_string(),
            });
        }
    }

    Ok(Manifest {
        records: records.into_iter().map(|(_, r)| r).collect(),
        source_id: source_id.to_string(),
        root: PathBuf::from("."),
    })
}

/// Per-class record counts. Every label is present, possibly with 0.
pub fn class_distribution(m: &Manifest) -> BTreeMap<ClassLabel, usize> {
    let mut counts: BTreeMap<ClassLabel, usize> = ClassLabel::ALL.iter().map(|&c| (c, 0)).collect();
    for r in &m.records {
        *counts.entry(r.label).or_insert(0) += 1;
    }
    counts
}

pub fn class_counts(m: &Manifest) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for r in &m.records {
        counts[r.label.index()] += 1;
    }
    counts
}

/// Number of test records drawn from a class of `n` records:
/// round-half-up of `fraction * n`. A small slack absorbs representation
/// error, e.g. `0.3 * 765` evaluates just under 229.5.
pub fn test_count(fraction: f64, n: usize) -> usize {
    let exact = fraction * n as f64;
    let k = (exact + 0.5 + 1e-9).floor() as usize;
    k.min(n)
}

/// Seeded per-class shuffle, then the first `test_count` records of each
/// class go to test. Both outputs keep the input order and carry split tags.
pub fn stratified_split(
    m: &Manifest,
    test_fraction: f64,
    seed: u64,
) -> Result<(Manifest, Manifest)> {
    if !(0.0..=1.0).contains(&test_fraction) || test_fraction.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "test_fraction must be in [0, 1], got {test_fraction}"
        )));
    }

    let mut is_test = vec![false; m.records.len()];
    for class in ClassLabel::ALL {
        let mut members: Vec<usize> = m
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == class)
            .map(|(i, _)| i)
            .collect();
        let k = test_count(test_fraction, members.len());
        let mut rng = rng::stream(seed, &[rng::streams::SPLIT, class.index() as u64]);
        members.shuffle(&mut rng);
        for &i in &members[..k] {
            is_test[i] = true;
        }
    }

    let mut train = Vec::new();
    let mut test = Vec::new();
    for (r, &t) in m.records.iter().zip(&is_test) {
        let mut r = r.clone();
        if t {
            r.split = Some(Split::Test);
            test.push(r);
        } else {
            r.split = Some(Split::Train);
            train.push(r);
        }
    }
    let train = Manifest {
        records: train,
        source_id: format!("{}#train", m.source_id),
        root: m.root.clone(),
    };
    let test = Manifest {
        records: test,
        source_id: format!("{}#test", m.source_id),
        root: m.root.clone(),
    };
    Ok((train, test))
}
