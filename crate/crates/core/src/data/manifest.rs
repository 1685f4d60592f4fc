use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 5] = ["path", "modality", "specialty", "label", "split"];

/// Imaging modality tag. `SYN<n>` tags are used by the synthetic corpus.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Cxr,
    Ct,
    Us,
    Cfp,
    Oct,
    Path,
    Derm,
    Synthetic(u8),
}

impl Modality {
    /// Modalities stored as single-channel images.
    pub fn is_grayscale(self) -> bool {
        matches!(self, Modality::Cxr | Modality::Ct | Modality::Us | Modality::Oct)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Modality::Cxr => f.write_str("CXR"),
            Modality::Ct => f.write_str("CT"),
            Modality::Us => f.write_str("US"),
            Modality::Cfp => f.write_str("CFP"),
            Modality::Oct => f.write_str("OCT"),
            Modality::Path => f.write_str("PATH"),
            Modality::Derm => f.write_str("DERM"),
            Modality::Synthetic(n) => write!(f, "SYN{n}"),
        }
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "CXR" => Modality::Cxr,
            "CT" => Modality::Ct,
            "US" => Modality::Us,
            "CFP" => Modality::Cfp,
            "OCT" => Modality::Oct,
            "PATH" => Modality::Path,
            "DERM" => Modality::Derm,
            _ => match s.strip_prefix("SYN").map(str::parse::<u8>) {
                Some(Ok(n)) => Modality::Synthetic(n),
                _ => return Err(format!("unknown modality tag `{s}`")),
            },
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(format!("unknown split `{s}` (expected train, val or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    /// Resolved against the manifest's directory.
    pub image_path: PathBuf,
    pub modality: Modality,
    pub specialty: String,
    pub label: Option<usize>,
    pub split: Split,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ManifestOptions {
    /// When set, labels must lie in `0..num_classes`.
    pub num_classes: Option<usize>,
    /// Skip the image-existence check (used when manifests describe
    /// in-memory data).
    pub skip_file_check: bool,
}

/// Reads a manifest in file order. Relative image paths resolve against
/// the manifest's own directory.
pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    load_manifest_with(path, ManifestOptions::default())
}

pub fn load_manifest_with(path: &Path, opts: ManifestOptions) -> Result<Vec<SampleRecord>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let err = |line: usize, msg: String| Error::Manifest { path: path.to_path_buf(), line, msg };

    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header = reader.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(MANIFEST_HEADER) {
        return Err(err(1, format!("header must be `{}`", MANIFEST_HEADER.join(","))));
    }

    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            err(line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        if field(0).is_empty() {
            return Err(err(line, "empty image path".into()));
        }
        let modality = field(1).parse::<Modality>().map_err(|m| err(line, m))?;
        let label = match field(3) {
            "" => None,
            s => {
                let v = s.parse::<usize>().map_err(|_| err(line, format!("label `{s}` is not a class index")))?;
                if let Some(n) = opts.num_classes {
                    if v >= n {
                        return Err(err(line, format!("label {v} out of range for {n} classes")));
                    }
                }
                Some(v)
            }
        };
        let split = field(4).parse::<Split>().map_err(|m| err(line, m))?;
        let image_path = base.join(field(0));
        if !opts.skip_file_check && !image_path.is_file() {
            return Err(err(line, format!("image `{}` does not exist", image_path.display())));
        }
        out.push(SampleRecord { image_path, modality, specialty: field(2).to_string(), label, split });
    }
    Ok(out)
}

/// Writes records with paths relative to `dir` when possible.
pub fn write_manifest(path: &Path, dir: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(MANIFEST_HEADER).map_err(to_err)?;
    for r in records {
        let rel = r.image_path.strip_prefix(dir).unwrap_or(&r.image_path);
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([
            rel.to_string_lossy().as_ref(),
            &r.modality.to_string(),
            &r.specialty,
            &label,
            &r.split.to_string(),
        ])
        .map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}

/// Number of classes implied by the labels present (max label + 1).
pub fn num_classes(records: &[SampleRecord]) -> Option<usize> {
    records.iter().filter_map(|r| r.label).max().map(|m| m + 1)
}
