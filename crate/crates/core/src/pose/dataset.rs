//! Manifest-plus-blob dataset files.
//!
//! A manifest starts with the line `schema_version: 1`, followed by one JSON
//! record per line: `{id, signer_id, glosses, frames, blob}`. The blob path is
//! relative to the manifest's directory and holds little-endian `f32`
//! triples `(x, y, valid)` laid out `T × 86 × 3`.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use cslr_tensor::Tensor;
use serde::{Deserialize, Serialize};

use super::{FeatureSequence, KeypointSequence, Point, NUM_LANDMARKS};
use crate::ctc::{GlossSequence, GlossVocabulary};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "schema_version: 1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }

    pub fn manifest_path(self, dir: &Path) -> PathBuf {
        dir.join(format!("{}.manifest", self.name()))
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A labelled keypoint recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sequence: KeypointSequence,
    pub glosses: Vec<String>,
    pub target: GlossSequence,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    signer_id: String,
    glosses: Vec<String>,
    frames: usize,
    blob: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRecord {
    id: String,
    signer_id: String,
    glosses: Vec<String>,
    frames: usize,
    dim: usize,
    blob: String,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Yields `(record_index, line)` for the record lines after the header.
fn records<'a>(path: &Path, text: &'a str) -> Result<impl Iterator<Item = (usize, &'a str)>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == MANIFEST_HEADER => {}
        other => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                record: 0,
                message: format!("expected header {MANIFEST_HEADER:?}, found {:?}", other.unwrap_or("")),
            })
        }
    }
    Ok(lines.enumerate())
}

fn check_id(path: &Path, record: usize, id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['/', '\\', '\t', '\n']) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            record,
            message: format!("invalid id {id:?}"),
        });
    }
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<GlossVocabulary> {
    let tokens = read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    GlossVocabulary::new(tokens)
}

pub fn write_vocab(path: &Path, vocab: &GlossVocabulary) -> Result<()> {
    let mut text = vocab.tokens().join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads every record of a keypoint manifest, in file order.
pub fn read_manifest(path: &Path, vocab: &GlossVocabulary) -> Result<Vec<Sample>> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in records(path, &text)? {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            record: i,
            message,
        };
        let rec: Record = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        check_id(path, i, &rec.id)?;
        if rec.frames == 0 {
            return Err(parse_err("frame count must be at least 1".into()));
        }
        let blob_path = base.join(&rec.blob);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        let per_frame = NUM_LANDMARKS * 3 * 4;
        if bytes.len() != rec.frames * per_frame {
            let row = rec.frames * 12;
            if bytes.len() % row == 0 {
                return Err(Error::LandmarkCount {
                    path: path.to_path_buf(),
                    record: i,
                    expected: NUM_LANDMARKS,
                    found: bytes.len() / row,
                });
            }
            return Err(parse_err(format!(
                "blob holds {} bytes, expected {}",
                bytes.len(),
                rec.frames * per_frame
            )));
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let mut frames = Vec::with_capacity(rec.frames);
        for frame in values.chunks(NUM_LANDMARKS * 3) {
            let mut landmarks = Vec::with_capacity(NUM_LANDMARKS);
            for l in frame.chunks(3) {
                match l[2] {
                    1.0 => landmarks.push(Some(Point {
                        x: f64::from(l[0]),
                        y: f64::from(l[1]),
                    })),
                    0.0 => landmarks.push(None),
                    v => return Err(parse_err(format!("validity flag {v} is neither 0 nor 1"))),
                }
            }
            frames.push(landmarks);
        }
        let target = vocab.encode(&rec.glosses)?;
        out.push(Sample {
            sequence: KeypointSequence::new(rec.id, rec.signer_id, frames)?,
            glosses: rec.glosses,
            target,
        });
    }
    Ok(out)
}

/// Writes a manifest plus one blob per sample under `<manifest stem>/`.
/// Coordinates are stored as `f32`.
pub fn write_manifest(path: &Path, samples: &[Sample]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Config(format!("bad manifest path {}", path.display())))?;
    let blob_dir = base.join(stem);
    fs::create_dir_all(&blob_dir).map_err(|e| Error::io(&blob_dir, e))?;
    let mut text = format!("{MANIFEST_HEADER}\n");
    for (i, s) in samples.iter().enumerate() {
        let seq = &s.sequence;
        check_id(path, i, &seq.id)?;
        if seq.landmark_count() != NUM_LANDMARKS {
            return Err(Error::LandmarkCount {
                path: path.to_path_buf(),
                record: i,
                expected: NUM_LANDMARKS,
                found: seq.landmark_count(),
            });
        }
        let mut bytes = Vec::with_capacity(seq.len() * NUM_LANDMARKS * 12);
        for frame in seq.frames() {
            for l in frame {
                let (x, y, v) = match l {
                    Some(p) => (p.x as f32, p.y as f32, 1.0f32),
                    None => (0.0, 0.0, 0.0),
                };
                for f in [x, y, v] {
                    bytes.extend_from_slice(&f.to_le_bytes());
                }
            }
        }
        let rel = format!("{stem}/{}.kp", seq.id);
        let blob_path = base.join(&rel);
        fs::write(&blob_path, bytes).map_err(|e| Error::io(&blob_path, e))?;
        let rec = Record {
            id: seq.id.clone(),
            signer_id: seq.signer_id.clone(),
            glosses: s.glosses.clone(),
            frames: seq.len(),
            blob: rel,
        };
        text.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads `<dir>/vocab.txt` and `<dir>/<split>.manifest`.
pub fn load_dataset(dir: &Path, split: Split) -> Result<(GlossVocabulary, Vec<Sample>)> {
    let vocab = read_vocab(&dir.join("vocab.txt"))?;
    let samples = read_manifest(&split.manifest_path(dir), &vocab)?;
    Ok((vocab, samples))
}

/// Preprocessed feature rows, stored as little-endian `f64` blobs.
pub fn write_features(path: &Path, items: &[(FeatureSequence, &Sample)]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new("."));
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("features");
    let blob_dir = base.join(stem);
    fs::create_dir_all(&blob_dir).map_err(|e| Error::io(&blob_dir, e))?;
    let mut text = format!("{MANIFEST_HEADER}\n");
    for (f, s) in items {
        let rel = format!("{stem}/{}.f64", f.id);
        let bytes: Vec<u8> = f.data.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        let blob_path = base.join(&rel);
        fs::write(&blob_path, bytes).map_err(|e| Error::io(&blob_path, e))?;
        let rec = FeatureRecord {
            id: f.id.clone(),
            signer_id: s.sequence.signer_id.clone(),
            glosses: s.glosses.clone(),
            frames: f.source_len(),
            dim: f.dim(),
            blob: rel,
        };
        text.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<(FeatureSequence, Vec<String>)>> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in records(path, &text)? {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            record: i,
            message,
        };
        let rec: FeatureRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let blob_path = base.join(&rec.blob);
        let bytes = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        if bytes.len() != rec.frames * rec.dim * 8 {
            return Err(parse_err("feature blob size disagrees with frames × dim".into()));
        }
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let data = Tensor::new(&[rec.frames, rec.dim], data).map_err(|e| parse_err(e.to_string()))?;
        out.push((FeatureSequence { id: rec.id, data }, rec.glosses));
    }
    Ok(out)
}
