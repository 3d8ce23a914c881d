//! Tab-separated manifests: `id`, feature path relative to the manifest,
//! transcript.

use std::path::{Path, PathBuf};

use crate::data::features::read_features;
use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;

/// Fewest input frames the two stride-2 convolutions accept.
pub const MIN_FRAMES: usize = 4;

/// One loaded utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub id: String,
    /// `[T, n_mels]`.
    pub features: Tensor<f32>,
    pub transcript: String,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }

    /// Transcript length in tokens (characters).
    pub fn token_len(&self) -> usize {
        self.transcript.chars().count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    /// Resolved against the manifest's directory.
    pub features: PathBuf,
    pub transcript: String,
}

impl ManifestEntry {
    pub fn token_len(&self) -> usize {
        self.transcript.chars().count()
    }
}

/// Transcript length statistics; all zero for an empty corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CorpusStats {
    pub utterances: usize,
    pub max_tokens: usize,
    pub mean_tokens: f64,
}

impl CorpusStats {
    /// A warning when transcripts would not fit `max_len` output slots.
    pub fn length_warning(&self, max_len: usize) -> Option<String> {
        (max_len < self.max_tokens).then(|| {
            format!(
                "longest transcript has {} tokens but the model predicts only {max_len} positions",
                self.max_tokens
            )
        })
    }
}

/// Parsed manifest; feature files are read on demand.
#[derive(Clone, Debug, Default)]
pub struct Manifest {
    pub path: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading manifest {}", path.display()), e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let parse_err = |reason: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, rel, transcript] = fields[..] else {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        };
        if id.is_empty() || rel.is_empty() {
            return Err(parse_err("empty id or feature path".into()));
        }
        let features = base.join(rel);
        if !features.is_file() {
            return Err(parse_err(format!("missing feature file {}", features.display())));
        }
        entries.push(ManifestEntry {
            id: id.to_string(),
            features,
            transcript: transcript.to_string(),
        });
    }
    Ok(Manifest {
        path: path.to_path_buf(),
        entries,
    })
}

/// Writes entries with feature paths made relative to the manifest when
/// possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or(Path::new(""));
    let mut text = String::new();
    for e in entries {
        if e.id.contains(['\t', '\n']) || e.transcript.contains(['\t', '\n']) {
            return Err(Error::InvalidArgument(format!(
                "record {} contains a tab or newline",
                e.id
            )));
        }
        let rel = e.features.strip_prefix(base).unwrap_or(&e.features);
        text.push_str(&format!("{}\t{}\t{}\n", e.id, rel.display(), e.transcript));
    }
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing manifest {}", path.display()), e))
}

impl Manifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn stats(&self) -> CorpusStats {
        if self.entries.is_empty() {
            return CorpusStats::default();
        }
        let lens: Vec<usize> = self.entries.iter().map(ManifestEntry::token_len).collect();
        CorpusStats {
            utterances: lens.len(),
            max_tokens: *lens.iter().max().expect("non-empty"),
            mean_tokens: lens.iter().sum::<usize>() as f64 / lens.len() as f64,
        }
    }

    /// Reads utterance `i`, rejecting transcripts longer than `max_len`
    /// and feature matrices too short or of the wrong width.
    pub fn load(&self, i: usize, n_mels: usize, max_len: usize) -> Result<Utterance> {
        let e = &self.entries[i];
        let features = read_features(&e.features)?;
        let (frames, cols) = features.dims2()?;
        let bad = |reason: String| Error::Format {
            path: e.features.clone(),
            reason,
        };
        if cols != n_mels {
            return Err(bad(format!("{cols} feature columns, expected {n_mels}")));
        }
        if frames < MIN_FRAMES {
            return Err(bad(format!("{frames} frames, at least {MIN_FRAMES} required")));
        }
        if e.token_len() > max_len {
            return Err(Error::InvalidArgument(format!(
                "utterance {} has {} tokens, more than the {max_len} output positions",
                e.id,
                e.token_len()
            )));
        }
        Ok(Utterance {
            id: e.id.clone(),
            features,
            transcript: e.transcript.clone(),
        })
    }

    pub fn load_all(&self, n_mels: usize, max_len: usize) -> Result<Vec<Utterance>> {
        (0..self.len()).map(|i| self.load(i, n_mels, max_len)).collect()
    }
}
