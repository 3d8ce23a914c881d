use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const UNK: usize = 0;
pub const EOS: usize = 1;
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";

/// Character vocabulary. Ids 0 and 1 are always `<unk>` and `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Reserved symbols followed by `tokens` in order. Duplicates and
    /// reserved names are rejected.
    pub fn new<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let all = [UNK_TOKEN.to_string(), EOS_TOKEN.to_string()]
            .into_iter()
            .chain(tokens.into_iter().map(Into::into));
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in all {
            if t.is_empty() || v.index.contains_key(&t) {
                return Err(Error::InvalidArgument(format!("duplicate or empty token {t:?}")));
            }
            v.index.insert(t.clone(), v.tokens.len());
            v.tokens.push(t);
        }
        Ok(v)
    }

    /// Vocabulary over the distinct characters of `texts`, in first-seen
    /// order.
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut seen = Vec::new();
        for text in texts {
            for c in text.chars() {
                let s = c.to_string();
                if !seen.contains(&s) {
                    seen.push(s);
                }
            }
        }
        Self::new(seen)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One id per character.
    pub fn encode(&self, transcript: &str) -> Vec<usize> {
        let mut buf = [0u8; 4];
        transcript
            .chars()
            .map(|c| self.id(c.encode_utf8(&mut buf)))
            .collect()
    }

    /// Concatenated tokens; `<eos>` ids are skipped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id != EOS)
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect()
    }

    /// One token per line; line number is the id.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading vocabulary {}", path.display()), e))?;
        let lines: Vec<&str> = text.lines().collect();
        let parse_err = |line: usize, reason: &str| Error::Parse {
            path: path.to_path_buf(),
            line,
            reason: reason.into(),
        };
        if lines.first() != Some(&UNK_TOKEN) {
            return Err(parse_err(1, "line 1 must be <unk>"));
        }
        if lines.get(1) != Some(&EOS_TOKEN) {
            return Err(parse_err(2, "line 2 must be <eos>"));
        }
        Self::new(lines[2..].iter().copied()).map_err(|e| parse_err(0, &e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(format!("writing vocabulary {}", path.display()), e))
    }
}

/// `ids` followed by `<eos>` fillers up to exactly `len`.
pub fn pad_targets(ids: &[usize], len: usize) -> Result<Vec<usize>> {
    if ids.len() > len {
        return Err(Error::InvalidArgument(format!(
            "transcript of {} tokens exceeds the {len} output positions",
            ids.len()
        )));
    }
    let mut out = ids.to_vec();
    out.resize(len, EOS);
    Ok(out)
}

/// Per-character ids padded with `<eos>` to `len`.
pub fn encode_targets(transcript: &str, vocab: &Vocabulary, len: usize) -> Result<Vec<usize>> {
    pad_targets(&vocab.encode(transcript), len)
}
