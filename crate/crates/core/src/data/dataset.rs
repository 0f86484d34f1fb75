//! Line-oriented dataset manifests.
//!
//! ```text
//! vocab vocab.txt
//! texts texts.txt
//! image <id> <train|val|test> <feature file> <text id>,<text id>,...
//! hard_negative <text id> <image id>
//! ```
//!
//! Paths are relative to the manifest's directory. `vocab.txt` holds one
//! token per line; `texts.txt` holds `<text id>\t<space separated words>`.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;

use super::features::load_features_as;
use crate::corpus::Corpus;
use crate::encoders::TextInstance;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Validation(format!("invalid vocabulary token {t:?}")));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!(
                    "duplicate vocabulary token {t:?}"
                )));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> Option<&str> {
        self.tokens.get(i).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn encode<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<usize>> {
        words
            .iter()
            .map(|w| {
                self.id(w.as_ref()).ok_or_else(|| {
                    Error::Validation(format!("word {:?} is not in the vocabulary", w.as_ref()))
                })
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestImage {
    pub id: String,
    pub split: Split,
    pub features: PathBuf,
    pub texts: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub vocab: PathBuf,
    pub texts: PathBuf,
    pub images: Vec<ManifestImage>,
    /// `(text id, image id)`.
    pub hard_negatives: Vec<(String, String)>,
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |n: usize, why: String| Error::malformed(path, format!("line {}: {why}", n + 1));
        let (mut vocab, mut texts) = (None, None);
        let mut images = Vec::new();
        let mut hard_negatives = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => {}
                [c, ..] if c.starts_with('#') => {}
                ["vocab", p] => vocab = Some(PathBuf::from(p)),
                ["texts", p] => texts = Some(PathBuf::from(p)),
                ["image", id, split, p, tids] => images.push(ManifestImage {
                    id: id.to_string(),
                    split: split.parse().map_err(|e: Error| bad(n, e.to_string()))?,
                    features: PathBuf::from(p),
                    texts: tids
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect(),
                }),
                ["hard_negative", t, i] => hard_negatives.push((t.to_string(), i.to_string())),
                _ => return Err(bad(n, format!("unrecognized entry {line:?}"))),
            }
        }
        Ok(Self {
            vocab: vocab.ok_or_else(|| Error::malformed(path, "missing vocab entry"))?,
            texts: texts.ok_or_else(|| Error::malformed(path, "missing texts entry"))?,
            images,
            hard_negatives,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "vocab {}", self.vocab.display());
        let _ = writeln!(out, "texts {}", self.texts.display());
        for img in &self.images {
            let _ = writeln!(
                out,
                "image {} {} {} {}",
                img.id,
                img.split,
                img.features.display(),
                img.texts.join(",")
            );
        }
        for (t, i) in &self.hard_negatives {
            let _ = writeln!(out, "hard_negative {t} {i}");
        }
        out
    }
}

/// Parses `texts.txt` into `(id, words)` in file order.
pub fn parse_texts(text: &str, path: &Path) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((id, words)) = line.split_once('\t') else {
            return Err(Error::malformed(
                path,
                format!("line {}: expected <id>\\t<words>", n + 1),
            ));
        };
        let words: Vec<String> = words.split_whitespace().map(String::from).collect();
        if words.is_empty() {
            return Err(Error::malformed(
                path,
                format!("line {}: text {id} has no words", n + 1),
            ));
        }
        out.push((id.trim().to_string(), words));
    }
    Ok(out)
}

/// A validated manifest with its vocabulary and texts in memory; features
/// are read per split.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub vocab: Vocabulary,
    texts: HashMap<String, Vec<String>>,
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    /// Loads and validates a manifest: every referenced file must exist and
    /// every text and hard-negative reference must resolve.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = Manifest::parse(&read(manifest_path)?, manifest_path)?;
        let root = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let vocab_path = root.join(&manifest.vocab);
        let vocab = Vocabulary::parse(&read(&vocab_path)?)
            .map_err(|e| Error::malformed(&vocab_path, e.to_string()))?;
        let texts_path = root.join(&manifest.texts);
        let mut texts = HashMap::new();
        for (id, words) in parse_texts(&read(&texts_path)?, &texts_path)? {
            vocab
                .encode(&words)
                .map_err(|e| Error::malformed(&texts_path, format!("text {id}: {e}")))?;
            if texts.insert(id.clone(), words).is_some() {
                return Err(Error::malformed(
                    &texts_path,
                    format!("duplicate text id {id}"),
                ));
            }
        }

        let dangling = |what: String| Error::malformed(manifest_path, what);
        let mut image_ids = HashSet::new();
        let mut owner = HashMap::new();
        for img in &manifest.images {
            if !image_ids.insert(img.id.as_str()) {
                return Err(dangling(format!("duplicate image id {}", img.id)));
            }
            if img.texts.is_empty() {
                return Err(dangling(format!(
                    "image {} has no corresponding text",
                    img.id
                )));
            }
            let fpath = root.join(&img.features);
            if !fpath.is_file() {
                return Err(dangling(format!(
                    "image {}: feature file {} does not exist",
                    img.id,
                    fpath.display()
                )));
            }
            for t in &img.texts {
                if !texts.contains_key(t) {
                    return Err(dangling(format!(
                        "image {} references unknown text {t}",
                        img.id
                    )));
                }
                if let Some(other) = owner.insert(t.as_str(), img.id.as_str()) {
                    return Err(dangling(format!(
                        "text {t} belongs to both {other} and {}",
                        img.id
                    )));
                }
            }
        }
        for (t, i) in &manifest.hard_negatives {
            if !texts.contains_key(t) || !image_ids.contains(i.as_str()) {
                return Err(dangling(format!(
                    "hard negative {t} → {i} references an unknown id"
                )));
            }
        }
        Ok(Self {
            root,
            manifest,
            vocab,
            texts,
        })
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.manifest
            .images
            .iter()
            .filter(|i| i.split == split)
            .count()
    }

    /// Reads the feature files of one split into a corpus.
    pub fn corpus(&self, split: Split) -> Result<Corpus> {
        let mut corpus = Corpus::default();
        let mut text_index = HashMap::new();
        let mut image_index = HashMap::new();
        let mut feature_dim = None;
        for img in self.manifest.images.iter().filter(|i| i.split == split) {
            let instance = load_features_as(&self.root.join(&img.features), &img.id)?;
            match feature_dim {
                None => feature_dim = Some(instance.feature_dim()),
                Some(d) if d != instance.feature_dim() => {
                    return Err(Error::Validation(format!(
                        "image {} has descriptor width {}, expected {d}",
                        img.id,
                        instance.feature_dim()
                    )))
                }
                _ => {}
            }
            let i = corpus.images.len();
            image_index.insert(img.id.as_str(), i);
            corpus.images.push(instance);
            for t in &img.texts {
                let tokens = self.vocab.encode(&self.texts[t])?;
                text_index.insert(t.as_str(), corpus.texts.len());
                corpus.pairs.push((i, corpus.texts.len()));
                corpus.texts.push(TextInstance::new(t.clone(), tokens)?);
            }
        }
        for (t, i) in &self.manifest.hard_negatives {
            match (text_index.get(t.as_str()), image_index.get(i.as_str())) {
                (Some(&t), Some(&i)) => corpus.hard_negatives.push((t, i)),
                (None, None) => {}
                _ => warn!("hard negative {t} → {i} crosses splits; ignored"),
            }
        }
        corpus.validate()?;
        Ok(corpus)
    }

    /// Words of a text by id.
    pub fn text_words(&self, id: &str) -> Option<&[String]> {
        self.texts.get(id).map(Vec::as_slice)
    }
}
