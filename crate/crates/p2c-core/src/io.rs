//! File formats: hypothesis/reference JSONL, dataset directories, and
//! report writing.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ImageSample;
use crate::embeddings::{EmbeddingError, EmbeddingTable};
use crate::text::{Caption, Lexicon, TextError, Token};
use crate::world::WorldSpec;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path} line {line}: {source}")]
    JsonLine {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("empty caption for id {0:?}")]
    EmptyCaption(String),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    World(#[from] crate::world::WorldError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One generated caption: {"id": ..., "tokens": [...]}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HypRecord {
    pub id: String,
    pub tokens: Vec<String>,
}

/// One reference set: {"id": ..., "refs": [[...], ...]}.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefRecord {
    pub id: String,
    pub refs: Vec<Vec<String>>,
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let content = std::fs::read_to_string(path)?;
    let mut records = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|source| IoError::JsonLine {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        records.push(record);
    }
    Ok(records)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IoError> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).map_err(|source| IoError::Json {
            path: path.display().to_string(),
            source,
        })?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Loads hypotheses, keyed by id, rejecting duplicates and empty captions.
pub fn read_hypotheses(path: &Path) -> Result<Vec<(String, Caption)>, IoError> {
    let records: Vec<HypRecord> = parse_jsonl(path)?;
    let mut seen = BTreeMap::new();
    let mut result = Vec::new();
    for record in records {
        if seen.insert(record.id.clone(), ()).is_some() {
            return Err(IoError::DuplicateId(record.id));
        }
        let caption = Caption::parse_tokens(&record.tokens)
            .map_err(|_| IoError::EmptyCaption(record.id.clone()))?;
        result.push((record.id, caption));
    }
    Ok(result)
}

pub fn write_hypotheses(path: &Path, hyps: &[(String, Caption)]) -> Result<(), IoError> {
    let records: Vec<HypRecord> = hyps
        .iter()
        .map(|(id, caption)| HypRecord {
            id: id.clone(),
            tokens: caption.tokens().iter().map(|t| t.as_str().to_string()).collect(),
        })
        .collect();
    write_jsonl(path, &records)
}

/// Loads reference sets keyed by id.
pub fn read_references(path: &Path) -> Result<BTreeMap<String, Vec<Caption>>, IoError> {
    let records: Vec<RefRecord> = parse_jsonl(path)?;
    let mut result = BTreeMap::new();
    for record in records {
        let mut captions = Vec::new();
        for tokens in &record.refs {
            captions.push(
                Caption::parse_tokens(tokens)
                    .map_err(|_| IoError::EmptyCaption(record.id.clone()))?,
            );
        }
        if result.insert(record.id.clone(), captions).is_some() {
            return Err(IoError::DuplicateId(record.id));
        }
    }
    Ok(result)
}

pub fn read_images(path: &Path) -> Result<Vec<ImageSample>, IoError> {
    let images: Vec<ImageSample> = parse_jsonl(path)?;
    let mut seen = BTreeMap::new();
    for image in &images {
        if seen.insert(image.id.clone(), ()).is_some() {
            return Err(IoError::DuplicateId(image.id.clone()));
        }
    }
    Ok(images)
}

/// A dataset directory as written by world generation.
#[derive(Clone, Debug)]
pub struct WorldData {
    pub spec: WorldSpec,
    pub images: Vec<ImageSample>,
    pub eval_refs: BTreeMap<String, Vec<Caption>>,
    pub lexicon: Lexicon,
    pub embeddings: EmbeddingTable,
    pub corpus_text: String,
}

impl WorldData {
    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let spec_path = dir.join("world.json");
        let spec: WorldSpec = serde_json::from_str(&std::fs::read_to_string(&spec_path)?)
            .map_err(|source| IoError::Json {
                path: spec_path.display().to_string(),
                source,
            })?;
        let images = read_images(&dir.join("images.jsonl"))?;
        let eval_refs = read_references(&dir.join("refs.jsonl"))?;
        let lexicon = Lexicon::load(&dir.join("lexicon.tsv"))?;
        let embeddings = EmbeddingTable::load(&dir.join("embeddings.txt"))?;
        let corpus_text = std::fs::read_to_string(dir.join("corpus.txt"))?;
        Ok(WorldData {
            spec,
            images,
            eval_refs,
            lexicon,
            embeddings,
            corpus_text,
        })
    }

    /// Builds an in-memory WorldData from a freshly generated world.
    pub fn from_world(world: &crate::world::World) -> Result<Self, IoError> {
        Ok(WorldData {
            spec: world.spec.clone(),
            images: world.images.clone(),
            eval_refs: world.eval_refs.iter().cloned().collect(),
            lexicon: world.lexicon.clone(),
            embeddings: EmbeddingTable::parse(&world.embedding_lines.join("\n"))?,
            corpus_text: world.corpus_lines.join("\n"),
        })
    }

    pub fn labeled(&self) -> Vec<&ImageSample> {
        self.images.iter().filter(|i| i.is_labeled()).collect()
    }

    pub fn uncaptioned(&self) -> Vec<&ImageSample> {
        self.images.iter().filter(|i| !i.is_labeled()).collect()
    }

    pub fn feature_order(&self) -> Vec<Token> {
        self.spec.feature_order()
    }

    /// Model vocabulary: the reserved tokens followed by every word seen
    /// in the lexicon, the references or the paraphrase corpus, sorted.
    pub fn build_vocab(&self) -> Vec<Token> {
        let mut words: std::collections::BTreeSet<Token> = std::collections::BTreeSet::new();
        for token in self.lexicon.tokens() {
            words.insert(token.clone());
        }
        for refs in self.eval_refs.values() {
            for caption in refs {
                for token in caption.tokens() {
                    words.insert(token.clone());
                }
            }
        }
        for line in self.corpus_text.lines() {
            if let Ok(caption) = crate::text::tokenize(line) {
                for token in caption.tokens() {
                    words.insert(token.clone());
                }
            }
        }
        let mut vocab = vec![Token::bos(), Token::eos(), Token::mask()];
        for word in words {
            if !word.is_reserved() {
                vocab.push(word);
            }
        }
        vocab
    }

    /// Reference sets of the labeled images, the training corpus for
    /// CIDEr statistics.
    pub fn labeled_ref_sets(&self) -> Vec<Vec<Caption>> {
        self.labeled()
            .iter()
            .filter_map(|image| image.refs.clone())
            .collect()
    }
}
