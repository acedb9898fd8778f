//! Word-embedding table and the clamped cosine similarity used by the
//! repetition penalty and the reference association scorers.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::text::Token;

#[derive(Debug, thiserror::Error)]
pub enum EmbeddingError {
    #[error("embedding file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate token {0:?} in embedding file")]
    DuplicateToken(String),
    #[error("embedding file contains no vectors")]
    Empty,
    #[error("every stored vector has zero norm")]
    AllZero,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Fixed-dimension token -> vector map. Immutable after construction.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<Token, Vec<f64>>,
}

impl EmbeddingTable {
    /// Builds a table from (token, vector) pairs. All vectors must share
    /// one dimension, tokens must be unique, and at least one vector must
    /// have nonzero norm.
    pub fn from_pairs<I>(pairs: I) -> Result<Self, EmbeddingError>
    where
        I: IntoIterator<Item = (Token, Vec<f64>)>,
    {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, (token, vector)) in pairs.into_iter().enumerate() {
            let d = *dim.get_or_insert(vector.len());
            if vector.len() != d {
                return Err(EmbeddingError::Parse {
                    line: i + 1,
                    msg: format!("expected dimension {d}, got {}", vector.len()),
                });
            }
            if vectors.insert(token.clone(), vector).is_some() {
                return Err(EmbeddingError::DuplicateToken(token.as_str().to_string()));
            }
        }
        let dim = dim.ok_or(EmbeddingError::Empty)?;
        if dim == 0 {
            return Err(EmbeddingError::Empty);
        }
        let table = EmbeddingTable { dim, vectors };
        if table.vectors.values().all(|v| norm(v) == 0.0) {
            return Err(EmbeddingError::AllZero);
        }
        Ok(table)
    }

    /// Parses the text format: one `token f1 f2 ... fd` line per token,
    /// dimension inferred from the first line.
    pub fn parse(content: &str) -> Result<Self, EmbeddingError> {
        let mut pairs = Vec::new();
        for (i, raw) in content.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().expect("non-empty line has a first field");
            let token = Token::new(word).map_err(|e| EmbeddingError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let values = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| EmbeddingError::Parse {
                        line: i + 1,
                        msg: format!("bad float {p:?}"),
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            if values.is_empty() {
                return Err(EmbeddingError::Parse {
                    line: i + 1,
                    msg: "no vector components".to_string(),
                });
            }
            pairs.push((token, values));
        }
        // Ragged rows are caught by from_pairs, but report them against
        // the first offending row's dimension for a clearer message.
        if let Some(first) = pairs.first() {
            let d = first.1.len();
            for (idx, (_, v)) in pairs.iter().enumerate() {
                if v.len() != d {
                    return Err(EmbeddingError::Parse {
                        line: idx + 1,
                        msg: format!("ragged dimension: expected {d}, got {}", v.len()),
                    });
                }
            }
        }
        EmbeddingTable::from_pairs(pairs)
    }

    pub fn load(path: &Path) -> Result<Self, EmbeddingError> {
        EmbeddingTable::parse(&std::fs::read_to_string(path)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &Token) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &Token) -> bool {
        self.vectors.contains_key(token)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity between raw vectors, clamped to [0, 1]. Zero-norm
/// inputs score 0.
pub fn cosine_vec(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Clamped cosine similarity between two tokens' embeddings. Out-of-vocabulary
/// tokens score 0 against everything: an unknown word cannot create
/// repetition evidence.
pub fn cosine(t1: &Token, t2: &Token, table: &EmbeddingTable) -> f64 {
    match (table.get(t1), table.get(t2)) {
        (Some(a), Some(b)) => cosine_vec(a, b),
        _ => 0.0,
    }
}

/// Arithmetic mean of the available vectors for `tokens`; the zero vector
/// if the set is empty or entirely out of vocabulary.
pub fn mean_embedding(tokens: &BTreeSet<Token>, table: &EmbeddingTable) -> Vec<f64> {
    let mut sum = vec![0.0; table.dim()];
    let mut count = 0usize;
    for token in tokens {
        if let Some(v) = table.get(token) {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            count += 1;
        }
    }
    if count > 0 {
        for s in &mut sum {
            *s /= count as f64;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tok(s: &str) -> Token {
        Token::new(s).unwrap()
    }

    fn table(entries: &[(&str, &[f64])]) -> EmbeddingTable {
        EmbeddingTable::from_pairs(
            entries
                .iter()
                .map(|(word, v)| (tok(word), v.to_vec())),
        )
        .unwrap()
    }

    #[test]
    fn parse_basic() {
        let t = EmbeddingTable::parse("a 1.0 0.0\nb 0.0 1.0\n").unwrap();
        assert_eq!(t.dim(), 2);
        assert_eq!(t.len(), 2);
        assert_eq!(t.get(&tok("a")).unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            EmbeddingTable::parse("a 1.0 2.0 3.0\nb 1.0 2.0 3.0 4.0\n"),
            Err(EmbeddingError::Parse { .. })
        ));
        assert!(matches!(
            EmbeddingTable::parse(""),
            Err(EmbeddingError::Empty)
        ));
        assert!(matches!(
            EmbeddingTable::parse("a 1.0\na 2.0\n"),
            Err(EmbeddingError::DuplicateToken(_))
        ));
        assert!(matches!(
            EmbeddingTable::parse("a x.0\n"),
            Err(EmbeddingError::Parse { .. })
        ));
        assert!(matches!(
            EmbeddingTable::parse("a 0.0\nb 0.0\n"),
            Err(EmbeddingError::AllZero)
        ));
    }

    #[test]
    fn cosine_identities() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0]), ("c", &[1.0, 1.0])]);
        assert_eq!(cosine(&tok("a"), &tok("a"), &t), 1.0);
        assert_eq!(cosine(&tok("a"), &tok("b"), &t), 0.0);
        // (1,0) vs (1,1): dot = 1, norms 1 and sqrt(2)
        let expected = 1.0 / 2.0f64.sqrt();
        assert!((cosine(&tok("a"), &tok("c"), &t) - expected).abs() < 1e-15);
        // OOV scores zero
        assert_eq!(cosine(&tok("a"), &tok("zzz"), &t), 0.0);
    }

    #[test]
    fn cosine_clamps_negative() {
        let t = table(&[("a", &[1.0, 0.0]), ("neg", &[-1.0, 0.0])]);
        assert_eq!(cosine(&tok("a"), &tok("neg"), &t), 0.0);
    }

    #[test]
    fn cosine_symmetric_random_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pairs: Vec<(Token, Vec<f64>)> = (0..100)
            .map(|i| {
                let v: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
                (tok(&format!("w{i}")), v)
            })
            .collect();
        let t = EmbeddingTable::from_pairs(pairs).unwrap();
        for i in 0..100usize {
            let a = tok(&format!("w{i}"));
            let b = tok(&format!("w{}", (i * 37 + 11) % 100));
            let ab = cosine(&a, &b, &t);
            let ba = cosine(&b, &a, &t);
            assert_eq!(ab, ba);
            assert!((0.0..=1.0).contains(&ab));
        }
    }

    #[test]
    fn mean_embedding_cases() {
        let t = table(&[("a", &[1.0, 0.0]), ("b", &[0.0, 1.0])]);
        let single: BTreeSet<Token> = [tok("a")].into_iter().collect();
        assert_eq!(mean_embedding(&single, &t), vec![1.0, 0.0]);

        let empty: BTreeSet<Token> = BTreeSet::new();
        assert_eq!(mean_embedding(&empty, &t), vec![0.0, 0.0]);

        let both: BTreeSet<Token> = [tok("a"), tok("b")].into_iter().collect();
        assert_eq!(mean_embedding(&both, &t), vec![0.5, 0.5]);

        let oov: BTreeSet<Token> = [tok("x"), tok("y")].into_iter().collect();
        assert_eq!(mean_embedding(&oov, &t), vec![0.0, 0.0]);
    }
}
