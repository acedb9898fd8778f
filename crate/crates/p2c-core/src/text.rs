//! Tokens, captions, lexicons, n-gram extraction and caption masking.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Reserved mask literal, always category `Other`.
pub const MASK_TOKEN: &str = "[MASK]";
/// Reserved sequence-start literal.
pub const BOS_TOKEN: &str = "[BOS]";
/// Reserved sequence-end literal.
pub const EOS_TOKEN: &str = "[EOS]";

const RESERVED: [&str; 3] = [MASK_TOKEN, BOS_TOKEN, EOS_TOKEN];

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("no tokens survive tokenization")]
    EmptyInput,
    #[error("invalid token {0:?}: tokens must be nonempty, lowercase and whitespace-free")]
    InvalidToken(String),
    #[error("caption has no maskable (non-object) position")]
    NoMaskablePosition,
    #[error("duplicate lexicon entry for {0:?}")]
    DuplicateLexiconEntry(String),
    #[error("reserved token {0:?} must have category \"other\"")]
    ReservedCategory(String),
    #[error("lexicon line {line}: {msg}")]
    LexiconParse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A single word: nonempty, lowercase, no whitespace. The bracketed
/// reserved literals ([MASK], [BOS], [EOS]) are the only exceptions to
/// the lowercase rule.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(text: &str) -> Result<Self, TextError> {
        if RESERVED.contains(&text) {
            return Ok(Token(text.to_string()));
        }
        let valid = !text.is_empty()
            && !text.chars().any(|c| c.is_whitespace())
            && !text.chars().any(|c| c.is_uppercase());
        if valid {
            Ok(Token(text.to_string()))
        } else {
            Err(TextError::InvalidToken(text.to_string()))
        }
    }

    pub fn mask() -> Self {
        Token(MASK_TOKEN.to_string())
    }

    pub fn bos() -> Self {
        Token(BOS_TOKEN.to_string())
    }

    pub fn eos() -> Self {
        Token(EOS_TOKEN.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_reserved(&self) -> bool {
        RESERVED.contains(&self.0.as_str())
    }
}

impl TryFrom<String> for Token {
    type Error = TextError;
    fn try_from(s: String) -> Result<Self, TextError> {
        Token::new(&s)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

impl fmt::Debug for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// An ordered token sequence.
///
/// Captions parsed from text or loaded from files are always nonempty
/// (`Caption::new` rejects empty input). Captions produced by decoding a
/// policy may be empty when the policy emits [EOS] immediately, so
/// `Caption::from_tokens` places no length restriction.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Caption {
    tokens: Vec<Token>,
}

impl Caption {
    /// Builds a caption from external data; empty sequences are rejected.
    pub fn new(tokens: Vec<Token>) -> Result<Self, TextError> {
        if tokens.is_empty() {
            return Err(TextError::EmptyInput);
        }
        Ok(Caption { tokens })
    }

    /// Wraps an already-validated (possibly empty) generated sequence.
    pub fn from_tokens(tokens: Vec<Token>) -> Self {
        Caption { tokens }
    }

    /// Parses a whitespace-separated list of token strings.
    pub fn parse_tokens<S: AsRef<str>>(words: &[S]) -> Result<Self, TextError> {
        let tokens = words
            .iter()
            .map(|w| Token::new(w.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        Caption::new(tokens)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-joined surface form.
    pub fn text(&self) -> String {
        self.tokens
            .iter()
            .map(Token::as_str)
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// A caption with exactly one position replaced by [MASK].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskedCaption {
    tokens: Vec<Token>,
    mask_index: usize,
    original: Token,
}

impl MaskedCaption {
    fn build(caption: &Caption, index: usize) -> Self {
        let mut tokens = caption.tokens().to_vec();
        let original = std::mem::replace(&mut tokens[index], Token::mask());
        MaskedCaption {
            tokens,
            mask_index: index,
            original,
        }
    }

    /// Tokens with [MASK] at `mask_index`.
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn mask_index(&self) -> usize {
        self.mask_index
    }

    /// The token that was replaced.
    pub fn original(&self) -> &Token {
        &self.original
    }

    /// Reconstructs the caption with `replacement` at the masked position.
    pub fn fill(&self, replacement: Token) -> Caption {
        let mut tokens = self.tokens.clone();
        tokens[self.mask_index] = replacement;
        Caption::from_tokens(tokens)
    }
}

/// Word category used for masking eligibility and object extraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WordCategory {
    Object,
    Other,
}

/// Token -> category map. Tokens absent from the map are `Other`, so
/// fluency filtering never drops content due to lexicon gaps.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<Token, WordCategory>,
}

impl Lexicon {
    pub fn new() -> Self {
        Lexicon::default()
    }

    pub fn from_entries<I>(entries: I) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = (Token, WordCategory)>,
    {
        let mut lex = Lexicon::new();
        for (token, category) in entries {
            lex.insert(token, category)?;
        }
        Ok(lex)
    }

    pub fn insert(&mut self, token: Token, category: WordCategory) -> Result<(), TextError> {
        if token.is_reserved() && category == WordCategory::Object {
            return Err(TextError::ReservedCategory(token.as_str().to_string()));
        }
        if self.entries.contains_key(&token) {
            return Err(TextError::DuplicateLexiconEntry(token.as_str().to_string()));
        }
        self.entries.insert(token, category);
        Ok(())
    }

    pub fn category(&self, token: &Token) -> WordCategory {
        self.entries
            .get(token)
            .copied()
            .unwrap_or(WordCategory::Other)
    }

    pub fn is_object(&self, token: &Token) -> bool {
        self.category(token) == WordCategory::Object
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parses the tab-separated lexicon format: one `token<TAB>category`
    /// entry per line, category `object` or `other`. Blank lines are
    /// skipped; duplicate tokens are an error.
    pub fn parse(content: &str) -> Result<Self, TextError> {
        let mut lex = Lexicon::new();
        for (i, raw) in content.lines().enumerate() {
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let (word, category) =
                line.split_once('\t')
                    .ok_or_else(|| TextError::LexiconParse {
                        line: i + 1,
                        msg: "expected token<TAB>category".to_string(),
                    })?;
            let token = Token::new(word.trim()).map_err(|e| TextError::LexiconParse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let category = match category.trim() {
                "object" => WordCategory::Object,
                "other" => WordCategory::Other,
                other => {
                    return Err(TextError::LexiconParse {
                        line: i + 1,
                        msg: format!("unknown category {other:?}"),
                    })
                }
            };
            lex.insert(token, category)?;
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, TextError> {
        Lexicon::parse(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), TextError> {
        let mut out = String::new();
        for (token, category) in &self.entries {
            let cat = match category {
                WordCategory::Object => "object",
                WordCategory::Other => "other",
            };
            out.push_str(token.as_str());
            out.push('\t');
            out.push_str(cat);
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// A contiguous n-gram of order 1..=4.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct NGram(Vec<Token>);

impl NGram {
    pub fn new(tokens: Vec<Token>) -> Self {
        assert!(
            (1..=4).contains(&tokens.len()),
            "n-gram order must be in 1..=4, got {}",
            tokens.len()
        );
        NGram(tokens)
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }
}

impl fmt::Display for NGram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(t.as_str())?;
        }
        Ok(())
    }
}

/// N-gram multiset with deterministic iteration order.
pub type NGramCounts = BTreeMap<NGram, u64>;

/// Lowercases, splits on whitespace and strips ASCII punctuation from
/// token edges. Tokens that vanish entirely (pure punctuation) are
/// dropped; an input with no surviving tokens is an error.
pub fn tokenize(text: &str) -> Result<Caption, TextError> {
    let mut tokens = Vec::new();
    for word in text.to_lowercase().split_whitespace() {
        let trimmed = word.trim_matches(|c: char| c.is_ascii_punctuation());
        if trimmed.is_empty() {
            continue;
        }
        tokens.push(Token::new(trimmed)?);
    }
    Caption::new(tokens)
}

/// All contiguous n-grams of orders 1..=n_max, with multiplicities.
pub fn extract_ngrams(caption: &Caption, n_max: usize) -> NGramCounts {
    assert!((1..=4).contains(&n_max), "n_max must be in 1..=4");
    let tokens = caption.tokens();
    let mut counts = NGramCounts::new();
    for n in 1..=n_max {
        if tokens.len() < n {
            break;
        }
        for window in tokens.windows(n) {
            *counts.entry(NGram::new(window.to_vec())).or_insert(0) += 1;
        }
    }
    counts
}

/// Keeps only n-grams containing zero object-category tokens.
pub fn filter_object_ngrams(grams: &NGramCounts, lexicon: &Lexicon) -> NGramCounts {
    grams
        .iter()
        .filter(|(gram, _)| !gram.tokens().iter().any(|t| lexicon.is_object(t)))
        .map(|(gram, count)| (gram.clone(), *count))
        .collect()
}

/// Masks one uniformly-chosen non-object position. The choice is a
/// deterministic function of `rng_seed`. Positions already holding the
/// mask literal are never eligible.
pub fn mask_random_non_object(
    caption: &Caption,
    lexicon: &Lexicon,
    rng_seed: u64,
) -> Result<MaskedCaption, TextError> {
    let eligible: Vec<usize> = caption
        .tokens()
        .iter()
        .enumerate()
        .filter(|(_, t)| !lexicon.is_object(t) && t.as_str() != MASK_TOKEN)
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(TextError::NoMaskablePosition);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let index = eligible[rng.random_range(0..eligible.len())];
    Ok(MaskedCaption::build(caption, index))
}

/// Deduplicated set of object-category tokens in the caption.
pub fn object_set(caption: &Caption, lexicon: &Lexicon) -> std::collections::BTreeSet<Token> {
    caption
        .tokens()
        .iter()
        .filter(|t| lexicon.is_object(t))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex(objects: &[&str]) -> Lexicon {
        Lexicon::from_entries(
            objects
                .iter()
                .map(|o| (Token::new(o).unwrap(), WordCategory::Object)),
        )
        .unwrap()
    }

    fn cap(words: &[&str]) -> Caption {
        Caption::parse_tokens(words).unwrap()
    }

    #[test]
    fn tokenize_lowercases_and_strips_punctuation() {
        assert_eq!(tokenize("A dog runs.").unwrap(), cap(&["a", "dog", "runs"]));
        assert_eq!(tokenize("cat").unwrap(), cap(&["cat"]));
        assert_eq!(tokenize("  Two   spaces ").unwrap(), cap(&["two", "spaces"]));
    }

    #[test]
    fn tokenize_rejects_empty() {
        assert!(matches!(tokenize("  "), Err(TextError::EmptyInput)));
        assert!(matches!(tokenize("... !!"), Err(TextError::EmptyInput)));
    }

    #[test]
    fn token_validation() {
        assert!(Token::new("dog").is_ok());
        assert!(Token::new("").is_err());
        assert!(Token::new("two words").is_err());
        assert!(Token::new("Dog").is_err());
        assert!(Token::new(MASK_TOKEN).is_ok());
        assert!(Token::new(BOS_TOKEN).is_ok());
        assert!(Token::new(EOS_TOKEN).is_ok());
    }

    #[test]
    fn ngram_extraction_counts() {
        let grams = extract_ngrams(&cap(&["a", "b", "c"]), 2);
        let key = |words: &[&str]| {
            NGram::new(words.iter().map(|w| Token::new(w).unwrap()).collect())
        };
        assert_eq!(grams.len(), 5);
        assert_eq!(grams[&key(&["a"])], 1);
        assert_eq!(grams[&key(&["a", "b"])], 1);

        let grams = extract_ngrams(&cap(&["a", "a"]), 2);
        assert_eq!(grams[&key(&["a"])], 2);
        assert_eq!(grams[&key(&["a", "a"])], 1);

        let grams = extract_ngrams(&cap(&["a", "b", "c", "d"]), 4);
        let total: u64 = grams.values().sum();
        assert_eq!(total, 10);
    }

    #[test]
    fn ngram_count_identity_small_cases() {
        // Total n-grams = sum over n of max(0, T - n + 1), exhaustively for T <= 12.
        for t in 1..=12usize {
            let words: Vec<String> = (0..t).map(|i| format!("w{i}")).collect();
            let caption =
                Caption::parse_tokens(&words.iter().map(String::as_str).collect::<Vec<_>>())
                    .unwrap();
            for n_max in 1..=4usize {
                let grams = extract_ngrams(&caption, n_max);
                let total: u64 = grams.values().sum();
                let expected: usize = (1..=n_max).map(|n| t.saturating_sub(n - 1)).sum();
                assert_eq!(total as usize, expected, "T={t} n_max={n_max}");
            }
        }
    }

    #[test]
    fn filter_keeps_object_free_ngrams() {
        // "a b c d" with object word "b": survivors are {a, c, d, cd}.
        let grams = extract_ngrams(&cap(&["a", "b", "c", "d"]), 4);
        let filtered = filter_object_ngrams(&grams, &lex(&["b"]));
        let mut surviving: Vec<String> = filtered.keys().map(|g| g.to_string()).collect();
        surviving.sort();
        assert_eq!(surviving, vec!["a", "c", "c d", "d"]);

        let empty_lex = Lexicon::new();
        assert_eq!(filter_object_ngrams(&grams, &empty_lex), grams);

        let all_objects = lex(&["a", "b", "c", "d"]);
        assert!(filter_object_ngrams(&grams, &all_objects).is_empty());
    }

    #[test]
    fn filter_is_idempotent_and_subset() {
        let grams = extract_ngrams(&cap(&["a", "b", "a", "c"]), 3);
        let lexicon = lex(&["a"]);
        let once = filter_object_ngrams(&grams, &lexicon);
        let twice = filter_object_ngrams(&once, &lexicon);
        assert_eq!(once, twice);
        for (gram, count) in &once {
            assert!(grams[gram] >= *count);
        }
    }

    #[test]
    fn masking_respects_objects() {
        let lexicon = lex(&["dog"]);
        assert!(matches!(
            mask_random_non_object(&cap(&["dog"]), &lexicon, 0),
            Err(TextError::NoMaskablePosition)
        ));

        for seed in 0..10 {
            let masked = mask_random_non_object(&cap(&["a", "dog"]), &lexicon, seed).unwrap();
            assert_eq!(masked.mask_index(), 0);
            assert_eq!(masked.original().as_str(), "a");
            assert_eq!(masked.tokens()[0], Token::mask());
        }
    }

    #[test]
    fn masking_covers_all_eligible_positions() {
        // [a, dog, runs] with dog:object — over seeds 0..99 the masked index
        // stays in {0, 2} and both values occur.
        let lexicon = lex(&["dog"]);
        let caption = cap(&["a", "dog", "runs"]);
        let mut seen = std::collections::BTreeSet::new();
        for seed in 0..100 {
            let masked = mask_random_non_object(&caption, &lexicon, seed).unwrap();
            assert!(masked.mask_index() == 0 || masked.mask_index() == 2);
            seen.insert(masked.mask_index());
        }
        assert_eq!(seen.len(), 2);
    }

    #[test]
    fn masking_is_deterministic_per_seed() {
        let lexicon = lex(&["dog"]);
        let caption = cap(&["a", "dog", "runs", "fast"]);
        for seed in 0..20 {
            let a = mask_random_non_object(&caption, &lexicon, seed).unwrap();
            let b = mask_random_non_object(&caption, &lexicon, seed).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn masked_caption_fill_roundtrip() {
        let lexicon = lex(&["dog"]);
        let caption = cap(&["a", "dog", "runs"]);
        let masked = mask_random_non_object(&caption, &lexicon, 3).unwrap();
        assert_eq!(masked.fill(masked.original().clone()), caption);
    }

    #[test]
    fn object_sets() {
        let lexicon = lex(&["dog", "frisbee", "park"]);
        let set = object_set(&cap(&["a", "dog", "and", "a", "dog"]), &lexicon);
        assert_eq!(set.len(), 1);
        assert!(set.contains(&Token::new("dog").unwrap()));

        assert!(object_set(&cap(&["a", "b", "c"]), &lexicon).is_empty());

        let set = object_set(&cap(&["dog", "frisbee", "park"]), &lexicon);
        assert_eq!(set.len(), 3);
    }

    #[test]
    fn lexicon_parse_and_errors() {
        let lexicon = Lexicon::parse("dog\tobject\na\tother\n").unwrap();
        assert!(lexicon.is_object(&Token::new("dog").unwrap()));
        assert!(!lexicon.is_object(&Token::new("a").unwrap()));
        // unknown tokens default to other
        assert!(!lexicon.is_object(&Token::new("zebra").unwrap()));

        assert!(matches!(
            Lexicon::parse("dog\tobject\ndog\tother\n"),
            Err(TextError::DuplicateLexiconEntry(_))
        ));
        assert!(matches!(
            Lexicon::parse("dog object\n"),
            Err(TextError::LexiconParse { .. })
        ));
        assert!(matches!(
            Lexicon::parse("dog\tnoun\n"),
            Err(TextError::LexiconParse { .. })
        ));
        assert!(matches!(
            Lexicon::parse("[MASK]\tobject\n"),
            Err(TextError::ReservedCategory(_))
        ));
    }
}
