//! Masked-word prediction. The reference implementation is an n-gram
//! predictor fitted by counting on a text-only corpus: it keys on the
//! +/-2 token window around the mask, backs off to the +/-1 window, then
//! to the unigram distribution. Counts are unsmoothed so small-corpus
//! predictions are exact; ties go to the lexicographically smaller token.

use std::collections::BTreeMap;

use crate::text::{Caption, MaskedCaption, Token};

use super::policy::ModelError;

pub trait ParaphraseModel {
    /// Predicts the masked word and its probability under the model's own
    /// distribution. The returned token is never [MASK].
    fn predict(&self, masked: &MaskedCaption) -> (Token, f64);
}

type Counts = BTreeMap<Token, u64>;

/// Window keys pad out-of-range positions with [BOS] on the left and
/// [EOS] on the right.
fn left_of(tokens: &[Token], i: usize, offset: usize) -> Token {
    if i >= offset {
        tokens[i - offset].clone()
    } else {
        Token::bos()
    }
}

fn right_of(tokens: &[Token], i: usize, offset: usize) -> Token {
    tokens.get(i + offset).cloned().unwrap_or_else(Token::eos)
}

#[derive(Clone, Debug, Default)]
pub struct NGramParaphraser {
    window2: BTreeMap<(Token, Token, Token, Token), Counts>,
    window1: BTreeMap<(Token, Token), Counts>,
    unigram: Counts,
    total_tokens: u64,
}

impl NGramParaphraser {
    pub fn fit(sentences: &[Caption]) -> Result<Self, ModelError> {
        let mut model = NGramParaphraser::default();
        for sentence in sentences {
            let tokens = sentence.tokens();
            for (i, target) in tokens.iter().enumerate() {
                if *target == Token::mask() {
                    continue;
                }
                let key2 = (
                    left_of(tokens, i, 2),
                    left_of(tokens, i, 1),
                    right_of(tokens, i, 1),
                    right_of(tokens, i, 2),
                );
                *model
                    .window2
                    .entry(key2)
                    .or_default()
                    .entry(target.clone())
                    .or_insert(0) += 1;
                let key1 = (left_of(tokens, i, 1), right_of(tokens, i, 1));
                *model
                    .window1
                    .entry(key1)
                    .or_default()
                    .entry(target.clone())
                    .or_insert(0) += 1;
                *model.unigram.entry(target.clone()).or_insert(0) += 1;
                model.total_tokens += 1;
            }
        }
        if model.total_tokens == 0 {
            return Err(ModelError::EmptyCorpus);
        }
        Ok(model)
    }

    /// Fits from plain text, one sentence per line, run through the
    /// standard tokenizer. Untokenizable lines are skipped.
    pub fn fit_from_text(text: &str) -> Result<Self, ModelError> {
        let sentences: Vec<Caption> = text
            .lines()
            .filter_map(|line| crate::text::tokenize(line).ok())
            .collect();
        NGramParaphraser::fit(&sentences)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &Token> {
        self.unigram.keys()
    }
}

/// Highest count wins; on ties the lexicographically smaller token does.
/// BTreeMap iteration is ascending, so strict improvement keeps the first.
fn argmax_counts(counts: &Counts) -> (Token, f64) {
    let total: u64 = counts.values().sum();
    let mut best: Option<(&Token, u64)> = None;
    for (token, &count) in counts {
        match best {
            Some((_, best_count)) if count <= best_count => {}
            _ => best = Some((token, count)),
        }
    }
    let (token, count) = best.expect("count table is never empty");
    (token.clone(), count as f64 / total as f64)
}

impl ParaphraseModel for NGramParaphraser {
    fn predict(&self, masked: &MaskedCaption) -> (Token, f64) {
        let tokens = masked.tokens();
        let m = masked.mask_index();
        let key2 = (
            left_of(tokens, m, 2),
            left_of(tokens, m, 1),
            right_of(tokens, m, 1),
            right_of(tokens, m, 2),
        );
        if let Some(counts) = self.window2.get(&key2) {
            return argmax_counts(counts);
        }
        let key1 = (left_of(tokens, m, 1), right_of(tokens, m, 1));
        if let Some(counts) = self.window1.get(&key1) {
            return argmax_counts(counts);
        }
        argmax_counts(&self.unigram)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::{mask_random_non_object, Lexicon, Token, WordCategory};

    fn cap(words: &[&str]) -> Caption {
        Caption::parse_tokens(words).unwrap()
    }

    fn mask_at(caption: &Caption, index: usize) -> MaskedCaption {
        // Build a lexicon that makes every position except `index` an object.
        let entries = caption
            .tokens()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != index)
            .map(|(_, t)| (t.clone(), WordCategory::Object));
        let mut unique = std::collections::BTreeMap::new();
        for (t, c) in entries {
            unique.insert(t, c);
        }
        let lexicon = Lexicon::from_entries(unique).unwrap();
        mask_random_non_object(caption, &lexicon, 0).unwrap()
    }

    #[test]
    fn single_continuation_is_certain() {
        let model = NGramParaphraser::fit(&[cap(&["a", "red", "scarf"])]).unwrap();
        let masked = mask_at(&cap(&["a", "red", "scarf"]), 1);
        let (token, prob) = model.predict(&masked);
        assert_eq!(token.as_str(), "red");
        assert_eq!(prob, 1.0);
    }

    #[test]
    fn backs_off_to_unigram() {
        let model =
            NGramParaphraser::fit(&[cap(&["x", "y", "x"]), cap(&["x", "z"])]).unwrap();
        // Context that never occurred in the corpus at either window size.
        let masked = mask_at(&cap(&["q", "r", "s"]), 1);
        let (token, prob) = model.predict(&masked);
        assert_eq!(token.as_str(), "x");
        assert_eq!(prob, 3.0 / 5.0);
    }

    #[test]
    fn ties_go_to_lexicographically_smaller() {
        // "b" and "a" each fill the same slot once.
        let model =
            NGramParaphraser::fit(&[cap(&["x", "b", "y"]), cap(&["x", "a", "y"])]).unwrap();
        let masked = mask_at(&cap(&["x", "q", "y"]), 1);
        let (token, prob) = model.predict(&masked);
        assert_eq!(token.as_str(), "a");
        assert_eq!(prob, 0.5);
    }

    #[test]
    fn never_predicts_mask() {
        let model = NGramParaphraser::fit(&[cap(&["a", "b", "c", "d", "e"])]).unwrap();
        assert!(model.vocabulary().all(|t| *t != Token::mask()));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(
            NGramParaphraser::fit(&[]),
            Err(ModelError::EmptyCorpus)
        ));
    }

    #[test]
    fn fit_from_text_tokenizes() {
        let model = NGramParaphraser::fit_from_text("A red scarf.\n\nthe blue kite\n").unwrap();
        let words: Vec<&str> = model.vocabulary().map(|t| t.as_str()).collect();
        assert!(words.contains(&"red"));
        assert!(words.contains(&"kite"));
    }
}
