//! The captioning policy: a first-order linear-softmax sequence model
//! over (previous token, image features), with exact analytic gradients.
//!
//! A caption's probability is the product of its per-step softmax
//! probabilities, including the terminating [EOS] step whenever the
//! caption is shorter than `t_max`. Captions of length `t_max` are
//! truncations and carry no stop term, so sequence probabilities sum to
//! one over the space of decodable captions.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text::{Caption, MaskedCaption, Token};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("token {0:?} not in vocabulary")]
    UnknownToken(String),
    #[error("feature vector has length {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("vocabulary must contain {0}")]
    MissingReserved(String),
    #[error("duplicate vocabulary token {0:?}")]
    DuplicateVocabToken(String),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("paraphrase corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// The parameter set theta: per-vocab-row image projection, previous-token
/// projection, token embeddings, and bias.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    /// V x F
    pub w_img: Vec<Vec<f64>>,
    /// V x E
    pub w_tok: Vec<Vec<f64>>,
    /// V x E
    pub token_emb: Vec<Vec<f64>>,
    /// V
    pub b: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(vocab: usize, feature_dim: usize, token_dim: usize) -> Self {
        PolicyParams {
            w_img: vec![vec![0.0; feature_dim]; vocab],
            w_tok: vec![vec![0.0; token_dim]; vocab],
            token_emb: vec![vec![0.0; token_dim]; vocab],
            b: vec![0.0; vocab],
        }
    }

    pub fn zeros_like(&self) -> Self {
        PolicyParams::zeros(self.b.len(), self.w_img[0].len(), self.w_tok[0].len())
    }

    pub fn param_count(&self) -> usize {
        self.b.len() * (1 + self.w_img[0].len() + 2 * self.w_tok[0].len())
    }

    /// Flat iteration over every parameter, field by field, row by row.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.w_img
            .iter()
            .flatten()
            .chain(self.w_tok.iter().flatten())
            .chain(self.token_emb.iter().flatten())
            .chain(self.b.iter())
            .copied()
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w_img
            .iter_mut()
            .flatten()
            .chain(self.w_tok.iter_mut().flatten())
            .chain(self.token_emb.iter_mut().flatten())
            .chain(self.b.iter_mut())
    }

    /// self += scale * other
    pub fn axpy(&mut self, scale: f64, other: &PolicyParams) {
        for (dst, src) in self.values_mut().zip(other.values()) {
            *dst += scale * src;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Versioned on-disk model format with row-major numeric arrays.
#[derive(Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub vocab: Vec<String>,
    #[serde(rename = "F")]
    pub feature_dim: usize,
    #[serde(rename = "E")]
    pub token_dim: usize,
    #[serde(rename = "W_img")]
    pub w_img: Vec<Vec<f64>>,
    #[serde(rename = "W_tok")]
    pub w_tok: Vec<Vec<f64>>,
    pub token_emb: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// The captioning policy C with parameters theta.
#[derive(Clone, Debug)]
pub struct PolicyModel {
    vocab: Vec<Token>,
    index: HashMap<Token, usize>,
    feature_dim: usize,
    token_dim: usize,
    params: PolicyParams,
    bos: usize,
    eos: usize,
}

impl PolicyModel {
    pub fn new(vocab: Vec<Token>, feature_dim: usize, token_dim: usize) -> Result<Self, ModelError> {
        let mut index = HashMap::new();
        for (i, token) in vocab.iter().enumerate() {
            if index.insert(token.clone(), i).is_some() {
                return Err(ModelError::DuplicateVocabToken(token.as_str().to_string()));
            }
        }
        let bos = *index
            .get(&Token::bos())
            .ok_or_else(|| ModelError::MissingReserved(crate::text::BOS_TOKEN.to_string()))?;
        let eos = *index
            .get(&Token::eos())
            .ok_or_else(|| ModelError::MissingReserved(crate::text::EOS_TOKEN.to_string()))?;
        if !index.contains_key(&Token::mask()) {
            return Err(ModelError::MissingReserved(crate::text::MASK_TOKEN.to_string()));
        }
        let params = PolicyParams::zeros(vocab.len(), feature_dim, token_dim);
        Ok(PolicyModel {
            vocab,
            index,
            feature_dim,
            token_dim,
            params,
            bos,
            eos,
        })
    }

    /// Fresh model with parameters drawn uniformly from [-scale, scale].
    pub fn init_random(
        vocab: Vec<Token>,
        feature_dim: usize,
        token_dim: usize,
        seed: u64,
        scale: f64,
    ) -> Result<Self, ModelError> {
        let mut model = PolicyModel::new(vocab, feature_dim, token_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in model.params.values_mut() {
            *v = rng.random_range(-scale..scale);
        }
        Ok(model)
    }

    pub fn vocab(&self) -> &[Token] {
        &self.vocab
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn token_dim(&self) -> usize {
        self.token_dim
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut PolicyParams {
        &mut self.params
    }

    pub fn token_index(&self, token: &Token) -> Result<usize, ModelError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| ModelError::UnknownToken(token.as_str().to_string()))
    }

    pub fn eos_index(&self) -> usize {
        self.eos
    }

    fn check_features(&self, features: &[f64]) -> Result<(), ModelError> {
        if features.len() != self.feature_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    fn logits_for(&self, features: &[f64], prev: usize) -> Vec<f64> {
        let emb = &self.params.token_emb[prev];
        (0..self.vocab.len())
            .map(|v| {
                let img: f64 = self.params.w_img[v]
                    .iter()
                    .zip(features)
                    .map(|(w, x)| w * x)
                    .sum();
                let tok: f64 = self.params.w_tok[v].iter().zip(emb).map(|(w, x)| w * x).sum();
                img + tok + self.params.b[v]
            })
            .collect()
    }

    /// Next-token logits given the image features and the previous token:
    /// W_img * x + W_tok * token_emb[prev] + b.
    pub fn step_logits(&self, features: &[f64], prev: &Token) -> Result<Vec<f64>, ModelError> {
        self.check_features(features)?;
        let prev = self.token_index(prev)?;
        Ok(self.logits_for(features, prev))
    }

    /// Accumulates one step's logit gradient into `grad`.
    fn backprop_step(&self, features: &[f64], prev: usize, d_logits: &[f64], grad: &mut PolicyParams) {
        let emb = &self.params.token_emb[prev];
        for (v, &d) in d_logits.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.b[v] += d;
            for (g, x) in grad.w_img[v].iter_mut().zip(features) {
                *g += d * x;
            }
            for (g, x) in grad.w_tok[v].iter_mut().zip(emb) {
                *g += d * x;
            }
            for (g, w) in grad.token_emb[prev].iter_mut().zip(&self.params.w_tok[v]) {
                *g += d * w;
            }
        }
    }

    /// The teacher-forcing targets for a caption: its tokens, plus the
    /// terminating [EOS] when the caption is shorter than `t_max`.
    fn emission_targets(&self, caption: &Caption, t_max: usize) -> Result<Vec<usize>, ModelError> {
        let mut targets = Vec::with_capacity(caption.len() + 1);
        for token in caption.tokens() {
            targets.push(self.token_index(token)?);
        }
        if caption.len() < t_max {
            targets.push(self.eos);
        }
        Ok(targets)
    }

    fn log_prob_grad_for_targets(&self, features: &[f64], targets: &[usize]) -> (f64, PolicyParams) {
        let mut grad = self.params.zeros_like();
        let mut log_prob = 0.0;
        let mut prev = self.bos;
        for &target in targets {
            let logits = self.logits_for(features, prev);
            let probs = softmax(&logits);
            log_prob += probs[target].ln();
            // d log p / d logits = onehot(target) - softmax
            let d_logits: Vec<f64> = probs
                .iter()
                .enumerate()
                .map(|(v, &p)| if v == target { 1.0 - p } else { -p })
                .collect();
            self.backprop_step(features, prev, &d_logits, &mut grad);
            prev = target;
        }
        (log_prob, grad)
    }

    /// Log-probability of generating exactly `caption` under the decoding
    /// scheme, with its exact gradient.
    pub fn sequence_log_prob_grad(
        &self,
        features: &[f64],
        caption: &Caption,
        t_max: usize,
    ) -> Result<(f64, PolicyParams), ModelError> {
        self.check_features(features)?;
        let targets = self.emission_targets(caption, t_max)?;
        Ok(self.log_prob_grad_for_targets(features, &targets))
    }

    /// Log-probability only (no gradient buffers).
    pub fn sequence_log_prob(
        &self,
        features: &[f64],
        caption: &Caption,
        t_max: usize,
    ) -> Result<f64, ModelError> {
        self.check_features(features)?;
        let targets = self.emission_targets(caption, t_max)?;
        let mut log_prob = 0.0;
        let mut prev = self.bos;
        for &target in &targets {
            let probs = softmax(&self.logits_for(features, prev));
            log_prob += probs[target].ln();
            prev = target;
        }
        Ok(log_prob)
    }

    /// Teacher-forced cross-entropy on a reference caption, averaged over
    /// emission steps, with gradient.
    pub fn s2s_loss(
        &self,
        features: &[f64],
        y_ref: &Caption,
        t_max: usize,
    ) -> Result<(f64, PolicyParams), ModelError> {
        let (log_prob, mut grad) = self.sequence_log_prob_grad(features, y_ref, t_max)?;
        let steps = y_ref.len().min(t_max) + usize::from(y_ref.len() < t_max);
        let scale = -1.0 / steps as f64;
        grad.scale(scale);
        Ok((scale * log_prob, grad))
    }

    /// Gated paraphrase loss: -g * log s[p_out] where s is the next-token
    /// distribution at the masked timestep, conditioned on the original
    /// tokens left of the mask and the image. A zero gate yields exactly
    /// zero loss and gradient.
    pub fn paraphrase_loss(
        &self,
        features: &[f64],
        masked: &MaskedCaption,
        p_out: &Token,
        g_val: f64,
    ) -> Result<(f64, PolicyParams), ModelError> {
        self.check_features(features)?;
        let target = self.token_index(p_out)?;
        if g_val == 0.0 {
            return Ok((0.0, self.params.zeros_like()));
        }
        let m = masked.mask_index();
        let prev = if m == 0 {
            self.bos
        } else {
            self.token_index(&masked.tokens()[m - 1])?
        };
        let probs = softmax(&self.logits_for(features, prev));
        let loss = -g_val * probs[target].ln();
        let mut grad = self.params.zeros_like();
        let d_logits: Vec<f64> = probs
            .iter()
            .enumerate()
            .map(|(v, &p)| g_val * (p - if v == target { 1.0 } else { 0.0 }))
            .collect();
        self.backprop_step(features, prev, &d_logits, &mut grad);
        Ok((loss, grad))
    }

    /// Generates a caption. Greedy takes the per-step argmax (ties go to
    /// the lowest vocabulary index); sampling draws from the softmax using
    /// a ChaCha stream seeded by `seed`. Generation stops at [EOS] or
    /// after `t_max` tokens; the returned log-probability covers every
    /// emitted step including the terminating [EOS].
    pub fn decode(
        &self,
        features: &[f64],
        mode: DecodeMode,
        t_max: usize,
        seed: u64,
    ) -> Result<(Caption, f64), ModelError> {
        self.check_features(features)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tokens = Vec::new();
        let mut log_prob = 0.0;
        let mut prev = self.bos;
        for _ in 0..t_max {
            let probs = softmax(&self.logits_for(features, prev));
            let choice = match mode {
                DecodeMode::Greedy => argmax(&probs),
                DecodeMode::Sample => sample_index(&probs, rng.random::<f64>()),
            };
            log_prob += probs[choice].ln();
            if choice == self.eos {
                return Ok((Caption::from_tokens(tokens), log_prob));
            }
            tokens.push(self.vocab[choice].clone());
            prev = choice;
        }
        Ok((Caption::from_tokens(tokens), log_prob))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: 1,
            vocab: self.vocab.iter().map(|t| t.as_str().to_string()).collect(),
            feature_dim: self.feature_dim,
            token_dim: self.token_dim,
            w_img: self.params.w_img.clone(),
            w_tok: self.params.w_tok.clone(),
            token_emb: self.params.token_emb.clone(),
            b: self.params.b.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self, ModelError> {
        if ckpt.version != 1 {
            return Err(ModelError::BadCheckpoint(format!(
                "unsupported version {}",
                ckpt.version
            )));
        }
        let vocab = ckpt
            .vocab
            .iter()
            .map(|s| Token::new(s))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ModelError::BadCheckpoint(e.to_string()))?;
        let mut model = PolicyModel::new(vocab, ckpt.feature_dim, ckpt.token_dim)?;
        let v = model.vocab_size();
        let rows_ok = |m: &Vec<Vec<f64>>, cols: usize| {
            m.len() == v && m.iter().all(|row| row.len() == cols)
        };
        if !rows_ok(&ckpt.w_img, ckpt.feature_dim)
            || !rows_ok(&ckpt.w_tok, ckpt.token_dim)
            || !rows_ok(&ckpt.token_emb, ckpt.token_dim)
            || ckpt.b.len() != v
        {
            return Err(ModelError::BadCheckpoint("parameter shape mismatch".into()));
        }
        model.params = PolicyParams {
            w_img: ckpt.w_img,
            w_tok: ckpt.w_tok,
            token_emb: ckpt.token_emb,
            b: ckpt.b,
        };
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut json = serde_json::to_string(&self.to_checkpoint())?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let content = std::fs::read_to_string(path)?;
        PolicyModel::from_checkpoint(serde_json::from_str(&content)?)
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(s: &str) -> Token {
        Token::new(s).unwrap()
    }

    fn small_vocab(extra: &[&str]) -> Vec<Token> {
        let mut vocab = vec![Token::bos(), Token::eos(), Token::mask()];
        vocab.extend(extra.iter().map(|s| tok(s)));
        vocab
    }

    fn cap(words: &[&str]) -> Caption {
        Caption::parse_tokens(words).unwrap()
    }

    #[test]
    fn vocab_requires_reserved_tokens() {
        assert!(matches!(
            PolicyModel::new(vec![tok("a")], 1, 1),
            Err(ModelError::MissingReserved(_))
        ));
        let mut vocab = small_vocab(&["a"]);
        vocab.push(tok("a"));
        assert!(matches!(
            PolicyModel::new(vocab, 1, 1),
            Err(ModelError::DuplicateVocabToken(_))
        ));
    }

    #[test]
    fn zero_model_is_uniform() {
        let model = PolicyModel::new(small_vocab(&["a", "b"]), 2, 2).unwrap();
        let logits = model.step_logits(&[0.0, 0.0], &Token::bos()).unwrap();
        let probs = softmax(&logits);
        for (i, p) in probs.iter().enumerate() {
            assert!((p - 0.2).abs() < 1e-15, "p[{i}] = {p}");
        }
    }

    #[test]
    fn softmax_shift_invariant_and_normalized() {
        let mut model =
            PolicyModel::init_random(small_vocab(&["a", "b"]), 3, 2, 5, 0.5).unwrap();
        let features = [0.3, -1.0, 0.7];
        let base = softmax(&model.step_logits(&features, &tok("a")).unwrap());
        for b in &mut model.params_mut().b {
            *b += 3.25;
        }
        let shifted = softmax(&model.step_logits(&features, &tok("a")).unwrap());
        for (x, y) in base.iter().zip(&shifted) {
            assert!((x - y).abs() < 1e-12);
        }
        let sum: f64 = shifted.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_and_unknown_token() {
        let model = PolicyModel::new(small_vocab(&["a"]), 2, 2).unwrap();
        assert!(matches!(
            model.step_logits(&[1.0], &Token::bos()),
            Err(ModelError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            model.step_logits(&[1.0, 0.0], &tok("zzz")),
            Err(ModelError::UnknownToken(_))
        ));
    }

    #[test]
    fn greedy_decode_is_deterministic() {
        let model = PolicyModel::init_random(small_vocab(&["a", "b", "c"]), 2, 2, 7, 0.8).unwrap();
        let features = [1.0, -0.5];
        let a = model.decode(&features, DecodeMode::Greedy, 5, 0).unwrap();
        let b = model.decode(&features, DecodeMode::Greedy, 5, 999).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.to_bits(), b.1.to_bits());
    }

    #[test]
    fn eos_dominant_model_emits_empty_caption() {
        let mut model = PolicyModel::new(small_vocab(&["a"]), 1, 1).unwrap();
        let eos = model.eos_index();
        model.params_mut().b[eos] = 50.0;
        let (caption, log_prob) = model.decode(&[0.0], DecodeMode::Greedy, 4, 0).unwrap();
        assert!(caption.is_empty());
        assert!(log_prob.abs() < 1e-6);
    }

    #[test]
    fn sampled_frequencies_match_enumerated_probabilities() {
        // V=3, T_max=2: compare empirical sequence frequencies over 1e5
        // seeds with exactly enumerated probabilities, within 3 sigma.
        let model = PolicyModel::init_random(small_vocab(&[]), 1, 1, 13, 0.7).unwrap();
        let features = [0.4];
        let t_max = 2;

        let sequences = enumerate_sequences(&model, t_max);
        let mut exact: std::collections::BTreeMap<String, f64> = std::collections::BTreeMap::new();
        for caption in &sequences {
            let p = model.sequence_log_prob(&features, caption, t_max).unwrap().exp();
            exact.insert(caption.text(), p);
        }
        let total: f64 = exact.values().sum();
        assert!((total - 1.0).abs() < 1e-12, "sequence space sums to {total}");

        let n = 100_000u64;
        let mut counts: std::collections::BTreeMap<String, u64> = std::collections::BTreeMap::new();
        for seed in 0..n {
            let (caption, _) = model.decode(&features, DecodeMode::Sample, t_max, seed).unwrap();
            *counts.entry(caption.text()).or_insert(0) += 1;
        }
        for (text, &p) in &exact {
            let observed = counts.get(text).copied().unwrap_or(0) as f64;
            let expected = p * n as f64;
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (observed - expected).abs() <= 3.0 * sigma + 1.0,
                "{text:?}: observed {observed}, expected {expected}, sigma {sigma}"
            );
        }
    }

    fn enumerate_sequences(model: &PolicyModel, t_max: usize) -> Vec<Caption> {
        // All content-token sequences of length < t_max (implicitly EOS
        // terminated) plus all full-length sequences.
        let content: Vec<Token> = model
            .vocab()
            .iter()
            .filter(|t| **t != Token::eos())
            .cloned()
            .collect();
        let mut result = Vec::new();
        let mut frontier: Vec<Vec<Token>> = vec![vec![]];
        for len in 0..=t_max {
            for seq in &frontier {
                result.push(Caption::from_tokens(seq.clone()));
            }
            if len == t_max {
                break;
            }
            frontier = frontier
                .into_iter()
                .flat_map(|seq| {
                    content.iter().map(move |t| {
                        let mut next = seq.clone();
                        next.push(t.clone());
                        next
                    })
                })
                .collect();
        }
        result
    }

    #[test]
    fn greedy_log_prob_consistent_with_sequence_log_prob() {
        let model = PolicyModel::init_random(small_vocab(&["a", "b"]), 2, 3, 21, 0.6).unwrap();
        let features = [0.2, -0.8];
        let t_max = 4;
        let (caption, decode_lp) = model.decode(&features, DecodeMode::Greedy, t_max, 0).unwrap();
        let lp = model.sequence_log_prob(&features, &caption, t_max).unwrap();
        assert!((decode_lp - lp).abs() < 1e-12);
        let (lp_grad, _) = model.sequence_log_prob_grad(&features, &caption, t_max).unwrap();
        assert!((decode_lp - lp_grad).abs() < 1e-12);
    }

    #[test]
    fn uniform_model_closed_forms() {
        let model = PolicyModel::new(small_vocab(&["w", "x"]), 1, 1).unwrap();
        let v = model.vocab_size() as f64;
        let features = [0.0];

        // s2s loss under the uniform model is ln V
        let (loss, _) = model.s2s_loss(&features, &cap(&["w", "x"]), 8).unwrap();
        assert!((loss - v.ln()).abs() < 1e-12);

        // single-token caption at t_max=1: grad of b is onehot - 1/V
        let y = cap(&["w"]);
        let (_, grad) = model.sequence_log_prob_grad(&features, &y, 1).unwrap();
        let w_idx = model.token_index(&tok("w")).unwrap();
        for (i, g) in grad.b.iter().enumerate() {
            let expected = if i == w_idx { 1.0 - 1.0 / v } else { -1.0 / v };
            assert!((g - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..10 {
            let mut model =
                PolicyModel::init_random(small_vocab(&["w"]), 3, 2, 1000 + case, 0.6).unwrap();
            let features: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let caption = cap(&["w", "w"]);
            let t_max = 3;

            let (_, grad) = model.sequence_log_prob_grad(&features, &caption, t_max).unwrap();
            let analytic: Vec<f64> = grad.values().collect();
            let n = model.params().param_count();
            let h = 1e-5;
            for k in 0..n {
                let orig = model.params().values().nth(k).unwrap();
                *model.params_mut().values_mut().nth(k).unwrap() = orig + h;
                let plus = model.sequence_log_prob(&features, &caption, t_max).unwrap();
                *model.params_mut().values_mut().nth(k).unwrap() = orig - h;
                let minus = model.sequence_log_prob(&features, &caption, t_max).unwrap();
                *model.params_mut().values_mut().nth(k).unwrap() = orig;
                let numeric = (plus - minus) / (2.0 * h);
                let denom = numeric.abs().max(analytic[k].abs()).max(1e-8);
                assert!(
                    (numeric - analytic[k]).abs() / denom <= 1e-5,
                    "case {case} param {k}: analytic {} vs numeric {numeric}",
                    analytic[k]
                );
            }
        }
    }

    #[test]
    fn paraphrase_loss_gate_annihilation() {
        let model = PolicyModel::init_random(small_vocab(&["w", "x"]), 2, 2, 3, 0.4).unwrap();
        let lexicon = crate::text::Lexicon::new();
        let masked =
            crate::text::mask_random_non_object(&cap(&["w", "x", "w"]), &lexicon, 5).unwrap();
        let (loss, grad) = model
            .paraphrase_loss(&[0.1, 0.2], &masked, &tok("x"), 0.0)
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.values().all(|v| v == 0.0));
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let model = PolicyModel::init_random(small_vocab(&["a", "b"]), 2, 3, 31, 0.9).unwrap();
        let json = serde_json::to_string(&model.to_checkpoint()).unwrap();
        assert!(json.contains("\"W_img\""));
        assert!(json.contains("\"version\":1"));
        let back = PolicyModel::from_checkpoint(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.params(), model.params());
        assert_eq!(back.vocab(), model.vocab());
    }
}
