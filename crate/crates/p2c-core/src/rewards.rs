//! Repetition penalty, reward composition by data source, and the
//! self-critical policy-gradient estimator.

use serde::{Deserialize, Serialize};

use crate::data::{ImageSample, Split};
use crate::embeddings::{cosine, EmbeddingTable};
use crate::metrics::{cider, CorpusStats, MetricsError};
use crate::models::{AssociationModel, ModelError, PolicyModel, PolicyParams};
use crate::text::{Caption, Token};

#[derive(Debug, thiserror::Error)]
pub enum RewardError {
    #[error("caption must have at least 2 tokens for an assignment")]
    CaptionTooShort,
    #[error("labeled image {0:?} needs references for the CIDEr reward")]
    MissingReferences(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-position assignment map: position i is assigned to `map[i]`, never
/// to itself.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment(Vec<usize>);

impl Assignment {
    pub fn target(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// Assigns every word to the most similar other word in the same caption.
/// The objective decomposes per position, so each entry is the argmax of
/// the pairwise similarity over j != i, ties going to the lowest index.
pub fn repetition_assignment(
    caption: &Caption,
    table: &EmbeddingTable,
) -> Result<Assignment, RewardError> {
    let tokens = caption.tokens();
    if tokens.len() < 2 {
        return Err(RewardError::CaptionTooShort);
    }
    let map = (0..tokens.len())
        .map(|i| {
            let mut best_j = usize::MAX;
            let mut best_sim = f64::NEG_INFINITY;
            for (j, other) in tokens.iter().enumerate() {
                if j == i {
                    continue;
                }
                let sim = cosine(&tokens[i], other, table);
                if sim > best_sim {
                    best_sim = sim;
                    best_j = j;
                }
            }
            best_j
        })
        .collect();
    Ok(Assignment(map))
}

/// Repetition-penalty reward: 1 minus the mean best non-self similarity.
/// Computed over content tokens only (reserved tokens are dropped);
/// captions with fewer than two content tokens have nothing to repeat and
/// score 1.
pub fn repetition_reward(caption: &Caption, table: &EmbeddingTable) -> f64 {
    let content: Vec<Token> = caption
        .tokens()
        .iter()
        .filter(|t| !t.is_reserved())
        .cloned()
        .collect();
    if content.len() < 2 {
        return 1.0;
    }
    let content_caption = Caption::from_tokens(content);
    let tokens = content_caption.tokens();
    let assignment = repetition_assignment(&content_caption, table)
        .expect("content length >= 2 checked above");
    let total: f64 = tokens
        .iter()
        .enumerate()
        .map(|(i, token)| cosine(token, &tokens[assignment.target(i)], table))
        .sum();
    1.0 - total / tokens.len() as f64
}

/// Relative weights of the reward components. The CIDEr reward is divided
/// by 10 before weighting so all components share the [0, ~1] scale; set
/// `w_cider` to 10 for the raw unscaled sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_cider: f64,
    pub w_assoc: f64,
    pub w_rep: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            w_cider: 1.0,
            w_assoc: 1.0,
            w_rep: 1.0,
        }
    }
}

/// Per-caption reward components and their case-selected total:
/// labeled data earns CIDEr + association, uncaptioned data earns
/// association + repetition.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_cider: Option<f64>,
    pub r_assoc: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_rep: Option<f64>,
    pub total: f64,
    pub source: Split,
}

/// Composes the total reward for one caption according to the image's
/// split. References must be present exactly for labeled images; they are
/// ignored for uncaptioned ones.
pub fn compose_reward(
    image: &ImageSample,
    caption: &Caption,
    refs: Option<&[Caption]>,
    association: &dyn AssociationModel,
    table: &EmbeddingTable,
    stats: &CorpusStats,
    weights: &RewardWeights,
) -> Result<RewardBreakdown, RewardError> {
    let r_assoc = weights.w_assoc * association.score(image, caption);
    match image.split {
        Split::Labeled => {
            let refs = refs
                .filter(|r| !r.is_empty())
                .ok_or_else(|| RewardError::MissingReferences(image.id.clone()))?;
            let r_cider = weights.w_cider * cider(caption, refs, stats)? / 10.0;
            Ok(RewardBreakdown {
                r_cider: Some(r_cider),
                r_assoc,
                r_rep: None,
                total: r_cider + r_assoc,
                source: Split::Labeled,
            })
        }
        Split::Uncaptioned => {
            let r_rep = weights.w_rep * repetition_reward(caption, table);
            Ok(RewardBreakdown {
                r_cider: None,
                r_assoc,
                r_rep: Some(r_rep),
                total: r_assoc + r_rep,
                source: Split::Uncaptioned,
            })
        }
    }
}

/// Self-critical REINFORCE gradient of the loss:
/// -(r_sampled - r_greedy) * grad log p(sampled). A zero advantage yields
/// the exact zero gradient.
pub fn scst_gradient(
    model: &PolicyModel,
    features: &[f64],
    sampled: &Caption,
    rewards: (f64, f64),
    t_max: usize,
) -> Result<PolicyParams, RewardError> {
    let (r_sampled, r_greedy) = rewards;
    let advantage = r_sampled - r_greedy;
    if advantage == 0.0 {
        return Ok(model.params().zeros_like());
    }
    let (_, mut grad) = model.sequence_log_prob_grad(features, sampled, t_max)?;
    grad.scale(-advantage);
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::DomainTag;
    use crate::metrics::build_corpus_stats;
    use crate::models::ConstantAssociation;
    use crate::text::Token;

    fn tok(s: &str) -> Token {
        Token::new(s).unwrap()
    }

    fn cap(words: &[&str]) -> Caption {
        Caption::parse_tokens(words).unwrap()
    }

    fn orthogonal_table(words: &[&str]) -> EmbeddingTable {
        let dim = words.len();
        EmbeddingTable::from_pairs(words.iter().enumerate().map(|(i, w)| {
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            (tok(w), v)
        }))
        .unwrap()
    }

    #[test]
    fn assignment_two_identical_tokens() {
        let table = orthogonal_table(&["cat"]);
        let assignment = repetition_assignment(&cap(&["cat", "cat"]), &table).unwrap();
        assert_eq!(assignment.as_slice(), &[1, 0]);
    }

    #[test]
    fn assignment_orthogonal_ties_to_lowest_index() {
        let table = orthogonal_table(&["a", "b", "c"]);
        let assignment = repetition_assignment(&cap(&["a", "b", "c"]), &table).unwrap();
        // all similarities 0: every position picks the lowest other index
        assert_eq!(assignment.as_slice(), &[1, 0, 0]);
    }

    #[test]
    fn assignment_too_short() {
        let table = orthogonal_table(&["a"]);
        assert!(matches!(
            repetition_assignment(&cap(&["a"]), &table),
            Err(RewardError::CaptionTooShort)
        ));
    }

    #[test]
    fn assignment_matches_exhaustive_search() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let words = ["v", "w", "x", "y", "z"];
        for case in 0..100 {
            let dim = 4;
            let table = EmbeddingTable::from_pairs(words.iter().map(|w| {
                let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                (tok(w), v)
            }))
            .unwrap();
            let len = rng.random_range(2..=5usize);
            let tokens: Vec<&str> =
                (0..len).map(|_| words[rng.random_range(0..words.len())]).collect();
            let caption = cap(&tokens);

            let assignment = repetition_assignment(&caption, &table).unwrap();
            let fast_score: f64 = (0..len)
                .map(|i| {
                    cosine(
                        &caption.tokens()[i],
                        &caption.tokens()[assignment.target(i)],
                        &table,
                    )
                })
                .sum();

            // Exhaustive search over all (len-1)^len candidate maps.
            let mut best_score = f64::NEG_INFINITY;
            let mut candidate = vec![0usize; len];
            loop {
                let valid: Vec<usize> = candidate
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| if c >= i { c + 1 } else { c })
                    .collect();
                let score: f64 = valid
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| cosine(&caption.tokens()[i], &caption.tokens()[j], &table))
                    .sum();
                if score > best_score {
                    best_score = score;
                }
                // odometer over base (len-1)
                let mut pos = 0;
                loop {
                    if pos == len {
                        break;
                    }
                    candidate[pos] += 1;
                    if candidate[pos] < len - 1 {
                        break;
                    }
                    candidate[pos] = 0;
                    pos += 1;
                }
                if pos == len {
                    break;
                }
            }
            assert!(
                (fast_score - best_score).abs() < 1e-12,
                "case {case}: per-position {fast_score} vs exhaustive {best_score}"
            );
        }
    }

    #[test]
    fn repetition_reward_extremes() {
        let table = orthogonal_table(&["cat", "dog", "sun"]);
        assert_eq!(repetition_reward(&cap(&["cat", "cat", "cat"]), &table), 0.0);
        assert_eq!(repetition_reward(&cap(&["cat", "dog", "sun"]), &table), 1.0);
        // single-token and empty captions have nothing to repeat
        assert_eq!(repetition_reward(&cap(&["cat"]), &table), 1.0);
        assert_eq!(repetition_reward(&Caption::from_tokens(vec![]), &table), 1.0);
    }

    #[test]
    fn repetition_reward_in_unit_interval() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let words = ["a", "b", "c", "d"];
        let table = EmbeddingTable::from_pairs(words.iter().map(|w| {
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            (tok(w), v)
        }))
        .unwrap();
        for _ in 0..50 {
            let len = rng.random_range(2..8usize);
            let tokens: Vec<&str> =
                (0..len).map(|_| words[rng.random_range(0..words.len())]).collect();
            let r = repetition_reward(&cap(&tokens), &table);
            assert!((0.0..=1.0).contains(&r), "r_rep = {r}");
        }
    }

    #[test]
    fn repetition_reward_ignores_reserved_tokens() {
        let table = orthogonal_table(&["cat", "dog"]);
        let with_reserved = Caption::from_tokens(vec![
            tok("cat"),
            Token::bos(),
            tok("dog"),
            Token::eos(),
        ]);
        assert_eq!(repetition_reward(&with_reserved, &table), 1.0);
    }

    fn labeled_image(id: &str) -> ImageSample {
        ImageSample {
            id: id.into(),
            objects: vec![tok("cat")],
            features: vec![],
            split: Split::Labeled,
            refs: None,
            domain: DomainTag::In,
        }
    }

    fn uncaptioned_image(id: &str) -> ImageSample {
        ImageSample {
            split: Split::Uncaptioned,
            domain: DomainTag::Out,
            ..labeled_image(id)
        }
    }

    #[test]
    fn compose_reward_case_split() {
        let table = orthogonal_table(&["cat", "dog"]);
        let reference = cap(&["a", "cat", "sits"]);
        let stats = build_corpus_stats(&[vec![reference.clone()], vec![cap(&["a", "dog", "runs"])]])
            .unwrap();
        let assoc = ConstantAssociation(0.3);
        let weights = RewardWeights::default();

        let labeled = labeled_image("l0");
        let breakdown = compose_reward(
            &labeled,
            &reference,
            Some(std::slice::from_ref(&reference)),
            &assoc,
            &table,
            &stats,
            &weights,
        )
        .unwrap();
        assert_eq!(breakdown.source, Split::Labeled);
        assert!(breakdown.r_rep.is_none());
        let r_cider = breakdown.r_cider.unwrap();
        assert!((breakdown.total - (r_cider + breakdown.r_assoc)).abs() < 1e-15);
        assert!((breakdown.r_assoc - 0.3).abs() < 1e-15);

        let uncaptioned = uncaptioned_image("u0");
        let breakdown = compose_reward(
            &uncaptioned,
            &cap(&["cat", "cat"]),
            None,
            &assoc,
            &table,
            &stats,
            &weights,
        )
        .unwrap();
        assert_eq!(breakdown.source, Split::Uncaptioned);
        assert!(breakdown.r_cider.is_none());
        assert_eq!(breakdown.r_rep, Some(0.0));
        assert!((breakdown.total - breakdown.r_assoc).abs() < 1e-15);

        // identical tokens and a zero association score: total reward 0
        let zero = compose_reward(
            &uncaptioned,
            &cap(&["cat", "cat"]),
            None,
            &ConstantAssociation(0.0),
            &table,
            &stats,
            &weights,
        )
        .unwrap();
        assert_eq!(zero.total, 0.0);
    }

    #[test]
    fn compose_reward_missing_refs() {
        let table = orthogonal_table(&["cat"]);
        let stats = build_corpus_stats(&[vec![cap(&["a", "cat"])]]).unwrap();
        let err = compose_reward(
            &labeled_image("l1"),
            &cap(&["a", "cat"]),
            None,
            &ConstantAssociation(0.5),
            &table,
            &stats,
            &RewardWeights::default(),
        );
        assert!(matches!(err, Err(RewardError::MissingReferences(_))));
    }

    #[test]
    fn scst_zero_advantage_is_exact_zero() {
        let vocab = vec![Token::bos(), Token::eos(), Token::mask(), tok("w")];
        let model = PolicyModel::init_random(vocab, 2, 2, 5, 0.5).unwrap();
        let grad = scst_gradient(&model, &[0.1, 0.2], &cap(&["w"]), (0.7, 0.7), 3).unwrap();
        assert!(grad.values().all(|v| v == 0.0));
    }

    #[test]
    fn scst_positive_advantage_raises_sampled_log_prob() {
        let vocab = vec![Token::bos(), Token::eos(), Token::mask(), tok("w"), tok("x")];
        let mut model = PolicyModel::init_random(vocab, 2, 2, 8, 0.5).unwrap();
        let features = [0.4, -0.2];
        let sampled = cap(&["w", "x"]);
        let t_max = 3;
        let before = model.sequence_log_prob(&features, &sampled, t_max).unwrap();
        let grad = scst_gradient(&model, &features, &sampled, (1.0, 0.2), t_max).unwrap();
        // one small gradient-descent step on the loss
        model.params_mut().axpy(-0.01, &grad);
        let after = model.sequence_log_prob(&features, &sampled, t_max).unwrap();
        assert!(after > before);
    }
}
