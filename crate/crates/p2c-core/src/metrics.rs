//! Caption evaluation: BLEU@4, tf-idf CIDEr, the object-excluded fluency
//! variants, object precision/recall/F1, and masked-prediction perplexity.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::text::{extract_ngrams, filter_object_ngrams, object_set, Caption, Lexicon, NGram, NGramCounts};

/// Smoothing floor for clipped n-gram precisions: a zero precision at any
/// order becomes this epsilon instead of collapsing the geometric mean to
/// -inf, so total mismatch scores ~0 deterministically.
pub const BLEU_SMOOTHING_EPS: f64 = 1e-9;

const MAX_ORDER: usize = 4;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("reference list is empty")]
    EmptyReferences,
    #[error("corpus has no references")]
    EmptyCorpus,
    #[error("probability {0} outside (0, 1]")]
    InvalidProbability(f64),
    #[error("probability list is empty")]
    NoProbabilities,
}

/// Corpus-level document frequencies backing the CIDEr idf weights.
/// An image counts once per n-gram regardless of how many of its
/// references contain it.
#[derive(Clone, Debug)]
pub struct CorpusStats {
    num_images: usize,
    doc_freq: std::collections::BTreeMap<NGram, u64>,
}

impl CorpusStats {
    pub fn num_images(&self) -> usize {
        self.num_images
    }

    pub fn doc_freq(&self, gram: &NGram) -> u64 {
        self.doc_freq.get(gram).copied().unwrap_or(0)
    }

    /// idf = ln(|I| / df), with df floored at 1 for unseen n-grams.
    pub fn idf(&self, gram: &NGram) -> f64 {
        let df = self.doc_freq(gram).max(1);
        (self.num_images as f64 / df as f64).ln()
    }
}

/// Builds document frequencies over one reference set per image.
pub fn build_corpus_stats(refs_per_image: &[Vec<Caption>]) -> Result<CorpusStats, MetricsError> {
    if refs_per_image.is_empty() || refs_per_image.iter().all(|refs| refs.is_empty()) {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut doc_freq = std::collections::BTreeMap::new();
    for refs in refs_per_image {
        let mut seen = BTreeSet::new();
        for reference in refs {
            for gram in extract_ngrams(reference, MAX_ORDER).into_keys() {
                seen.insert(gram);
            }
        }
        for gram in seen {
            *doc_freq.entry(gram).or_insert(0) += 1;
        }
    }
    Ok(CorpusStats {
        num_images: refs_per_image.len(),
        doc_freq,
    })
}

fn order_totals(grams: &NGramCounts) -> [u64; MAX_ORDER] {
    let mut totals = [0u64; MAX_ORDER];
    for (gram, count) in grams {
        totals[gram.order() - 1] += count;
    }
    totals
}

/// Reference length for the brevity penalty: the reference unigram total
/// closest to the hypothesis length, ties broken toward the shorter one.
fn closest_ref_len(hyp_len: u64, ref_lens: &[u64]) -> u64 {
    let mut best = ref_lens[0];
    for &len in &ref_lens[1..] {
        let (d_new, d_best) = (len.abs_diff(hyp_len), best.abs_diff(hyp_len));
        if d_new < d_best || (d_new == d_best && len < best) {
            best = len;
        }
    }
    best
}

fn bleu_from_counts(hyp: &NGramCounts, refs: &[NGramCounts]) -> f64 {
    let hyp_len = order_totals(hyp)[0];
    if hyp_len == 0 {
        return 0.0;
    }
    let ref_lens: Vec<u64> = refs.iter().map(|r| order_totals(r)[0]).collect();
    let ref_len = closest_ref_len(hyp_len, &ref_lens);

    let mut clipped = [0u64; MAX_ORDER];
    let totals = order_totals(hyp);
    for (gram, &count) in hyp {
        let max_ref = refs
            .iter()
            .map(|r| r.get(gram).copied().unwrap_or(0))
            .max()
            .unwrap_or(0);
        clipped[gram.order() - 1] += count.min(max_ref);
    }

    // Orders where the hypothesis has no n-grams at all (it is shorter
    // than n) do not participate in the geometric mean; a present order
    // with zero clipped matches contributes the smoothing epsilon.
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        let p = if clipped[n] == 0 {
            BLEU_SMOOTHING_EPS
        } else {
            clipped[n] as f64 / totals[n] as f64
        };
        log_sum += p.ln();
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    let geo_mean = (log_sum / orders as f64).exp();

    let brevity = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    brevity * geo_mean
}

/// BLEU@4 with clipped modified precisions and brevity penalty.
pub fn bleu4(hyp: &Caption, refs: &[Caption]) -> Result<f64, MetricsError> {
    if refs.is_empty() {
        return Err(MetricsError::EmptyReferences);
    }
    let hyp_grams = extract_ngrams(hyp, MAX_ORDER);
    let ref_grams: Vec<NGramCounts> = refs.iter().map(|r| extract_ngrams(r, MAX_ORDER)).collect();
    Ok(bleu_from_counts(&hyp_grams, &ref_grams))
}

/// Per-order similarity between two n-gram multisets under tf-idf
/// weighting. When the idf weights annihilate both vectors (every n-gram
/// of both captions has idf 0, e.g. a single-image corpus), the raw count
/// vectors decide, so self-similarity stays 1.
fn order_similarity(hyp: &NGramCounts, reference: &NGramCounts, order: usize, stats: &CorpusStats) -> f64 {
    let mut dot = 0.0;
    let mut dot_tf = 0.0;
    let mut norm_h = 0.0;
    let mut norm_h_tf = 0.0;
    for (gram, &count) in hyp {
        if gram.order() != order {
            continue;
        }
        let w = count as f64 * stats.idf(gram);
        norm_h += w * w;
        norm_h_tf += (count * count) as f64;
        if let Some(&ref_count) = reference.get(gram) {
            dot += w * ref_count as f64 * stats.idf(gram);
            dot_tf += (count * ref_count) as f64;
        }
    }
    let mut norm_r = 0.0;
    let mut norm_r_tf = 0.0;
    for (gram, &count) in reference {
        if gram.order() != order {
            continue;
        }
        let w = count as f64 * stats.idf(gram);
        norm_r += w * w;
        norm_r_tf += (count * count) as f64;
    }
    if norm_h > 0.0 && norm_r > 0.0 {
        dot / (norm_h.sqrt() * norm_r.sqrt())
    } else if norm_h_tf > 0.0 && norm_r_tf > 0.0 {
        dot_tf / (norm_h_tf.sqrt() * norm_r_tf.sqrt())
    } else {
        0.0
    }
}

fn cider_from_counts(hyp: &NGramCounts, refs: &[NGramCounts], stats: &CorpusStats) -> f64 {
    let mut total = 0.0;
    for order in 1..=MAX_ORDER {
        let mut sim = 0.0;
        for reference in refs {
            sim += order_similarity(hyp, reference, order, stats);
        }
        total += sim / refs.len() as f64;
    }
    10.0 * total / MAX_ORDER as f64
}

/// CIDEr: per-order cosine similarity between tf-idf n-gram vectors,
/// averaged over references and orders, scaled by 10.
pub fn cider(hyp: &Caption, refs: &[Caption], stats: &CorpusStats) -> Result<f64, MetricsError> {
    if refs.is_empty() {
        return Err(MetricsError::EmptyReferences);
    }
    let hyp_grams = extract_ngrams(hyp, MAX_ORDER);
    let ref_grams: Vec<NGramCounts> = refs.iter().map(|r| extract_ngrams(r, MAX_ORDER)).collect();
    Ok(cider_from_counts(&hyp_grams, &ref_grams, stats))
}

/// BLEU@4 and CIDEr computed after removing every n-gram that contains an
/// object word, on both hypothesis and reference sides. Length terms use
/// the filtered unigram totals. Document frequencies of object-free
/// n-grams are unchanged by filtering the reference side, so the same
/// corpus stats serve both the plain and the filtered scores.
pub fn fluency_scores(
    hyp: &Caption,
    refs: &[Caption],
    lexicon: &Lexicon,
    stats: &CorpusStats,
) -> Result<(f64, f64), MetricsError> {
    if refs.is_empty() {
        return Err(MetricsError::EmptyReferences);
    }
    let hyp_grams = filter_object_ngrams(&extract_ngrams(hyp, MAX_ORDER), lexicon);
    let ref_grams: Vec<NGramCounts> = refs
        .iter()
        .map(|r| filter_object_ngrams(&extract_ngrams(r, MAX_ORDER), lexicon))
        .collect();
    let fluency_bleu = bleu_from_counts(&hyp_grams, &ref_grams);
    let fluency_cider = cider_from_counts(&hyp_grams, &ref_grams, stats);
    Ok((fluency_bleu, fluency_cider))
}

/// Object precision (fidelity), recall (adequacy) and their harmonic mean.
/// Both sets empty scores a perfect 1/1/1; an empty hypothesis set against
/// a nonempty image set scores 0.
pub fn fidelity_adequacy(
    hyp_objects: &BTreeSet<crate::text::Token>,
    image_objects: &BTreeSet<crate::text::Token>,
) -> (f64, f64, f64) {
    if hyp_objects.is_empty() && image_objects.is_empty() {
        return (1.0, 1.0, 1.0);
    }
    let overlap = hyp_objects.intersection(image_objects).count() as f64;
    let precision = if hyp_objects.is_empty() {
        0.0
    } else {
        overlap / hyp_objects.len() as f64
    };
    let recall = if image_objects.is_empty() {
        0.0
    } else {
        overlap / image_objects.len() as f64
    };
    (precision, recall, f1(precision, recall))
}

/// Harmonic mean, 0 when precision + recall = 0.
pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Perplexity of a masked-word prediction sequence: (prod p_i)^(-1/N),
/// computed in log space.
pub fn masked_perplexity(probs: &[f64]) -> Result<f64, MetricsError> {
    if probs.is_empty() {
        return Err(MetricsError::NoProbabilities);
    }
    let mut log_sum = 0.0;
    for &p in probs {
        if !(p > 0.0 && p <= 1.0) {
            return Err(MetricsError::InvalidProbability(p));
        }
        log_sum += p.log2();
    }
    Ok((-log_sum / probs.len() as f64).exp2())
}

/// Fraction of content-token occurrences that repeat an earlier token in
/// the same caption, pooled over captions. Reserved tokens are ignored.
pub fn duplicate_token_rate(captions: &[Caption]) -> f64 {
    let mut duplicates = 0usize;
    let mut total = 0usize;
    for caption in captions {
        let mut seen = BTreeSet::new();
        for token in caption.tokens().iter().filter(|t| !t.is_reserved()) {
            total += 1;
            if !seen.insert(token.clone()) {
                duplicates += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        duplicates as f64 / total as f64
    }
}

/// One caption to score against its references and the image's true
/// object set.
#[derive(Clone, Debug)]
pub struct EvalItem {
    pub id: String,
    pub hyp: Caption,
    pub refs: Vec<Caption>,
    pub image_objects: BTreeSet<crate::text::Token>,
}

/// The per-caption metric bundle.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricScores {
    pub bleu4: f64,
    pub cider: f64,
    pub fluency_bleu4: f64,
    pub fluency_cider: f64,
    pub object_precision: f64,
    pub object_recall: f64,
    pub object_f1: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImageReportRow {
    pub id: String,
    #[serde(flatten)]
    pub scores: MetricScores,
}

/// Per-image rows plus corpus means.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageReportRow>,
    pub corpus: MetricScores,
}

fn score_item(item: &EvalItem, lexicon: &Lexicon, stats: &CorpusStats) -> Result<MetricScores, MetricsError> {
    let bleu = bleu4(&item.hyp, &item.refs)?;
    let cider_score = cider(&item.hyp, &item.refs, stats)?;
    let (fluency_bleu, fluency_cider) = fluency_scores(&item.hyp, &item.refs, lexicon, stats)?;
    let hyp_objects = object_set(&item.hyp, lexicon);
    let (precision, recall, f1_score) = fidelity_adequacy(&hyp_objects, &item.image_objects);
    Ok(MetricScores {
        bleu4: bleu,
        cider: cider_score,
        fluency_bleu4: fluency_bleu,
        fluency_cider,
        object_precision: precision,
        object_recall: recall,
        object_f1: f1_score,
    })
}

fn mean_scores(rows: &[ImageReportRow]) -> MetricScores {
    let n = rows.len().max(1) as f64;
    let mut corpus = MetricScores::default();
    for row in rows {
        corpus.bleu4 += row.scores.bleu4;
        corpus.cider += row.scores.cider;
        corpus.fluency_bleu4 += row.scores.fluency_bleu4;
        corpus.fluency_cider += row.scores.fluency_cider;
        corpus.object_precision += row.scores.object_precision;
        corpus.object_recall += row.scores.object_recall;
        corpus.object_f1 += row.scores.object_f1;
    }
    corpus.bleu4 /= n;
    corpus.cider /= n;
    corpus.fluency_bleu4 /= n;
    corpus.fluency_cider /= n;
    corpus.object_precision /= n;
    corpus.object_recall /= n;
    corpus.object_f1 /= n;
    corpus
}

/// Scores every item against corpus statistics built from the items' own
/// reference sets. Scoring is pure per image; with `threads > 1` the rows
/// are computed on contiguous chunks and reassembled in input order.
pub fn evaluate_corpus(
    items: &[EvalItem],
    lexicon: &Lexicon,
    threads: usize,
) -> Result<MetricReport, MetricsError> {
    let refs_per_image: Vec<Vec<Caption>> = items.iter().map(|i| i.refs.clone()).collect();
    let stats = build_corpus_stats(&refs_per_image)?;

    let per_image: Vec<ImageReportRow> = if threads <= 1 || items.len() < 2 {
        items
            .iter()
            .map(|item| {
                Ok(ImageReportRow {
                    id: item.id.clone(),
                    scores: score_item(item, lexicon, &stats)?,
                })
            })
            .collect::<Result<_, MetricsError>>()?
    } else {
        let workers = threads.min(items.len());
        let chunk = items.len().div_ceil(workers);
        let results: Vec<Result<Vec<ImageReportRow>, MetricsError>> =
            std::thread::scope(|scope| {
                let handles: Vec<_> = items
                    .chunks(chunk)
                    .map(|slice| {
                        let stats = &stats;
                        scope.spawn(move || {
                            slice
                                .iter()
                                .map(|item| {
                                    Ok(ImageReportRow {
                                        id: item.id.clone(),
                                        scores: score_item(item, lexicon, stats)?,
                                    })
                                })
                                .collect()
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("scorer panicked")).collect()
            });
        let mut rows = Vec::with_capacity(items.len());
        for chunk_rows in results {
            rows.extend(chunk_rows?);
        }
        rows
    };

    let corpus = mean_scores(&per_image);
    Ok(MetricReport { per_image, corpus })
}
