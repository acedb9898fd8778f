//! Directional ablation runs: train variants that differ in exactly one
//! toggle, score them on the uncaptioned images, and report per-seed
//! metrics and deltas.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::io::WorldData;
use crate::metrics::{duplicate_token_rate, evaluate_corpus, EvalItem};
use crate::models::{build_association, DecodeMode, NGramParaphraser, PolicyModel};
use crate::train::{
    init_model, labeled_stats, train_stage1, train_stage2, TrainConfig, TrainError,
};

/// One ablation arm: a stage-1 config and optionally a stage-2 config to
/// run on top of it.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub stage1: TrainConfig,
    pub stage2: Option<TrainConfig>,
}

/// Corpus metrics of one trained variant over the uncaptioned images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VariantMetrics {
    pub cider: f64,
    pub fluency_cider: f64,
    pub object_f1: f64,
    pub duplicate_rate: f64,
    /// Mean stage-1 gate acceptance rate, if stage 1 ran.
    pub gate_rate: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    /// Parallel to the report's variant name list.
    pub metrics: Vec<VariantMetrics>,
}

/// Per-variant deltas against the first (baseline) variant, averaged over
/// seeds, plus per-seed win counts.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeltaRow {
    pub name: String,
    pub mean_cider_delta: f64,
    pub mean_fluency_cider_delta: f64,
    pub mean_object_f1_delta: f64,
    pub mean_duplicate_rate_delta: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub variants: Vec<String>,
    pub seeds: Vec<u64>,
    pub rows: Vec<SeedRow>,
    pub deltas_vs_first: Vec<DeltaRow>,
}

impl AblationReport {
    fn variant_index(&self, name: &str) -> Option<usize> {
        self.variants.iter().position(|v| v == name)
    }

    /// Seeds where `metric(a) > metric(b)`.
    pub fn wins(&self, a: &str, b: &str, metric: impl Fn(&VariantMetrics) -> f64) -> usize {
        let (ia, ib) = match (self.variant_index(a), self.variant_index(b)) {
            (Some(ia), Some(ib)) => (ia, ib),
            _ => return 0,
        };
        self.rows
            .iter()
            .filter(|row| metric(&row.metrics[ia]) > metric(&row.metrics[ib]))
            .count()
    }
}

/// Greedy-decodes the uncaptioned images and scores them against the
/// evaluation references.
pub fn eval_on_uncaptioned(
    model: &PolicyModel,
    data: &WorldData,
    t_max: usize,
) -> Result<VariantMetrics, TrainError> {
    let mut items = Vec::new();
    let mut captions = Vec::new();
    for image in data.uncaptioned() {
        let (greedy, _) = model.decode(&image.features, DecodeMode::Greedy, t_max, 0)?;
        let refs = data
            .eval_refs
            .get(&image.id)
            .ok_or_else(|| TrainError::Data(format!("no eval refs for {}", image.id)))?
            .clone();
        items.push(EvalItem {
            id: image.id.clone(),
            hyp: greedy.clone(),
            refs,
            image_objects: image.object_set(),
        });
        captions.push(greedy);
    }
    if items.is_empty() {
        return Err(TrainError::Data("no uncaptioned images to evaluate".into()));
    }
    let report = evaluate_corpus(&items, &data.lexicon, 1)?;
    Ok(VariantMetrics {
        cider: report.corpus.cider,
        fluency_cider: report.corpus.fluency_cider,
        object_f1: report.corpus.object_f1,
        duplicate_rate: duplicate_token_rate(&captions),
        gate_rate: None,
    })
}

fn run_variant(
    data: &WorldData,
    variant: &AblationVariant,
    seed: u64,
    stage1_cache: &mut BTreeMap<String, (PolicyModel, f64)>,
) -> Result<VariantMetrics, TrainError> {
    let mut cfg1 = variant.stage1.clone();
    cfg1.stage = 1;
    cfg1.seed = seed;
    let key = serde_json::to_string(&cfg1).expect("config serializes");

    if !stage1_cache.contains_key(&key) {
        let model = init_model(&cfg1, data)?;
        let paraphraser = NGramParaphraser::fit_from_text(&data.corpus_text)?;
        let association = build_association(cfg1.association, &data.lexicon, &data.embeddings);
        let (model, log) = train_stage1(&cfg1, data, model, &paraphraser, association.as_ref())?;
        let mean_gate = log.iter().filter_map(|r| r.gate_rate).sum::<f64>() / log.len() as f64;
        stage1_cache.insert(key.clone(), (model, mean_gate));
    }
    let (stage1_model, mean_gate) = stage1_cache.get(&key).expect("just inserted").clone();

    let (final_model, t_max) = match &variant.stage2 {
        None => (stage1_model, cfg1.t_max),
        Some(stage2_cfg) => {
            let mut cfg2 = stage2_cfg.clone();
            cfg2.stage = 2;
            cfg2.seed = seed;
            let stats = labeled_stats(data)?;
            let association = build_association(cfg2.association, &data.lexicon, &data.embeddings);
            let (model, _) =
                train_stage2(&cfg2, data, stage1_model, association.as_ref(), &stats)?;
            (model, cfg2.t_max)
        }
    };

    let mut metrics = eval_on_uncaptioned(&final_model, data, t_max)?;
    metrics.gate_rate = Some(mean_gate);
    Ok(metrics)
}

/// Runs every variant for every seed and tabulates metrics plus deltas
/// against the first variant.
pub fn ablation_report(
    data: &WorldData,
    variants: &[AblationVariant],
    seeds: &[u64],
) -> Result<AblationReport, TrainError> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(TrainError::Config("need at least one variant and seed".into()));
    }
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut stage1_cache = BTreeMap::new();
        let mut metrics = Vec::new();
        for variant in variants {
            metrics.push(run_variant(data, variant, seed, &mut stage1_cache)?);
        }
        rows.push(SeedRow { seed, metrics });
    }

    let n = seeds.len() as f64;
    let deltas_vs_first = variants
        .iter()
        .enumerate()
        .skip(1)
        .map(|(idx, variant)| {
            let mut delta = DeltaRow {
                name: variant.name.clone(),
                mean_cider_delta: 0.0,
                mean_fluency_cider_delta: 0.0,
                mean_object_f1_delta: 0.0,
                mean_duplicate_rate_delta: 0.0,
            };
            for row in &rows {
                let (base, this) = (&row.metrics[0], &row.metrics[idx]);
                delta.mean_cider_delta += (this.cider - base.cider) / n;
                delta.mean_fluency_cider_delta += (this.fluency_cider - base.fluency_cider) / n;
                delta.mean_object_f1_delta += (this.object_f1 - base.object_f1) / n;
                delta.mean_duplicate_rate_delta +=
                    (this.duplicate_rate - base.duplicate_rate) / n;
            }
            delta
        })
        .collect();

    Ok(AblationReport {
        variants: variants.iter().map(|v| v.name.clone()).collect(),
        seeds: seeds.to_vec(),
        rows,
        deltas_vs_first,
    })
}

/// The bundled toggle set: the full pipeline first, then single-toggle
/// ablations of the stage-2 rewards, then the stage-1-only arms for the
/// paraphrase-loss and gate toggles.
pub fn standard_variants(stage1: &TrainConfig, stage2: &TrainConfig) -> Vec<AblationVariant> {
    let s1 = |f: &dyn Fn(&mut TrainConfig)| {
        let mut cfg = stage1.clone();
        cfg.stage = 1;
        f(&mut cfg);
        cfg
    };
    let s2 = |f: &dyn Fn(&mut TrainConfig)| {
        let mut cfg = stage2.clone();
        cfg.stage = 2;
        f(&mut cfg);
        cfg
    };
    vec![
        AblationVariant {
            name: "full".into(),
            stage1: s1(&|_| {}),
            stage2: Some(s2(&|_| {})),
        },
        AblationVariant {
            name: "no_r_assoc".into(),
            stage1: s1(&|_| {}),
            stage2: Some(s2(&|cfg| cfg.weights.w_assoc = 0.0)),
        },
        AblationVariant {
            name: "no_r_rep".into(),
            stage1: s1(&|_| {}),
            stage2: Some(s2(&|cfg| cfg.weights.w_rep = 0.0)),
        },
        AblationVariant {
            name: "stage1".into(),
            stage1: s1(&|_| {}),
            stage2: None,
        },
        AblationVariant {
            name: "stage1_no_lp".into(),
            stage1: s1(&|cfg| cfg.use_paraphrase_loss = false),
            stage2: None,
        },
        AblationVariant {
            name: "stage1_no_gate".into(),
            stage1: s1(&|cfg| cfg.gate_enabled = false),
            stage2: None,
        },
    ]
}
