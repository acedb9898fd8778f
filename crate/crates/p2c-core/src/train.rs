//! The two training stages: gated paraphrase learning on top of the
//! sequence-to-sequence objective, then self-critical reward optimization.
//!
//! Both loops draw every random choice from one ChaCha stream seeded by
//! the config, accumulate gradients in a fixed order, and apply a single
//! Adam update per iteration, so identical configs produce bitwise
//! identical checkpoints and logs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageSample;
use crate::io::WorldData;
use crate::metrics::{build_corpus_stats, CorpusStats, MetricsError};
use crate::models::{
    gate_value, AssociationKind, AssociationModel, GateInputs, GateMode, ModelError,
    ParaphraseModel, PolicyModel,
};
use crate::optim::{adam_step, AdamConfig, OptimError, OptimizerState};
use crate::rewards::{compose_reward, scst_gradient, RewardError, RewardWeights};
use crate::text::mask_random_non_object;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("bad config: {0}")]
    Config(String),
    #[error("bad data: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Everything a training run needs to be reproducible. The JSON config
/// file mirrors these field names exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub stage: u8,
    pub iterations: usize,
    pub batch_labeled: usize,
    pub batch_uncaptioned: usize,
    pub lr: f64,
    /// Multiplicative per-iteration learning-rate factor; 1.0 is constant.
    pub lr_decay: f64,
    pub alpha_gate: f64,
    pub gate_mode: GateMode,
    /// When false every paraphrase is accepted with full weight.
    pub gate_enabled: bool,
    /// Stage-1 toggle for the paraphrase loss.
    pub use_paraphrase_loss: bool,
    pub t_max: usize,
    pub seed: u64,
    pub association: AssociationKind,
    pub weights: RewardWeights,
    /// Token-embedding width E for freshly initialized models.
    pub token_dim: usize,
    /// Uniform init range for fresh parameters.
    pub init_scale: f64,
    /// Added to W_img[token row of object k][k] at init: couples each
    /// object's feature to its own word, standing in for tag-alignment
    /// pretraining.
    pub feature_align: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: 1,
            iterations: 200,
            batch_labeled: 8,
            batch_uncaptioned: 8,
            lr: 1e-2,
            lr_decay: 1.0,
            alpha_gate: 0.1,
            gate_mode: GateMode::Continuous,
            gate_enabled: true,
            use_paraphrase_loss: true,
            t_max: 8,
            seed: 0,
            association: AssociationKind::ObjectF1,
            weights: RewardWeights::default(),
            token_dim: 8,
            init_scale: 0.05,
            feature_align: 3.5,
        }
    }
}

impl TrainConfig {
    /// Stage-1 settings sized for the bundled toy world.
    pub fn toy_stage1() -> Self {
        TrainConfig {
            stage: 1,
            iterations: 150,
            batch_labeled: 6,
            batch_uncaptioned: 6,
            lr: 0.02,
            lr_decay: 0.985,
            alpha_gate: 0.03,
            association: AssociationKind::EmbeddingCaption,
            ..TrainConfig::default()
        }
    }

    /// Stage-2 settings sized for the bundled toy world.
    pub fn toy_stage2() -> Self {
        TrainConfig {
            stage: 2,
            iterations: 250,
            batch_labeled: 6,
            batch_uncaptioned: 6,
            lr: 0.01,
            association: AssociationKind::ObjectF1,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.stage == 1 || self.stage == 2) {
            return Err(TrainError::Config(format!("stage must be 1 or 2, got {}", self.stage)));
        }
        if self.iterations == 0 {
            return Err(TrainError::Config("iterations must be positive".into()));
        }
        if self.batch_labeled == 0 || self.batch_uncaptioned == 0 {
            return Err(TrainError::Config("batch sizes must be positive".into()));
        }
        if self.t_max == 0 {
            return Err(TrainError::Config("t_max must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if self.alpha_gate < 0.0 {
            return Err(TrainError::Config("alpha_gate must be nonnegative".into()));
        }
        if self.token_dim == 0 {
            return Err(TrainError::Config("token_dim must be positive".into()));
        }
        Ok(())
    }
}

/// One JSONL record per iteration; fields are null when the stage does
/// not produce them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub iter: usize,
    pub loss_s2s: Option<f64>,
    pub loss_p: Option<f64>,
    pub gate_rate: Option<f64>,
    pub mean_r_cider: Option<f64>,
    pub mean_r_assoc: Option<f64>,
    pub mean_r_rep: Option<f64>,
    pub mean_advantage: Option<f64>,
}

/// A fresh policy for the world: uniform random parameters, the
/// feature-aligned boost tying each object feature to its own token row,
/// and novel-object token embeddings seeded from their sibling seen
/// objects so the learned transition structure transfers to them.
pub fn init_model(cfg: &TrainConfig, data: &WorldData) -> Result<PolicyModel, TrainError> {
    cfg.validate()?;
    let vocab = data.build_vocab();
    let feature_order = data.feature_order();
    let mut model = PolicyModel::init_random(
        vocab,
        feature_order.len(),
        cfg.token_dim,
        cfg.seed,
        cfg.init_scale,
    )?;
    for (k, object) in feature_order.iter().enumerate() {
        let row = model.token_index(object)?;
        model.params_mut().w_img[row][k] += cfg.feature_align;
    }
    // Distinct stream from the parameter init.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x51B1_1E5E);
    for novel in &data.spec.novel_objects {
        let sibling = match data.spec.sibling_seen(novel) {
            Some(s) => s.to_string(),
            None => continue,
        };
        let novel_row = model.token_index(&crate::text::Token::new(novel).map_err(
            |e| TrainError::Data(e.to_string()),
        )?)?;
        let sibling_row = model.token_index(&crate::text::Token::new(&sibling).map_err(
            |e| TrainError::Data(e.to_string()),
        )?)?;
        let base = model.params().token_emb[sibling_row].clone();
        let jitter: Vec<f64> = (0..base.len()).map(|_| rng.random_range(-0.01..0.01)).collect();
        model.params_mut().token_emb[novel_row] = base
            .iter()
            .zip(&jitter)
            .map(|(b, j)| b + j)
            .collect();
    }
    Ok(model)
}

fn validate_data(cfg: &TrainConfig, data: &WorldData) -> Result<(), TrainError> {
    let feature_order = data.feature_order();
    for image in &data.images {
        image
            .validate(&feature_order)
            .map_err(|e| TrainError::Data(e.to_string()))?;
    }
    if data.labeled().is_empty() {
        return Err(TrainError::Data("no labeled images".into()));
    }
    if cfg.stage == 1 && cfg.use_paraphrase_loss && data.uncaptioned().is_empty() {
        return Err(TrainError::Data(
            "paraphrase loss needs uncaptioned images".into(),
        ));
    }
    Ok(())
}

fn pick<'a>(
    pool: &[&'a ImageSample],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a ImageSample> {
    (0..count).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

/// Stage 1: sequence-to-sequence learning on labeled images, plus the
/// gated paraphrase loss on uncaptioned ones.
pub fn train_stage1(
    cfg: &TrainConfig,
    data: &WorldData,
    mut model: PolicyModel,
    paraphraser: &dyn ParaphraseModel,
    association: &dyn AssociationModel,
) -> Result<(PolicyModel, Vec<TrainLogRecord>), TrainError> {
    cfg.validate()?;
    if cfg.stage != 1 {
        return Err(TrainError::Config("train_stage1 needs stage = 1".into()));
    }
    validate_data(cfg, data)?;
    let labeled = data.labeled();
    let uncaptioned = data.uncaptioned();

    let mut optimizer = OptimizerState::new(model.params(), AdamConfig::with_lr(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        optimizer.set_lr(cfg.lr * cfg.lr_decay.powi(iter as i32));
        let mut grad = model.params().zeros_like();

        let mut loss_s2s = 0.0;
        for image in pick(&labeled, cfg.batch_labeled, &mut rng) {
            let refs = image.refs.as_ref().expect("validated labeled image");
            let reference = &refs[rng.random_range(0..refs.len())];
            let (loss, g) = model.s2s_loss(&image.features, reference, cfg.t_max)?;
            loss_s2s += loss / cfg.batch_labeled as f64;
            grad.axpy(1.0 / cfg.batch_labeled as f64, &g);
        }

        let mut loss_p = 0.0;
        let mut gate_accepted = 0usize;
        let mut gate_evaluated = 0usize;
        if cfg.use_paraphrase_loss && !uncaptioned.is_empty() {
            for image in pick(&uncaptioned, cfg.batch_uncaptioned, &mut rng) {
                let mask_seed = rng.random::<u64>();
                let (generated, _) =
                    model.decode(&image.features, crate::models::DecodeMode::Greedy, cfg.t_max, 0)?;
                if generated.is_empty() {
                    continue;
                }
                let masked = match mask_random_non_object(&generated, &data.lexicon, mask_seed) {
                    Ok(masked) => masked,
                    Err(_) => continue,
                };
                let (replacement, _) = paraphraser.predict(&masked);
                if model.token_index(&replacement).is_err() {
                    continue;
                }
                let paraphrased = masked.fill(replacement.clone());
                let score_original = association.score(image, &generated);
                let score_paraphrased = association.score(image, &paraphrased);
                gate_evaluated += 1;
                let g_val = if cfg.gate_enabled {
                    gate_value(
                        &GateInputs {
                            score_paraphrased,
                            score_original,
                            margin: cfg.alpha_gate,
                        },
                        cfg.gate_mode,
                    )
                } else {
                    1.0
                };
                if g_val > 0.0 {
                    gate_accepted += 1;
                    let (loss, g) =
                        model.paraphrase_loss(&image.features, &masked, &replacement, g_val)?;
                    loss_p += loss / cfg.batch_uncaptioned as f64;
                    grad.axpy(1.0 / cfg.batch_uncaptioned as f64, &g);
                }
            }
        }

        adam_step(&mut optimizer, model.params_mut(), &grad)?;
        log.push(TrainLogRecord {
            iter,
            loss_s2s: Some(loss_s2s),
            loss_p: Some(loss_p),
            gate_rate: Some(if gate_evaluated == 0 {
                0.0
            } else {
                gate_accepted as f64 / gate_evaluated as f64
            }),
            mean_r_cider: None,
            mean_r_assoc: None,
            mean_r_rep: None,
            mean_advantage: None,
        });
    }
    Ok((model, log))
}

/// Stage 2: self-critical sequence training with the case-split rewards.
pub fn train_stage2(
    cfg: &TrainConfig,
    data: &WorldData,
    mut model: PolicyModel,
    association: &dyn AssociationModel,
    stats: &CorpusStats,
) -> Result<(PolicyModel, Vec<TrainLogRecord>), TrainError> {
    cfg.validate()?;
    if cfg.stage != 2 {
        return Err(TrainError::Config("train_stage2 needs stage = 2".into()));
    }
    validate_data(cfg, data)?;
    let labeled = data.labeled();
    let uncaptioned = data.uncaptioned();
    if uncaptioned.is_empty() {
        return Err(TrainError::Data("stage 2 needs uncaptioned images".into()));
    }
    let table = &data.embeddings;

    let mut optimizer = OptimizerState::new(model.params(), AdamConfig::with_lr(cfg.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.iterations);

    for iter in 0..cfg.iterations {
        optimizer.set_lr(cfg.lr * cfg.lr_decay.powi(iter as i32));
        let mut grad = model.params().zeros_like();
        let batch_total = (cfg.batch_labeled + cfg.batch_uncaptioned) as f64;

        let mut sum_cider = 0.0;
        let mut sum_assoc = 0.0;
        let mut sum_rep = 0.0;
        let mut sum_advantage = 0.0;

        let batch: Vec<&ImageSample> = pick(&labeled, cfg.batch_labeled, &mut rng)
            .into_iter()
            .chain(pick(&uncaptioned, cfg.batch_uncaptioned, &mut rng))
            .collect();
        for image in batch {
            let sample_seed = rng.random::<u64>();
            let (sampled, _) = model.decode(
                &image.features,
                crate::models::DecodeMode::Sample,
                cfg.t_max,
                sample_seed,
            )?;
            let (greedy, _) =
                model.decode(&image.features, crate::models::DecodeMode::Greedy, cfg.t_max, 0)?;
            let refs = image.refs.as_deref();
            let reward_sampled =
                compose_reward(image, &sampled, refs, association, table, stats, &cfg.weights)?;
            let reward_greedy =
                compose_reward(image, &greedy, refs, association, table, stats, &cfg.weights)?;

            if let Some(r) = reward_sampled.r_cider {
                sum_cider += r / cfg.batch_labeled as f64;
            }
            sum_assoc += reward_sampled.r_assoc / batch_total;
            if let Some(r) = reward_sampled.r_rep {
                sum_rep += r / cfg.batch_uncaptioned as f64;
            }
            let advantage = reward_sampled.total - reward_greedy.total;
            sum_advantage += advantage / batch_total;

            let g = scst_gradient(
                &model,
                &image.features,
                &sampled,
                (reward_sampled.total, reward_greedy.total),
                cfg.t_max,
            )?;
            grad.axpy(1.0 / batch_total, &g);
        }

        adam_step(&mut optimizer, model.params_mut(), &grad)?;
        log.push(TrainLogRecord {
            iter,
            loss_s2s: None,
            loss_p: None,
            gate_rate: None,
            mean_r_cider: Some(sum_cider),
            mean_r_assoc: Some(sum_assoc),
            mean_r_rep: Some(sum_rep),
            mean_advantage: Some(sum_advantage),
        });
    }
    Ok((model, log))
}

/// CIDEr statistics over the labeled training references.
pub fn labeled_stats(data: &WorldData) -> Result<CorpusStats, TrainError> {
    Ok(build_corpus_stats(&data.labeled_ref_sets())?)
}
