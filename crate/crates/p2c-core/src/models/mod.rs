//! The captioning policy, the pluggable paraphrase and association
//! models, and the semantic-preserving gate.

mod association;
mod paraphrase;
mod policy;

pub use association::{
    build_association, AssociationKind, AssociationModel, ConstantAssociation,
    EmbeddingCaptionAssociation, EmbeddingObjectAssociation, ObjectF1Association,
};
pub use paraphrase::{NGramParaphraser, ParaphraseModel};
pub use policy::{softmax, Checkpoint, DecodeMode, ModelError, PolicyModel, PolicyParams};

use serde::{Deserialize, Serialize};

/// Association scores of the paraphrased and original captions, plus the
/// acceptance margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateInputs {
    pub score_paraphrased: f64,
    pub score_original: f64,
    pub margin: f64,
}

/// How the semantic-preserving gate converts the score comparison into a
/// loss weight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    /// max(0, tanh(delta - margin)): a soft weight in [0, 1).
    #[default]
    Continuous,
    /// The hard if/else: full weight when the paraphrase strictly improves
    /// the association score, zero otherwise. Ignores the margin.
    Binary,
}

/// The continuous semantic-preserving gate:
/// g = max(0, tanh(A(x, y_p) - A(x, y_c) - margin)).
pub fn gate(inputs: &GateInputs) -> f64 {
    (inputs.score_paraphrased - inputs.score_original - inputs.margin)
        .tanh()
        .max(0.0)
}

/// Gate weight under the configured mode.
pub fn gate_value(inputs: &GateInputs, mode: GateMode) -> f64 {
    match mode {
        GateMode::Continuous => gate(inputs),
        GateMode::Binary => {
            if inputs.score_paraphrased > inputs.score_original {
                1.0
            } else {
                0.0
            }
        }
    }
}
