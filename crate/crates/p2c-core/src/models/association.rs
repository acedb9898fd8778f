//! Image-caption association scorers. All scorers map into [0, 1] and are
//! deterministic: identical inputs give identical scores.

use serde::{Deserialize, Serialize};

use crate::data::ImageSample;
use crate::embeddings::{cosine_vec, mean_embedding, EmbeddingTable};
use crate::metrics::fidelity_adequacy;
use crate::text::{object_set, Caption, Lexicon};

pub trait AssociationModel {
    /// Association between an image and a caption, in [0, 1].
    fn score(&self, image: &ImageSample, caption: &Caption) -> f64;
}

/// Object F1 between the caption's object mentions and the image's object
/// set: the precision/recall view of association.
#[derive(Clone, Debug)]
pub struct ObjectF1Association {
    lexicon: Lexicon,
}

impl ObjectF1Association {
    pub fn new(lexicon: Lexicon) -> Self {
        ObjectF1Association { lexicon }
    }
}

impl AssociationModel for ObjectF1Association {
    fn score(&self, image: &ImageSample, caption: &Caption) -> f64 {
        let mentioned = object_set(caption, &self.lexicon);
        let (_, _, f1) = fidelity_adequacy(&mentioned, &image.object_set());
        f1
    }
}

/// Cosine between the mean embedding of the caption's object words and
/// the mean embedding of the image's object labels.
#[derive(Clone, Debug)]
pub struct EmbeddingObjectAssociation {
    table: EmbeddingTable,
    lexicon: Lexicon,
}

impl EmbeddingObjectAssociation {
    pub fn new(table: EmbeddingTable, lexicon: Lexicon) -> Self {
        EmbeddingObjectAssociation { table, lexicon }
    }
}

impl AssociationModel for EmbeddingObjectAssociation {
    fn score(&self, image: &ImageSample, caption: &Caption) -> f64 {
        let mentioned = object_set(caption, &self.lexicon);
        let caption_vec = mean_embedding(&mentioned, &self.table);
        let label_vec = mean_embedding(&image.object_set(), &self.table);
        cosine_vec(&caption_vec, &label_vec)
    }
}

/// Instance-level scorer: cosine between the mean embedding of every
/// distinct caption word (not just objects) and the mean label embedding.
/// Unlike the object-set scorers this one responds to non-object word
/// substitutions, which is what the paraphrase gate compares.
#[derive(Clone, Debug)]
pub struct EmbeddingCaptionAssociation {
    table: EmbeddingTable,
}

impl EmbeddingCaptionAssociation {
    pub fn new(table: EmbeddingTable) -> Self {
        EmbeddingCaptionAssociation { table }
    }
}

impl AssociationModel for EmbeddingCaptionAssociation {
    fn score(&self, image: &ImageSample, caption: &Caption) -> f64 {
        let words: std::collections::BTreeSet<_> = caption.tokens().iter().cloned().collect();
        let caption_vec = mean_embedding(&words, &self.table);
        let label_vec = mean_embedding(&image.object_set(), &self.table);
        cosine_vec(&caption_vec, &label_vec)
    }
}

/// Fixed score regardless of input; useful for disabling the gate signal.
#[derive(Clone, Copy, Debug)]
pub struct ConstantAssociation(pub f64);

impl AssociationModel for ConstantAssociation {
    fn score(&self, _image: &ImageSample, _caption: &Caption) -> f64 {
        self.0
    }
}

/// Configuration name for the association scorer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssociationKind {
    #[default]
    ObjectF1,
    EmbeddingObject,
    EmbeddingCaption,
    Constant,
}

pub fn build_association(
    kind: AssociationKind,
    lexicon: &Lexicon,
    table: &EmbeddingTable,
) -> Box<dyn AssociationModel> {
    match kind {
        AssociationKind::ObjectF1 => Box::new(ObjectF1Association::new(lexicon.clone())),
        AssociationKind::EmbeddingObject => {
            Box::new(EmbeddingObjectAssociation::new(table.clone(), lexicon.clone()))
        }
        AssociationKind::EmbeddingCaption => {
            Box::new(EmbeddingCaptionAssociation::new(table.clone()))
        }
        AssociationKind::Constant => Box::new(ConstantAssociation(0.5)),
    }
}
