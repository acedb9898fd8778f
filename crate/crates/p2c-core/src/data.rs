//! Synthetic image samples and their JSONL wire format.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::text::{Caption, Token};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Labeled,
    Uncaptioned,
}

/// In-domain images contain only objects seen in caption-labeled data;
/// out-of-domain images contain at least one novel object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    In,
    Out,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("image {id}: labeled samples need references")]
    MissingRefs { id: String },
    #[error("image {id}: uncaptioned samples must not carry references")]
    UnexpectedRefs { id: String },
    #[error("image {id}: features must be bag-of-object counts of length {expected}, got {got}")]
    BadFeatures { id: String, expected: usize, got: usize },
    #[error("image {id}: reference mentions object {object:?} absent from the image")]
    RefObjectMismatch { id: String, object: String },
}

/// A synthetic image: its object multiset, transparent bag-of-objects
/// features, and (for the labeled split) reference captions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSample {
    pub id: String,
    pub objects: Vec<Token>,
    pub features: Vec<f64>,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refs: Option<Vec<Caption>>,
    pub domain: DomainTag,
}

impl ImageSample {
    pub fn object_set(&self) -> BTreeSet<Token> {
        self.objects.iter().cloned().collect()
    }

    pub fn is_labeled(&self) -> bool {
        self.split == Split::Labeled
    }

    /// Checks the split/reference pairing and the bag-of-objects feature
    /// contract against `feature_order` (object token per feature index).
    pub fn validate(&self, feature_order: &[Token]) -> Result<(), DataError> {
        match (self.split, &self.refs) {
            (Split::Labeled, None) => {
                return Err(DataError::MissingRefs {
                    id: self.id.clone(),
                })
            }
            (Split::Uncaptioned, Some(_)) => {
                return Err(DataError::UnexpectedRefs {
                    id: self.id.clone(),
                })
            }
            _ => {}
        }
        if self.features.len() != feature_order.len() {
            return Err(DataError::BadFeatures {
                id: self.id.clone(),
                expected: feature_order.len(),
                got: self.features.len(),
            });
        }
        for (k, token) in feature_order.iter().enumerate() {
            let multiplicity = self.objects.iter().filter(|o| *o == token).count() as f64;
            if (self.features[k] - multiplicity).abs() > 0.0 {
                return Err(DataError::BadFeatures {
                    id: self.id.clone(),
                    expected: feature_order.len(),
                    got: self.features.len(),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tok(s: &str) -> Token {
        Token::new(s).unwrap()
    }

    #[test]
    fn validation_catches_split_ref_mismatch() {
        let order = vec![tok("dog"), tok("cat")];
        let sample = ImageSample {
            id: "i0".into(),
            objects: vec![tok("dog")],
            features: vec![1.0, 0.0],
            split: Split::Labeled,
            refs: None,
            domain: DomainTag::In,
        };
        assert!(matches!(
            sample.validate(&order),
            Err(DataError::MissingRefs { .. })
        ));

        let sample = ImageSample {
            refs: Some(vec![Caption::parse_tokens(&["a", "dog"]).unwrap()]),
            split: Split::Uncaptioned,
            ..sample
        };
        assert!(matches!(
            sample.validate(&order),
            Err(DataError::UnexpectedRefs { .. })
        ));
    }

    #[test]
    fn validation_checks_feature_counts() {
        let order = vec![tok("dog"), tok("cat")];
        let good = ImageSample {
            id: "i1".into(),
            objects: vec![tok("dog"), tok("dog"), tok("cat")],
            features: vec![2.0, 1.0],
            split: Split::Uncaptioned,
            refs: None,
            domain: DomainTag::Out,
        };
        assert!(good.validate(&order).is_ok());

        let bad = ImageSample {
            features: vec![1.0, 1.0],
            ..good
        };
        assert!(matches!(
            bad.validate(&order),
            Err(DataError::BadFeatures { .. })
        ));
    }

    #[test]
    fn jsonl_roundtrip() {
        let sample = ImageSample {
            id: "img_7".into(),
            objects: vec![tok("dog")],
            features: vec![1.0, 0.0],
            split: Split::Labeled,
            refs: Some(vec![Caption::parse_tokens(&["a", "dog", "runs"]).unwrap()]),
            domain: DomainTag::In,
        };
        let line = serde_json::to_string(&sample).unwrap();
        let back: ImageSample = serde_json::from_str(&line).unwrap();
        assert_eq!(back, sample);

        let uncap = ImageSample {
            id: "img_8".into(),
            refs: None,
            split: Split::Uncaptioned,
            domain: DomainTag::Out,
            ..sample
        };
        let line = serde_json::to_string(&uncap).unwrap();
        assert!(!line.contains("refs"));
    }
}
