//! Synthetic caption worlds: template-generated images, references,
//! lexicon, embedding table and a text-only paraphrase corpus.
//!
//! Each object carries a collocation register (its verb and modifier,
//! assigned by index). Caption-labeled images use seen objects only, so
//! labeled references never contain a novel object's word or its
//! collocations; the paraphrase corpus covers every object including the
//! novel ones, and the evaluation references of uncaptioned images use
//! the novel registers. Embeddings put each verb/modifier near its
//! object's vector so instance-level association can tell registers
//! apart, while objects themselves stay near-orthogonal.

use std::collections::BTreeSet;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{DomainTag, ImageSample, Split};
use crate::text::{Caption, Lexicon, Token, WordCategory};

#[derive(Debug, thiserror::Error)]
pub enum WorldError {
    #[error("invalid world spec: {0}")]
    SpecInvalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Text(#[from] crate::text::TextError),
}

/// Template slot classes.
const SLOT_CLASSES: [&str; 4] = ["obj", "adj", "verb", "prep"];

const EMBEDDING_DIM: usize = 12;
/// Correlation between a collocation word's vector and its object's.
const REGISTER_RHO: f64 = 0.8;
const CORPUS_SENTENCES_PER_OBJECT: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldSpec {
    pub seen_objects: Vec<String>,
    pub novel_objects: Vec<String>,
    pub modifiers: Vec<String>,
    pub verbs: Vec<String>,
    pub preps: Vec<String>,
    /// Slot patterns, e.g. "a {adj} {obj} {verb} {prep} a {obj}".
    pub templates: Vec<String>,
    pub labeled_count: usize,
    pub uncaptioned_count: usize,
    pub refs_per_image: usize,
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec::toy()
    }
}

impl WorldSpec {
    /// The bundled toy world used by the tests and the default CLI run.
    pub fn toy() -> Self {
        WorldSpec {
            seen_objects: ["dog", "cat", "ball", "tree", "bird", "boat"]
                .map(String::from)
                .to_vec(),
            novel_objects: ["scarf", "zebra", "kite"].map(String::from).to_vec(),
            modifiers: [
                "small", "sleepy", "round", "tall", "loud", "slow", "shiny", "striped", "bright",
            ]
            .map(String::from)
            .to_vec(),
            verbs: [
                "sits", "runs", "rolls", "grows", "sings", "floats", "glows", "gallops", "soars",
            ]
            .map(String::from)
            .to_vec(),
            preps: ["near", "under", "above"].map(String::from).to_vec(),
            templates: [
                "a {obj} {verb} {prep} a {obj}",
                "the {adj} {obj} {verb}",
                "a {adj} {obj} {verb} {prep} the {obj}",
                "the {obj} {verb} {prep} a {obj}",
            ]
            .map(String::from)
            .to_vec(),
            labeled_count: 12,
            uncaptioned_count: 8,
            refs_per_image: 2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if self.seen_objects.is_empty() {
            return Err(WorldError::SpecInvalid("no seen objects".into()));
        }
        if self.novel_objects.is_empty() {
            return Err(WorldError::SpecInvalid("no novel objects".into()));
        }
        let seen: BTreeSet<&String> = self.seen_objects.iter().collect();
        for novel in &self.novel_objects {
            if seen.contains(novel) {
                return Err(WorldError::SpecInvalid(format!(
                    "object {novel:?} is both seen and novel"
                )));
            }
        }
        if self.modifiers.is_empty() || self.verbs.is_empty() || self.preps.is_empty() {
            return Err(WorldError::SpecInvalid("empty word-class list".into()));
        }
        if self.templates.is_empty() {
            return Err(WorldError::SpecInvalid("no templates".into()));
        }
        for template in &self.templates {
            for part in template.split_whitespace() {
                if let Some(slot) = part.strip_prefix('{').and_then(|p| p.strip_suffix('}')) {
                    if !SLOT_CLASSES.contains(&slot) {
                        return Err(WorldError::SpecInvalid(format!(
                            "unknown slot {{{slot}}} in template {template:?}"
                        )));
                    }
                } else if Token::new(part).is_err() {
                    return Err(WorldError::SpecInvalid(format!(
                        "bad literal {part:?} in template {template:?}"
                    )));
                }
            }
            if !template.contains("{obj}") {
                return Err(WorldError::SpecInvalid(format!(
                    "template {template:?} has no object slot"
                )));
            }
        }
        if self.labeled_count == 0 || self.uncaptioned_count == 0 || self.refs_per_image == 0 {
            return Err(WorldError::SpecInvalid("counts must be positive".into()));
        }
        let all_words: Vec<&String> = self
            .seen_objects
            .iter()
            .chain(&self.novel_objects)
            .chain(&self.modifiers)
            .chain(&self.verbs)
            .chain(&self.preps)
            .collect();
        let unique: BTreeSet<&&String> = all_words.iter().collect();
        if unique.len() != all_words.len() {
            return Err(WorldError::SpecInvalid(
                "word lists overlap across classes".into(),
            ));
        }
        for word in all_words {
            if Token::new(word).is_err() {
                return Err(WorldError::SpecInvalid(format!("bad word {word:?}")));
            }
        }
        Ok(())
    }

    /// All objects, seen first then novel: the feature-vector order.
    pub fn feature_order(&self) -> Vec<Token> {
        self.seen_objects
            .iter()
            .chain(&self.novel_objects)
            .map(|w| Token::new(w).expect("validated word"))
            .collect()
    }

    fn object_index(&self, object: &str) -> usize {
        self.seen_objects
            .iter()
            .chain(&self.novel_objects)
            .position(|w| w == object)
            .expect("object is in the spec")
    }

    /// The verb of an object's collocation register.
    pub fn register_verb(&self, object: &str) -> &str {
        &self.verbs[self.object_index(object) % self.verbs.len()]
    }

    /// The modifier of an object's collocation register.
    pub fn register_modifier(&self, object: &str) -> &str {
        &self.modifiers[self.object_index(object) % self.modifiers.len()]
    }

    /// The seen object standing in for a novel one at initialization
    /// (the tag-alignment analogue: a novel word starts from the token
    /// embedding of a distributionally similar seen word).
    pub fn sibling_seen(&self, novel: &str) -> Option<&str> {
        let idx = self.novel_objects.iter().position(|w| w == novel)?;
        Some(&self.seen_objects[idx % self.seen_objects.len()])
    }
}

/// Everything `generate_world` produces, in memory.
#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub images: Vec<ImageSample>,
    /// Evaluation references for every image id, uncaptioned included.
    pub eval_refs: Vec<(String, Vec<Caption>)>,
    pub lexicon: Lexicon,
    pub embedding_lines: Vec<String>,
    pub corpus_lines: Vec<String>,
}

fn realize_template(
    spec: &WorldSpec,
    template: &str,
    objects: &[String],
    rng: &mut ChaCha8Rng,
) -> Caption {
    let mut words = Vec::new();
    let mut obj_cursor = rng.random_range(0..objects.len());
    let mut primary: Option<&str> = None;
    for part in template.split_whitespace() {
        match part {
            "{obj}" => {
                let object = &objects[obj_cursor % objects.len()];
                obj_cursor += 1;
                primary.get_or_insert(object);
                words.push(object.clone());
            }
            "{adj}" => {
                // filled after the pass; placeholder index noted below
                words.push("{adj}".into());
            }
            "{verb}" => {
                words.push("{verb}".into());
            }
            "{prep}" => {
                words.push(spec.preps[rng.random_range(0..spec.preps.len())].clone());
            }
            literal => words.push(literal.to_string()),
        }
    }
    // Collocations follow the first object slot's register. Adjective
    // slots that precede every object slot still use the primary object.
    let primary = primary.expect("templates always have an object slot").to_string();
    for word in &mut words {
        if word == "{verb}" {
            *word = spec.register_verb(&primary).to_string();
        } else if word == "{adj}" {
            *word = spec.register_modifier(&primary).to_string();
        }
    }
    Caption::parse_tokens(&words.iter().map(String::as_str).collect::<Vec<_>>())
        .expect("templates are nonempty")
}

fn make_refs(
    spec: &WorldSpec,
    objects: &[String],
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Caption> {
    (0..count)
        .map(|_| {
            let template = &spec.templates[rng.random_range(0..spec.templates.len())];
            realize_template(spec, template, objects, rng)
        })
        .collect()
}

fn random_unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    // Box-Muller gives a rotation-invariant direction.
    let mut v: Vec<f64> = Vec::with_capacity(dim);
    while v.len() < dim {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = 2.0 * std::f64::consts::PI * u2;
        v.push(radius * angle.cos());
        if v.len() < dim {
            v.push(radius * angle.sin());
        }
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

fn mix(base: &[f64], rho: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = random_unit_vector(rng, base.len());
    let mixed: Vec<f64> = base
        .iter()
        .zip(&noise)
        .map(|(b, n)| rho * b + (1.0 - rho * rho).sqrt() * n)
        .collect();
    let norm = mixed.iter().map(|x| x * x).sum::<f64>().sqrt();
    mixed.iter().map(|x| x / norm).collect()
}

fn format_vector(word: &str, v: &[f64]) -> String {
    let mut line = String::from(word);
    for x in v {
        line.push(' ');
        line.push_str(&format!("{x}"));
    }
    line
}

/// Generates the full world deterministically from the spec's seed.
pub fn generate_world(spec: &WorldSpec) -> Result<World, WorldError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Embeddings: near-orthogonal object directions; each register's verb
    // and modifier correlated with its object; preps and determiners stay
    // out of the table.
    let mut embedding_lines = Vec::new();
    let all_objects: Vec<String> = spec
        .seen_objects
        .iter()
        .chain(&spec.novel_objects)
        .cloned()
        .collect();
    let mut object_vectors = Vec::new();
    for object in &all_objects {
        let v = random_unit_vector(&mut rng, EMBEDDING_DIM);
        embedding_lines.push(format_vector(object, &v));
        object_vectors.push(v);
    }
    let mut covered = BTreeSet::new();
    for (idx, object) in all_objects.iter().enumerate() {
        for word in [spec.register_verb(object), spec.register_modifier(object)] {
            if covered.insert(word.to_string()) {
                let v = mix(&object_vectors[idx], REGISTER_RHO, &mut rng);
                embedding_lines.push(format_vector(word, &v));
            }
        }
    }
    // Words outside any register (possible when lists are longer than the
    // object list) get their own directions.
    for word in spec.verbs.iter().chain(&spec.modifiers) {
        if covered.insert(word.clone()) {
            let v = random_unit_vector(&mut rng, EMBEDDING_DIM);
            embedding_lines.push(format_vector(word, &v));
        }
    }

    // Lexicon: objects tagged object, every other world word tagged other.
    let mut lexicon = Lexicon::new();
    for object in &all_objects {
        lexicon.insert(Token::new(object)?, WordCategory::Object)?;
    }
    let mut others: BTreeSet<String> = spec
        .modifiers
        .iter()
        .chain(&spec.verbs)
        .chain(&spec.preps)
        .cloned()
        .collect();
    for template in &spec.templates {
        for part in template.split_whitespace() {
            if !part.starts_with('{') {
                others.insert(part.to_string());
            }
        }
    }
    for word in others {
        lexicon.insert(Token::new(&word)?, WordCategory::Other)?;
    }

    // Labeled images: one or two distinct seen objects. The primary
    // object cycles through the seen list so coverage stays balanced at
    // small image counts.
    let feature_order = spec.feature_order();
    let mut images = Vec::new();
    let mut eval_refs = Vec::new();
    for i in 0..spec.labeled_count {
        let primary = spec.seen_objects[i % spec.seen_objects.len()].clone();
        let mut objects = vec![primary.clone()];
        if rng.random_range(0..2) == 1 {
            let second = spec.seen_objects[rng.random_range(0..spec.seen_objects.len())].clone();
            if second != primary {
                objects.push(second);
            }
        }
        let refs = make_refs(spec, &objects, spec.refs_per_image, &mut rng);
        let id = format!("lab_{i:03}");
        images.push(ImageSample {
            id: id.clone(),
            objects: objects.iter().map(|o| Token::new(o)).collect::<Result<_, _>>()?,
            features: bag_features(&objects, &feature_order),
            split: Split::Labeled,
            refs: Some(refs.clone()),
            domain: DomainTag::In,
        });
        eval_refs.push((id, refs));
    }

    // Uncaptioned images: novel objects only, the out-of-domain extreme.
    // Two distinct novel objects when the spec has them, so adequacy
    // (mentioning everything) stays harder than fidelity. Their
    // references exist only as evaluation ground truth.
    for i in 0..spec.uncaptioned_count {
        let novel = spec.novel_objects[rng.random_range(0..spec.novel_objects.len())].clone();
        let mut objects = vec![novel.clone()];
        if spec.novel_objects.len() > 1 {
            loop {
                let second =
                    spec.novel_objects[rng.random_range(0..spec.novel_objects.len())].clone();
                if second != novel {
                    objects.push(second);
                    break;
                }
            }
        }
        let refs = make_refs(spec, &objects, spec.refs_per_image, &mut rng);
        let id = format!("unc_{i:03}");
        images.push(ImageSample {
            id: id.clone(),
            objects: objects.iter().map(|o| Token::new(o)).collect::<Result<_, _>>()?,
            features: bag_features(&objects, &feature_order),
            split: Split::Uncaptioned,
            refs: None,
            domain: DomainTag::Out,
        });
        eval_refs.push((id, refs));
    }

    // Text-only paraphrase corpus: every object in its own register,
    // paired with rotating partners. Templates rotate round-robin so
    // every object appears in every sentence frame and the masked-window
    // predictor has full context coverage, novel collocations included.
    let mut corpus_lines = Vec::new();
    for (idx, object) in all_objects.iter().enumerate() {
        for k in 0..CORPUS_SENTENCES_PER_OBJECT.max(2 * spec.templates.len()) {
            let partner = &all_objects[(idx + 1 + (k % (all_objects.len() - 1))) % all_objects.len()];
            let objects = vec![object.clone(), partner.clone()];
            let template = &spec.templates[k % spec.templates.len()];
            // The corpus sentence's first object slot must hold `object`
            // so its register collocations appear in context.
            let caption = realize_template_with_primary(spec, template, &objects, &mut rng);
            corpus_lines.push(caption.text());
        }
    }

    Ok(World {
        spec: spec.clone(),
        images,
        eval_refs,
        lexicon,
        embedding_lines,
        corpus_lines,
    })
}

/// Like `realize_template`, but the first object slot always takes
/// `objects[0]` so the register on display is predictable.
fn realize_template_with_primary(
    spec: &WorldSpec,
    template: &str,
    objects: &[String],
    rng: &mut ChaCha8Rng,
) -> Caption {
    let mut words = Vec::new();
    let mut obj_cursor = 0usize;
    for part in template.split_whitespace() {
        match part {
            "{obj}" => {
                let object = &objects[obj_cursor % objects.len()];
                obj_cursor += 1;
                words.push(object.clone());
            }
            "{adj}" => words.push(spec.register_modifier(&objects[0]).to_string()),
            "{verb}" => words.push(spec.register_verb(&objects[0]).to_string()),
            "{prep}" => {
                words.push(spec.preps[rng.random_range(0..spec.preps.len())].clone())
            }
            literal => words.push(literal.to_string()),
        }
    }
    Caption::parse_tokens(&words.iter().map(String::as_str).collect::<Vec<_>>())
        .expect("templates are nonempty")
}

fn bag_features(objects: &[String], order: &[Token]) -> Vec<f64> {
    order
        .iter()
        .map(|token| objects.iter().filter(|o| o.as_str() == token.as_str()).count() as f64)
        .collect()
}

impl World {
    /// Writes the world as the on-disk dataset layout:
    /// world.json, images.jsonl, refs.jsonl, lexicon.tsv, embeddings.txt,
    /// corpus.txt. Byte-deterministic for a fixed spec.
    pub fn write(&self, dir: &Path) -> Result<(), WorldError> {
        std::fs::create_dir_all(dir)?;
        let mut spec_json = serde_json::to_string_pretty(&self.spec)?;
        spec_json.push('\n');
        std::fs::write(dir.join("world.json"), spec_json)?;

        let mut images = String::new();
        for image in &self.images {
            images.push_str(&serde_json::to_string(image)?);
            images.push('\n');
        }
        std::fs::write(dir.join("images.jsonl"), images)?;

        let mut refs = String::new();
        for (id, captions) in &self.eval_refs {
            let record = crate::io::RefRecord {
                id: id.clone(),
                refs: captions
                    .iter()
                    .map(|c| c.tokens().iter().map(|t| t.as_str().to_string()).collect())
                    .collect(),
            };
            refs.push_str(&serde_json::to_string(&record)?);
            refs.push('\n');
        }
        std::fs::write(dir.join("refs.jsonl"), refs)?;

        self.lexicon.write(&dir.join("lexicon.tsv"))?;
        std::fs::write(dir.join("embeddings.txt"), self.embedding_lines.join("\n") + "\n")?;
        std::fs::write(dir.join("corpus.txt"), self.corpus_lines.join("\n") + "\n")?;
        Ok(())
    }
}
