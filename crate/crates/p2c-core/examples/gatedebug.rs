//! Prints stage-1 paraphrase/gate details every few iterations: the
//! greedy caption, the masked slot, P's proposal and the score delta.

use p2c_core::io::WorldData;
use p2c_core::models::{
    build_association, gate_value, DecodeMode, GateInputs, NGramParaphraser, ParaphraseModel,
};
use p2c_core::text::mask_random_non_object;
use p2c_core::train::{init_model, train_stage1, TrainConfig};
use p2c_core::world::{generate_world, WorldSpec};
use rand::Rng;
use rand::SeedableRng;

fn main() {
    let world = generate_world(&WorldSpec::toy()).unwrap();
    let data = WorldData::from_world(&world).unwrap();
    let cfg = TrainConfig::toy_stage1();
    let paraphraser = NGramParaphraser::fit_from_text(&data.corpus_text).unwrap();
    let association = build_association(cfg.association, &data.lexicon, &data.embeddings);

    // Probe the gate at several points in training by retraining to
    // intermediate iteration counts (cheap at this scale).
    for checkpoint in [10usize, 50, 100, 150, 250] {
        let mut probe_cfg = cfg.clone();
        probe_cfg.iterations = checkpoint;
        let model = init_model(&probe_cfg, &data).unwrap();
        let (model, log) =
            train_stage1(&probe_cfg, &data, model, &paraphraser, association.as_ref()).unwrap();
        let tail_gate: f64 = log.iter().rev().take(10).filter_map(|r| r.gate_rate).sum::<f64>() / 10.0;
        println!("== after {checkpoint} iters (gate rate last10 {tail_gate:.3}) ==");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        for image in data.uncaptioned().into_iter().take(4) {
            let (greedy, _) = model
                .decode(&image.features, DecodeMode::Greedy, probe_cfg.t_max, 0)
                .unwrap();
            let objects: Vec<&str> = image.objects.iter().map(|t| t.as_str()).collect();
            if greedy.is_empty() {
                println!("  {} {:?} -> <empty>", image.id, objects);
                continue;
            }
            let masked = match mask_random_non_object(&greedy, &data.lexicon, rng.random::<u64>()) {
                Ok(m) => m,
                Err(_) => {
                    println!("  {} {:?} -> {:?} (no maskable)", image.id, objects, greedy.text());
                    continue;
                }
            };
            let (replacement, p_prob) = paraphraser.predict(&masked);
            let paraphrased = masked.fill(replacement.clone());
            let so = association.score(image, &greedy);
            let sp = association.score(image, &paraphrased);
            let g = gate_value(
                &GateInputs {
                    score_paraphrased: sp,
                    score_original: so,
                    margin: probe_cfg.alpha_gate,
                },
                probe_cfg.gate_mode,
            );
            println!(
                "  {} {:?}\n    y_c = {:?}\n    mask idx {} ({:?}) -> {:?} (p={:.2})  A: {:.4} -> {:.4}  delta {:+.4}  g={:.4}",
                image.id,
                objects,
                greedy.text(),
                masked.mask_index(),
                masked.original().as_str(),
                replacement.as_str(),
                p_prob,
                so,
                sp,
                sp - so,
                g
            );
        }
    }
}
