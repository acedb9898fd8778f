//! Runs the bundled ablation variants over a few seeds and prints the
//! per-seed metric table, win counts and wall time.
//!
//!     cargo run --release -p p2c-core --example calibrate [seeds]

use std::time::Instant;

use p2c_core::ablate::{ablation_report, standard_variants};
use p2c_core::io::WorldData;
use p2c_core::train::TrainConfig;
use p2c_core::world::{generate_world, WorldSpec};

fn main() {
    let seed_count: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(5);
    let seeds: Vec<u64> = (0..seed_count).collect();

    let world = generate_world(&WorldSpec::toy()).expect("toy world generates");
    let data = WorldData::from_world(&world).expect("world loads");
    let variants = standard_variants(&TrainConfig::toy_stage1(), &TrainConfig::toy_stage2());

    let start = Instant::now();
    let report = ablation_report(&data, &variants, &seeds).expect("ablation runs");
    let elapsed = start.elapsed();

    println!(
        "{:<16} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "variant", "seed", "cider", "flcider", "objf1", "dup", "gate"
    );
    for row in &report.rows {
        for (name, metrics) in report.variants.iter().zip(&row.metrics) {
            println!(
                "{:<16} {:>6} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
                name,
                row.seed,
                metrics.cider,
                metrics.fluency_cider,
                metrics.object_f1,
                metrics.duplicate_rate,
                metrics.gate_rate.unwrap_or(f64::NAN),
            );
        }
        println!();
    }

    let f1_wins = report.wins("full", "no_r_assoc", |m| m.object_f1);
    let dup_wins = report.wins("no_r_rep", "full", |m| m.duplicate_rate);
    let fluency_wins = report.wins("stage1", "stage1_no_lp", |m| m.fluency_cider);
    let n = seeds.len();
    println!("object F1, full > no_r_assoc:        {f1_wins}/{n}");
    println!("duplicate rate, no_r_rep > full:     {dup_wins}/{n}");
    println!("fluency CIDEr, stage1 > stage1_no_lp: {fluency_wins}/{n}");
    println!("elapsed: {elapsed:?}");
}
