// scratch probe for the mechanism-benefit ordering
use kggr::harness::*;
use std::time::Instant;

fn run(config: &ModelConfig, train: &Dataset, test: &Dataset, table: &kggr::vocab_graph::SemanticEmbeddingTable) -> f64 {
    let (state, _) = train_mlr(config, train, table).unwrap();
    let report = evaluate(&state, test, table, &EvalFlags::default()).unwrap();
    report.map
}

fn main() {
    let t0 = Instant::now();
    let mut full_sum = 0.0;
    let mut no_gsp_sum = 0.0;
    let mut no_gfp_sum = 0.0;
    for seed in 0..5u64 {
        let spec = SynthSpec {
            categories: 8,
            samples: 600,
            width: 4,
            height: 4,
            channels: 16,
            pairs: vec![
                PlantedPair { a: 0, b: 1, prob: 0.9 },
                PlantedPair { a: 2, b: 3, prob: 0.9 },
                PlantedPair { a: 4, b: 5, prob: 0.9 },
            ],
            weak: vec![1, 3, 5],
            weak_strength: 0.15,
            noise: 0.3,
            base_rate: 0.25,
            ..SynthSpec::default()
        };
        let (world, table) = synth_dataset(&spec, 1000 + seed).unwrap();
        let (train, test) = split(world, 200);

        let mut config = ModelConfig::desk();
        config.seed = seed;
        config.max_steps = 2000;
        config.learning_rate = 3e-3;

        let full = run(&config, &train, &test, &table);
        let mut c2 = config.clone();
        c2.disable_gsp = true;
        let no_gsp = run(&c2, &train, &test, &table);
        let mut c3 = config.clone();
        c3.disable_gfp = true;
        let no_gfp = run(&c3, &train, &test, &table);
        println!("seed {seed}: full={full:.4} w/o-GSP={no_gsp:.4} w/o-GFP={no_gfp:.4}");
        full_sum += full; no_gsp_sum += no_gsp; no_gfp_sum += no_gfp;
    }
    println!("means: full={:.4} w/o-GSP={:.4} w/o-GFP={:.4}  ({:?})",
             full_sum / 5.0, no_gsp_sum / 5.0, no_gfp_sum / 5.0, t0.elapsed());
}
