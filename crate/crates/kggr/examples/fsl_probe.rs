// scratch probe: mixed signatures (predictable + separable components)
use kggr::harness::*;

fn main() {
    for (lr2, seed0) in [(3e-3f64, 0u64), (3e-3, 5), (1e-3, 0), (1e-3, 5)] {
        let (mix, noise, signal) = (0.4f64, 0.4f64, 1.2f64);
        let mut sums = [0.0f64; 3];
        let mut wins = 0;
        for seed in seed0..seed0 + 5 {
            let map_seed = 90_000 + seed;
            let base_spec = SynthSpec {
                categories: 6, samples: 300, width: 4, height: 4, channels: 16,
                pairs: vec![
                    PlantedPair { a: 0, b: 1, prob: 0.9 },
                    PlantedPair { a: 2, b: 3, prob: 0.8 },
                ],
                noise, base_rate: 0.3,
                embed_dim: 4,
                signal_strength: signal,
                signature_embed_mix: mix,
                label_prefix: "b".to_string(),
                signature_map_seed: Some(map_seed),
                ..SynthSpec::default()
            };
            let novel_spec = SynthSpec {
                categories: 4, samples: 400, width: 4, height: 4, channels: 16,
                pairs: vec![PlantedPair { a: 0, b: 1, prob: 0.85 }],
                noise, base_rate: 0.3,
                embed_dim: 4,
                signal_strength: signal,
                signature_embed_mix: mix,
                label_prefix: "n".to_string(),
                signature_map_seed: Some(map_seed),
                ..SynthSpec::default()
            };
            let (base, base_table) = synth_dataset(&base_spec, 2000 + seed).unwrap();
            let (pool, novel_table) = synth_dataset(&novel_spec, 3000 + seed).unwrap();

            let mut config = ModelConfig::desk();
            config.categories = 6;
            config.semantic_dim = 4;
            config.seed = seed;
            config.stage1_steps = 800;
            config.stage2_steps = 500;
            config.learning_rate = 3e-3;
            config.stage2_learning_rate = lr2;

            let mut pair = [0.0f64; 2];
            for (idx, k) in [1usize, 5].iter().enumerate() {
                let (support, test) = k_shot_split(&pool, *k);
                let out = train_fsl(&config, &base, &base_table, &support, &novel_table).unwrap();
                let m = evaluate(&out.stage2, &test, &novel_table, &EvalFlags::default()).unwrap().map;
                sums[idx] += m;
                pair[idx] = m;
            }
            if pair[1] >= pair[0] { wins += 1; }
        }
        println!("lr2={lr2:.0e} seeds {seed0}..{}: 1shot={:.4} 5shot={:.4} delta={:+.4} wins={wins}/5",
                 seed0 + 5, sums[0] / 5.0, sums[1] / 5.0, (sums[1] - sums[0]) / 5.0);
    }
}
