// scratch probe for overfit dynamics
use kggr::harness::*;
use std::time::Instant;

fn main() {
    let mut config = ModelConfig::desk();
    config.seed = 1;
    config.max_steps = 2000;
    config.target_map = Some(0.95);
    for lr in [3e-3, 5e-3] {
        config.learning_rate = lr;
        let spec = SynthSpec {
            categories: 8,
            samples: 200,
            width: 4,
            height: 4,
            channels: 16,
            pairs: vec![
                PlantedPair { a: 0, b: 1, prob: 0.9 },
                PlantedPair { a: 2, b: 3, prob: 0.8 },
            ],
            ..SynthSpec::default()
        };
        let (data, table) = synth_dataset(&spec, 5).unwrap();
        let t0 = Instant::now();
        let (state, logs) = train_mlr(&config, &data, &table).unwrap();
        let last = logs.last().unwrap();
        println!(
            "lr={lr:.0e}: steps={} loss={:.4} train mAP={:.4}  ({:?})",
            state.iteration, last.loss, last.map, t0.elapsed()
        );
    }
}
