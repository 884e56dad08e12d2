// scratch probe for the end-to-end gradient check
use kggr::harness::*;
use kggr::vocab_graph::{build_cooccurrence, CountMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn main() {
    let mut config = ModelConfig::desk();
    config.categories = 5;
    config.grid_width = 2;
    config.grid_height = 2;
    config.channels = 8;
    config.hidden_dim = 8;
    config.semantic_dim = 4;
    config.joint_dim = 6;
    config.fused_dim = 6;
    config.feature_steps = 2;
    config.semantic_steps = 2;
    config.seed = 42;

    let spec = SynthSpec {
        categories: 5,
        samples: 2,
        width: 2,
        height: 2,
        channels: 8,
        embed_dim: 4,
        noise: 0.3,
        base_rate: 0.4,
        ..SynthSpec::default()
    };
    let (data, table) = synth_dataset(&spec, 7).unwrap();
    let graph = build_cooccurrence(&data.annotations(), &data.vocab, CountMode::Lenient).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params32: ModelParams<f32> = ModelParams::init(&mut rng, &config, None);
    let params = params32.to_f64();

    let refs: Vec<&MultiLabelSample> = data.samples.iter().collect();
    let t0 = Instant::now();
    let report = model_grad_check(&config, &params, &graph, &table, &refs, 1e-5, 1e-4).unwrap();
    println!("{report}");
    println!("elapsed: {:?}", t0.elapsed());
    assert!(report.pass, "gradient check failed");
}
