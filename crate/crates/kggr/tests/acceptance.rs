//! Acceptance suite. One test per criterion, each printing a PASS line
//! (visible with `--nocapture`); a failed assertion marks the criterion
//! red. Oracles here are deliberately independent transcriptions: direct
//! nested loops over the defining formulas, never the library's own code
//! path.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kggr::attention::{attention_map, decouple, AttentionParams, FeatureGrid};
use kggr::diffcore::{analytic_gradients, Array, Tape, ValueId};
use kggr::harness::{
    evaluate, k_shot_split, model_grad_check, split, synth_dataset, train_fsl, train_mlr,
    Dataset, EvalFlags, ModelConfig, ModelParams, MultiLabelSample, PlantedPair,
    SynthSpec,
};
use kggr::metrics::{average_precision, prf_metrics, ApVariant, BinaryMatrix, EvalBatch};
use kggr::objective::score;
use kggr::propagation::{feature_forward, semantic_forward, ClassifierWeights, GateParams, OutputNetParams};
use kggr::vocab_graph::{
    build_cooccurrence, CooccurrenceGraph, CountMode, GraphKind, LabelVocabulary,
};

// ── Independent oracles ──────────────────────────────────────────────────

mod oracle {
    use super::*;

    /// Conditional co-occurrence by direct per-pair scanning.
    pub fn cooccurrence(samples: &[Vec<usize>], categories: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![0.0; categories]; categories];
        for c in 0..categories {
            let with_c = samples.iter().filter(|s| s.contains(&c)).count();
            if with_c == 0 {
                continue;
            }
            for (c2, slot) in out[c].iter_mut().enumerate() {
                let both = samples
                    .iter()
                    .filter(|s| s.contains(&c) && s.contains(&c2))
                    .count();
                *slot = both as f64 / with_c as f64;
            }
        }
        out
    }

    /// Average precision by exhaustive rank enumeration: the rank of item i
    /// is one plus the number of items strictly ahead of it under the
    /// (score desc, index asc) order; no sorting involved.
    pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
        let positives: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
        if positives.is_empty() {
            return None;
        }
        let rank_of = |i: usize| -> usize {
            1 + (0..scores.len())
                .filter(|&j| {
                    j != i && (scores[j] > scores[i] || (scores[j] == scores[i] && j < i))
                })
                .count()
        };
        let mut total = 0.0;
        for &i in &positives {
            let r = rank_of(i);
            let hits = positives.iter().filter(|&&p| rank_of(p) <= r).count();
            total += hits as f64 / r as f64;
        }
        Some(total / positives.len() as f64)
    }

    pub struct PrfOracle {
        pub op: f64,
        pub or: f64,
        pub of1: f64,
        pub cp: f64,
        pub cr: f64,
        pub cf1: f64,
    }

    /// The six precision/recall/F1 metrics by direct double loops over the
    /// per-class correct/predicted/ground-truth counts.
    pub fn prf(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> PrfOracle {
        let categories = truth[0].len();
        let ratio = |n: f64, d: f64| if d == 0.0 { 0.0 } else { n / d };
        let mut sum_c = 0.0;
        let mut sum_p = 0.0;
        let mut sum_g = 0.0;
        let mut cp = 0.0;
        let mut cr = 0.0;
        for c in 0..categories {
            let mut n_correct = 0.0;
            let mut n_pred = 0.0;
            let mut n_gt = 0.0;
            for (p_row, t_row) in pred.iter().zip(truth) {
                if p_row[c] && t_row[c] {
                    n_correct += 1.0;
                }
                if p_row[c] {
                    n_pred += 1.0;
                }
                if t_row[c] {
                    n_gt += 1.0;
                }
            }
            sum_c += n_correct;
            sum_p += n_pred;
            sum_g += n_gt;
            cp += ratio(n_correct, n_pred);
            cr += ratio(n_correct, n_gt);
        }
        cp /= categories as f64;
        cr /= categories as f64;
        let op = ratio(sum_c, sum_p);
        let or = ratio(sum_c, sum_g);
        let f1 = |p: f64, r: f64| if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        PrfOracle {
            op,
            or,
            of1: f1(op, or),
            cp,
            cr,
            cf1: f1(cp, cr),
        }
    }

    /// Literal transcription of the attention equations: bilinear fusion
    /// per location, a scores head, plain softmax over locations, weighted
    /// pooling of the raw grid features.
    pub fn attention_features(
        grid: &[Vec<f64>], // L×N location rows
        x: &[f64],         // d_s
        params: &AttentionParams<f64>,
    ) -> Vec<Vec<f64>> {
        let locations = grid.len();
        let n = grid[0].len();
        let d1 = params.u.shape()[1];
        let d2 = params.p.shape()[1];

        let mut scores = Vec::with_capacity(locations);
        for f_wh in grid {
            // Uᵀ f ⊙ Vᵀ x, tanh, then Pᵀ(·) + b.
            let mut joint = vec![0.0; d1];
            for (k, j) in joint.iter_mut().enumerate() {
                let mut uf = 0.0;
                for i in 0..n {
                    uf += params.u.at2(i, k) * f_wh[i];
                }
                let mut vx = 0.0;
                for (i, &xi) in x.iter().enumerate() {
                    vx += params.v.at2(i, k) * xi;
                }
                *j = (uf * vx).tanh();
            }
            let mut fused = vec![0.0; d2];
            for (k, slot) in fused.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, &j) in joint.iter().enumerate() {
                    acc += params.p.at2(i, k) * j;
                }
                *slot = acc + params.b.data()[k];
            }
            let mut score = params.b_a.data()[0];
            for (k, &f) in fused.iter().enumerate() {
                score += params.w_a.data()[k] * f;
            }
            scores.push(score);
        }

        let total: f64 = scores.iter().map(|s| s.exp()).sum();
        let weights: Vec<f64> = scores.iter().map(|s| s.exp() / total).collect();

        let pooled: Vec<f64> = (0..n)
            .map(|ch| {
                weights
                    .iter()
                    .zip(grid)
                    .map(|(w, row)| w * row[ch])
                    .sum()
            })
            .collect();
        vec![weights, pooled]
    }

    /// Literal transcription of the propagation equations: out/in-edge
    /// aggregation, the bias-free gated update, T synchronous rounds, and
    /// the tanh output head over [h^T ; h^0].
    pub fn graph_forward(
        init: &[Vec<f64>], // C×D
        adj: &[Vec<f64>],  // C×C
        gates: &GateParams<f64>,
        out: &OutputNetParams<f64>,
        steps: usize,
    ) -> Vec<Vec<f64>> {
        let categories = init.len();
        let d = init[0].len();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let matvec = |m: &Array<f64>, v: &[f64]| -> Vec<f64> {
            (0..m.shape()[0])
                .map(|r| m.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
                .collect()
        };

        let mut h: Vec<Vec<f64>> = init.to_vec();
        for _ in 0..steps {
            let mut next = Vec::with_capacity(categories);
            for c in 0..categories {
                let mut agg = vec![0.0; 2 * d];
                for c2 in 0..categories {
                    for k in 0..d {
                        agg[k] += adj[c][c2] * h[c2][k];
                        agg[d + k] += adj[c2][c] * h[c2][k];
                    }
                }
                let z: Vec<f64> = matvec(&gates.w_z, &agg)
                    .iter()
                    .zip(matvec(&gates.u_z, &h[c]))
                    .map(|(a, b)| sig(a + b))
                    .collect();
                let r: Vec<f64> = matvec(&gates.w_r, &agg)
                    .iter()
                    .zip(matvec(&gates.u_r, &h[c]))
                    .map(|(a, b)| sig(a + b))
                    .collect();
                let gated: Vec<f64> = r.iter().zip(&h[c]).map(|(ri, hi)| ri * hi).collect();
                let cand: Vec<f64> = matvec(&gates.w, &agg)
                    .iter()
                    .zip(matvec(&gates.u, &gated))
                    .map(|(a, b)| (a + b).tanh())
                    .collect();
                let updated: Vec<f64> = (0..d)
                    .map(|k| (1.0 - z[k]) * h[c][k] + z[k] * cand[k])
                    .collect();
                next.push(updated);
            }
            h = next;
        }

        (0..categories)
            .map(|c| {
                let concat: Vec<f64> = h[c].iter().chain(&init[c]).copied().collect();
                (0..d)
                    .map(|k| {
                        let mut acc = out.bias.data()[k];
                        for (i, &v) in concat.iter().enumerate() {
                            acc += out.weight.at2(k, i) * v;
                        }
                        acc.tanh()
                    })
                    .collect()
            })
            .collect()
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}

fn acceptance_grid_config() -> ModelConfig {
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
    config
}

// ── Criterion 1: gradient suite ──────────────────────────────────────────

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let config = acceptance_grid_config();
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
    let graph = kggr::vocab_graph::build_semantic_graph(&table).unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params: ModelParams<f32> = ModelParams::init(&mut rng, &config, None);
    let params64 = params.to_f64();

    let refs: Vec<&MultiLabelSample> = data.samples.iter().collect();
    let report =
        model_grad_check(&config, &params64, &graph, &table, &refs, 1e-5, 1e-4).unwrap();
    assert!(report.pass, "{report}");
    // Every parameter group is on the flat list the checker walked.
    assert_eq!(report.elements_checked, {
        params64
            .named_arrays()
            .iter()
            .map(|(_, _, a)| a.len())
            .sum::<usize>()
    });

    // No dead subgraph: each group's end-to-end gradient has a nonzero
    // entry on this random instance.
    let named = kggr::harness::flatten_named(&params64);
    let config2 = config.clone();
    let graph2 = graph.clone();
    let table2 = table.clone();
    let samples: Vec<MultiLabelSample> = data.samples.clone();
    let build = move |tape: &mut Tape<f64>, ids: &[ValueId]| {
        let binding = kggr::harness::binding_from_flat_ids(ids, false);
        let ctx = kggr::harness::prepare_context(tape, &binding, &config2, &graph2, &table2)?;
        let refs: Vec<&MultiLabelSample> = samples.iter().collect();
        kggr::harness::batch_loss_on_tape(tape, &binding, &config2, &ctx, &refs, true)
    };
    let grads = analytic_gradients(&build, &named).unwrap();
    for ((name, _), grad) in named.iter().zip(&grads) {
        assert!(
            grad.data().iter().any(|&g| g != 0.0),
            "parameter {name} receives no gradient"
        );
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!(
        "[PASS] criterion 1: gradient suite, max rel err {:.3e} ≤ 1e-4 over {} elements in {elapsed:?}",
        report.max_rel_err, report.elements_checked
    );
}

// ── Criterion 2: oracle suites ───────────────────────────────────────────

#[test]
fn criterion_2_oracle_suites() {
    let start = Instant::now();

    // Co-occurrence vs brute-force counting, 100 random annotation sets.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let categories = rng.gen_range(2..=10);
        let vocab =
            LabelVocabulary::new((0..categories).map(|c| format!("c{c}"))).unwrap();
        let samples = rng.gen_range(1..=50);
        let mut index_sets = Vec::with_capacity(samples);
        let mut name_sets = Vec::with_capacity(samples);
        for _ in 0..samples {
            let mut set = Vec::new();
            for c in 0..categories {
                if rng.gen_bool(0.35) {
                    set.push(c);
                }
            }
            index_sets.push(set.clone());
            name_sets.push(set.iter().map(|&c| format!("c{c}")).collect::<Vec<_>>());
        }
        let graph = build_cooccurrence(&name_sets, &vocab, CountMode::Lenient).unwrap();
        let expect = oracle::cooccurrence(&index_sets, categories);
        for c in 0..categories {
            for c2 in 0..categories {
                close(graph.at(c, c2), expect[c][c2], 1e-12, "cooccurrence");
            }
        }
    }

    // Metrics vs brute-force Eq-style oracle, 100 random batches of
    // 20 images × 7 classes.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..100 {
        let m = 20;
        let c = 7;
        let mut scores = Vec::with_capacity(m * c);
        let mut truth = Vec::with_capacity(m * c);
        for _ in 0..m * c {
            // Quantize some trials so rank ties actually occur.
            let s: f64 = rng.gen();
            scores.push(if trial % 3 == 0 { (s * 8.0).round() / 8.0 } else { s });
            truth.push(rng.gen_bool(0.4));
        }
        let batch = EvalBatch::new(m, c, scores.clone(), truth.clone()).unwrap();
        for class in 0..c {
            let col_scores: Vec<f64> = (0..m).map(|i| scores[i * c + class]).collect();
            let col_truth: Vec<bool> = (0..m).map(|i| truth[i * c + class]).collect();
            let got = average_precision(&col_scores, &col_truth, ApVariant::NonInterpolated);
            let want = oracle::average_precision(&col_scores, &col_truth);
            match (got, want) {
                (Some(g), Some(w)) => close(g, w, 1e-9, "average precision"),
                (None, None) => {}
                other => panic!("AP disagreement on empty class: {other:?}"),
            }
        }

        // Random binary predictions against the same truth.
        let pred_flat: Vec<bool> = (0..m * c).map(|_| rng.gen_bool(0.3)).collect();
        let pred = BinaryMatrix::new(m, c, pred_flat.clone());
        let truth_m = BinaryMatrix::new(m, c, truth.clone());
        let block = prf_metrics(&pred, &truth_m);
        let pred_rows: Vec<Vec<bool>> =
            (0..m).map(|i| pred_flat[i * c..(i + 1) * c].to_vec()).collect();
        let truth_rows: Vec<Vec<bool>> =
            (0..m).map(|i| truth[i * c..(i + 1) * c].to_vec()).collect();
        let expect = oracle::prf(&pred_rows, &truth_rows);
        close(block.op, expect.op, 1e-9, "OP");
        close(block.or, expect.or, 1e-9, "OR");
        close(block.of1, expect.of1, 1e-9, "OF1");
        close(block.cp, expect.cp, 1e-9, "CP");
        close(block.cr, expect.cr, 1e-9, "CR");
        close(block.cf1, expect.cf1, 1e-9, "CF1");
        let _ = batch;
    }

    // Attention + propagation forwards vs literal transcriptions, 100
    // random tiny instances.
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let categories = rng.gen_range(1..=4);
        let (w, h) = (rng.gen_range(1..=3), rng.gen_range(1..=3));
        let n = rng.gen_range(1..=5);
        let ds = rng.gen_range(1..=4);
        let d1 = rng.gen_range(1..=4);
        let d2 = rng.gen_range(1..=4);
        let steps = rng.gen_range(0..=3);

        let params: AttentionParams<f64> = AttentionParams::init(&mut rng, n, ds, d1, d2);
        let gates: GateParams<f64> = GateParams::init(&mut rng, n);
        let outnet: OutputNetParams<f64> = OutputNetParams::init(&mut rng, n);
        let sem_gates: GateParams<f64> = GateParams::init(&mut rng, n);
        let sem_out: OutputNetParams<f64> = OutputNetParams::init(&mut rng, n);

        let locations = w * h;
        let grid_rows: Vec<Vec<f64>> = (0..locations)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let grid = FeatureGrid::from_rows(
            w,
            h,
            Array::from_vec(
                vec![locations, n],
                grid_rows.iter().flatten().copied().collect(),
            ),
        );
        let embeds: Vec<Vec<f64>> = (0..categories)
            .map(|_| (0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let table = kggr::vocab_graph::SemanticEmbeddingTable::from_rows(
            (0..categories).map(|c| format!("c{c}")).collect(),
            embeds.clone(),
        );
        let adj_rows: Vec<Vec<f64>> = (0..categories)
            .map(|_| (0..categories).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let graph = CooccurrenceGraph::from_rows(
            (0..categories).map(|c| format!("c{c}")).collect(),
            GraphKind::Statistical,
            adj_rows.clone(),
        );

        // Attention: weights and pooled features per category.
        let impl_features = decouple(&grid, &table, &params).unwrap();
        for (c, x) in embeds.iter().enumerate() {
            let expect = oracle::attention_features(&grid_rows, x, &params);
            let weights = attention_map(&grid, &Array::vector(x.clone()), &params).unwrap();
            for (g, w) in weights.data().iter().zip(&expect[0]) {
                close(*g, *w, 1e-12, "attention weight");
            }
            for (g, w) in impl_features[c].data().iter().zip(&expect[1]) {
                close(*g, *w, 1e-12, "pooled feature");
            }
        }

        // Feature propagation over the pooled features.
        let init_rows: Vec<Vec<f64>> =
            impl_features.iter().map(|f| f.data().to_vec()).collect();
        let init = Array::from_vec(
            vec![categories, n],
            init_rows.iter().flatten().copied().collect(),
        );
        let impl_out = feature_forward(&init, &graph, &gates, &outnet, steps).unwrap();
        let expect_out = oracle::graph_forward(&init_rows, &adj_rows, &gates, &outnet, steps);
        for c in 0..categories {
            for k in 0..n {
                close(impl_out.at2(c, k), expect_out[c][k], 1e-12, "contextualized");
            }
        }

        // Semantic propagation over random classifier rows, plus scoring.
        let w_init_rows: Vec<Vec<f64>> = (0..categories)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let classifiers = ClassifierWeights {
            init: Array::from_vec(
                vec![categories, n],
                w_init_rows.iter().flatten().copied().collect(),
            ),
        };
        let impl_w = semantic_forward(&classifiers, &graph, &sem_gates, &sem_out, steps).unwrap();
        let expect_w =
            oracle::graph_forward(&w_init_rows, &adj_rows, &sem_gates, &sem_out, steps);
        for c in 0..categories {
            for k in 0..n {
                close(impl_w.at2(c, k), expect_w[c][k], 1e-12, "refined classifier");
            }
        }

        let sv = score(&impl_out, &impl_w).unwrap();
        for c in 0..categories {
            let dot: f64 = (0..n).map(|k| expect_out[c][k] * expect_w[c][k]).sum();
            close(sv.scores.data()[c], dot, 1e-12, "score");
        }
    }

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}");
    println!("[PASS] criterion 2: oracle suites (co-occurrence, metrics, transcriptions) in {elapsed:?}");
}

// ── Criterion 3: invariant suites ────────────────────────────────────────

#[test]
fn criterion_3_invariant_suites() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);

    // Attention maps: nonnegative, sum to one, and spatial permutation
    // leaves pooled features unchanged.
    for _ in 0..25 {
        let (w, h) = (rng.gen_range(1..=4), rng.gen_range(1..=4));
        let n = rng.gen_range(2..=6);
        let ds = 3;
        let params: AttentionParams<f64> = AttentionParams::init(&mut rng, n, ds, 5, 5);
        let locations = w * h;
        let rows: Vec<Vec<f64>> = (0..locations)
            .map(|_| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect())
            .collect();
        let grid = FeatureGrid::from_rows(
            w,
            h,
            Array::from_vec(vec![locations, n], rows.iter().flatten().copied().collect()),
        );
        let x = Array::vector((0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let map = attention_map(&grid, &x, &params).unwrap();
        let total: f64 = map.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-6, "map sums to {total}");
        assert!(map.data().iter().all(|&v| v >= 0.0));

        let table = kggr::vocab_graph::SemanticEmbeddingTable::from_rows(
            vec!["only".to_string()],
            vec![x.data().to_vec()],
        );
        let base = decouple(&grid, &table, &params).unwrap();

        // Shuffle the locations; the pooled feature must not move.
        let mut perm: Vec<usize> = (0..locations).collect();
        for i in (1..perm.len()).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let shuffled: Vec<f64> = perm.iter().flat_map(|&l| rows[l].clone()).collect();
        let grid_p =
            FeatureGrid::from_rows(w, h, Array::from_vec(vec![locations, n], shuffled));
        let moved = decouple(&grid_p, &table, &params).unwrap();
        for (a, b) in base[0].data().iter().zip(moved[0].data()) {
            close(*a, *b, 1e-9, "spatial permutation invariance");
        }
    }

    // Category-permutation equivariance of both propagation networks.
    for _ in 0..25 {
        let categories = rng.gen_range(2..=5);
        let d = rng.gen_range(2..=5);
        let gates: GateParams<f64> = GateParams::init(&mut rng, d);
        let outnet: OutputNetParams<f64> = OutputNetParams::init(&mut rng, d);
        let states: Vec<Vec<f64>> = (0..categories)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let adj: Vec<Vec<f64>> = (0..categories)
            .map(|_| (0..categories).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let labels: Vec<String> = (0..categories).map(|c| format!("c{c}")).collect();
        let graph =
            CooccurrenceGraph::from_rows(labels.clone(), GraphKind::Statistical, adj.clone());
        let init = Array::from_vec(
            vec![categories, d],
            states.iter().flatten().copied().collect(),
        );
        let direct = feature_forward(&init, &graph, &gates, &outnet, 3).unwrap();

        let mut perm: Vec<usize> = (0..categories).collect();
        for i in (1..perm.len()).rev() {
            let j = rng.gen_range(0..=i);
            perm.swap(i, j);
        }
        let adj_p: Vec<Vec<f64>> = (0..categories)
            .map(|i| (0..categories).map(|j| adj[perm[i]][perm[j]]).collect())
            .collect();
        let graph_p = CooccurrenceGraph::from_rows(labels, GraphKind::Statistical, adj_p);
        let init_p = Array::from_vec(
            vec![categories, d],
            perm.iter().flat_map(|&i| states[i].clone()).collect(),
        );
        let permuted = feature_forward(&init_p, &graph_p, &gates, &outnet, 3).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            for k in 0..d {
                close(
                    permuted.at2(i, k),
                    direct.at2(src, k),
                    1e-9,
                    "category permutation equivariance",
                );
            }
        }
    }

    // Zero-adjacency isolation: with no edges, perturbing one node's input
    // cannot move any other node's output.
    {
        let gates: GateParams<f64> = GateParams::init(&mut rng, 3);
        let outnet: OutputNetParams<f64> = OutputNetParams::init(&mut rng, 3);
        let labels: Vec<String> = (0..3).map(|c| format!("c{c}")).collect();
        let graph =
            CooccurrenceGraph::from_rows(labels, GraphKind::Statistical, vec![vec![0.0; 3]; 3]);
        let init = Array::matrix(vec![
            vec![0.1, -0.2, 0.3],
            vec![0.5, 0.6, -0.7],
            vec![-0.9, 0.2, 0.4],
        ]);
        let base = feature_forward(&init, &graph, &gates, &outnet, 3).unwrap();
        let mut perturbed = init.clone();
        perturbed.data_mut()[3] += 5.0; // node 1, channel 0
        let moved = feature_forward(&perturbed, &graph, &gates, &outnet, 3).unwrap();
        assert_eq!(base.row(0), moved.row(0));
        assert_eq!(base.row(2), moved.row(2));
        assert_ne!(base.row(1), moved.row(1));
    }

    // T = 0 propagation is the identity map, bit-exact.
    {
        let gates: GateParams<f64> = GateParams::init(&mut rng, 4);
        let labels: Vec<String> = (0..2).map(|c| format!("c{c}")).collect();
        let graph = CooccurrenceGraph::from_rows(
            labels,
            GraphKind::Statistical,
            vec![vec![1.0, 0.5], vec![0.25, 1.0]],
        );
        let init = Array::matrix(vec![
            vec![0.12345678901234, -1.5, 3.25, f64::MIN_POSITIVE],
            vec![7.5, -0.0625, 2.0_f64.powi(-40), 42.0],
        ]);
        let out = kggr::propagation::propagate(&init, &graph, 0, &gates).unwrap();
        assert!(out
            .data()
            .iter()
            .zip(init.data())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    // Stage-2 freeze: frozen groups byte-identical across stage 2.
    {
        let (config, base, base_table, pool, novel_table) = fsl_world(3, 90_003);
        let (support, _) = k_shot_split(&pool, 2);
        let out = train_fsl(&config, &base, &base_table, &support, &novel_table).unwrap();
        assert_frozen_bytes(&out.stage1.params, &out.stage2.params);
    }

    println!("[PASS] criterion 3: invariant suites (softmax, permutations, isolation, T=0, freeze)");
}

fn assert_frozen_bytes(stage1: &ModelParams<f32>, stage2: &ModelParams<f32>) {
    use kggr::harness::ParamGroup;
    let frozen = [ParamGroup::Attention, ParamGroup::Backbone];
    let before = stage1.named_arrays();
    let after = stage2.named_arrays();
    for ((g1, name, a1), (_, _, a2)) in before.iter().zip(&after) {
        if frozen.contains(g1) {
            assert_eq!(a1.len(), a2.len(), "{name} changed length");
            for (x, y) in a1.data().iter().zip(a2.data()) {
                assert_eq!(x.to_bits(), y.to_bits(), "{name} changed bytes in stage 2");
            }
        }
    }
}

// ── Criterion 4: overfit check ───────────────────────────────────────────

#[test]
fn criterion_4_overfit() {
    let start = Instant::now();
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

    let mut config = ModelConfig::desk();
    config.seed = 1;
    config.learning_rate = 5e-3;
    config.max_steps = 2000;
    config.target_map = Some(0.95);

    let (state, logs) = train_mlr(&config, &data, &table).unwrap();
    let final_map = logs.last().unwrap().map;
    assert!(
        final_map >= 0.95,
        "train mAP {final_map} after {} steps",
        state.iteration
    );
    assert!(state.iteration <= 2000);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!(
        "[PASS] criterion 4: overfit train mAP {final_map:.4} ≥ 0.95 at step {} in {elapsed:?}",
        state.iteration
    );
}

// ── Criterion 5: mechanism benefit ───────────────────────────────────────

#[test]
fn criterion_5_mechanism_benefit() {
    let start = Instant::now();
    let mut means = [0.0f64; 3]; // full, w/o GSP, w/o GFP
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

        let variants = [
            config.clone(),
            {
                let mut c = config.clone();
                c.disable_gsp = true;
                c
            },
            {
                let mut c = config.clone();
                c.disable_gfp = true;
                c
            },
        ];
        for (i, variant) in variants.iter().enumerate() {
            let (state, _) = train_mlr(variant, &train, &table).unwrap();
            let report = evaluate(&state, &test, &table, &EvalFlags::default()).unwrap();
            means[i] += report.map / 5.0;
        }
    }
    let [full, no_gsp, no_gfp] = means;
    assert!(
        full >= no_gsp,
        "full {full:.4} < w/o-GSP {no_gsp:.4} on 5-seed means"
    );
    assert!(
        no_gsp >= no_gfp,
        "w/o-GSP {no_gsp:.4} < w/o-GFP {no_gfp:.4} on 5-seed means"
    );
    assert!(
        full - no_gfp > 0.0,
        "full {full:.4} does not exceed w/o-GFP {no_gfp:.4}"
    );
    let elapsed = start.elapsed();
    println!(
        "[PASS] criterion 5: held-out mAP means full {full:.4} ≥ w/o-GSP {no_gsp:.4} ≥ w/o-GFP {no_gfp:.4} (margin {:.4}) in {elapsed:?}",
        full - no_gfp
    );
}

// ── Criterion 6: few-shot protocol ───────────────────────────────────────

/// One base/novel world pair sharing a signature map, so stage-1 attention
/// transfers to the novel categories.
fn fsl_world(
    seed: u64,
    map_seed: u64,
) -> (
    ModelConfig,
    Dataset,
    kggr::vocab_graph::SemanticEmbeddingTable,
    Dataset,
    kggr::vocab_graph::SemanticEmbeddingTable,
) {
    let base_spec = SynthSpec {
        categories: 6,
        samples: 300,
        width: 4,
        height: 4,
        channels: 16,
        pairs: vec![
            PlantedPair { a: 0, b: 1, prob: 0.9 },
            PlantedPair { a: 2, b: 3, prob: 0.8 },
        ],
        noise: 0.4,
        base_rate: 0.3,
        embed_dim: 4,
        signal_strength: 1.2,
        signature_embed_mix: 0.4,
        label_prefix: "b".to_string(),
        signature_map_seed: Some(map_seed),
        ..SynthSpec::default()
    };
    let novel_spec = SynthSpec {
        categories: 4,
        samples: 400,
        width: 4,
        height: 4,
        channels: 16,
        pairs: vec![PlantedPair { a: 0, b: 1, prob: 0.85 }],
        noise: 0.4,
        base_rate: 0.3,
        embed_dim: 4,
        signal_strength: 1.2,
        signature_embed_mix: 0.4,
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
    config.stage2_learning_rate = 3e-3;
    (config, base, base_table, pool, novel_table)
}

#[test]
fn criterion_6_few_shot_protocol() {
    let start = Instant::now();
    let mut means = [0.0f64; 2]; // 1-shot, 5-shot
    for seed in 0..5u64 {
        let (config, base, base_table, pool, novel_table) = fsl_world(seed, 90_000 + seed);
        for (idx, k) in [1usize, 5].iter().enumerate() {
            let (support, test) = k_shot_split(&pool, *k);
            let out = train_fsl(&config, &base, &base_table, &support, &novel_table).unwrap();
            assert_frozen_bytes(&out.stage1.params, &out.stage2.params);
            let report = evaluate(&out.stage2, &test, &novel_table, &EvalFlags::default()).unwrap();
            means[idx] += report.map / 5.0;
        }
    }
    let [one_shot, five_shot] = means;
    assert!(
        five_shot >= one_shot,
        "5-shot mean {five_shot:.4} below 1-shot mean {one_shot:.4}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 600, "took {elapsed:?}");
    println!(
        "[PASS] criterion 6: novel mAP 5-shot {five_shot:.4} ≥ 1-shot {one_shot:.4}, frozen groups byte-identical, in {elapsed:?}"
    );
}

// ── Criterion 7: determinism ─────────────────────────────────────────────

#[test]
fn criterion_7_determinism() {
    let spec = SynthSpec {
        categories: 8,
        samples: 80,
        width: 4,
        height: 4,
        channels: 16,
        pairs: vec![PlantedPair { a: 0, b: 1, prob: 0.9 }],
        ..SynthSpec::default()
    };
    let mut config = ModelConfig::desk();
    config.seed = 77;
    config.max_steps = 200;

    let run = || {
        let (world, table) = synth_dataset(&spec, 777).unwrap();
        let (train, test) = split(world, 60);
        let (state, logs) = train_mlr(&config, &train, &table).unwrap();
        let report = evaluate(&state, &test, &table, &EvalFlags::default()).unwrap();
        (report.to_json_string().unwrap(), logs)
    };
    let (report_a, logs_a) = run();
    let (report_b, logs_b) = run();
    assert_eq!(report_a.as_bytes(), report_b.as_bytes(), "reports differ");
    assert_eq!(logs_a, logs_b, "loss curves differ");
    println!("[PASS] criterion 7: identical config and seed give byte-identical metric reports");
}
