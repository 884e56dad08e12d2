//! Multi-label datasets: the JSON Lines wire format and a synthetic
//! generator with planted co-occurrence structure.
//!
//! Synthetic samples carry W×H×N feature grids. Each present category adds
//! its signature pattern at one random location; categories flagged weak
//! get attenuated signatures, so recognizing them benefits from co-occurring
//! strong partners. Signatures are a fixed linear map of the category word
//! vectors, which lets attention trained on base categories carry over to
//! novel ones.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::FeatureGrid;
use crate::diffcore::Array;
use crate::error::{Error, Result};
use crate::vocab_graph::{LabelVocabulary, SemanticEmbeddingTable};

/// Sample payload: a precomputed feature grid, or a raw image tensor for
/// the trainable backbone stub.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Grid(FeatureGrid<f32>),
    /// height×width×3, stored as an [h, w, 3] array.
    Image(Array<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiLabelSample {
    pub id: String,
    /// Binary label vector, length C.
    pub labels: Vec<bool>,
    pub payload: Payload,
}

impl MultiLabelSample {
    pub fn label_names(&self, vocab: &LabelVocabulary) -> Vec<String> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(|(c, _)| vocab.name(c).to_string())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub vocab: LabelVocabulary,
    pub samples: Vec<MultiLabelSample>,
}

impl Dataset {
    /// Per-sample label-name sets, the co-occurrence builder's input.
    pub fn annotations(&self) -> Vec<Vec<String>> {
        self.samples
            .iter()
            .map(|s| s.label_names(&self.vocab))
            .collect()
    }

    /// Number of samples carrying category `c`.
    pub fn positives(&self, c: usize) -> usize {
        self.samples.iter().filter(|s| s.labels[c]).count()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum GridJson {
    Nested(Vec<Vec<Vec<f64>>>),
    File { file: String },
}

#[derive(Serialize, Deserialize)]
struct SampleJson {
    id: String,
    labels: Vec<String>,
    grid: GridJson,
}

fn grid_to_nested(grid: &FeatureGrid<f32>) -> Vec<Vec<Vec<f64>>> {
    (0..grid.width())
        .map(|w| {
            (0..grid.height())
                .map(|h| grid.location(w, h).iter().map(|&v| v as f64).collect())
                .collect()
        })
        .collect()
}

/// Write one sample per line: `{"id": …, "labels": […], "grid": […]}`.
pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for sample in &dataset.samples {
        let grid = match &sample.payload {
            Payload::Grid(g) => GridJson::Nested(grid_to_nested(g)),
            Payload::Image(_) => {
                return Err(Error::Dataset(
                    "image payloads have no JSONL representation; store grids".to_string(),
                ))
            }
        };
        let line = serde_json::to_string(&SampleJson {
            id: sample.id.clone(),
            labels: sample.label_names(&dataset.vocab),
            grid,
        })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Load a JSON Lines dataset. When no vocabulary is supplied, the sorted
/// union of all label names becomes the vocabulary.
pub fn load_jsonl(path: &Path, vocab: Option<&LabelVocabulary>) -> Result<Dataset> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut raw: Vec<SampleJson> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: SampleJson = serde_json::from_str(&line).map_err(|e| {
            Error::Dataset(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        raw.push(sample);
    }

    let vocab = match vocab {
        Some(v) => v.clone(),
        None => {
            let mut names: Vec<String> = raw
                .iter()
                .flat_map(|s| s.labels.iter().cloned())
                .collect();
            names.sort();
            names.dedup();
            LabelVocabulary::new(names)?
        }
    };

    let base_dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut samples = Vec::with_capacity(raw.len());
    for s in raw {
        let mut labels = vec![false; vocab.len()];
        for name in &s.labels {
            labels[vocab.require(name)?] = true;
        }
        let nested = match s.grid {
            GridJson::Nested(n) => n,
            GridJson::File { file } => {
                let grid_path = base_dir.join(&file);
                serde_json::from_str(&fs::read_to_string(&grid_path)?)?
            }
        };
        let grid = FeatureGrid::<f32>::from_nested(&nested)?;
        samples.push(MultiLabelSample {
            id: s.id,
            labels,
            payload: Payload::Grid(grid),
        });
    }
    Ok(Dataset { vocab, samples })
}

/// A planted conditional: when category `a` is present, `b` follows with
/// the given probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedPair {
    pub a: usize,
    pub b: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub categories: usize,
    pub samples: usize,
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// Conditionals applied in order after independent base draws.
    pub pairs: Vec<PlantedPair>,
    /// Standard deviation of the additive grid noise.
    pub noise: f64,
    /// Independent presence probability per category.
    pub base_rate: f64,
    /// Categories whose signatures are attenuated.
    pub weak: Vec<usize>,
    /// Signature multiplier for weak categories.
    pub weak_strength: f64,
    /// Signature magnitude for ordinary categories.
    pub signal_strength: f64,
    /// Dimension of the generated word vectors.
    pub embed_dim: usize,
    /// 0 = independent embeddings; 1 = planted partners share a vector.
    pub embed_align: f64,
    /// Weight of the embedding-mapped signature component. 1 makes category
    /// appearance fully predictable from the word vector (maximal attention
    /// transfer); 0 gives every category an independent appearance
    /// direction (maximal separability).
    pub signature_embed_mix: f64,
    /// Label name prefix (`c` gives c00, c01, …).
    pub label_prefix: String,
    /// Seed for the embedding→signature map, shared across datasets that
    /// should live in the same feature space (base/novel splits).
    pub signature_map_seed: Option<u64>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            categories: 8,
            samples: 200,
            width: 4,
            height: 4,
            channels: 16,
            pairs: Vec::new(),
            noise: 0.3,
            base_rate: 0.3,
            weak: Vec::new(),
            weak_strength: 0.25,
            signal_strength: 1.0,
            embed_dim: 8,
            embed_align: 0.6,
            signature_embed_mix: 1.0,
            label_prefix: "c".to_string(),
            signature_map_seed: None,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.categories == 0 || self.channels == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Config("synth extents must be positive".to_string()));
        }
        if !(0.0..=1.0).contains(&self.base_rate) {
            return Err(Error::Config("base_rate must lie in [0, 1]".to_string()));
        }
        for p in &self.pairs {
            if !(0.0..=1.0).contains(&p.prob) {
                return Err(Error::Config(format!(
                    "planted pair ({}, {}) has impossible probability {}",
                    p.a, p.b, p.prob
                )));
            }
            if p.a >= self.categories || p.b >= self.categories {
                return Err(Error::Config(format!(
                    "planted pair ({}, {}) references a category out of range",
                    p.a, p.b
                )));
            }
        }
        if let Some(&w) = self.weak.iter().find(|&&w| w >= self.categories) {
            return Err(Error::Config(format!("weak category {w} out of range")));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".to_string()));
        }
        Ok(())
    }
}

/// Standard normal via Box–Muller; two uniforms per draw keeps the stream
/// layout independent of call parity.
fn gauss<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn unit_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gauss(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Deterministic synthetic dataset and embedding table.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<(Dataset, SemanticEmbeddingTable)> {
    spec.validate()?;
    let c = spec.categories;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let names: Vec<String> = (0..c)
        .map(|i| format!("{}{:02}", spec.label_prefix, i))
        .collect();
    let vocab = LabelVocabulary::new(names.clone())?;

    // Word vectors; planted partners pulled toward their source category.
    let mut embeds: Vec<Vec<f64>> = (0..c).map(|_| unit_vector(&mut rng, spec.embed_dim)).collect();
    for pair in &spec.pairs {
        let source = embeds[pair.a].clone();
        let target = &mut embeds[pair.b];
        let mut blended: Vec<f64> = source
            .iter()
            .zip(target.iter())
            .map(|(s, t)| spec.embed_align * s + (1.0 - spec.embed_align) * t)
            .collect();
        let norm = blended.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
        for b in &mut blended {
            *b /= norm;
        }
        *target = blended;
    }
    let table = SemanticEmbeddingTable::from_rows(names, embeds.clone());

    // Signatures live in channel space through a fixed linear map of the
    // word vectors, so the embedding→appearance relation is learnable and
    // shared across datasets generated with the same map seed.
    let map_seed = spec.signature_map_seed.unwrap_or(seed ^ 0x5167_4d41);
    let mut map_rng = ChaCha8Rng::seed_from_u64(map_seed);
    let mixing: Vec<f64> = (0..spec.channels * spec.embed_dim)
        .map(|_| gauss(&mut map_rng))
        .collect();
    let mix = spec.signature_embed_mix.clamp(0.0, 1.0);
    let signatures: Vec<Vec<f64>> = (0..c)
        .map(|cat| {
            let mut mapped = vec![0.0; spec.channels];
            for (ch, s) in mapped.iter_mut().enumerate() {
                for (d, e) in embeds[cat].iter().enumerate() {
                    *s += mixing[ch * spec.embed_dim + d] * e;
                }
            }
            let mnorm = mapped.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            let own = unit_vector(&mut rng, spec.channels);
            let mut sig: Vec<f64> = mapped
                .iter()
                .zip(&own)
                .map(|(m, o)| mix * m / mnorm + (1.0 - mix) * o)
                .collect();
            let norm = sig.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
            for s in &mut sig {
                *s /= norm;
            }
            sig
        })
        .collect();

    let locations = spec.width * spec.height;
    let mut samples = Vec::with_capacity(spec.samples);
    for i in 0..spec.samples {
        let mut present = vec![false; c];
        for slot in present.iter_mut() {
            *slot = rng.gen_bool(spec.base_rate);
        }
        for pair in &spec.pairs {
            if present[pair.a] {
                present[pair.b] = rng.gen_bool(pair.prob);
            }
        }

        let mut grid = vec![0f32; locations * spec.channels];
        for v in grid.iter_mut() {
            *v = (gauss(&mut rng) * spec.noise) as f32;
        }
        for (cat, &on) in present.iter().enumerate() {
            if !on {
                continue;
            }
            let loc = rng.gen_range(0..locations);
            let strength = spec.signal_strength
                * if spec.weak.contains(&cat) {
                    spec.weak_strength
                } else {
                    1.0
                };
            for (ch, &s) in signatures[cat].iter().enumerate() {
                grid[loc * spec.channels + ch] += (strength * s) as f32;
            }
        }
        samples.push(MultiLabelSample {
            id: format!("s{i:06}"),
            labels: present,
            payload: Payload::Grid(FeatureGrid::from_rows(
                spec.width,
                spec.height,
                Array::from_vec(vec![locations, spec.channels], grid),
            )),
        });
    }

    Ok((Dataset { vocab, samples }, table))
}

/// Split one generated world into train/test chunks: same vocabulary,
/// signatures, and planted structure, disjoint samples.
pub fn split(dataset: Dataset, train: usize) -> (Dataset, Dataset) {
    assert!(train <= dataset.samples.len());
    let mut samples = dataset.samples;
    let rest = samples.split_off(train);
    (
        Dataset {
            vocab: dataset.vocab.clone(),
            samples,
        },
        Dataset {
            vocab: dataset.vocab,
            samples: rest,
        },
    )
}

/// Carve a K-shot support set out of a pool: for each category in order,
/// take the first K pool samples carrying it (samples already taken count
/// for every label they carry). Returns (support, remainder).
pub fn k_shot_split(pool: &Dataset, k: usize) -> (Dataset, Dataset) {
    let c = pool.vocab.len();
    let mut taken = vec![false; pool.samples.len()];
    for cat in 0..c {
        let mut have = pool
            .samples
            .iter()
            .zip(&taken)
            .filter(|(s, &t)| t && s.labels[cat])
            .count();
        for (i, s) in pool.samples.iter().enumerate() {
            if have >= k {
                break;
            }
            if !taken[i] && s.labels[cat] {
                taken[i] = true;
                have += 1;
            }
        }
    }
    let mut support = Vec::new();
    let mut rest = Vec::new();
    for (s, &t) in pool.samples.iter().zip(&taken) {
        if t {
            support.push(s.clone());
        } else {
            rest.push(s.clone());
        }
    }
    (
        Dataset {
            vocab: pool.vocab.clone(),
            samples: support,
        },
        Dataset {
            vocab: pool.vocab.clone(),
            samples: rest,
        },
    )
}

/// Export an embedding table in the plain `token v1 … vd` text format.
pub fn save_embeddings(table: &SemanticEmbeddingTable, path: &Path) -> Result<()> {
    let mut out = fs::File::create(path)?;
    for (i, label) in table.labels().iter().enumerate() {
        let values: Vec<String> = table.vector(i).iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{} {}", label, values.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab_graph::{build_cooccurrence, CountMode};

    #[test]
    fn same_seed_identical_dataset() {
        let spec = SynthSpec {
            samples: 20,
            ..SynthSpec::default()
        };
        let (a, ta) = synth_dataset(&spec, 7).unwrap();
        let (b, tb) = synth_dataset(&spec, 7).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a.samples.len(), b.samples.len());
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x, y);
        }
        let (c, _) = synth_dataset(&spec, 8).unwrap();
        assert_ne!(a.samples[0], c.samples[0]);
    }

    #[test]
    fn noiseless_single_category_grid_contains_one_signature() {
        let spec = SynthSpec {
            categories: 3,
            samples: 40,
            noise: 0.0,
            base_rate: 0.25,
            ..SynthSpec::default()
        };
        let (data, _) = synth_dataset(&spec, 3).unwrap();
        for s in &data.samples {
            if s.labels.iter().filter(|&&l| l).count() != 1 {
                continue;
            }
            let Payload::Grid(grid) = &s.payload else { unreachable!() };
            let mut nonzero_locations = 0;
            for w in 0..grid.width() {
                for h in 0..grid.height() {
                    let norm: f32 = grid.location(w, h).iter().map(|v| v * v).sum();
                    if norm > 1e-10 {
                        nonzero_locations += 1;
                    }
                }
            }
            assert_eq!(nonzero_locations, 1, "exactly one injected signature");
        }
    }

    #[test]
    fn planted_pair_rate_matches_conditional_frequency() {
        let spec = SynthSpec {
            categories: 4,
            samples: 2000,
            pairs: vec![PlantedPair { a: 0, b: 1, prob: 0.9 }],
            ..SynthSpec::default()
        };
        let (data, _) = synth_dataset(&spec, 11).unwrap();
        let graph = build_cooccurrence(&data.annotations(), &data.vocab, CountMode::Strict).unwrap();
        let a01 = graph.at(0, 1);
        assert!((0.85..=0.95).contains(&a01), "empirical a01 = {a01}");
    }

    #[test]
    fn impossible_probability_rejected() {
        let spec = SynthSpec {
            pairs: vec![PlantedPair { a: 0, b: 1, prob: 1.5 }],
            ..SynthSpec::default()
        };
        assert!(synth_dataset(&spec, 0).is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let spec = SynthSpec {
            categories: 3,
            samples: 5,
            width: 2,
            height: 2,
            channels: 4,
            ..SynthSpec::default()
        };
        let (data, _) = synth_dataset(&spec, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save_jsonl(&data, &path).unwrap();
        let back = load_jsonl(&path, Some(&data.vocab)).unwrap();
        assert_eq!(back.vocab, data.vocab);
        assert_eq!(back.samples.len(), data.samples.len());
        for (a, b) in data.samples.iter().zip(&back.samples) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.labels, b.labels);
            let (Payload::Grid(ga), Payload::Grid(gb)) = (&a.payload, &b.payload) else {
                unreachable!()
            };
            for (x, y) in ga.rows().data().iter().zip(gb.rows().data()) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn grid_file_reference_loads() {
        let dir = tempfile::tempdir().unwrap();
        let grid_path = dir.path().join("g0.json");
        std::fs::write(&grid_path, "[[[1.0, 2.0]], [[3.0, 4.0]]]").unwrap();
        let jsonl = dir.path().join("data.jsonl");
        std::fs::write(
            &jsonl,
            "{\"id\": \"x\", \"labels\": [\"a\"], \"grid\": {\"file\": \"g0.json\"}}\n",
        )
        .unwrap();
        let data = load_jsonl(&jsonl, None).unwrap();
        let Payload::Grid(g) = &data.samples[0].payload else {
            unreachable!()
        };
        assert_eq!(g.width(), 2);
        assert_eq!(g.height(), 1);
        assert_eq!(g.channels(), 2);
        assert_eq!(g.location(1, 0), &[3.0f32, 4.0]);
    }

    #[test]
    fn embedding_export_parses_back() {
        let spec = SynthSpec {
            categories: 3,
            samples: 1,
            ..SynthSpec::default()
        };
        let (data, table) = synth_dataset(&spec, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.txt");
        save_embeddings(&table, &path).unwrap();
        let loaded = crate::vocab_graph::load_embeddings(&path, &data.vocab).unwrap();
        for c in 0..3 {
            for (a, b) in loaded.vector(c).iter().zip(table.vector(c)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
