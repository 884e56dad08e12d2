//! Label vocabulary, statistical co-occurrence adjacency, semantic-similarity
//! adjacency, and category word-embedding loading.
//!
//! The statistical graph entry `a[c][c']` is the conditional frequency with
//! which label `c'` appears on samples annotated with `c`, computed from
//! training annotations alone. The semantic graph replaces it with clamped
//! cosine similarity between category embeddings, for regimes where samples
//! are too scarce to count.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered, unique category names; index `c` ↔ name `names[c]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocabulary {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocabulary {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || index.insert(name.clone(), i).is_some() {
                return Err(Error::BadLabel(name.clone()));
            }
        }
        Ok(LabelVocabulary { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, c: usize) -> &str {
        &self.names[c]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphKind {
    Statistical,
    Semantic,
}

/// C×C adjacency of co-occurrence probabilities or semantic similarities;
/// every entry lies in [0, 1]. Row `c`, column `c'` holds `a[c][c']`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CooccurrenceGraph {
    labels: Vec<String>,
    kind: GraphKind,
    data: Vec<f64>, // row-major C×C
}

#[derive(Serialize, Deserialize)]
struct AdjacencyJson {
    labels: Vec<String>,
    kind: GraphKind,
    matrix: Vec<Vec<f64>>,
}

impl CooccurrenceGraph {
    pub fn from_rows(labels: Vec<String>, kind: GraphKind, rows: Vec<Vec<f64>>) -> Self {
        let c = labels.len();
        assert_eq!(rows.len(), c, "adjacency rows do not match label count");
        let mut data = Vec::with_capacity(c * c);
        for row in rows {
            assert_eq!(row.len(), c, "adjacency row length mismatch");
            data.extend(row);
        }
        CooccurrenceGraph { labels, kind, data }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn kind(&self) -> GraphKind {
        self.kind
    }

    #[inline]
    pub fn at(&self, c: usize, c2: usize) -> f64 {
        self.data[c * self.labels.len() + c2]
    }

    pub fn row(&self, c: usize) -> &[f64] {
        let n = self.labels.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_json_string(&self) -> Result<String> {
        let n = self.size();
        let matrix = (0..n).map(|c| self.row(c).to_vec()).collect();
        let j = AdjacencyJson {
            labels: self.labels.clone(),
            kind: self.kind,
            matrix,
        };
        Ok(serde_json::to_string_pretty(&j)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let j: AdjacencyJson = serde_json::from_str(s)?;
        if j.matrix.len() != j.labels.len()
            || j.matrix.iter().any(|row| row.len() != j.labels.len())
        {
            return Err(Error::Dataset(
                "adjacency matrix is not C×C for the listed labels".to_string(),
            ));
        }
        Ok(CooccurrenceGraph::from_rows(j.labels, j.kind, j.matrix))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_string()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?)
    }
}

/// How to treat categories that never occur in the training annotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CountMode {
    /// Zero-occurrence category is an error.
    Strict,
    /// Zero-occurrence category keeps a zero row, with a warning.
    Lenient,
}

/// Conditional co-occurrence frequencies from training annotations:
/// `a[c][c'] = count(c and c' on one sample) / count(c)`.
pub fn build_cooccurrence(
    annotations: &[Vec<String>],
    vocab: &LabelVocabulary,
    mode: CountMode,
) -> Result<CooccurrenceGraph> {
    let c = vocab.len();
    let mut co = vec![0u64; c * c];
    for sample in annotations {
        let mut present = BTreeSet::new();
        for label in sample {
            present.insert(vocab.require(label)?);
        }
        for &i in &present {
            for &j in &present {
                co[i * c + j] += 1;
            }
        }
    }
    let mut data = vec![0.0; c * c];
    for i in 0..c {
        let occurrences = co[i * c + i];
        if occurrences == 0 {
            match mode {
                CountMode::Strict => return Err(Error::ZeroOccurrence(vocab.name(i).to_string())),
                CountMode::Lenient => {
                    log::warn!(
                        "category '{}' has zero training occurrences; adjacency row left zero",
                        vocab.name(i)
                    );
                    continue;
                }
            }
        }
        for j in 0..c {
            data[i * c + j] = co[i * c + j] as f64 / occurrences as f64;
        }
    }
    Ok(CooccurrenceGraph {
        labels: vocab.names().to_vec(),
        kind: GraphKind::Statistical,
        data,
    })
}

/// Per-category word vectors; row `c` is the `d_s`-dimensional vector `x_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticEmbeddingTable {
    labels: Vec<String>,
    dim: usize,
    data: Vec<f64>, // row-major C×dim
}

impl SemanticEmbeddingTable {
    pub fn from_rows(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        assert_eq!(labels.len(), rows.len());
        let dim = rows.first().map_or(0, |r| r.len());
        assert!(dim > 0, "embedding dimension must be positive");
        let mut data = Vec::with_capacity(labels.len() * dim);
        for row in rows {
            assert_eq!(row.len(), dim, "ragged embedding rows");
            data.extend(row);
        }
        SemanticEmbeddingTable { labels, dim, data }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn vector(&self, c: usize) -> &[f64] {
        &self.data[c * self.dim..(c + 1) * self.dim]
    }

    /// Rows re-ordered onto another vocabulary (for base/novel splits).
    pub fn subset(&self, vocab: &LabelVocabulary) -> Result<SemanticEmbeddingTable> {
        let mut rows = Vec::with_capacity(vocab.len());
        for name in vocab.names() {
            let i = self
                .labels
                .iter()
                .position(|l| l == name)
                .ok_or_else(|| Error::UnknownLabel(name.clone()))?;
            rows.push(self.vector(i).to_vec());
        }
        Ok(SemanticEmbeddingTable::from_rows(
            vocab.names().to_vec(),
            rows,
        ))
    }
}

/// Clamped-cosine similarity adjacency: `a[c][c'] = max(0, cos(x_c, x_c'))`
/// with a unit diagonal.
pub fn build_semantic_graph(embeddings: &SemanticEmbeddingTable) -> Result<CooccurrenceGraph> {
    let c = embeddings.len();
    let mut norms = Vec::with_capacity(c);
    for i in 0..c {
        let n = embeddings.vector(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        if n == 0.0 {
            return Err(Error::ZeroNormEmbedding(embeddings.labels()[i].clone()));
        }
        norms.push(n);
    }
    let mut data = vec![0.0; c * c];
    for i in 0..c {
        data[i * c + i] = 1.0;
        for j in (i + 1)..c {
            let dot: f64 = embeddings
                .vector(i)
                .iter()
                .zip(embeddings.vector(j))
                .map(|(a, b)| a * b)
                .sum();
            let sim = (dot / (norms[i] * norms[j])).max(0.0);
            data[i * c + j] = sim;
            data[j * c + i] = sim;
        }
    }
    Ok(CooccurrenceGraph {
        labels: embeddings.labels().to_vec(),
        kind: GraphKind::Semantic,
        data,
    })
}

/// Load category vectors from a whitespace-separated text file, one
/// `token v1 … vd` per line. Multi-token category names resolve to the
/// arithmetic mean of their token vectors.
pub fn load_embeddings(path: &Path, vocab: &LabelVocabulary) -> Result<SemanticEmbeddingTable> {
    let text = fs::read_to_string(path)?;
    parse_embeddings(&text, vocab)
}

pub fn parse_embeddings(text: &str, vocab: &LabelVocabulary) -> Result<SemanticEmbeddingTable> {
    let mut wanted: HashSet<&str> = HashSet::new();
    for name in vocab.names() {
        for token in name.split_whitespace() {
            wanted.insert(token);
        }
    }

    let mut vectors: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        if !wanted.contains(token) || vectors.contains_key(token) {
            continue;
        }
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|_| {
                    Error::Dataset(format!(
                        "embedding line {}: cannot parse '{}' as a number",
                        lineno + 1,
                        f
                    ))
                })
            })
            .collect::<Result<_>>()?;
        match dim {
            None => {
                if values.is_empty() {
                    return Err(Error::Dataset(format!(
                        "embedding line {}: no vector components",
                        lineno + 1
                    )));
                }
                dim = Some(values.len());
            }
            Some(d) if d != values.len() => {
                return Err(Error::EmbeddingLength {
                    line: lineno + 1,
                    expected: d,
                    got: values.len(),
                });
            }
            Some(_) => {}
        }
        vectors.insert(token, values);
    }

    let mut missing: Vec<String> = wanted
        .iter()
        .filter(|t| !vectors.contains_key(*t))
        .map(|t| t.to_string())
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingTokens(missing));
    }

    let d = dim.expect("at least one token resolved");
    let mut rows = Vec::with_capacity(vocab.len());
    for name in vocab.names() {
        let tokens: Vec<&str> = name.split_whitespace().collect();
        let mut mean = vec![0.0; d];
        for t in &tokens {
            for (m, v) in mean.iter_mut().zip(&vectors[t]) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= tokens.len() as f64;
        }
        rows.push(mean);
    }
    Ok(SemanticEmbeddingTable::from_rows(
        vocab.names().to_vec(),
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn abc() -> LabelVocabulary {
        LabelVocabulary::new(["A", "B", "C"]).unwrap()
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn cooccurrence_hand_counts() {
        let samples = vec![strings(&["A", "B"]), strings(&["A"]), strings(&["B", "C"])];
        let g = build_cooccurrence(&samples, &abc(), CountMode::Strict).unwrap();
        assert_eq!(g.at(0, 1), 0.5); // a_AB
        assert_eq!(g.at(1, 0), 0.5); // a_BA
        assert_eq!(g.at(1, 2), 0.5); // a_BC
        assert_eq!(g.at(2, 1), 1.0); // a_CB
        assert_eq!(g.at(0, 2), 0.0); // a_AC
        assert_eq!(g.at(2, 0), 0.0); // a_CA
        for c in 0..3 {
            assert_eq!(g.at(c, c), 1.0);
        }
        // Conditional probabilities need not be symmetric.
        assert_ne!(g.at(1, 2), g.at(2, 1));
    }

    #[test]
    fn perfect_cooccurrence_is_all_ones() {
        let samples = vec![strings(&["A", "B", "C"]); 4];
        let g = build_cooccurrence(&samples, &abc(), CountMode::Strict).unwrap();
        assert!(g.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn disjoint_labels_give_identity() {
        let samples = vec![strings(&["A"]), strings(&["B"]), strings(&["C"])];
        let g = build_cooccurrence(&samples, &abc(), CountMode::Strict).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.at(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn duplicate_labels_in_one_sample_count_once() {
        let samples = vec![strings(&["A", "A", "B"]), strings(&["A"])];
        let vocab = LabelVocabulary::new(["A", "B"]).unwrap();
        let g = build_cooccurrence(&samples, &vocab, CountMode::Strict).unwrap();
        assert_eq!(g.at(0, 0), 1.0);
        assert_eq!(g.at(0, 1), 0.5);
    }

    #[test]
    fn zero_occurrence_strict_vs_lenient() {
        let samples = vec![strings(&["A"])];
        let vocab = LabelVocabulary::new(["A", "B"]).unwrap();
        assert!(matches!(
            build_cooccurrence(&samples, &vocab, CountMode::Strict),
            Err(Error::ZeroOccurrence(name)) if name == "B"
        ));
        let g = build_cooccurrence(&samples, &vocab, CountMode::Lenient).unwrap();
        assert_eq!(g.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn unknown_label_is_an_error() {
        let samples = vec![strings(&["A", "X"])];
        assert!(matches!(
            build_cooccurrence(&samples, &abc(), CountMode::Strict),
            Err(Error::UnknownLabel(name)) if name == "X"
        ));
    }

    #[test]
    fn semantic_graph_cosines() {
        let table = SemanticEmbeddingTable::from_rows(
            strings(&["A", "B", "C", "D"]),
            vec![
                vec![1.0, 0.0],
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![-1.0, 0.0],
            ],
        );
        let g = build_semantic_graph(&table).unwrap();
        assert_eq!(g.kind(), GraphKind::Semantic);
        assert_eq!(g.at(0, 1), 1.0); // identical
        assert_eq!(g.at(0, 2), 0.0); // orthogonal
        assert_eq!(g.at(0, 3), 0.0); // cos = −1, clamped
        for i in 0..4 {
            assert_eq!(g.at(i, i), 1.0);
            for j in 0..4 {
                assert_eq!(g.at(i, j), g.at(j, i));
                assert!((0.0..=1.0).contains(&g.at(i, j)));
            }
        }
    }

    #[test]
    fn semantic_graph_rejects_zero_norm() {
        let table = SemanticEmbeddingTable::from_rows(
            strings(&["A", "B"]),
            vec![vec![1.0, 0.0], vec![0.0, 0.0]],
        );
        assert!(matches!(
            build_semantic_graph(&table),
            Err(Error::ZeroNormEmbedding(name)) if name == "B"
        ));
    }

    #[test]
    fn embeddings_direct_parse() {
        let vocab = LabelVocabulary::new(["cat"]).unwrap();
        let table = parse_embeddings("cat 0.1 0.2\n", &vocab).unwrap();
        assert_eq!(table.dim(), 2);
        assert_eq!(table.vector(0), &[0.1, 0.2]);
    }

    #[test]
    fn embeddings_multi_token_mean() {
        let vocab = LabelVocabulary::new(["stop sign"]).unwrap();
        let table = parse_embeddings("stop 1 0\nsign 0 1\n", &vocab).unwrap();
        assert_eq!(table.vector(0), &[0.5, 0.5]);
    }

    #[test]
    fn embeddings_missing_token_error() {
        let vocab = LabelVocabulary::new(["unicorncat"]).unwrap();
        assert!(matches!(
            parse_embeddings("cat 0.1 0.2\n", &vocab),
            Err(Error::MissingTokens(tokens)) if tokens == vec!["unicorncat".to_string()]
        ));
    }

    #[test]
    fn embeddings_inconsistent_length_error() {
        let vocab = LabelVocabulary::new(["a", "b"]).unwrap();
        assert!(matches!(
            parse_embeddings("a 1 2\nb 1 2 3\n", &vocab),
            Err(Error::EmbeddingLength { line: 2, expected: 2, got: 3 })
        ));
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_empty() {
        assert!(LabelVocabulary::new(["a", "a"]).is_err());
        assert!(LabelVocabulary::new(["a", ""]).is_err());
    }

    #[test]
    fn adjacency_json_round_trip() {
        let samples = vec![strings(&["A", "B"]), strings(&["A"]), strings(&["B", "C"])];
        let g = build_cooccurrence(&samples, &abc(), CountMode::Strict).unwrap();
        let s = g.to_json_string().unwrap();
        assert!(s.contains("\"statistical\""));
        let g2 = CooccurrenceGraph::from_json_str(&s).unwrap();
        assert_eq!(g, g2);
    }
}
