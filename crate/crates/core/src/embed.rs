//! Initial node vectors.
//!
//! User and media nodes are encoded from text by an [`EmbeddingProvider`];
//! belief nodes (and every node under random initialization) get seeded
//! uniform vectors in `[-1/sqrt(dim), 1/sqrt(dim)]`.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use thiserror::Error;

use crate::datamodel::{Dataset, NewsItem, UserRecord};
use crate::graph::{apply_ablation, Ablation, BeliefId, HeteroGraph, NodeRef, UserText};
use crate::rng::{fnv1a64, SplitMix64};

pub const DEFAULT_DIM: usize = 128;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("no vector for node {0}")]
    MissingNode(String),
    #[error("no text record for node {0}")]
    MissingRecord(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("non-finite value in vector for node {0}")]
    NonFinite(String),
    #[error("embedding file: {0}")]
    Format(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
}

/// Signed feature hashing with 64-bit FNV-1a.
///
/// Each token adds `+1` (top hash bit clear) or `-1` (top bit set) at
/// `hash % dim`. Counts are exact integers; the result is `count / norm`
/// computed in `f64` and rounded once to `f32`. The zero vector stays zero.
pub fn hash_featurize(text: &str, dim: usize) -> Vec<f32> {
    assert!(dim >= 1, "hash_featurize needs dim >= 1");
    let mut counts = vec![0i64; dim];
    for token in tokenize(text) {
        let h = fnv1a64(token.as_bytes());
        let idx = (h % dim as u64) as usize;
        counts[idx] += if h >> 63 == 0 { 1 } else { -1 };
    }
    let sq: i64 = counts.iter().map(|c| c * c).sum();
    if sq == 0 {
        return vec![0.0; dim];
    }
    let norm = (sq as f64).sqrt();
    counts.iter().map(|&c| (c as f64 / norm) as f32).collect()
}

/// Uniform vector in `[-1/sqrt(dim), 1/sqrt(dim)]` from a SplitMix64 stream
/// keyed by `(seed, stream)`.
pub fn random_vector(seed: u64, stream: u64, dim: usize) -> Vec<f32> {
    let bound = 1.0 / (dim as f64).sqrt();
    let mut rng = SplitMix64::keyed(seed, stream);
    (0..dim).map(|_| rng.uniform(-bound, bound) as f32).collect()
}

/// Stream id for a non-belief node's random vector.
pub fn node_stream(node: &NodeRef) -> u64 {
    fnv1a64(node.to_string().as_bytes())
}

/// The twenty belief vectors in vocabulary order; belief `i` uses stream `i`.
pub fn init_belief_embeddings(seed: u64, dim: usize) -> Vec<Vec<f32>> {
    assert!(dim >= 1);
    (0..BeliefId::COUNT)
        .map(|i| random_vector(seed, i as u64, dim))
        .collect()
}

/// Encodes node text into a fixed-width vector.
pub trait EmbeddingProvider {
    fn dim(&self) -> usize;
    fn encode(&self, node: &NodeRef, text: &str) -> Result<Vec<f32>, EmbedError>;
}

#[derive(Debug, Clone, Copy)]
pub struct HashProvider {
    pub dim: usize,
}

impl EmbeddingProvider for HashProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, _node: &NodeRef, text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(hash_featurize(text, self.dim))
    }
}

/// Ignores text; every node gets its seeded random vector.
#[derive(Debug, Clone, Copy)]
pub struct RandomProvider {
    pub dim: usize,
    pub seed: u64,
}

impl EmbeddingProvider for RandomProvider {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, node: &NodeRef, _text: &str) -> Result<Vec<f32>, EmbedError> {
        Ok(random_vector(self.seed, node_stream(node), self.dim))
    }
}

/// Looks vectors up by node, e.g. ones produced by an external text encoder
/// and imported from an embeddings file.
#[derive(Debug, Clone)]
pub struct FileProvider {
    table: EmbeddingTable,
}

impl FileProvider {
    pub fn new(table: EmbeddingTable) -> Self {
        Self { table }
    }

    pub fn open(path: &Path) -> Result<Self, EmbedError> {
        Ok(Self::new(read_embeddings(path)?))
    }
}

impl EmbeddingProvider for FileProvider {
    fn dim(&self) -> usize {
        self.table.dim
    }

    fn encode(&self, node: &NodeRef, _text: &str) -> Result<Vec<f32>, EmbedError> {
        self.table
            .get(node)
            .map(<[f32]>::to_vec)
            .ok_or_else(|| EmbedError::MissingNode(node.to_string()))
    }
}

/// Text fed to the encoder for a user under the given ablation.
pub fn user_text(user: &UserRecord, mode: UserText) -> Option<String> {
    let history = || user.history.join("\n");
    match mode {
        UserText::ProfileAndHistory => Some(format!("{}\n{}", user.profile, history())),
        UserText::ProfileOnly => Some(user.profile.clone()),
        UserText::HistoryOnly => Some(history()),
        UserText::Random => None,
    }
}

pub fn init_user_embedding(
    user: &UserRecord,
    provider: &dyn EmbeddingProvider,
    ablation: &Ablation,
    seed: u64,
) -> Result<Vec<f32>, EmbedError> {
    let node = NodeRef::user(&user.id);
    match user_text(user, apply_ablation(ablation).user_text) {
        Some(text) => provider.encode(&node, &text),
        None => Ok(random_vector(seed, node_stream(&node), provider.dim())),
    }
}

pub fn init_media_embedding(news: &NewsItem, provider: &dyn EmbeddingProvider) -> Result<Vec<f32>, EmbedError> {
    provider.encode(&NodeRef::media(&news.id), &news.headline)
}

/// Initial vector for every node of a graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<NodeRef, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        assert!(dim >= 1);
        Self {
            dim,
            vectors: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, node: NodeRef, v: Vec<f32>) -> Result<(), EmbedError> {
        if v.len() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                actual: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::NonFinite(node.to_string()));
        }
        self.vectors.insert(node, v);
        Ok(())
    }

    pub fn get(&self, node: &NodeRef) -> Option<&[f32]> {
        self.vectors.get(node).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeRef, &[f32])> {
        self.vectors.iter().map(|(k, v)| (k, v.as_slice()))
    }
}

/// Initializes every node of `graph`. Users with no dataset record (and
/// media without a news record) are errors.
pub fn build_table(
    graph: &HeteroGraph,
    dataset: &Dataset,
    provider: &dyn EmbeddingProvider,
    ablation: &Ablation,
    seed: u64,
) -> Result<EmbeddingTable, EmbedError> {
    let dim = provider.dim();
    let plan = apply_ablation(ablation);
    let mut table = EmbeddingTable::new(dim);
    for id in graph.users() {
        let node = NodeRef::user(id);
        let user = dataset
            .user(id)
            .ok_or_else(|| EmbedError::MissingRecord(node.to_string()))?;
        let v = if plan.user_text == UserText::Random {
            random_vector(seed, node_stream(&node), dim)
        } else {
            init_user_embedding(user, provider, ablation, seed)?
        };
        table.insert(node, v)?;
    }
    for id in graph.media() {
        let node = NodeRef::media(id);
        let news = dataset
            .news_item(id)
            .ok_or_else(|| EmbedError::MissingRecord(node.to_string()))?;
        let v = if plan.media_random {
            random_vector(seed, node_stream(&node), dim)
        } else {
            init_media_embedding(news, provider)?
        };
        table.insert(node, v)?;
    }
    let beliefs = init_belief_embeddings(seed, dim);
    for &b in graph.beliefs() {
        table.insert(NodeRef::belief(b), beliefs[b.index()].clone())?;
    }
    Ok(table)
}

const MAGIC: &[u8; 4] = b"SSEB";
const VERSION: u32 = 1;

/// Serializes in node order (kind, then key).
pub fn embeddings_to_bytes(table: &EmbeddingTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + table.len() * (table.dim * 4 + 16));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(table.dim as u32).to_le_bytes());
    out.extend_from_slice(&(table.len() as u64).to_le_bytes());
    for (node, v) in &table.vectors {
        let key = node.to_string();
        out.extend_from_slice(&(key.len() as u16).to_le_bytes());
        out.extend_from_slice(key.as_bytes());
        for x in v {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8], EmbedError> {
    if buf.len() < n {
        return Err(EmbedError::Format("truncated file".into()));
    }
    let (head, rest) = buf.split_at(n);
    *buf = rest;
    Ok(head)
}

pub fn embeddings_from_bytes(bytes: &[u8]) -> Result<EmbeddingTable, EmbedError> {
    let mut buf = bytes;
    if take(&mut buf, 4)? != MAGIC {
        return Err(EmbedError::Format("bad magic".into()));
    }
    let u32_at = |buf: &mut &[u8]| -> Result<u32, EmbedError> {
        Ok(u32::from_le_bytes(take(buf, 4)?.try_into().expect("4 bytes")))
    };
    let version = u32_at(&mut buf)?;
    if version != VERSION {
        return Err(EmbedError::Format(format!("unsupported version {version}")));
    }
    let dim = u32_at(&mut buf)? as usize;
    if dim == 0 {
        return Err(EmbedError::Format("zero dimension".into()));
    }
    let count = u64::from_le_bytes(take(&mut buf, 8)?.try_into().expect("8 bytes"));
    let mut table = EmbeddingTable::new(dim);
    for _ in 0..count {
        let klen = u16::from_le_bytes(take(&mut buf, 2)?.try_into().expect("2 bytes")) as usize;
        let key = std::str::from_utf8(take(&mut buf, klen)?)
            .map_err(|e| EmbedError::Format(format!("key is not UTF-8: {e}")))?;
        let node: NodeRef = key
            .parse()
            .map_err(|e| EmbedError::Format(format!("bad key \"{key}\": {e}")))?;
        let data = take(&mut buf, dim * 4)?;
        let v: Vec<f32> = data
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        table.insert(node, v)?;
    }
    if !buf.is_empty() {
        return Err(EmbedError::Format("trailing bytes".into()));
    }
    Ok(table)
}

pub fn write_embeddings(table: &EmbeddingTable, path: &Path) -> Result<(), EmbedError> {
    crate::datamodel::write_file(path, &embeddings_to_bytes(table)).map_err(|source| EmbedError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable, EmbedError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|source| EmbedError::Io {
            path: path.display().to_string(),
            source,
        })?;
    embeddings_from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{Intensity, Polarity, ResponseRecord, Split};
    use crate::graph::{build_graph, GraphOptions};

    #[test]
    fn hash_examples() {
        assert_eq!(hash_featurize("", 4), vec![0.0; 4]);
        assert_eq!(hash_featurize("a", 4), vec![-1.0, 0.0, 0.0, 0.0]);
        assert_eq!(hash_featurize("a a", 4), vec![-1.0, 0.0, 0.0, 0.0]);
        assert_eq!(hash_featurize("A, a!", 4), vec![-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn hash_unit_norm() {
        for text in ["the quick brown fox", "x", "Ünïcode wörds here 42"] {
            let v = hash_featurize(text, 16);
            let n: f64 = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6 || n == 0.0, "{text}: {n}");
        }
    }

    #[test]
    fn belief_init() {
        let a = init_belief_embeddings(1, 8);
        assert_eq!(a, init_belief_embeddings(1, 8));
        assert_eq!(a.len(), 20);
        assert_ne!(a, init_belief_embeddings(2, 8));
        let bound = 1.0 / (8f32).sqrt();
        assert!(a.iter().flatten().all(|x| x.abs() <= bound));
    }

    fn dataset(profile: &str) -> Dataset {
        Dataset::new(
            vec![UserRecord {
                id: "u".into(),
                profile: profile.into(),
                history: vec![],
                follower_count: 0,
            }],
            vec![NewsItem {
                id: "n".into(),
                headline: "a".into(),
            }],
            vec![ResponseRecord {
                user_id: "u".into(),
                news_id: "n".into(),
                polarity: Polarity::Positive,
                intensity: Intensity::new(1).unwrap(),
                split: Split::Train,
            }],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn user_ablations() {
        let p = HashProvider { dim: 8 };
        let ds = dataset("likes cats");
        let u = &ds.users()[0];
        let full = init_user_embedding(u, &p, &Ablation::default(), 3).unwrap();
        let no_hist = init_user_embedding(
            u,
            &p,
            &Ablation {
                without_history: true,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        assert_eq!(full, no_hist);
        let neither = init_user_embedding(
            u,
            &p,
            &Ablation {
                without_history: true,
                without_profile: true,
                ..Default::default()
            },
            3,
        )
        .unwrap();
        assert_eq!(neither, random_vector(3, node_stream(&NodeRef::user("u")), 8));
    }

    #[test]
    fn media_headline() {
        let ds = dataset("");
        let v = init_media_embedding(&ds.news()[0], &HashProvider { dim: 4 }).unwrap();
        assert_eq!(v, vec![-1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn table_coverage_and_random_init() {
        let ds = dataset("likes cats");
        let g = build_graph(&ds, &[], &GraphOptions::default()).unwrap();
        let p = HashProvider { dim: 8 };
        let t = build_table(&g, &ds, &p, &Ablation::default(), 1).unwrap();
        assert_eq!(t.len(), 22);

        let ri = Ablation {
            random_init: true,
            ..Default::default()
        };
        let t1 = build_table(&g, &ds, &p, &ri, 1).unwrap();
        let ds2 = dataset("hates cats");
        let t2 = build_table(&g, &ds2, &p, &ri, 1).unwrap();
        assert_eq!(t1.get(&NodeRef::user("u")), t2.get(&NodeRef::user("u")));
        assert_ne!(
            build_table(&g, &ds, &p, &Ablation::default(), 1).unwrap().get(&NodeRef::user("u")),
            build_table(&g, &ds2, &p, &Ablation::default(), 1).unwrap().get(&NodeRef::user("u"))
        );
    }

    #[test]
    fn file_provider_missing_node() {
        let ds = dataset("x");
        let g = build_graph(&ds, &[], &GraphOptions::default()).unwrap();
        let mut t = EmbeddingTable::new(4);
        t.insert(NodeRef::user("u7"), vec![0.0; 4]).unwrap();
        let p = FileProvider::new(t);
        match build_table(&g, &ds, &p, &Ablation::default(), 0) {
            Err(EmbedError::MissingNode(n)) => assert_eq!(n, "user:u"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            p.encode(&NodeRef::user("u8"), ""),
            Err(EmbedError::MissingNode(n)) if n.contains("u8")
        ));
    }

    #[test]
    fn bytes_round_trip() {
        let mut t = EmbeddingTable::new(3);
        t.insert(NodeRef::user("u1"), vec![1.0, -0.5, 0.25]).unwrap();
        t.insert(NodeRef::belief(BeliefId::Care), vec![0.0, 1e-30, -7.0]).unwrap();
        let bytes = embeddings_to_bytes(&t);
        assert_eq!(&bytes[..4], b"SSEB");
        let back = embeddings_from_bytes(&bytes).unwrap();
        assert_eq!(back, t);
        assert_eq!(embeddings_to_bytes(&back), bytes);
        assert!(embeddings_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let mut t = EmbeddingTable::new(1);
        assert!(t.insert(NodeRef::user("u"), vec![f32::NAN]).is_err());
    }
}
