//! Anchor selection and directed random-walk chains.
//!
//! Chain positions follow the numbering `5 -> 4 -> 1 -> 2 -> 3`: node 1 is
//! the anchor, 2 and 3 are reached by outbound hops, 4 and 5 by inbound
//! hops, so the whole chain is one directed path. The first triple is the
//! anchor's one-hop edge closest to the question; the remaining slots are
//! filled by uniform random choice.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{self, EmbedError, EmbeddingVector, VectorStore};
use crate::graph::{GraphError, KnowledgeGraph, NodeId};
use crate::verbalize::{Sentence, VerbalizeError, Verbalizer};

/// ChaCha with 8 rounds, seeded through [`derive_seed`].
pub type WalkRng = ChaCha8Rng;

/// Reseeds tried before a truncated chain is accepted.
pub const MAX_RESEEDS: u32 = 8;

#[derive(Debug, thiserror::Error)]
pub enum WalkError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Verbalize(#[from] VerbalizeError),
    #[error("stranded anchor {0:?}: no admissible one-hop triple")]
    StrandedAnchor(String),
    #[error("bad chain shape {0:?}: {1}")]
    BadShape(String, &'static str),
    #[error("triple {0} is not a one-hop edge of the anchor that fits the shape")]
    FirstTripleMismatch(usize),
    #[error("{0} index required but not configured")]
    MissingIndex(&'static str),
    #[error("node index id {0:?} is not a node of the graph")]
    BadNodeId(String),
    #[error("asked for {k} triples but the graph has {available}")]
    TooFew { k: usize, available: usize },
    #[error("permutation {0:?} does not cover the shape's {1} slots")]
    BadPermutation(Vec<usize>, usize),
}

/// First 8 bytes (little-endian) of SHA-256 over
/// `"kgwalk-seed-v1" || seed (u64 LE) || key (UTF-8)`.
pub fn derive_seed(seed: u64, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"kgwalk-seed-v1");
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

pub fn item_rng(seed: u64, item_id: &str) -> WalkRng {
    WalkRng::seed_from_u64(derive_seed(seed, item_id))
}

/// One edge slot of the numbered path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Slot {
    /// 5 -> 4
    Back2,
    /// 4 -> 1
    Back1,
    /// 1 -> 2
    Fwd1,
    /// 2 -> 3
    Fwd2,
}

impl Slot {
    pub const PATH: [Slot; 4] = [Slot::Back2, Slot::Back1, Slot::Fwd1, Slot::Fwd2];

    pub fn positions(self) -> (u8, u8) {
        match self {
            Slot::Back2 => (5, 4),
            Slot::Back1 => (4, 1),
            Slot::Fwd1 => (1, 2),
            Slot::Fwd2 => (2, 3),
        }
    }

    fn from_positions(from: u8, to: u8) -> Option<Self> {
        Slot::PATH.into_iter().find(|s| s.positions() == (from, to))
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (a, b) = self.positions();
        write!(f, "{a}->{b}")
    }
}

/// Contiguous run of slots around the anchor, e.g. `4->1,1->2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ChainShape {
    backward: u8,
    forward: u8,
}

impl ChainShape {
    pub fn new(backward: u8, forward: u8) -> Result<Self, WalkError> {
        let shape = Self { backward, forward };
        if backward > 2 || forward > 2 || backward + forward == 0 {
            return Err(WalkError::BadShape(
                shape.to_string(),
                "need 1-2 hops per side, at least one hop",
            ));
        }
        Ok(shape)
    }

    pub fn backward(&self) -> usize {
        self.backward as usize
    }

    pub fn forward(&self) -> usize {
        self.forward as usize
    }

    /// Number of edges (= context sentences) in a full chain.
    pub fn len(&self) -> usize {
        self.backward() + self.forward()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Slots in path order.
    pub fn slots(&self) -> Vec<Slot> {
        let mut slots = Vec::new();
        if self.backward >= 2 {
            slots.push(Slot::Back2);
        }
        if self.backward >= 1 {
            slots.push(Slot::Back1);
        }
        if self.forward >= 1 {
            slots.push(Slot::Fwd1);
        }
        if self.forward >= 2 {
            slots.push(Slot::Fwd2);
        }
        slots
    }

    /// Parse a listing such as `"1->2, 4->1"`. Returns the shape and the
    /// listed order as a permutation of [`ChainShape::slots`] indices.
    pub fn parse_listing(text: &str) -> Result<(Self, Vec<usize>), WalkError> {
        let bad = |why| WalkError::BadShape(text.to_string(), why);
        let mut listed = Vec::new();
        for part in text.split(',') {
            let part = part.trim().trim_matches(|c| c == '(' || c == ')');
            let (from, to) = part
                .split_once("->")
                .or_else(|| part.split_once('→'))
                .ok_or_else(|| bad("expected pairs like 4->1"))?;
            let from: u8 = from.trim().parse().map_err(|_| bad("node positions are 1-5"))?;
            let to: u8 = to.trim().parse().map_err(|_| bad("node positions are 1-5"))?;
            let slot = Slot::from_positions(from, to).ok_or_else(|| bad("not an edge of 5->4->1->2->3"))?;
            if listed.contains(&slot) {
                return Err(bad("slot listed twice"));
            }
            listed.push(slot);
        }
        let has = |s| listed.contains(&s);
        if has(Slot::Back2) && !has(Slot::Back1) || has(Slot::Fwd2) && !has(Slot::Fwd1) {
            return Err(bad("slots must form a contiguous path through node 1"));
        }
        let backward = has(Slot::Back1) as u8 + has(Slot::Back2) as u8;
        let forward = has(Slot::Fwd1) as u8 + has(Slot::Fwd2) as u8;
        let shape = Self::new(backward, forward)?;
        let slots = shape.slots();
        let order = listed
            .iter()
            .map(|s| slots.iter().position(|x| x == s).unwrap())
            .collect();
        Ok((shape, order))
    }
}

impl fmt::Display for ChainShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.slots().iter().map(Slot::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for ChainShape {
    type Err = WalkError;

    /// Accepts a listing in any order; the order itself is discarded.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_listing(s).map(|(shape, _)| shape)
    }
}

impl Serialize for ChainShape {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ChainShape {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelevanceMode {
    /// Anchor by similarity, first triple by similarity.
    Relevant,
    /// Uniformly random anchor and first triple.
    IrrelevantAnchor,
    /// Anchor by similarity, first triple drawn uniformly.
    RandomTriplesFromAnchor,
}

/// Presentation order of chain sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionMode {
    /// Path order, source end first.
    #[default]
    Regular,
    /// Permutation of shape slot indices (path order), e.g. `[1, 0]`.
    Irregular(Vec<usize>),
}

impl DirectionMode {
    pub fn validate(&self, shape: &ChainShape) -> Result<(), WalkError> {
        if let DirectionMode::Irregular(perm) = self {
            let mut sorted = perm.clone();
            sorted.sort_unstable();
            if sorted != (0..shape.len()).collect::<Vec<_>>() {
                return Err(WalkError::BadPermutation(perm.clone(), shape.len()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub shape: ChainShape,
    pub relevance: RelevanceMode,
    #[serde(default)]
    pub direction: DirectionMode,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainStep {
    pub triple: usize,
    pub slot: Slot,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalkChain {
    pub anchor: NodeId,
    pub shape: ChainShape,
    /// Filled slots, in path order.
    pub steps: Vec<ChainStep>,
    /// Some slot of the shape could not be filled.
    pub truncated: bool,
}

impl WalkChain {
    fn stranded(anchor: NodeId, shape: ChainShape) -> Self {
        Self {
            anchor,
            shape,
            steps: Vec::new(),
            truncated: true,
        }
    }
}

/// Outbound edges if the shape has a `1->2` slot, inbound edges if it has
/// `4->1`; self-loops excluded; ascending triple index.
pub fn one_hop_candidates(
    graph: &KnowledgeGraph,
    anchor: NodeId,
    shape: &ChainShape,
) -> Result<Vec<usize>, GraphError> {
    let mut pool = Vec::new();
    if shape.forward() > 0 {
        pool.extend(graph.outbound_indices(anchor)?.iter().map(|&i| i as usize));
    }
    if shape.backward() > 0 {
        pool.extend(graph.inbound_indices(anchor)?.iter().map(|&i| i as usize));
    }
    pool.retain(|&i| !graph.triples()[i].is_self_loop());
    pool.sort_unstable();
    pool.dedup();
    Ok(pool)
}

/// `k` distinct triples drawn uniformly, unconnected.
pub fn sample_irrelevant_triples<R: Rng + ?Sized>(
    graph: &KnowledgeGraph,
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>, WalkError> {
    let available = graph.triple_count();
    if k > available {
        return Err(WalkError::TooFew { k, available });
    }
    Ok(sample(rng, available, k).into_vec())
}

fn pick<R: Rng + ?Sized>(rng: &mut R, pool: &[usize]) -> Option<usize> {
    (!pool.is_empty()).then(|| pool[rng.random_range(0..pool.len())])
}

/// Graph plus the indexes a walk may need. Node-label vectors are keyed by
/// decimal node id, sentence vectors by decimal triple index.
pub struct Walker<'a> {
    graph: &'a KnowledgeGraph,
    node_index: Option<&'a dyn VectorStore>,
    sentence_index: Option<&'a dyn VectorStore>,
}

impl<'a> Walker<'a> {
    pub fn new(
        graph: &'a KnowledgeGraph,
        node_index: Option<&'a dyn VectorStore>,
        sentence_index: Option<&'a dyn VectorStore>,
    ) -> Self {
        Self {
            graph,
            node_index,
            sentence_index,
        }
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        self.graph
    }

    pub fn select_anchor<R: Rng + ?Sized>(
        &self,
        concept: Option<&EmbeddingVector>,
        mode: RelevanceMode,
        rng: &mut R,
    ) -> Result<NodeId, WalkError> {
        match mode {
            RelevanceMode::IrrelevantAnchor => Ok(self.graph.random_node(rng)?),
            RelevanceMode::Relevant | RelevanceMode::RandomTriplesFromAnchor => {
                let index = self.node_index.ok_or(WalkError::MissingIndex("node-label"))?;
                let query = concept.ok_or(WalkError::MissingIndex("question-concept"))?;
                let hit = embed::most_similar_id(index, query)?;
                hit.id
                    .parse::<u32>()
                    .ok()
                    .filter(|&n| (n as usize) < self.graph.node_count())
                    .map(NodeId)
                    .ok_or(WalkError::BadNodeId(hit.id))
            }
        }
    }

    /// The candidate whose sentence is closest to the question; ties go to
    /// the lower triple index.
    pub fn select_first_triple(
        &self,
        anchor: NodeId,
        question: &EmbeddingVector,
        shape: &ChainShape,
    ) -> Result<usize, WalkError> {
        let pool = one_hop_candidates(self.graph, anchor, shape)?;
        if pool.is_empty() {
            return Err(WalkError::StrandedAnchor(self.graph.label(anchor).to_string()));
        }
        if pool.len() == 1 {
            return Ok(pool[0]);
        }
        let index = self.sentence_index.ok_or(WalkError::MissingIndex("sentence"))?;
        let mut best: Option<(f32, usize)> = None;
        for &t in &pool {
            let score = embed::cosine(&index.get(&t.to_string())?, question)?;
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, t));
            }
        }
        Ok(best.expect("non-empty pool").1)
    }

    /// Fill the remaining slots around `first` with uniform random edges,
    /// skipping self-loops and immediate backtracking.
    pub fn extend_chain<R: Rng + ?Sized>(
        &self,
        first: usize,
        anchor: NodeId,
        shape: &ChainShape,
        rng: &mut R,
    ) -> Result<WalkChain, WalkError> {
        let triples = self.graph.triples();
        let t0 = *triples.get(first).ok_or(WalkError::FirstTripleMismatch(first))?;
        let first_slot = if t0.is_self_loop() {
            None
        } else if t0.subject == anchor && shape.forward() > 0 {
            Some(Slot::Fwd1)
        } else if t0.object == anchor && shape.backward() > 0 {
            Some(Slot::Back1)
        } else {
            None
        };
        let first_slot = first_slot.ok_or(WalkError::FirstTripleMismatch(first))?;

        let mut filled: Vec<ChainStep> = vec![ChainStep {
            triple: first,
            slot: first_slot,
        }];
        let find = |filled: &[ChainStep], slot| filled.iter().find(|s| s.slot == slot).map(|s| triples[s.triple]);

        // Forward side: 1->2 then 2->3.
        for slot in [Slot::Fwd1, Slot::Fwd2].into_iter().take(shape.forward()) {
            if find(&filled, slot).is_some() {
                continue;
            }
            let (from, avoid) = match slot {
                Slot::Fwd1 => (anchor, find(&filled, Slot::Back1).map(|t| t.subject)),
                _ => match find(&filled, Slot::Fwd1) {
                    Some(t) => (t.object, Some(anchor)),
                    None => break,
                },
            };
            let pool: Vec<usize> = self
                .graph
                .outbound_indices(from)?
                .iter()
                .map(|&i| i as usize)
                .filter(|&i| !triples[i].is_self_loop() && Some(triples[i].object) != avoid)
                .collect();
            match pick(rng, &pool) {
                Some(t) => filled.push(ChainStep { triple: t, slot }),
                None => break,
            }
        }

        // Backward side: 4->1 then 5->4.
        for slot in [Slot::Back1, Slot::Back2].into_iter().take(shape.backward()) {
            if find(&filled, slot).is_some() {
                continue;
            }
            let (into, avoid) = match slot {
                Slot::Back1 => (anchor, find(&filled, Slot::Fwd1).map(|t| t.object)),
                _ => match find(&filled, Slot::Back1) {
                    Some(t) => (t.subject, Some(anchor)),
                    None => break,
                },
            };
            let pool: Vec<usize> = self
                .graph
                .inbound_indices(into)?
                .iter()
                .map(|&i| i as usize)
                .filter(|&i| !triples[i].is_self_loop() && Some(triples[i].subject) != avoid)
                .collect();
            match pick(rng, &pool) {
                Some(t) => filled.push(ChainStep { triple: t, slot }),
                None => break,
            }
        }

        filled.sort_by_key(|s| s.slot);
        Ok(WalkChain {
            anchor,
            shape: *shape,
            truncated: filled.len() < shape.len(),
            steps: filled,
        })
    }

    /// One attempt: anchor, first triple, extension. A stranded anchor
    /// yields an empty truncated chain.
    pub fn walk_once<R: Rng + ?Sized>(
        &self,
        concept: Option<&EmbeddingVector>,
        question: Option<&EmbeddingVector>,
        shape: &ChainShape,
        mode: RelevanceMode,
        rng: &mut R,
    ) -> Result<WalkChain, WalkError> {
        let anchor = self.select_anchor(concept, mode, rng)?;
        let first = match mode {
            RelevanceMode::Relevant => {
                let question = question.ok_or(WalkError::MissingIndex("question"))?;
                match self.select_first_triple(anchor, question, shape) {
                    Err(WalkError::StrandedAnchor(_)) => None,
                    other => Some(other?),
                }
            }
            RelevanceMode::IrrelevantAnchor | RelevanceMode::RandomTriplesFromAnchor => {
                pick(rng, &one_hop_candidates(self.graph, anchor, shape)?)
            }
        };
        match first {
            Some(first) => self.extend_chain(first, anchor, shape, rng),
            None => Ok(WalkChain::stranded(anchor, *shape)),
        }
    }

    /// Walk with the per-item seed, reseeding up to [`MAX_RESEEDS`] times
    /// while the chain comes back truncated. Returns the first full chain,
    /// else the longest attempt, plus the seed that produced it.
    pub fn walk(
        &self,
        concept: Option<&EmbeddingVector>,
        question: Option<&EmbeddingVector>,
        config: &WalkConfig,
        item_id: &str,
    ) -> Result<(WalkChain, u64), WalkError> {
        let mut best: Option<(WalkChain, u64)> = None;
        for attempt in 0..=MAX_RESEEDS {
            let seed = if attempt == 0 {
                derive_seed(config.seed, item_id)
            } else {
                derive_seed(config.seed, &format!("{item_id}/reseed-{attempt}"))
            };
            let mut rng = WalkRng::seed_from_u64(seed);
            let chain = self.walk_once(concept, question, &config.shape, config.relevance, &mut rng)?;
            if !chain.truncated {
                return Ok((chain, seed));
            }
            // Similarity-driven walks with a stranded anchor never change.
            let stuck = chain.steps.is_empty() && config.relevance == RelevanceMode::Relevant;
            if best.as_ref().is_none_or(|(b, _)| chain.steps.len() > b.steps.len()) {
                best = Some((chain, seed));
            }
            if stuck {
                break;
            }
        }
        Ok(best.expect("at least one attempt"))
    }
}

/// Verbalize a chain in path order (regular) or in a permuted slot order.
pub fn chain_to_sentences(
    chain: &WalkChain,
    direction: &DirectionMode,
    verbalizer: &Verbalizer<'_>,
) -> Result<Vec<Sentence>, WalkError> {
    direction.validate(&chain.shape)?;
    let slots = chain.shape.slots();
    let order: Vec<Slot> = match direction {
        DirectionMode::Regular => slots,
        DirectionMode::Irregular(perm) => perm.iter().map(|&i| slots[i]).collect(),
    };
    order
        .into_iter()
        .filter_map(|slot| chain.steps.iter().find(|s| s.slot == slot))
        .map(|step| verbalizer.sentence(step.triple).map_err(WalkError::from))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepRecord {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

/// One line of the chain manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub item_id: String,
    pub anchor: String,
    pub steps: Vec<StepRecord>,
    pub truncated: bool,
    pub seed: u64,
}

impl ChainRecord {
    pub fn new(item_id: &str, chain: &WalkChain, graph: &KnowledgeGraph, seed: u64) -> Self {
        let steps = chain
            .steps
            .iter()
            .map(|s| {
                let t = graph.triples()[s.triple];
                StepRecord {
                    subject: graph.label(t.subject).to_string(),
                    relation: graph.relation_name(t.relation).to_string(),
                    object: graph.label(t.object).to_string(),
                }
            })
            .collect();
        Self {
            item_id: item_id.to_string(),
            anchor: graph.label(chain.anchor).to_string(),
            steps,
            truncated: chain.truncated,
            seed,
        }
    }
}
