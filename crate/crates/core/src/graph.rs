//! In-memory ConceptNet graph: directed, relation-typed multigraph with
//! inbound/outbound adjacency.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("zero triples ingested (wrong file or language filter?)")]
    Empty,
    #[error("unknown node id {0}")]
    UnknownNode(u32),
    #[error("graph has no nodes")]
    NoNodes,
}

/// Dense handle for an entity node, assigned in first-seen order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct RelationId(pub u16);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: NodeId,
    /// Normalized surface text, e.g. "ice cream".
    pub label: String,
    /// Term URI, e.g. "/c/en/ice_cream".
    pub uri: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple {
    pub subject: NodeId,
    pub relation: RelationId,
    pub object: NodeId,
    pub weight: f32,
}

impl Triple {
    pub fn is_self_loop(&self) -> bool {
        self.subject == self.object
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub nodes: usize,
    pub triples: usize,
    /// Malformed lines.
    pub skipped: usize,
    /// Well-formed lines dropped by the language filter.
    pub filtered: usize,
    /// Parallel edges removed (only when deduplication is on).
    pub duplicates: usize,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub language: String,
    pub dedup: bool,
}

impl IngestOptions {
    pub fn new(language: impl Into<String>) -> Self {
        Self {
            language: language.into(),
            dedup: false,
        }
    }
}

/// Lowercase and turn URI underscores into spaces.
pub fn normalize_label(text: &str) -> String {
    text.trim().replace('_', " ").to_lowercase()
}

#[derive(Debug, Default)]
pub struct KnowledgeGraph {
    nodes: Vec<Node>,
    by_label: HashMap<String, NodeId>,
    relations: Vec<String>,
    relation_ids: HashMap<String, RelationId>,
    triples: Vec<Triple>,
    out_adj: Vec<Vec<u32>>,
    in_adj: Vec<Vec<u32>>,
}

impl KnowledgeGraph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder::default()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn triple_count(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn triple(&self, index: usize) -> Option<&Triple> {
        self.triples.get(index)
    }

    pub fn node(&self, id: NodeId) -> Result<&Node, GraphError> {
        self.nodes.get(id.0 as usize).ok_or(GraphError::UnknownNode(id.0))
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.nodes[id.0 as usize].label
    }

    pub fn relation_name(&self, id: RelationId) -> &str {
        &self.relations[id.0 as usize]
    }

    pub fn relation_id(&self, name: &str) -> Option<RelationId> {
        self.relation_ids.get(name).copied()
    }

    /// Exact match on the normalized label.
    pub fn node_by_label(&self, label: &str) -> Option<NodeId> {
        let label = normalize_label(label);
        if label.is_empty() {
            return None;
        }
        self.by_label.get(&label).copied()
    }

    /// Indices of triples whose subject is `node`, in ingestion order.
    pub fn outbound_indices(&self, node: NodeId) -> Result<&[u32], GraphError> {
        self.out_adj
            .get(node.0 as usize)
            .map(Vec::as_slice)
            .ok_or(GraphError::UnknownNode(node.0))
    }

    /// Indices of triples whose object is `node`, in ingestion order.
    pub fn inbound_indices(&self, node: NodeId) -> Result<&[u32], GraphError> {
        self.in_adj
            .get(node.0 as usize)
            .map(Vec::as_slice)
            .ok_or(GraphError::UnknownNode(node.0))
    }

    pub fn outbound(&self, node: NodeId) -> Result<Vec<Triple>, GraphError> {
        Ok(self
            .outbound_indices(node)?
            .iter()
            .map(|&i| self.triples[i as usize])
            .collect())
    }

    pub fn inbound(&self, node: NodeId) -> Result<Vec<Triple>, GraphError> {
        Ok(self
            .inbound_indices(node)?
            .iter()
            .map(|&i| self.triples[i as usize])
            .collect())
    }

    /// Uniform draw over all nodes.
    pub fn random_node<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<NodeId, GraphError> {
        if self.nodes.is_empty() {
            return Err(GraphError::NoNodes);
        }
        Ok(NodeId(rng.random_range(0..self.nodes.len() as u32)))
    }

    /// Parse a ConceptNet 5 assertions dump. Files ending in `.gz` are
    /// decompressed transparently.
    pub fn ingest_conceptnet(
        path: impl AsRef<Path>,
        options: &IngestOptions,
    ) -> Result<(Self, IngestReport), GraphError> {
        let path = path.as_ref();
        let io_err = |source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = File::open(path).map_err(io_err)?;
        let reader: Box<dyn Read> = if path.extension().is_some_and(|e| e == "gz") {
            Box::new(MultiGzDecoder::new(file))
        } else {
            Box::new(file)
        };
        Self::ingest_reader(BufReader::new(reader), options).map_err(|e| match e {
            IngestFailure::Io(source) => io_err(source),
            IngestFailure::Empty => GraphError::Empty,
        })
    }

    fn ingest_reader<B: BufRead>(reader: B, options: &IngestOptions) -> Result<(Self, IngestReport), IngestFailure> {
        let mut builder = GraphBuilder::default();
        let mut seen = std::collections::HashSet::new();
        let mut report = IngestReport {
            nodes: 0,
            triples: 0,
            skipped: 0,
            filtered: 0,
            duplicates: 0,
        };
        let prefix = format!("/c/{}/", options.language);
        for line in reader.split(b'\n') {
            let line = line.map_err(IngestFailure::Io)?;
            let Ok(line) = std::str::from_utf8(&line) else {
                report.skipped += 1;
                continue;
            };
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            match parse_assertion(line, &prefix) {
                Parsed::Malformed => report.skipped += 1,
                Parsed::OtherLanguage => report.filtered += 1,
                Parsed::Edge(edge) => {
                    if options.dedup
                        && !seen.insert((edge.start.to_string(), edge.relation.to_string(), edge.end.to_string()))
                    {
                        report.duplicates += 1;
                        continue;
                    }
                    builder.add_uri_triple(edge.start, edge.relation, edge.end, edge.weight);
                }
            }
        }
        let graph = builder.build();
        if graph.triples.is_empty() {
            return Err(IngestFailure::Empty);
        }
        report.nodes = graph.node_count();
        report.triples = graph.triple_count();
        Ok((graph, report))
    }
}

enum IngestFailure {
    Io(std::io::Error),
    Empty,
}

struct Edge<'a> {
    relation: &'a str,
    start: &'a str,
    end: &'a str,
    weight: f32,
}

enum Parsed<'a> {
    Edge(Edge<'a>),
    OtherLanguage,
    Malformed,
}

fn parse_assertion<'a>(line: &'a str, prefix: &str) -> Parsed<'a> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 5 {
        return Parsed::Malformed;
    }
    let Some(relation) = fields[1].strip_prefix("/r/").filter(|r| !r.is_empty()) else {
        return Parsed::Malformed;
    };
    let (Some(start), Some(end)) = (term_uri(fields[2]), term_uri(fields[3])) else {
        // ExternalURL and similar non-concept endpoints.
        if fields[2].starts_with('/') && fields[3].len() > 1 {
            return Parsed::OtherLanguage;
        }
        return Parsed::Malformed;
    };
    let weight = match serde_json::from_str::<serde_json::Value>(fields[4]) {
        Ok(meta) => match meta.get("weight").and_then(serde_json::Value::as_f64) {
            Some(w) if w.is_finite() && w >= 0.0 => w as f32,
            _ => return Parsed::Malformed,
        },
        Err(_) => return Parsed::Malformed,
    };
    if !start.starts_with(prefix) || !end.starts_with(prefix) {
        return Parsed::OtherLanguage;
    }
    Parsed::Edge(Edge {
        relation,
        start,
        end,
        weight,
    })
}

/// `/c/en/alcohol/n/wn/food` -> `/c/en/alcohol`.
fn term_uri(uri: &str) -> Option<&str> {
    let rest = uri.strip_prefix("/c/")?;
    let mut parts = rest.splitn(3, '/');
    let lang = parts.next().filter(|l| !l.is_empty())?;
    let term = parts.next().filter(|t| !t.is_empty())?;
    Some(&uri[..3 + lang.len() + 1 + term.len()])
}

/// Accumulates nodes and triples; `build` freezes the adjacency lists.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    graph: KnowledgeGraph,
    by_uri: HashMap<String, NodeId>,
}

impl GraphBuilder {
    fn intern_uri(&mut self, uri: &str) -> NodeId {
        if let Some(&id) = self.by_uri.get(uri) {
            return id;
        }
        let term = uri.rsplit('/').next().unwrap_or(uri);
        let label = normalize_label(term);
        self.push_node(uri.to_string(), label)
    }

    fn push_node(&mut self, uri: String, label: String) -> NodeId {
        let id = NodeId(self.graph.nodes.len() as u32);
        self.by_uri.insert(uri.clone(), id);
        self.graph.by_label.entry(label.clone()).or_insert(id);
        self.graph.nodes.push(Node { id, label, uri });
        self.graph.out_adj.push(Vec::new());
        self.graph.in_adj.push(Vec::new());
        id
    }

    /// Node for a plain English label, creating `/c/en/<label>` if absent.
    pub fn node(&mut self, label: &str) -> NodeId {
        let label = normalize_label(label);
        let uri = format!("/c/en/{}", label.replace(' ', "_"));
        if let Some(&id) = self.by_uri.get(&uri) {
            return id;
        }
        self.push_node(uri, label)
    }

    fn relation(&mut self, name: &str) -> RelationId {
        if let Some(&id) = self.graph.relation_ids.get(name) {
            return id;
        }
        let id = RelationId(self.graph.relations.len() as u16);
        self.graph.relations.push(name.to_string());
        self.graph.relation_ids.insert(name.to_string(), id);
        id
    }

    fn push_triple(&mut self, subject: NodeId, relation: RelationId, object: NodeId, weight: f32) -> usize {
        let index = self.graph.triples.len();
        self.graph.triples.push(Triple {
            subject,
            relation,
            object,
            weight,
        });
        self.graph.out_adj[subject.0 as usize].push(index as u32);
        self.graph.in_adj[object.0 as usize].push(index as u32);
        index
    }

    fn add_uri_triple(&mut self, start: &str, relation: &str, end: &str, weight: f32) -> usize {
        let subject = self.intern_uri(start);
        let object = self.intern_uri(end);
        let relation = self.relation(relation);
        self.push_triple(subject, relation, object, weight)
    }

    /// Add `subject -relation-> object` by label; returns the triple index.
    pub fn add(&mut self, subject: &str, relation: &str, object: &str) -> usize {
        let subject = self.node(subject);
        let object = self.node(object);
        let relation = self.relation(relation);
        self.push_triple(subject, relation, object, 1.0)
    }

    pub fn build(self) -> KnowledgeGraph {
        self.graph
    }
}
