//! Triple-to-sentence rendering with per-relation templates.
//!
//! Templates carry one `SUBJ` and one `OBJ` slot. The subject always fills
//! `SUBJ`, so the stored edge direction survives verbalization, including
//! for symmetric relations. Output is lowercase with no trailing period.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;

use crate::graph::{KnowledgeGraph, Triple};

const DEFAULT_TABLE: &str = include_str!("../data/relations.tsv");

#[derive(Debug, thiserror::Error)]
pub enum VerbalizeError {
    #[error("no template for relation {0:?}")]
    UnknownRelation(String),
    #[error("triple {index}: {source}")]
    AtTriple {
        index: usize,
        #[source]
        source: Box<VerbalizeError>,
    },
    #[error("bad template table line {line}: {reason}")]
    BadTable { line: usize, reason: String },
    #[error("no triple with index {0}")]
    NoSuchTriple(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationTemplate {
    pub name: String,
    pub template: String,
    pub symmetric: bool,
    head: String,
    middle: String,
    tail: String,
    subject_first: bool,
}

impl RelationTemplate {
    pub fn parse(name: &str, template: &str, symmetric: bool) -> Result<Self, String> {
        let subj = template.find("SUBJ").ok_or("missing SUBJ slot")?;
        let obj = template.find("OBJ").ok_or("missing OBJ slot")?;
        if template.matches("SUBJ").count() != 1 || template.matches("OBJ").count() != 1 {
            return Err("each slot must appear exactly once".into());
        }
        let (first, first_len, second, second_len) = if subj < obj {
            (subj, 4, obj, 3)
        } else {
            (obj, 3, subj, 4)
        };
        Ok(Self {
            name: name.to_string(),
            template: template.to_string(),
            symmetric,
            head: template[..first].to_string(),
            middle: template[first + first_len..second].to_string(),
            tail: template[second + second_len..].to_string(),
            subject_first: subj < obj,
        })
    }

    pub fn render(&self, subject: &str, object: &str) -> String {
        let (a, b) = if self.subject_first {
            (subject, object)
        } else {
            (object, subject)
        };
        let text = format!("{}{}{}{}{}", self.head, a, self.middle, b, self.tail);
        text.to_lowercase()
            .replace(['\t', '\n', '\r'], " ")
            .trim_end_matches('.')
            .trim()
            .to_string()
    }
}

/// Relation name -> template. The default table covers the ConceptNet 5
/// relation set.
#[derive(Debug, Clone)]
pub struct TemplateTable {
    templates: HashMap<String, RelationTemplate>,
}

impl Default for TemplateTable {
    fn default() -> Self {
        Self::parse(DEFAULT_TABLE).expect("bundled template table is valid")
    }
}

impl TemplateTable {
    /// Tab-separated `relation<TAB>template<TAB>symmetric`; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, VerbalizeError> {
        let mut templates = HashMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| VerbalizeError::BadTable { line: n + 1, reason };
            let fields: Vec<&str> = line.split('\t').collect();
            let [name, template, symmetric] = fields[..] else {
                return Err(bad(format!("expected 3 fields, got {}", fields.len())));
            };
            let symmetric = symmetric
                .parse::<bool>()
                .map_err(|_| bad(format!("bad symmetric flag {symmetric:?}")))?;
            let parsed = RelationTemplate::parse(name, template, symmetric).map_err(bad)?;
            if templates.insert(name.to_string(), parsed).is_some() {
                return Err(bad(format!("duplicate relation {name}")));
            }
        }
        Ok(Self { templates })
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn get(&self, relation: &str) -> Option<&RelationTemplate> {
        self.templates.get(relation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    pub text: String,
    pub source_triple: usize,
    pub direction: Direction,
}

pub struct Verbalizer<'g> {
    graph: &'g KnowledgeGraph,
    table: &'g TemplateTable,
}

impl<'g> Verbalizer<'g> {
    pub fn new(graph: &'g KnowledgeGraph, table: &'g TemplateTable) -> Self {
        Self { graph, table }
    }

    pub fn verbalize(&self, triple: &Triple) -> Result<String, VerbalizeError> {
        let name = self.graph.relation_name(triple.relation);
        let template = self
            .table
            .get(name)
            .ok_or_else(|| VerbalizeError::UnknownRelation(name.to_string()))?;
        Ok(template.render(self.graph.label(triple.subject), self.graph.label(triple.object)))
    }

    pub fn sentence(&self, index: usize) -> Result<Sentence, VerbalizeError> {
        let triple = self.graph.triple(index).ok_or(VerbalizeError::NoSuchTriple(index))?;
        let text = self.verbalize(triple).map_err(|e| VerbalizeError::AtTriple {
            index,
            source: Box::new(e),
        })?;
        Ok(Sentence {
            text,
            source_triple: index,
            direction: Direction::Forward,
        })
    }

    /// One sentence per triple, in triple-index order.
    pub fn corpus(&self) -> impl Iterator<Item = Result<Sentence, VerbalizeError>> + '_ {
        (0..self.graph.triple_count()).map(move |i| self.sentence(i))
    }

    /// Write the `<triple_index>\t<sentence>` export; returns the line count.
    pub fn write_text_export<W: Write>(&self, out: W) -> Result<usize, VerbalizeError> {
        const CHUNK: usize = 1 << 16;
        let mut out = std::io::BufWriter::new(out);
        let total = self.graph.triple_count();
        let mut start = 0;
        while start < total {
            let end = (start + CHUNK * 16).min(total);
            let block: Vec<String> = (start..end)
                .into_par_iter()
                .chunks(CHUNK)
                .map(|indices| -> Result<String, VerbalizeError> {
                    let mut buf = String::new();
                    for i in indices {
                        let sentence = self.sentence(i)?;
                        buf.push_str(&i.to_string());
                        buf.push('\t');
                        buf.push_str(&sentence.text);
                        buf.push('\n');
                    }
                    Ok(buf)
                })
                .collect::<Result<_, _>>()?;
            for chunk in block {
                out.write_all(chunk.as_bytes())?;
            }
            start = end;
        }
        out.flush()?;
        Ok(total)
    }

    /// Write `<node_id>\t<label>` lines for the node-label embedding job.
    pub fn write_label_export<W: Write>(&self, out: W) -> Result<usize, VerbalizeError> {
        let mut out = std::io::BufWriter::new(out);
        for node in self.graph.nodes() {
            writeln!(out, "{}\t{}", node.id.0, node.label.replace(['\t', '\n', '\r'], " "))?;
        }
        out.flush()?;
        Ok(self.graph.node_count())
    }
}
