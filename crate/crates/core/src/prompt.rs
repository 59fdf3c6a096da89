//! Context assembly per experimental regime, and prompt rendering.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embed::{self, EmbedError, EmbeddingVector, VectorStore};
use crate::eval::QaItem;
use crate::graph::KnowledgeGraph;
use crate::verbalize::{Sentence, TemplateTable, VerbalizeError, Verbalizer};
use crate::walker::{
    self, chain_to_sentences, ChainShape, DirectionMode, RelevanceMode, WalkChain, WalkConfig, WalkError, Walker,
};

pub const DEFAULT_TEMPLATE: &str = include_str!("../data/prompt_v1.txt");

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Walk(#[from] WalkError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Verbalize(#[from] VerbalizeError),
    #[error("sentence index id {0:?} is not a triple index of the graph")]
    BadTripleId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Baseline,
    RelevantInfoOnly,
    IrrelevantInfoOnly,
    GraphInferenceOnly,
    Kgi,
    Qgi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Order {
    #[default]
    DocumentsThenQuestion,
    QuestionThenDocuments,
}

/// Whether graph-inference-only keeps the similarity anchor (`Y`) or
/// draws an unrelated one (`N`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relevance {
    Y,
    N,
}

/// Text used to pick the anchor node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorQuery {
    #[default]
    Concept,
    ConceptQuestion,
}

/// One cell of an experiment grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSetting {
    pub regime: Regime,
    /// Total context sentences. For qgi, retrieved + chain length.
    #[serde(default)]
    pub k: usize,
    #[serde(default)]
    pub shape: Option<ChainShape>,
    #[serde(default)]
    pub direction: DirectionMode,
    #[serde(default)]
    pub order: Order,
    #[serde(default)]
    pub relevance: Option<Relevance>,
    #[serde(default)]
    pub anchor_query: AnchorQuery,
}

impl ExperimentSetting {
    pub fn baseline() -> Self {
        Self {
            regime: Regime::Baseline,
            k: 0,
            shape: None,
            direction: DirectionMode::Regular,
            order: Order::default(),
            relevance: None,
            anchor_query: AnchorQuery::default(),
        }
    }

    fn needs_shape(&self) -> bool {
        matches!(self.regime, Regime::GraphInferenceOnly | Regime::Kgi | Regime::Qgi)
    }

    /// Sentences taken from plain retrieval (qgi: the part before the chain).
    pub fn retrieved_k(&self) -> usize {
        match self.regime {
            Regime::RelevantInfoOnly => self.k,
            Regime::Qgi => self.k - self.shape.map_or(0, |s| s.len()),
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        let bad = |msg: String| Err(PromptError::Config(msg));
        if self.needs_shape() {
            let Some(shape) = self.shape else {
                return bad(format!("regime {:?} needs a chain shape", self.regime));
            };
            self.direction.validate(&shape)?;
            let expected = match self.regime {
                Regime::Qgi if self.k <= shape.len() => {
                    return bad(format!("qgi k={} must exceed chain length {}", self.k, shape.len()));
                }
                Regime::Qgi => self.k,
                _ => shape.len(),
            };
            if self.k != expected {
                return bad(format!(
                    "k={} does not match chain shape {shape} ({} edges)",
                    self.k,
                    shape.len()
                ));
            }
        } else if self.shape.is_some() {
            return bad(format!("regime {:?} takes no chain shape", self.regime));
        }
        match self.regime {
            Regime::Baseline if self.k != 0 => bad("baseline requires k = 0".into()),
            Regime::RelevantInfoOnly | Regime::IrrelevantInfoOnly if self.k == 0 => {
                bad(format!("regime {:?} requires k >= 1", self.regime))
            }
            Regime::GraphInferenceOnly if self.relevance.is_none() => {
                bad("graph-inference-only requires relevance Y or N".into())
            }
            r if r != Regime::GraphInferenceOnly && self.relevance.is_some() => {
                bad("relevance flag only applies to graph-inference-only".into())
            }
            _ => Ok(()),
        }
    }
}

/// Graph, templates and the vector indexes a regime may draw on. Query
/// indexes are keyed by item id.
#[derive(Clone, Copy)]
pub struct Sources<'a> {
    pub graph: &'a KnowledgeGraph,
    pub templates: &'a TemplateTable,
    pub nodes: Option<&'a dyn VectorStore>,
    pub sentences: Option<&'a dyn VectorStore>,
    pub questions: Option<&'a dyn VectorStore>,
    pub concepts: Option<&'a dyn VectorStore>,
    pub concept_questions: Option<&'a dyn VectorStore>,
}

impl<'a> Sources<'a> {
    pub fn new(graph: &'a KnowledgeGraph, templates: &'a TemplateTable) -> Self {
        Self {
            graph,
            templates,
            nodes: None,
            sentences: None,
            questions: None,
            concepts: None,
            concept_questions: None,
        }
    }

    fn require(index: Option<&'a dyn VectorStore>, name: &str) -> Result<&'a dyn VectorStore, PromptError> {
        index.ok_or_else(|| PromptError::Config(format!("{name} index required by this regime")))
    }

    /// Fail before any generation if the regime lacks an index.
    pub fn check(&self, setting: &ExperimentSetting) -> Result<(), PromptError> {
        let retrieval = setting.retrieved_k() > 0;
        let similarity_walk = matches!(setting.regime, Regime::Kgi | Regime::Qgi);
        let anchored = similarity_walk || setting.relevance == Some(Relevance::Y);
        if retrieval || similarity_walk {
            Self::require(self.sentences, "sentence")?;
        }
        if retrieval {
            Self::require(self.concept_questions, "concept+question")?;
        }
        if similarity_walk {
            Self::require(self.questions, "question")?;
        }
        if anchored {
            Self::require(self.nodes, "node-label")?;
            match setting.anchor_query {
                AnchorQuery::Concept => Self::require(self.concepts, "concept")?,
                AnchorQuery::ConceptQuestion => Self::require(self.concept_questions, "concept+question")?,
            };
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BuiltContext {
    pub sentences: Vec<Sentence>,
    /// Walk result and the seed of the attempt that produced it.
    pub chain: Option<(WalkChain, u64)>,
}

impl BuiltContext {
    pub fn truncated(&self) -> bool {
        self.chain.as_ref().is_some_and(|(c, _)| c.truncated)
    }
}

fn retrieve(sources: &Sources<'_>, item: &QaItem, k: usize) -> Result<Vec<Sentence>, PromptError> {
    let index = Sources::require(sources.sentences, "sentence")?;
    let query = Sources::require(sources.concept_questions, "concept+question")?.get(&item.id)?;
    let verbalizer = Verbalizer::new(sources.graph, sources.templates);
    embed::top_k(index, &query, k)?
        .into_iter()
        .map(|hit| {
            let t = hit
                .id
                .parse::<usize>()
                .ok()
                .filter(|&t| t < sources.graph.triple_count())
                .ok_or(PromptError::BadTripleId(hit.id))?;
            Ok(verbalizer.sentence(t)?)
        })
        .collect()
}

fn anchor_query(
    sources: &Sources<'_>,
    setting: &ExperimentSetting,
    item: &QaItem,
) -> Result<EmbeddingVector, PromptError> {
    let index = match setting.anchor_query {
        AnchorQuery::Concept => Sources::require(sources.concepts, "concept")?,
        AnchorQuery::ConceptQuestion => Sources::require(sources.concept_questions, "concept+question")?,
    };
    Ok(index.get(&item.id)?)
}

fn graph_context(
    sources: &Sources<'_>,
    setting: &ExperimentSetting,
    item: &QaItem,
    mode: RelevanceMode,
    seed: u64,
) -> Result<(Vec<Sentence>, (WalkChain, u64)), PromptError> {
    let shape = setting
        .shape
        .ok_or_else(|| PromptError::Config("missing chain shape".into()))?;
    let concept = match mode {
        RelevanceMode::IrrelevantAnchor => None,
        _ => Some(anchor_query(sources, setting, item)?),
    };
    let question = match mode {
        RelevanceMode::Relevant => Some(Sources::require(sources.questions, "question")?.get(&item.id)?),
        _ => None,
    };
    let walker = Walker::new(sources.graph, sources.nodes, sources.sentences);
    let config = WalkConfig {
        shape,
        relevance: mode,
        direction: setting.direction.clone(),
        seed,
    };
    let (chain, used) = walker.walk(concept.as_ref(), question.as_ref(), &config, &item.id)?;
    let verbalizer = Verbalizer::new(sources.graph, sources.templates);
    let sentences = chain_to_sentences(&chain, &setting.direction, &verbalizer)?;
    Ok((sentences, (chain, used)))
}

/// Context sentences for one item under `setting`; all randomness derives
/// from `(seed, item.id)`.
pub fn build_context(
    setting: &ExperimentSetting,
    item: &QaItem,
    sources: &Sources<'_>,
    seed: u64,
) -> Result<BuiltContext, PromptError> {
    let mut out = BuiltContext {
        sentences: Vec::new(),
        chain: None,
    };
    match setting.regime {
        Regime::Baseline => {}
        Regime::RelevantInfoOnly => out.sentences = retrieve(sources, item, setting.k)?,
        Regime::IrrelevantInfoOnly => {
            let mut rng = walker::item_rng(seed, &item.id);
            let verbalizer = Verbalizer::new(sources.graph, sources.templates);
            out.sentences = walker::sample_irrelevant_triples(sources.graph, setting.k, &mut rng)?
                .into_iter()
                .map(|t| verbalizer.sentence(t))
                .collect::<Result<_, _>>()?;
        }
        Regime::GraphInferenceOnly => {
            let mode = match setting.relevance {
                Some(Relevance::Y) => RelevanceMode::RandomTriplesFromAnchor,
                Some(Relevance::N) => RelevanceMode::IrrelevantAnchor,
                None => return Err(PromptError::Config("graph-inference-only requires relevance".into())),
            };
            let (sentences, chain) = graph_context(sources, setting, item, mode, seed)?;
            out.sentences = sentences;
            out.chain = Some(chain);
        }
        Regime::Kgi | Regime::Qgi => {
            if setting.regime == Regime::Qgi {
                out.sentences = retrieve(sources, item, setting.retrieved_k())?;
            }
            let (sentences, chain) = graph_context(sources, setting, item, RelevanceMode::Relevant, seed)?;
            out.sentences.extend(sentences);
            out.chain = Some(chain);
        }
    }
    Ok(out)
}

/// Plain-text layout with `{context}`, `{question}` and `{choices}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled prompt template is valid")
    }
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self, PromptError> {
        for slot in ["{context}", "{question}", "{choices}"] {
            if text.matches(slot).count() != 1 {
                return Err(PromptError::Config(format!("prompt template needs exactly one {slot}")));
            }
        }
        Ok(Self {
            text: text.trim_end_matches(['\n', '\r']).to_string(),
        })
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub item_id: String,
    pub text: String,
    pub context_sentences: Vec<String>,
    #[serde(default)]
    pub truncated: bool,
}

impl PromptText {
    /// Hex SHA-256 of the prompt text.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.text.as_bytes()))
    }
}

/// Context block, question stem, lettered choices. An empty context drops
/// its line entirely.
pub fn render_prompt(template: &PromptTemplate, item: &QaItem, context: &[String], order: Order) -> PromptText {
    const CONTEXT: &str = "\u{0}context\u{0}";
    const QUESTION: &str = "\u{0}question\u{0}";
    let layout = match order {
        Order::DocumentsThenQuestion => template
            .text
            .replace("{context}", CONTEXT)
            .replace("{question}", QUESTION),
        Order::QuestionThenDocuments => template
            .text
            .replace("{context}", QUESTION)
            .replace("{question}", CONTEXT),
    };
    let context_block = context.join("\n");
    let choices: Vec<String> = item
        .choices
        .iter()
        .map(|c| format!("{}. {}", c.label, c.text))
        .collect();
    let choices = choices.join("\n");
    let lines: Vec<String> = layout
        .split('\n')
        .filter(|line| !(context.is_empty() && line.trim() == CONTEXT))
        .map(|line| {
            line.replace(CONTEXT, &context_block)
                .replace(QUESTION, &item.stem)
                .replace("{choices}", &choices)
        })
        .collect();
    PromptText {
        item_id: item.id.clone(),
        text: lines.join("\n"),
        context_sentences: context.to_vec(),
        truncated: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item() -> QaItem {
        QaItem::from_json(
            r#"{"id":"q7","answerKey":"B","question":{"stem":"What happens after drinking too much liquor?","question_concept":"liquor",
            "choices":[{"label":"A","text":"dancing"},{"label":"B","text":"falling asleep"},{"label":"C","text":"thirst"}]}}"#,
        )
        .unwrap()
    }

    fn ctx() -> Vec<String> {
        vec!["bar has alcohol".to_string(), "alcohol causes sleep".to_string()]
    }

    #[test]
    fn golden_documents_then_question() {
        let p = render_prompt(
            &PromptTemplate::default(),
            &item(),
            &ctx(),
            Order::DocumentsThenQuestion,
        );
        assert_eq!(
            p.text,
            include_str!("../tests/fixtures/golden_prompt.txt").trim_end_matches('\n')
        );
    }

    #[test]
    fn baseline_has_no_context_line() {
        let p = render_prompt(&PromptTemplate::default(), &item(), &[], Order::DocumentsThenQuestion);
        assert_eq!(
            p.text,
            "What happens after drinking too much liquor?\nA. dancing\nB. falling asleep\nC. thirst"
        );
    }

    #[test]
    fn orders_permute_lines() {
        let t = PromptTemplate::default();
        let a = render_prompt(&t, &item(), &ctx(), Order::DocumentsThenQuestion);
        let b = render_prompt(&t, &item(), &ctx(), Order::QuestionThenDocuments);
        assert_ne!(a.text, b.text);
        let mut la: Vec<&str> = a.text.lines().collect();
        let mut lb: Vec<&str> = b.text.lines().collect();
        assert!(lb[0].starts_with("What happens"));
        la.sort_unstable();
        lb.sort_unstable();
        assert_eq!(la, lb);
    }

    #[test]
    fn template_validation() {
        assert!(PromptTemplate::parse("{question}\n{choices}").is_err());
        assert!(PromptTemplate::parse("{context}{context}\n{question}\n{choices}").is_err());
        let t = PromptTemplate::parse("Context:\n{context}\n\nQ: {question}\n{choices}\n").unwrap();
        let p = render_prompt(&t, &item(), &ctx(), Order::DocumentsThenQuestion);
        assert!(p
            .text
            .starts_with("Context:\nbar has alcohol\nalcohol causes sleep\n\nQ: What"));
    }

    #[test]
    fn setting_validation() {
        let mut s = ExperimentSetting::baseline();
        assert!(s.validate().is_ok());
        s.k = 1;
        assert!(s.validate().is_err());

        let qgi: ExperimentSetting = serde_json::from_str(r#"{"regime":"qgi","k":3,"shape":"4->1,1->2"}"#).unwrap();
        assert!(qgi.validate().is_ok());
        assert_eq!(qgi.retrieved_k(), 1);
        let bad: ExperimentSetting = serde_json::from_str(r#"{"regime":"qgi","k":2,"shape":"4->1,1->2"}"#).unwrap();
        assert!(bad.validate().is_err());
        let kgi: ExperimentSetting = serde_json::from_str(r#"{"regime":"kgi","k":3,"shape":"4->1,1->2"}"#).unwrap();
        assert!(kgi.validate().is_err());
        let gio: ExperimentSetting =
            serde_json::from_str(r#"{"regime":"graph-inference-only","k":2,"shape":"1->2,2->3"}"#).unwrap();
        assert!(gio.validate().is_err());
        let gio: ExperimentSetting = serde_json::from_str(
            r#"{"regime":"graph-inference-only","k":2,"shape":"1->2,2->3","relevance":"N","direction":{"irregular":[1,0]}}"#,
        )
        .unwrap();
        assert!(gio.validate().is_ok());
        let rio: ExperimentSetting = serde_json::from_str(r#"{"regime":"relevant-info-only","k":0}"#).unwrap();
        assert!(rio.validate().is_err());
        assert!(
            serde_json::from_str::<ExperimentSetting>(r#"{"regime":"kgi","k":1,"shape":"1->2","extra":1}"#).is_err()
        );
    }
}
