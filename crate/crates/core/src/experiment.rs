//! Config-driven runs: build prompts, generate, journal, score.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::embed::{AnyIndex, EmbedError, VectorStore};
use crate::eval::{self, EvalError, QaItem, Summary, Verdict};
use crate::graph::{GraphError, IngestOptions, IngestReport, KnowledgeGraph};
use crate::llm::{
    Backend, ErrorKind, GenRequest, HttpBackend, HttpConfig, Journal, JournalEntry, JournalError, MockBackend,
    ReplayBackend,
};
use crate::prompt::{self, ExperimentSetting, PromptError, PromptTemplate, PromptText, Sources};
use crate::verbalize::TemplateTable;
use crate::walker::ChainRecord;

pub const SCHEMA_VERSION: u32 = 1;

pub const JOURNAL_FILE: &str = "journal.jsonl";
pub const RESULTS_FILE: &str = "results.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CHAINS_FILE: &str = "chains.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("backend: {0}")]
    Backend(String),
}

impl RunError {
    /// Process exit status: 1 config, 2 data, 3 backend.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Data(_) => 2,
            RunError::Backend(_) => 3,
        }
    }
}

impl From<GraphError> for RunError {
    fn from(e: GraphError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<EmbedError> for RunError {
    fn from(e: EmbedError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<EvalError> for RunError {
    fn from(e: EvalError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<JournalError> for RunError {
    fn from(e: JournalError) -> Self {
        RunError::Data(e.to_string())
    }
}

impl From<PromptError> for RunError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::Config(msg) => RunError::Config(msg),
            other => RunError::Data(other.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> RunError {
    RunError::Data(format!("{}: {e}", path.display()))
}

fn default_language() -> String {
    "en".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSource {
    pub dump: PathBuf,
    #[serde(default = "default_language")]
    pub language: String,
    #[serde(default)]
    pub dedup: bool,
}

/// Vector files produced by the embedder. Query indexes are keyed by item
/// id, the node index by node id, the sentence index by triple index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexPaths {
    #[serde(default)]
    pub nodes: Option<PathBuf>,
    #[serde(default)]
    pub sentences: Option<PathBuf>,
    #[serde(default)]
    pub questions: Option<PathBuf>,
    #[serde(default)]
    pub concepts: Option<PathBuf>,
    #[serde(default)]
    pub concept_questions: Option<PathBuf>,
    /// Memory-map vector files instead of reading them.
    #[serde(default)]
    pub mmap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BackendConfig {
    Http(HttpConfig),
    Replay {
        path: PathBuf,
    },
    Mock {
        /// Fixed reply; absent means echo the prompt.
        #[serde(default)]
        constant: Option<String>,
    },
}

fn default_max_new_tokens() -> u32 {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generation {
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: u32,
    #[serde(default)]
    pub temperature: f32,
}

impl Default for Generation {
    fn default() -> Self {
        Self {
            max_new_tokens: default_max_new_tokens(),
            temperature: 0.0,
        }
    }
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub dataset: PathBuf,
    pub graph: GraphSource,
    #[serde(default)]
    pub indexes: IndexPaths,
    pub setting: ExperimentSetting,
    #[serde(default)]
    pub seed: u64,
    pub backend: BackendConfig,
    #[serde(default)]
    pub generation: Generation,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub prompt_template: Option<PathBuf>,
    pub output_dir: PathBuf,
}

/// A parsed config with paths resolved against its directory.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    /// Config as written, for the manifest.
    pub raw: Value,
    pub template: PromptTemplate,
    /// SHA-256 over the canonical config (minus output location and
    /// parallelism) and the prompt template text.
    pub digest: String,
}

/// Serialize with object keys sorted at every level.
pub fn canonical_json(value: &Value) -> String {
    fn sort(value: &Value) -> Value {
        match value {
            Value::Object(map) => {
                let sorted: BTreeMap<&String, Value> = map.iter().map(|(k, v)| (k, sort(v))).collect();
                Value::Object(sorted.into_iter().map(|(k, v)| (k.clone(), v)).collect())
            }
            Value::Array(items) => Value::Array(items.iter().map(sort).collect()),
            other => other.clone(),
        }
    }
    sort(value).to_string()
}

pub fn config_digest(raw: &Value, template: &PromptTemplate) -> String {
    let mut stripped = raw.clone();
    if let Value::Object(map) = &mut stripped {
        map.remove("output_dir");
        map.remove("parallelism");
    }
    let mut hasher = Sha256::new();
    hasher.update(canonical_json(&stripped).as_bytes());
    hasher.update([0]);
    hasher.update(template.as_str().as_bytes());
    hex::encode(hasher.finalize())
}

impl LoadedConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            RunError::Config(msg) => RunError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parse config text; relative paths are taken from `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, RunError> {
        let raw: Value = serde_json::from_str(text).map_err(|e| RunError::Config(e.to_string()))?;
        let mut config: ExperimentConfig =
            serde_json::from_value(raw.clone()).map_err(|e| RunError::Config(e.to_string()))?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(RunError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                config.schema_version
            )));
        }
        if config.parallelism == 0 {
            return Err(RunError::Config("parallelism must be at least 1".into()));
        }
        if config.generation.max_new_tokens == 0 {
            return Err(RunError::Config("max_new_tokens must be at least 1".into()));
        }
        config.setting.validate()?;

        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.dataset);
        resolve(&mut config.graph.dump);
        resolve(&mut config.output_dir);
        for p in [
            &mut config.indexes.nodes,
            &mut config.indexes.sentences,
            &mut config.indexes.questions,
            &mut config.indexes.concepts,
            &mut config.indexes.concept_questions,
            &mut config.prompt_template,
        ]
        .into_iter()
        .flatten()
        {
            resolve(p);
        }
        if let BackendConfig::Replay { path } = &mut config.backend {
            resolve(path);
        }

        let template = match &config.prompt_template {
            None => PromptTemplate::default(),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| RunError::Config(format!("cannot read template {}: {e}", p.display())))?;
                PromptTemplate::parse(&text)?
            }
        };
        let digest = config_digest(&raw, &template);
        Ok(Self {
            config,
            raw,
            template,
            digest,
        })
    }
}

pub fn make_backend(config: &BackendConfig) -> Result<Box<dyn Backend>, RunError> {
    Ok(match config {
        BackendConfig::Http(http) => Box::new(HttpBackend::new(http.clone()).map_err(|e| RunError::Config(e.message))?),
        BackendConfig::Replay { path } => Box::new(ReplayBackend::load(path).map_err(|e| RunError::Config(e.message))?),
        BackendConfig::Mock { constant: Some(text) } => Box::new(MockBackend::Constant(text.clone())),
        BackendConfig::Mock { constant: None } => Box::new(MockBackend::Echo),
    })
}

type GraphKey = (PathBuf, String, bool);

/// Ingested graphs shared across runs that name the same dump.
#[derive(Default)]
pub struct GraphCache {
    graphs: HashMap<GraphKey, Arc<(KnowledgeGraph, IngestReport)>>,
}

impl GraphCache {
    pub fn get(&mut self, source: &GraphSource) -> Result<Arc<(KnowledgeGraph, IngestReport)>, RunError> {
        let key = (source.dump.clone(), source.language.clone(), source.dedup);
        if let Some(hit) = self.graphs.get(&key) {
            return Ok(hit.clone());
        }
        let mut options = IngestOptions::new(&source.language);
        options.dedup = source.dedup;
        let loaded = Arc::new(KnowledgeGraph::ingest_conceptnet(&source.dump, &options)?);
        self.graphs.insert(key, loaded.clone());
        Ok(loaded)
    }
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub item_id: String,
    pub correct: bool,
    pub reason: eval::Reason,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_digest: String,
    pub config: Value,
    pub tool_version: String,
    pub items: usize,
    pub graph_nodes: usize,
    pub graph_triples: usize,
    pub ingest: IngestReport,
    pub prompt_template_sha256: String,
    pub truncated_chains: usize,
    pub resumed_items: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub output_dir: PathBuf,
    /// Items answered from an earlier journal.
    pub resumed: usize,
    /// Items sent to the backend in this run.
    pub generated: usize,
}

fn open_index(path: &Option<PathBuf>, mmap: bool) -> Result<Option<AnyIndex>, RunError> {
    path.as_ref()
        .map(|p| AnyIndex::open(p, mmap).map_err(|e| RunError::Data(format!("{}: {e}", p.display()))))
        .transpose()
}

fn as_store(index: &Option<AnyIndex>) -> Option<&dyn VectorStore> {
    index.as_ref().map(|i| i as &dyn VectorStore)
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| RunError::Data(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), RunError> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, &row).map_err(|e| RunError::Data(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| io_error(path, e))?;
    }
    out.flush().map_err(|e| io_error(path, e))
}

/// Build every prompt for `items` under `setting`, in dataset order.
pub fn build_prompts(
    items: &[QaItem],
    setting: &ExperimentSetting,
    sources: &Sources<'_>,
    template: &PromptTemplate,
    seed: u64,
) -> Result<(Vec<PromptText>, Vec<ChainRecord>), RunError> {
    sources.check(setting)?;
    let built: Vec<(PromptText, Option<ChainRecord>)> = items
        .par_iter()
        .map(|item| {
            let context =
                prompt::build_context(setting, item, sources, seed).map_err(|e| RunError::from(e).context(&item.id))?;
            let texts: Vec<String> = context.sentences.iter().map(|s| s.text.clone()).collect();
            let mut text = prompt::render_prompt(template, item, &texts, setting.order);
            text.truncated = context.truncated();
            let chain = context
                .chain
                .as_ref()
                .map(|(chain, used)| ChainRecord::new(&item.id, chain, sources.graph, *used));
            Ok((text, chain))
        })
        .collect::<Result<_, RunError>>()?;
    let mut prompts = Vec::with_capacity(built.len());
    let mut chains = Vec::new();
    for (p, c) in built {
        prompts.push(p);
        chains.extend(c);
    }
    Ok((prompts, chains))
}

impl RunError {
    fn context(self, item_id: &str) -> Self {
        match self {
            RunError::Config(m) => RunError::Config(m),
            RunError::Data(m) => RunError::Data(format!("item {item_id:?}: {m}")),
            RunError::Backend(m) => RunError::Backend(format!("item {item_id:?}: {m}")),
        }
    }
}

/// Run one configured experiment. An existing journal in the output
/// directory is resumed: items with a matching prompt hash and no error
/// are not regenerated.
pub fn run(loaded: &LoadedConfig, graphs: &mut GraphCache) -> Result<RunOutcome, RunError> {
    let config = &loaded.config;
    let items = eval::load_dataset(&config.dataset)?;
    if items.is_empty() {
        return Err(RunError::Data(format!("{} has no items", config.dataset.display())));
    }
    let backend = make_backend(&config.backend)?;
    let graph = graphs.get(&config.graph)?;
    let (graph, report) = (&graph.0, graph.1);
    let templates = TemplateTable::default();

    let mmap = config.indexes.mmap;
    let nodes = open_index(&config.indexes.nodes, mmap)?;
    let sentences = open_index(&config.indexes.sentences, mmap)?;
    let questions = open_index(&config.indexes.questions, mmap)?;
    let concepts = open_index(&config.indexes.concepts, mmap)?;
    let concept_questions = open_index(&config.indexes.concept_questions, mmap)?;
    let sources = Sources {
        graph,
        templates: &templates,
        nodes: as_store(&nodes),
        sentences: as_store(&sentences),
        questions: as_store(&questions),
        concepts: as_store(&concepts),
        concept_questions: as_store(&concept_questions),
    };
    let (prompts, chains) = build_prompts(&items, &config.setting, &sources, &loaded.template, config.seed)?;

    let out_dir = &config.output_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    let manifest_path = out_dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let text = std::fs::read_to_string(&manifest_path).map_err(|e| io_error(&manifest_path, e))?;
        let previous: Value = serde_json::from_str(&text).map_err(|e| RunError::Data(e.to_string()))?;
        if previous.get("config_digest").and_then(Value::as_str) != Some(loaded.digest.as_str()) {
            return Err(RunError::Config(format!(
                "{} holds a run with a different config; use a fresh output_dir",
                out_dir.display()
            )));
        }
    }

    let journal_path = out_dir.join(JOURNAL_FILE);
    let previous: HashMap<String, JournalEntry> = if journal_path.exists() {
        Journal::read(&journal_path)?
            .into_iter()
            .map(|e| (e.item_id.clone(), e))
            .collect()
    } else {
        HashMap::new()
    };
    let mut done: Vec<Option<JournalEntry>> = prompts
        .iter()
        .map(|p| {
            previous
                .get(&p.item_id)
                .filter(|e| e.error.is_none() && e.prompt_hash == p.hash())
                .cloned()
        })
        .collect();
    let resumed = done.iter().flatten().count();
    let kept: Vec<JournalEntry> = done.iter().flatten().cloned().collect();
    let mut journal = Journal::rewrite(&journal_path, &kept)?;

    let pending: Vec<usize> = (0..prompts.len()).filter(|&i| done[i].is_none()).collect();
    let requests: Vec<GenRequest> = pending
        .iter()
        .map(|&i| GenRequest {
            prompt: prompts[i].clone(),
            max_new_tokens: config.generation.max_new_tokens,
            temperature: config.generation.temperature,
        })
        .collect();
    let mut journal_error = None;
    let backend_name = backend.name().to_string();
    let results = crate::llm::run_batch(&requests, backend.as_ref(), config.parallelism, |i, result| {
        if matches!(result, Err(e) if e.kind == ErrorKind::Fatal) || journal_error.is_some() {
            return;
        }
        let entry = JournalEntry::new(&requests[i].prompt, result, &backend_name);
        if let Err(e) = journal.append(&entry) {
            journal_error = Some(e);
        }
    });
    if let Some(e) = journal_error {
        return Err(e.into());
    }
    let mut fatal = None;
    for (slot, result) in pending.iter().zip(&results) {
        match result {
            Err(e) if e.kind == ErrorKind::Fatal => {
                fatal.get_or_insert_with(|| e.message.clone());
            }
            _ => done[*slot] = Some(JournalEntry::new(&prompts[*slot], result, &backend_name)),
        }
    }
    // Canonical order: dataset order.
    let entries: Vec<JournalEntry> = done.iter().flatten().cloned().collect();
    drop(Journal::rewrite(&journal_path, &entries)?);
    if let Some(message) = fatal {
        return Err(RunError::Backend(message));
    }

    let verdicts = score_entries(&entries, &items)?;
    let summary = Summary::new(&verdicts, Some(loaded.digest.clone()))?;
    let records = entries.iter().zip(&verdicts).map(|(e, v)| ResultRecord {
        item_id: v.item_id.clone(),
        correct: v.correct,
        reason: v.reason,
        response: e.text.clone(),
        error: e.error.clone(),
    });
    write_jsonl(&out_dir.join(RESULTS_FILE), records)?;
    write_jsonl(&out_dir.join(CHAINS_FILE), &chains)?;
    write_json_file(&out_dir.join(SUMMARY_FILE), &summary)?;
    let manifest = Manifest {
        config_digest: loaded.digest.clone(),
        config: loaded.raw.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        items: items.len(),
        graph_nodes: graph.node_count(),
        graph_triples: graph.triple_count(),
        ingest: report,
        prompt_template_sha256: hex::encode(Sha256::digest(loaded.template.as_str().as_bytes())),
        truncated_chains: chains.iter().filter(|c| c.truncated).count(),
        resumed_items: resumed,
    };
    write_json_file(&manifest_path, &manifest)?;
    Ok(RunOutcome {
        summary,
        output_dir: out_dir.clone(),
        resumed,
        generated: pending.len(),
    })
}

/// Score journal entries against the dataset. Every dataset item needs
/// exactly one entry and every entry a dataset item; verdicts follow
/// dataset order.
pub fn score_entries(entries: &[JournalEntry], items: &[QaItem]) -> Result<Vec<Verdict>, RunError> {
    let mut by_id: HashMap<&str, &JournalEntry> = HashMap::with_capacity(entries.len());
    for e in entries {
        if by_id.insert(e.item_id.as_str(), e).is_some() {
            return Err(RunError::Data(format!("journal has item {:?} twice", e.item_id)));
        }
    }
    let known: HashMap<&str, ()> = items.iter().map(|i| (i.id.as_str(), ())).collect();
    if let Some(stray) = entries.iter().find(|e| !known.contains_key(e.item_id.as_str())) {
        return Err(RunError::Data(format!(
            "journal item {:?} is not in the dataset",
            stray.item_id
        )));
    }
    items
        .iter()
        .map(|item| {
            let entry = by_id
                .get(item.id.as_str())
                .ok_or_else(|| RunError::Data(format!("dataset item {:?} has no journal entry", item.id)))?;
            Ok(match entry.error {
                Some(_) => Verdict::error_flagged(&item.id),
                None => eval::score_response(&entry.text, item),
            })
        })
        .collect()
}

/// Re-score a saved journal against a dataset file.
pub fn score_journal(
    journal: impl AsRef<Path>,
    dataset: impl AsRef<Path>,
) -> Result<(Vec<Verdict>, Summary), RunError> {
    let entries = Journal::read(journal)?;
    let items = eval::load_dataset(dataset)?;
    let verdicts = score_entries(&entries, &items)?;
    let summary = Summary::new(&verdicts, None)?;
    Ok((verdicts, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(extra: &str) -> String {
        format!(
            r#"{{"schema_version":1,"dataset":"d.jsonl","graph":{{"dump":"kg.csv"}},
            "setting":{{"regime":"baseline"}},"backend":{{"type":"mock","constant":"A"}},
            "output_dir":"out"{extra}}}"#
        )
    }

    #[test]
    fn parse_resolves_paths_and_defaults() {
        let loaded = LoadedConfig::parse(&minimal(""), Path::new("/cfg")).unwrap();
        let c = &loaded.config;
        assert_eq!(c.dataset, PathBuf::from("/cfg/d.jsonl"));
        assert_eq!(c.graph.dump, PathBuf::from("/cfg/kg.csv"));
        assert_eq!(c.graph.language, "en");
        assert_eq!(c.parallelism, 1);
        assert_eq!(c.generation.temperature, 0.0);
        assert_eq!(loaded.digest.len(), 64);
    }

    #[test]
    fn digest_ignores_output_dir_and_parallelism_only() {
        let a = LoadedConfig::parse(&minimal(""), Path::new("/x")).unwrap();
        let b = LoadedConfig::parse(
            &minimal(r#","parallelism":8"#).replace("\"out\"", "\"elsewhere\""),
            Path::new("/y"),
        )
        .unwrap();
        assert_eq!(a.digest, b.digest);
        let c = LoadedConfig::parse(&minimal(r#","seed":1"#), Path::new("/x")).unwrap();
        assert_ne!(a.digest, c.digest);
    }

    #[test]
    fn canonical_json_sorts_keys() {
        let v: Value = serde_json::from_str(r#"{"b":1,"a":{"d":2,"c":[{"f":1,"e":2}]}}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":{"c":[{"e":2,"f":1}],"d":2},"b":1}"#);
    }

    #[test]
    fn config_errors() {
        let bad_version = minimal("").replace("\"schema_version\":1", "\"schema_version\":2");
        assert!(matches!(
            LoadedConfig::parse(&bad_version, Path::new(".")),
            Err(RunError::Config(_))
        ));
        let unknown = minimal(r#","colour":"red""#);
        assert!(matches!(
            LoadedConfig::parse(&unknown, Path::new(".")),
            Err(RunError::Config(_))
        ));
        let bad_setting = minimal("").replace(r#"{"regime":"baseline"}"#, r#"{"regime":"kgi","k":2}"#);
        let err = LoadedConfig::parse(&bad_setting, Path::new(".")).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        let http = minimal("").replace(
            r#"{"type":"mock","constant":"A"}"#,
            r#"{"type":"http","endpoint":"http://localhost:1/x","timeout_ms":10}"#,
        );
        let loaded = LoadedConfig::parse(&http, Path::new(".")).unwrap();
        assert!(matches!(loaded.config.backend, BackendConfig::Http(ref h) if h.timeout_ms == 10));
    }

    fn item(id: &str) -> QaItem {
        QaItem::from_json(&format!(
            r#"{{"id":"{id}","answerKey":"A","question":{{"stem":"s","question_concept":"c",
            "choices":[{{"label":"A","text":"yes"}},{{"label":"B","text":"no"}}]}}}}"#
        ))
        .unwrap()
    }

    fn entry(id: &str, text: &str) -> JournalEntry {
        JournalEntry {
            item_id: id.into(),
            prompt_hash: String::new(),
            text: text.into(),
            latency_ms: 0,
            backend: "replay".into(),
            error: None,
        }
    }

    #[test]
    fn scoring_requires_matching_ids() {
        let items = [item("a"), item("b")];
        let verdicts = score_entries(&[entry("b", "B"), entry("a", "A")], &items).unwrap();
        assert_eq!(verdicts[0].item_id, "a");
        assert!(verdicts[0].correct && !verdicts[1].correct);

        let err = score_entries(&[entry("a", "A")], &items).unwrap_err();
        assert!(err.to_string().contains("\"b\""), "{err}");
        let err = score_entries(&[entry("a", "A"), entry("b", "A"), entry("z", "A")], &items).unwrap_err();
        assert!(err.to_string().contains("\"z\""), "{err}");

        let mut flagged = entry("b", "A");
        flagged.error = Some("timeout".into());
        let verdicts = score_entries(&[entry("a", "A"), flagged], &items).unwrap();
        assert_eq!(verdicts[1].reason, eval::Reason::ErrorFlagged);
        assert!(!verdicts[1].correct);
    }
}
