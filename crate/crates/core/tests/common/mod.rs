//! Test-only helpers: a toy hashing text encoder and index builders that go
//! through the same text/label export files the real embedder reads.
#![allow(dead_code)]

use std::io::BufRead;
use std::path::{Path, PathBuf};

use kgwalk_core::embed::{write_vectors, EmbeddingIndex, EmbeddingVector};
use kgwalk_core::eval::load_dataset;
use kgwalk_core::graph::{IngestOptions, KnowledgeGraph};
use kgwalk_core::verbalize::{TemplateTable, Verbalizer};

pub const TOY_DIM: usize = 64;

pub fn fixture(name: &str) -> PathBuf {
    // Shared by every crate under crates/.
    let crates = Path::new(env!("CARGO_MANIFEST_DIR")).parent().expect("crate dir");
    crates.join("core/tests/fixtures").join(name)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Bag of hashed lowercase words plus a small constant component, so no
/// text encodes to the zero vector.
pub fn toy_encode(text: &str, dim: usize) -> Vec<f32> {
    let mut v = vec![0f32; dim];
    v[0] = 0.05;
    for word in text
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
    {
        let slot = 1 + (fnv1a(word.as_bytes()) % (dim as u64 - 1)) as usize;
        v[slot] += 1.0;
    }
    v
}

/// Parse `<id>\t<text>` lines.
pub fn read_export(path: &Path) -> Vec<(String, String)> {
    let file = std::fs::File::open(path).unwrap();
    std::io::BufReader::new(file)
        .lines()
        .map(|l| {
            let l = l.unwrap();
            let (id, text) = l.split_once('\t').expect("tab-separated export line");
            (id.to_string(), text.to_string())
        })
        .collect()
}

fn encode_file(records: &[(String, String)], out: &Path) {
    let vectors: Vec<(String, Vec<f32>)> = records
        .iter()
        .map(|(id, t)| (id.clone(), toy_encode(t, TOY_DIM)))
        .collect();
    write_vectors(out, TOY_DIM, vectors.iter().map(|(id, v)| (id.as_str(), v.as_slice()))).unwrap();
}

pub struct ToyIndexes {
    pub nodes: PathBuf,
    pub sentences: PathBuf,
    pub questions: PathBuf,
    pub concepts: PathBuf,
    pub concept_questions: PathBuf,
}

/// Export texts and labels for `dump`, encode them and the dataset's
/// queries with the toy encoder, and write the five vector files to `dir`.
pub fn build_toy_indexes(dir: &Path, dump: &Path, dataset: &Path) -> ToyIndexes {
    let (graph, _) = KnowledgeGraph::ingest_conceptnet(dump, &IngestOptions::new("en")).unwrap();
    let table = TemplateTable::default();
    let verbalizer = Verbalizer::new(&graph, &table);
    let texts = dir.join("sentences.tsv");
    let labels = dir.join("labels.tsv");
    verbalizer
        .write_text_export(std::fs::File::create(&texts).unwrap())
        .unwrap();
    verbalizer
        .write_label_export(std::fs::File::create(&labels).unwrap())
        .unwrap();

    let out = ToyIndexes {
        nodes: dir.join("nodes.kgwv"),
        sentences: dir.join("sentences.kgwv"),
        questions: dir.join("questions.kgwv"),
        concepts: dir.join("concepts.kgwv"),
        concept_questions: dir.join("concept_questions.kgwv"),
    };
    encode_file(&read_export(&texts), &out.sentences);
    encode_file(&read_export(&labels), &out.nodes);
    let items = load_dataset(dataset).unwrap();
    let query = |f: &dyn Fn(&kgwalk_core::eval::QaItem) -> String| -> Vec<(String, String)> {
        items.iter().map(|i| (i.id.clone(), f(i))).collect()
    };
    encode_file(&query(&|i| i.stem.clone()), &out.questions);
    encode_file(&query(&|i| i.question_concept.clone()), &out.concepts);
    encode_file(
        &query(&|i| format!("{} {}", i.question_concept, i.stem)),
        &out.concept_questions,
    );
    out
}

/// Config JSON for a run over the alcohol-world fixture, replayed.
pub fn toy_config(indexes: &ToyIndexes, setting: &str, output_dir: &Path, parallelism: usize) -> String {
    let p = |p: &Path| p.display().to_string();
    serde_json::json!({
        "schema_version": 1,
        "dataset": p(&fixture("csqa_20.jsonl")),
        "graph": {"dump": p(&fixture("alcohol_world.csv"))},
        "indexes": {
            "nodes": p(&indexes.nodes),
            "sentences": p(&indexes.sentences),
            "questions": p(&indexes.questions),
            "concepts": p(&indexes.concepts),
            "concept_questions": p(&indexes.concept_questions),
        },
        "setting": serde_json::from_str::<serde_json::Value>(setting).unwrap(),
        "seed": 7,
        "backend": {"type": "replay", "path": p(&fixture("replay_20.jsonl"))},
        "parallelism": parallelism,
        "output_dir": p(output_dir),
    })
    .to_string()
}

pub struct World {
    pub graph: KnowledgeGraph,
    pub nodes: EmbeddingIndex,
    pub sentences: EmbeddingIndex,
    pub liquor: EmbeddingVector,
    pub question: EmbeddingVector,
}

/// Hand-authored vectors: "liquor" sits next to "alcohol", the question
/// next to "alcohol causes sleep".
pub fn hand_vector_world() -> World {
    let (graph, _) =
        KnowledgeGraph::ingest_conceptnet(fixture("alcohol_world.csv"), &IngestOptions::new("en")).unwrap();
    let mut nodes = EmbeddingIndex::new(4);
    for node in graph.nodes() {
        let v = match node.label.as_str() {
            "alcohol" => [1.0, 0.2, 0.0, 0.0],
            "beer" => [0.6, 0.0, 0.8, 0.0],
            "wine" => [0.5, 0.0, 0.0, 0.9],
            _ => [0.0, 0.0, 1.0, 0.01 * node.id.0 as f32],
        };
        nodes.insert(node.id.0.to_string(), &v).unwrap();
    }
    let mut sentences = EmbeddingIndex::new(4);
    for (i, t) in graph.triples().iter().enumerate() {
        let v = if graph.label(t.subject) == "alcohol" && graph.label(t.object) == "sleep" {
            [0.9, 0.0, 0.1, 0.0]
        } else {
            [0.0, 1.0, 0.0, 0.01 * i as f32]
        };
        sentences.insert(i.to_string(), &v).unwrap();
    }
    World {
        graph,
        nodes,
        sentences,
        liquor: EmbeddingVector::new(vec![0.95, 0.3, 0.0, 0.0]).unwrap(),
        question: EmbeddingVector::new(vec![1.0, 0.05, 0.0, 0.0]).unwrap(),
    }
}
