mod common;

use std::collections::BTreeMap;
use std::path::Path;

use common::{build_toy_indexes, fixture, toy_config, ToyIndexes};
use kgwalk_core::experiment::{self, GraphCache, LoadedConfig, RunError, CHAINS_FILE, JOURNAL_FILE, SUMMARY_FILE};
use kgwalk_core::llm::{Journal, JournalEntry};
use kgwalk_core::walker::ChainRecord;

const BASELINE: &str = r#"{"regime":"baseline"}"#;
const KGI: &str = r#"{"regime":"kgi","k":2,"shape":"4->1,1->2"}"#;
const QGI: &str = r#"{"regime":"qgi","k":4,"shape":"4->1,1->2"}"#;

fn setup() -> (tempfile::TempDir, ToyIndexes) {
    let dir = tempfile::tempdir().unwrap();
    let idx = build_toy_indexes(dir.path(), &fixture("alcohol_world.csv"), &fixture("csqa_20.jsonl"));
    (dir, idx)
}

fn run(idx: &ToyIndexes, setting: &str, out: &Path, parallelism: usize) -> Result<experiment::RunOutcome, RunError> {
    let text = toy_config(idx, setting, out, parallelism);
    let loaded = LoadedConfig::parse(&text, Path::new("/")).unwrap();
    experiment::run(&loaded, &mut GraphCache::default())
}

fn hand_labels() -> BTreeMap<String, (bool, String)> {
    std::fs::read_to_string(fixture("replay_20_expected.tsv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            (f[0].to_string(), (f[1] == "1", f[2].to_string()))
        })
        .collect()
}

#[test]
fn replay_matches_hand_labels() {
    let (dir, idx) = setup();
    let out = dir.path().join("baseline");
    let outcome = run(&idx, BASELINE, &out, 1).unwrap();
    let labels = hand_labels();
    let expected_correct = labels.values().filter(|(c, _)| *c).count();
    assert_eq!(expected_correct, 13);
    assert_eq!(outcome.summary.n, 20);
    assert_eq!(outcome.summary.correct, expected_correct);
    assert_eq!(outcome.summary.accuracy, 13.0 / 20.0);

    let (verdicts, _) = experiment::score_journal(out.join(JOURNAL_FILE), fixture("csqa_20.jsonl")).unwrap();
    for v in &verdicts {
        let (correct, reason) = &labels[&v.item_id];
        assert_eq!(
            (v.correct, v.reason.name()),
            (*correct, reason.as_str()),
            "{}",
            v.item_id
        );
    }
}

#[test]
fn flipping_one_answer_moves_accuracy_by_one_item() {
    let (dir, idx) = setup();
    let out = dir.path().join("flip");
    run(&idx, BASELINE, &out, 1).unwrap();
    let journal = out.join(JOURNAL_FILE);
    let (_, before) = experiment::score_journal(&journal, fixture("csqa_20.jsonl")).unwrap();
    let mut entries = Journal::read(&journal).unwrap();
    let q04 = entries.iter_mut().find(|e| e.item_id == "q04").unwrap();
    q04.text = "D".into();
    drop(Journal::rewrite(&journal, &entries).unwrap());
    let (_, after) = experiment::score_journal(&journal, fixture("csqa_20.jsonl")).unwrap();
    assert_eq!(after.correct, before.correct + 1);
    assert!((after.accuracy - before.accuracy - 1.0 / 20.0).abs() < 1e-12);
}

#[test]
fn runs_are_reproducible() {
    let (dir, idx) = setup();
    for setting in [KGI, QGI] {
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        run(&idx, setting, &a, 1).unwrap();
        run(&idx, setting, &b, 8).unwrap();
        for file in [JOURNAL_FILE, SUMMARY_FILE, CHAINS_FILE, experiment::RESULTS_FILE] {
            assert_eq!(
                std::fs::read(a.join(file)).unwrap(),
                std::fs::read(b.join(file)).unwrap(),
                "{file}"
            );
        }
        std::fs::remove_dir_all(&a).unwrap();
        std::fs::remove_dir_all(&b).unwrap();
    }
}

#[test]
fn chains_recorded_per_item() {
    let (dir, idx) = setup();
    let out = dir.path().join("kgi");
    run(&idx, KGI, &out, 2).unwrap();
    let chains: Vec<ChainRecord> = std::fs::read_to_string(out.join(CHAINS_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(chains.len(), 20);
    for c in &chains {
        assert!(c.steps.len() <= 2);
        assert_eq!(c.truncated, c.steps.len() < 2);
    }
    // Prompts carry the chain sentences ahead of the question.
    let q = Journal::read(out.join(JOURNAL_FILE)).unwrap();
    assert_eq!(q.len(), 20);
}

#[test]
fn resume_skips_finished_items_and_retries_errors() {
    let (dir, idx) = setup();
    let full = dir.path().join("full");
    run(&idx, KGI, &full, 1).unwrap();
    let reference = std::fs::read(full.join(JOURNAL_FILE)).unwrap();

    let partial = dir.path().join("partial");
    run(&idx, KGI, &partial, 1).unwrap();
    let journal = partial.join(JOURNAL_FILE);
    let mut entries: Vec<JournalEntry> = Journal::read(&journal).unwrap();
    entries.truncate(6);
    entries[2].error = Some("timeout".into());
    entries[2].text.clear();
    drop(Journal::rewrite(&journal, &entries).unwrap());
    let mut torn = std::fs::read_to_string(&journal).unwrap();
    torn.push_str("{\"item_id\":\"q07\",\"pro");
    std::fs::write(&journal, torn).unwrap();

    let outcome = run(&idx, KGI, &partial, 3).unwrap();
    assert_eq!(outcome.resumed, 5);
    assert_eq!(outcome.generated, 15);
    assert_eq!(std::fs::read(&journal).unwrap(), reference);
}

#[test]
fn refuses_to_mix_configs_in_one_directory() {
    let (dir, idx) = setup();
    let out = dir.path().join("mixed");
    run(&idx, BASELINE, &out, 1).unwrap();
    let err = run(&idx, KGI, &out, 1).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
}

#[test]
fn error_classes() {
    let (dir, idx) = setup();
    // Missing index: config error before any generation.
    let mut text: serde_json::Value = serde_json::from_str(&toy_config(&idx, KGI, &dir.path().join("x"), 1)).unwrap();
    text["indexes"].as_object_mut().unwrap().remove("nodes");
    let loaded = LoadedConfig::parse(&text.to_string(), Path::new("/")).unwrap();
    let err = experiment::run(&loaded, &mut GraphCache::default()).unwrap_err();
    assert_eq!(err.exit_code(), 1, "{err}");
    assert!(!dir.path().join("x").join(JOURNAL_FILE).exists());

    // Replay file missing an item: backend error.
    let short = dir.path().join("short.jsonl");
    let lines: Vec<String> = std::fs::read_to_string(fixture("replay_20.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.contains("\"q11\""))
        .map(String::from)
        .collect();
    std::fs::write(&short, lines.join("\n")).unwrap();
    let mut cfg: serde_json::Value =
        serde_json::from_str(&toy_config(&idx, BASELINE, &dir.path().join("y"), 1)).unwrap();
    cfg["backend"]["path"] = short.display().to_string().into();
    let loaded = LoadedConfig::parse(&cfg.to_string(), Path::new("/")).unwrap();
    let err = experiment::run(&loaded, &mut GraphCache::default()).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
    assert!(err.to_string().contains("q11"));
    // Items before the miss were journaled.
    let kept = Journal::read(dir.path().join("y").join(JOURNAL_FILE)).unwrap();
    assert_eq!(kept.len(), 10);

    // Dataset mismatch when scoring names the item.
    let err = experiment::score_journal(dir.path().join("y").join(JOURNAL_FILE), fixture("csqa_20.jsonl")).unwrap_err();
    assert!(err.to_string().contains("q11"), "{err}");
}
