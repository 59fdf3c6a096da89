mod common;

use common::hand_vector_world as world;
use kgwalk_core::verbalize::{TemplateTable, Verbalizer};
use kgwalk_core::walker::{
    chain_to_sentences, item_rng, one_hop_candidates, ChainShape, DirectionMode, RelevanceMode, Slot, WalkConfig,
    Walker,
};

#[test]
fn liquor_anchors_on_alcohol_with_eight_candidates() {
    let w = world();
    let walker = Walker::new(&w.graph, Some(&w.nodes), Some(&w.sentences));
    let mut rng = item_rng(0, "q02");
    let anchor = walker
        .select_anchor(Some(&w.liquor), RelevanceMode::Relevant, &mut rng)
        .unwrap();
    assert_eq!(w.graph.label(anchor), "alcohol");

    let both: ChainShape = "4->1,1->2".parse().unwrap();
    let pool = one_hop_candidates(&w.graph, anchor, &both).unwrap();
    assert_eq!(pool.len(), 8);
    let outbound = pool.iter().filter(|&&t| w.graph.triples()[t].subject == anchor).count();
    assert_eq!(outbound, 6);
    assert_eq!(
        one_hop_candidates(&w.graph, anchor, &"1->2".parse().unwrap())
            .unwrap()
            .len(),
        6
    );
    assert_eq!(
        one_hop_candidates(&w.graph, anchor, &"4->1".parse().unwrap())
            .unwrap()
            .len(),
        2
    );

    let first = walker.select_first_triple(anchor, &w.question, &both).unwrap();
    let t = w.graph.triples()[first];
    assert_eq!(
        (w.graph.label(t.subject), w.graph.label(t.object)),
        ("alcohol", "sleep")
    );
}

#[test]
fn chain_around_alcohol() {
    let w = world();
    let walker = Walker::new(&w.graph, Some(&w.nodes), Some(&w.sentences));
    let shape: ChainShape = "4->1,1->2,2->3".parse().unwrap();
    let config = WalkConfig {
        shape,
        relevance: RelevanceMode::Relevant,
        direction: DirectionMode::Regular,
        seed: 11,
    };
    let (chain, seed) = walker.walk(Some(&w.liquor), Some(&w.question), &config, "q02").unwrap();
    assert!(!chain.truncated);
    let slots: Vec<Slot> = chain.steps.iter().map(|s| s.slot).collect();
    assert_eq!(slots, [Slot::Back1, Slot::Fwd1, Slot::Fwd2]);

    let table = TemplateTable::default();
    let verbalizer = Verbalizer::new(&w.graph, &table);
    let texts: Vec<String> = chain_to_sentences(&chain, &DirectionMode::Regular, &verbalizer)
        .unwrap()
        .into_iter()
        .map(|s| s.text)
        .collect();
    assert!(
        texts[0] == "bar has alcohol" || texts[0] == "bottle has alcohol",
        "{texts:?}"
    );
    assert_eq!(&texts[1..], ["alcohol causes sleep", "sleep causes dream"]);

    let reversed = DirectionMode::Irregular(vec![2, 1, 0]);
    let texts_rev: Vec<String> = chain_to_sentences(&chain, &reversed, &verbalizer)
        .unwrap()
        .into_iter()
        .map(|s| s.text)
        .collect();
    assert_eq!(texts_rev, texts.iter().rev().cloned().collect::<Vec<_>>());

    // Same seed and item: same chain.
    let (again, seed_again) = walker.walk(Some(&w.liquor), Some(&w.question), &config, "q02").unwrap();
    assert_eq!(again, chain);
    assert_eq!(seed, seed_again);
}

#[test]
fn dead_end_truncates() {
    let w = world();
    let walker = Walker::new(&w.graph, Some(&w.nodes), Some(&w.sentences));
    // Nothing leads into "party", so 5->4 can never be filled behind it.
    let shape: ChainShape = "5->4,4->1,1->2".parse().unwrap();
    let config = WalkConfig {
        shape,
        relevance: RelevanceMode::IrrelevantAnchor,
        direction: DirectionMode::Regular,
        seed: 3,
    };
    for item in ["a", "b", "c", "d"] {
        let (chain, _) = walker.walk(None, None, &config, item).unwrap();
        assert!(chain.steps.len() <= 3);
        if chain.truncated {
            assert!(chain.steps.len() < 3);
        }
    }
}
