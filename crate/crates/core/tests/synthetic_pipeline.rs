use esgx_core::agent::{ExtractConfig, MockProvider, Providers};
use esgx_core::docmodel::parse_markdown;
use esgx_core::eval::{run_ablation, AblationArm, InMemoryKbs};
use esgx_core::eval::{EvalOptions, UnitAliases};
use esgx_core::kb::{HashedBagEmbedder, KbConfig, KnowledgeBase, LeadSentences, DEFAULT_NAIVE_WINDOW};
use esgx_core::metadata::MetadataRegistry;
use esgx_core::retrieval::{build_query, search, JaccardReranker};
use esgx_core::synthetic::{generate, DEFAULT_DOCS, DEFAULT_SEED};

#[test]
fn ablation_separates_arms_on_synthetic_corpus() {
    let registry = MetadataRegistry::bundled_hkex();
    let synth = generate(&registry, DEFAULT_SEED, DEFAULT_DOCS, DEFAULT_NAIVE_WINDOW);
    let docs: Vec<_> = synth
        .documents
        .iter()
        .map(|d| parse_markdown(&d.markdown, &d.doc_id).unwrap())
        .collect();
    let embedder = HashedBagEmbedder::new(256);
    let summarizer = LeadSentences::default();
    let reranker = JaccardReranker;
    let chat = MockProvider::new(synth.mock.clone()).unwrap();
    let providers = Providers {
        embedder: &embedder,
        reranker: Some(&reranker),
        chat: &chat,
    };
    let kbs = InMemoryKbs::new(&embedder, &summarizer);
    let extract = ExtractConfig {
        retry_base_delay_ms: 0,
        ..ExtractConfig::default()
    };
    let configs: Vec<_> = AblationArm::ALL.iter().map(|a| a.config()).collect();
    let out = run_ablation(
        &docs,
        &registry,
        &synth.labels,
        &configs,
        providers,
        &kbs,
        &KbConfig::default(),
        DEFAULT_NAIVE_WINDOW,
        &extract,
        &UnitAliases::bundled(),
        &EvalOptions::default(),
    )
    .unwrap();

    for r in &out.reports {
        eprintln!("{} dc={} de={:?}", r.config_id, r.acc_dc, r.acc_de);
        for d in &r.documents {
            for m in d.value_matches.iter().filter(|m| !m.matched) {
                eprintln!("  {} value miss {:?}", d.doc_id, m);
            }
            for m in d.disclosure_matches.iter().filter(|m| m.predicted != m.label) {
                eprintln!("  {} disclosure miss {:?}", d.doc_id, m);
            }
        }
    }
    let [bench, rag, know] = &out.reports[..] else { panic!() };
    assert!(bench.failures.is_empty() && rag.failures.is_empty() && know.failures.is_empty());
    assert_eq!(know.acc_dc, 1.0);
    assert_eq!(know.acc_de, Some(1.0));
    assert_eq!(rag.acc_dc, 1.0);
    assert!(rag.acc_de.unwrap() < 1.0);
    assert!(bench.acc_de.unwrap() < know.acc_de.unwrap());
}

#[test]
fn planted_evidence_is_in_top_three_of_its_source() {
    let registry = MetadataRegistry::bundled_hkex();
    let synth = generate(&registry, DEFAULT_SEED, DEFAULT_DOCS, DEFAULT_NAIVE_WINDOW);
    let embedder = HashedBagEmbedder::new(256);
    let summarizer = LeadSentences::default();
    let (mut total, mut found) = (0, 0);
    for d in &synth.documents {
        let doc = parse_markdown(&d.markdown, &d.doc_id).unwrap();
        let kb = KnowledgeBase::build(&doc, &embedder, &summarizer, &KbConfig::default()).unwrap();
        for m in synth.mock.replies.iter().filter(|m| m.doc_id == d.doc_id) {
            let spec = registry.indicator(&m.indicator_id).unwrap();
            let query = build_query(spec, &registry, &embedder).unwrap();
            let hits = search(&kb, &query, 3).unwrap();
            let planted: Vec<&str> = m
                .grounding
                .iter()
                .map(String::as_str)
                .filter(|g| !spec.knowledge.contains(g))
                .collect();
            total += 1;
            if hits
                .iter()
                .any(|h| planted.iter().all(|g| h.resolved_payload.contains(g)))
            {
                found += 1;
            } else {
                eprintln!("{} {} not in top 3", d.doc_id, m.indicator_id);
            }
        }
    }
    assert_eq!(found, total);
}
