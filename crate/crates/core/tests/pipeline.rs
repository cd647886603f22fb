//! Benchmark runs over small hand-built benchmarks: each strategy branch,
//! per-functional-unit conversion, and stage-tagged failures.

use std::fs;
use std::path::{Path, PathBuf};

use cfa_rag::config::{BackendSpec, RunConfig};
use cfa_rag::corpus::{Catalog, ChunkConfig, IngestMetadata};
use cfa_rag::embedding::Encoder;
use cfa_rag::evaluation::run_benchmark;
use cfa_rag::fusion::Strategy;
use cfa_rag::generation::{GenerationBackend, ScriptedMock};
use cfa_rag::pipeline::{RetrievalContext, Stage};
use serde_json::{json, Value};
use tempfile::TempDir;

const FACTORS: &str = "activity,factor_kgco2e,canonical_unit,source_note\n\
electricity,0.5,kWh,grid\n\
steel,2.0,kg,virgin\n";

fn answer(facts: Value) -> String {
    format!("Extracted:\n```json\n{}\n```", json!({ "facts": facts }))
}

/// Writes a benchmark, factor file and mock script; returns the dir and a config.
fn setup(datasources: Value, script: Value) -> (TempDir, RunConfig, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let bench = json!({
        "industry": "widgets",
        "datasources": datasources,
        "queries": [
            {"query_id": "q1", "query_text": "How much electricity and steel per widget?",
             "fact_keys": ["widget.energy.electricity", "widget.materials.steel"]}
        ],
        "truths": [
            {"fact_key": "widget.energy.electricity", "true_value": 10.0, "unit": "kWh/piece", "industry": "widgets"},
            {"fact_key": "widget.materials.steel", "true_value": 2.0, "unit": "kg/piece", "industry": "widgets"}
        ],
        "inventory": [
            {"fact_key": "widget.energy.electricity", "activity": "electricity"},
            {"fact_key": "widget.materials.steel", "activity": "steel", "lifecycle_stage": "raw_material"}
        ],
        "true_footprint": 9.0,
        "factor_db": "factors.csv",
        "functional_unit": "piece"
    });
    fs::write(dir.path().join("benchmark.json"), bench.to_string()).unwrap();
    fs::write(dir.path().join("factors.csv"), FACTORS).unwrap();
    fs::write(dir.path().join("mock.json"), script.to_string()).unwrap();
    let cfg = RunConfig {
        backend: BackendSpec::ScriptedMock { script: Some(dir.path().join("mock.json")), fallback: None },
        ..Default::default()
    };
    let bench_path = dir.path().join("benchmark.json");
    (dir, cfg, bench_path)
}

fn exact_facts() -> Value {
    json!([
        {"key": "widget.energy.electricity", "value": 10.0, "unit": "kWh/piece", "sources": [1]},
        {"key": "widget.materials.steel", "value": 2.0, "unit": "kg/piece", "sources": [1]}
    ])
}

#[test]
fn short_datasource_goes_straight_into_the_prompt() {
    let (_dir, cfg, bench) = setup(
        json!([{"text": "Each widget uses 10 kWh of electricity and 2 kg of steel."}]),
        json!({"q1": answer(exact_facts())}),
    );
    let report = run_benchmark(&cfg, &bench).unwrap();
    assert_eq!(report.run.strategy, Strategy::ShortDirect);
    assert_eq!(report.run.chunk_count, 0);
    assert!(report.queries[0].hits.is_empty());
    assert_eq!(report.irr_pct, 100.0);
    assert_eq!(report.id_pct, Some(0.0));
    // 10 kWh × 0.5 + 2 kg × 2.0
    assert!((report.footprint.total.lower() - 9.0).abs() < 1e-12);
    assert_eq!(report.ad.ad_pct, 0.0);
}

#[test]
fn no_datasource_still_answers() {
    let (_dir, cfg, bench) = setup(json!([]), json!({"q1": answer(exact_facts())}));
    let report = run_benchmark(&cfg, &bench).unwrap();
    assert_eq!(report.run.strategy, Strategy::NoDatasource);
    assert_eq!(report.irr_pct, 100.0);
}

#[test]
fn facts_in_other_units_are_rescaled_to_the_functional_unit() {
    // 0.01 MWh and 2000 g per piece are the same quantities as the truths
    let facts = json!([
        {"key": "widget.energy.electricity", "value": 0.01, "unit": "MWh/piece"},
        {"key": "widget.materials.steel", "value": {"lower": 1800, "upper": 2200}, "unit": "g/piece"}
    ]);
    let (_dir, cfg, bench) = setup(json!([]), json!({"q1": answer(facts)}));
    let report = run_benchmark(&cfg, &bench).unwrap();
    let elec = report.per_fact.iter().find(|f| f.fact_key == "widget.energy.electricity").unwrap();
    assert!(elec.deviation_pct.unwrap().abs() < 1e-9);
    let steel = report.per_fact.iter().find(|f| f.fact_key == "widget.materials.steel").unwrap();
    assert!((steel.deviation_pct.unwrap() - 10.0).abs() < 1e-9);
    // electricity 0.01 MWh = 10 kWh; steel 1.8–2.2 kg
    assert!((report.footprint.total.lower() - (5.0 + 3.6)).abs() < 1e-9);
    assert!((report.footprint.total.upper() - (5.0 + 4.4)).abs() < 1e-9);
    assert!((report.ad.at_lower_pct + 100.0 * 0.4 / 9.0).abs() < 1e-9);
}

#[test]
fn unretrieved_inventory_fact_is_reported_not_invented() {
    let facts = json!([{"key": "widget.energy.electricity", "value": 10.0, "unit": "kWh/piece"}]);
    let (_dir, cfg, bench) = setup(json!([]), json!({"q1": answer(facts)}));
    let report = run_benchmark(&cfg, &bench).unwrap();
    assert_eq!(report.irr_pct, 50.0);
    assert_eq!(report.missing_inventory, ["widget.materials.steel"]);
    assert!((report.footprint.total.lower() - 5.0).abs() < 1e-12);
}

#[test]
fn unscripted_query_fails_at_generate() {
    let (_dir, cfg, bench) = setup(json!([]), json!({"other": "x"}));
    let err = run_benchmark(&cfg, &bench).unwrap_err();
    assert_eq!(err.stage, Stage::Generate);
    assert!(err.message.contains("q1"), "{}", err.message);
    assert!(err.to_string().starts_with("[generate]"));
    assert!(!err.log.is_empty());
}

#[test]
fn answer_without_facts_block_fails_at_parse() {
    let (_dir, cfg, bench) = setup(json!([]), json!({"q1": "I could not find anything."}));
    let err = run_benchmark(&cfg, &bench).unwrap_err();
    assert_eq!(err.stage, Stage::Parse);
}

#[test]
fn missing_factor_is_rejected_before_any_generation() {
    let (dir, cfg, bench) = setup(json!([]), json!({"q1": answer(exact_facts())}));
    fs::write(dir.path().join("factors.csv"), "activity,factor_kgco2e,canonical_unit,source_note\nsteel,2.0,kg,\n").unwrap();
    let err = run_benchmark(&cfg, &bench).unwrap_err();
    assert_eq!(err.stage, Stage::Config);
    assert!(err.message.contains("electricity"));
}

#[test]
fn unreadable_datasource_fails_at_ingest() {
    let (_dir, cfg, bench) = setup(json!([{"path": "nope.txt"}]), json!({"q1": answer(exact_facts())}));
    let err = run_benchmark(&cfg, &bench).unwrap_err();
    assert_eq!(err.stage, Stage::Ingest);
}

#[test]
fn mismatched_template_pin_fails_at_config() {
    let (_dir, mut cfg, bench) = setup(json!([]), json!({"q1": answer(exact_facts())}));
    cfg.template_version = "cfa-prompt/v0".into();
    assert_eq!(run_benchmark(&cfg, &bench).unwrap_err().stage, Stage::Config);
}

fn fixture_docs() -> Vec<cfa_rag::corpus::Document> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/aluminum/docs");
    let mut catalog = Catalog::new();
    let mut names: Vec<_> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    for p in names {
        catalog.ingest_file(&p, IngestMetadata { title: None, industry_tag: None }).unwrap();
    }
    catalog.documents().to_vec()
}

#[test]
fn fixture_is_long_and_retrieval_finds_the_relevant_passage() {
    let docs = fixture_docs();
    let ctx = RetrievalContext::prepare(
        &docs,
        ChunkConfig { chunk_size: 300, overlap: 60 },
        4000,
        // 64 hash buckets collide too often for a relevance check
        Encoder::lexical(1024).unwrap(),
        3,
        12_000,
    )
    .unwrap();
    assert_eq!(ctx.strategy, Strategy::RagLong);
    assert!(ctx.index().len() >= 30, "{} chunks", ctx.index().len());

    let hits = ctx.retrieve("anode effect frequency per cell-day").unwrap();
    assert_eq!(hits.len(), 3);
    assert!(hits.windows(2).all(|w| w[0].similarity >= w[1].similarity));
    let texts: Vec<&str> = hits.iter().map(|h| ctx.chunk(&h.chunk_id).unwrap().text.as_str()).collect();
    assert!(texts.iter().any(|t| t.contains("anode effect")), "{texts:?}");

    let backend = GenerationBackend::ScriptedMock(ScriptedMock::default().with_fallback("```json\n{\"facts\": []}\n```"));
    let outcome = ctx.answer("anode effect frequency per cell-day", None, &[], &backend).unwrap();
    assert_eq!(outcome.prompt.fragments.len(), 3);
    for (f, h) in outcome.prompt.fragments.iter().zip(&hits) {
        assert_eq!(f.source_id, h.chunk_id);
    }
}
