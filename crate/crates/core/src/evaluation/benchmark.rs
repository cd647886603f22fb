use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::metrics::{compute_ad, compute_id, compute_irr, AccountingDeviation, FactScore, GroundTruthRecord};
use crate::accounting::{compute_footprint_with, FactorDb, FootprintResult, InventoryItem, LifecycleStage, Scope, UnitTable};
use crate::config::RunConfig;
use crate::corpus::{Catalog, IngestMetadata, SourceKind};
use crate::embedding::Encoder;
use crate::fusion::{PromptNote, Strategy, TEMPLATE_VERSION};
use crate::generation::{ExtractedFact, GenerationBackend, ParseWarning};
use crate::index::RetrievalHit;
use crate::pipeline::{PipelineError, QueryOutcome, RetrievalContext, Stage};

/// A datasource listed by a benchmark: a file (relative to the benchmark), inline text, or a URL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasourceRef {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkQuery {
    pub query_id: String,
    pub query_text: String,
    pub fact_keys: Vec<String>,
}

/// Links an extracted fact to an accounting activity. The fact's value is
/// taken per functional unit; a unit `X/<fu>` becomes an inventory quantity in `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InventoryMapping {
    pub fact_key: String,
    pub activity: String,
    #[serde(default = "default_stage")]
    pub lifecycle_stage: LifecycleStage,
}

fn default_stage() -> LifecycleStage {
    LifecycleStage::Manufacturing
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub industry: String,
    #[serde(default)]
    pub datasources: Vec<DatasourceRef>,
    pub queries: Vec<BenchmarkQuery>,
    pub truths: Vec<GroundTruthRecord>,
    #[serde(default)]
    pub inventory: Vec<InventoryMapping>,
    pub true_footprint: f64,
    pub factor_db: PathBuf,
    #[serde(default = "default_fu")]
    pub functional_unit: String,
    #[serde(default)]
    pub scope: Scope,
}

fn default_fu() -> String {
    "t".into()
}

impl Benchmark {
    /// Parses a benchmark file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut b: Benchmark = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if b.factor_db.is_relative() {
            b.factor_db = base.join(&b.factor_db);
        }
        for ds in &mut b.datasources {
            if let Some(p) = &mut ds.path {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<(), String> {
        let mut keys = BTreeSet::new();
        for t in &self.truths {
            if !keys.insert(t.fact_key.as_str()) {
                return Err(format!("duplicate truth key {}", t.fact_key));
            }
        }
        if keys.is_empty() {
            return Err("benchmark has no truths".into());
        }
        for m in &self.inventory {
            if !keys.contains(m.fact_key.as_str()) {
                return Err(format!("inventory fact {} has no truth record", m.fact_key));
            }
        }
        for (i, ds) in self.datasources.iter().enumerate() {
            let n = [ds.path.is_some(), ds.text.is_some(), ds.url.is_some()].iter().filter(|b| **b).count();
            if n != 1 {
                return Err(format!("datasource #{i} must set exactly one of path, text, url"));
            }
        }
        if self.true_footprint == 0.0 || !self.true_footprint.is_finite() {
            return Err("true_footprint must be finite and non-zero".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub query_id: String,
    pub hits: Vec<RetrievalHit>,
    pub prompt_notes: Vec<PromptNote>,
    pub parsed_keys: Vec<String>,
    pub warnings: Vec<ParseWarning>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub encoder: String,
    pub template_version: String,
    pub k: usize,
    pub backend_kind: String,
    pub strategy: Strategy,
    pub factor_db_version: String,
    pub chunk_count: usize,
    pub config: RunConfig,
    /// The only field that differs between otherwise identical runs.
    pub generated_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub industry: String,
    pub irr_pct: f64,
    pub id_pct: Option<f64>,
    pub ad: AccountingDeviation,
    pub true_footprint: f64,
    pub footprint: FootprintResult,
    pub per_fact: Vec<FactScore>,
    /// Inventory facts not retrieved, hence left out of the footprint.
    pub missing_inventory: Vec<String>,
    pub warnings: Vec<String>,
    pub queries: Vec<QueryTrace>,
    pub run: RunMetadata,
}

/// Benchmark failure: the failing stage plus the run log up to that point.
#[derive(Debug, thiserror::Error)]
#[error("[{stage}] {message}")]
pub struct BenchmarkError {
    pub stage: Stage,
    pub message: String,
    pub log: Vec<String>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `metric,value` rows at full precision.
    pub fn to_summary_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let rows = [
            ("industry", self.industry.clone()),
            ("irr_pct", self.irr_pct.to_string()),
            ("id_pct", opt(self.id_pct)),
            ("ad_at_lower_pct", self.ad.at_lower_pct.to_string()),
            ("ad_at_upper_pct", self.ad.at_upper_pct.to_string()),
            ("ad_pct", self.ad.ad_pct.to_string()),
            ("footprint_lower_kgco2e", self.footprint.total.lower().to_string()),
            ("footprint_upper_kgco2e", self.footprint.total.upper().to_string()),
            ("true_footprint_kgco2e", self.true_footprint.to_string()),
            ("template_version", self.run.template_version.clone()),
            ("encoder", self.run.encoder.clone()),
            ("k", self.run.k.to_string()),
            ("backend", self.run.backend_kind.clone()),
        ];
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["metric", "value"]).expect("in-memory csv");
        for (k, v) in rows {
            w.write_record([k, v.as_str()]).expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    /// One row per truth record, for external plotting.
    pub fn to_per_fact_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fact_key", "retrieved", "value_lower", "value_upper", "unit", "true_value", "true_unit", "deviation_pct"])
            .expect("in-memory csv");
        for f in &self.per_fact {
            let (lo, hi) = f.value.map_or((String::new(), String::new()), |v| (v.lower().to_string(), v.upper().to_string()));
            w.write_record([
                f.fact_key.as_str(),
                if f.retrieved { "true" } else { "false" },
                &lo,
                &hi,
                f.unit.as_deref().unwrap_or(""),
                &f.true_value.to_string(),
                &f.true_unit,
                &f.deviation_pct.map_or_else(String::new, |d| d.to_string()),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
    }

    /// Human-readable summary, percentages at two decimals.
    pub fn summary(&self) -> String {
        let id = self.id_pct.map_or_else(|| "n/a".to_string(), |v| format!("{v:.2}%"));
        let mut s = format!(
            "industry: {}\nIRR: {:.2}%\nID: {id}\nAD: {:.2}% (lower {:+.2}%, upper {:+.2}%)\nfootprint: {:.2} kgCO2e/{} (true {})\n",
            self.industry, self.irr_pct, self.ad.ad_pct, self.ad.at_lower_pct, self.ad.at_upper_pct,
            self.footprint.total, self.footprint.functional_unit, self.true_footprint,
        );
        for f in &self.per_fact {
            let dev = f.deviation_pct.map_or_else(|| "-".to_string(), |d| format!("{d:.2}%"));
            s.push_str(&format!("  {:<50} {:<9} {dev}\n", f.fact_key, if f.retrieved { "retrieved" } else { "missing" }));
        }
        s
    }

    /// Writes `<stem>.json`, `<stem>.csv` (summary) and `<stem>.facts.csv`.
    pub fn write(&self, json_path: &Path) -> std::io::Result<()> {
        fs::write(json_path, self.to_json())?;
        fs::write(json_path.with_extension("csv"), self.to_summary_csv())?;
        fs::write(json_path.with_extension("facts.csv"), self.to_per_fact_csv())?;
        Ok(())
    }
}

struct Run {
    log: Vec<String>,
}

impl Run {
    fn fail(&self, stage: Stage, message: impl ToString) -> BenchmarkError {
        BenchmarkError { stage, message: message.to_string(), log: self.log.clone() }
    }

    fn pipeline_failure(&self, e: PipelineError) -> BenchmarkError {
        self.fail(e.stage, e.source)
    }
}

/// Runs a benchmark with the backend described by `config`.
pub fn run_benchmark(config: &RunConfig, benchmark_path: &Path) -> Result<MetricsReport, BenchmarkError> {
    let run = Run { log: Vec::new() };
    config.validate().map_err(|e| run.fail(Stage::Config, e))?;
    let backend = config
        .backend
        .build(config.audit_log.as_deref())
        .map_err(|e| run.fail(Stage::Config, e))?;
    run_benchmark_with(config, benchmark_path, &backend)
}

/// Runs a benchmark against an already constructed backend.
///
/// Stages: ingest → segment → embed → index → strategy → retrieve → prompt →
/// generate → parse → account → score. Queries run concurrently, at most
/// `backend.max_in_flight()` at a time; results are assembled in query order.
pub fn run_benchmark_with(
    config: &RunConfig,
    benchmark_path: &Path,
    backend: &GenerationBackend,
) -> Result<MetricsReport, BenchmarkError> {
    let mut run = Run { log: Vec::new() };
    config.validate().map_err(|e| run.fail(Stage::Config, e))?;
    let bench = Benchmark::load(benchmark_path).map_err(|e| run.fail(Stage::Config, e))?;
    let factors = FactorDb::load(&config.factor_db.clone().unwrap_or_else(|| bench.factor_db.clone()))
        .map_err(|e| run.fail(Stage::Config, e))?;
    let missing: Vec<&str> = bench
        .inventory
        .iter()
        .filter(|m| factors.get(&m.activity).is_none())
        .map(|m| m.activity.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(run.fail(Stage::Config, format!("factor database lacks: {}", missing.join(", "))));
    }
    let encoder = Encoder::from_spec(&config.encoder).map_err(|e| run.fail(Stage::Config, e))?;
    run.log.push(format!("config: benchmark {} ({} queries, {} truths)", bench.industry, bench.queries.len(), bench.truths.len()));

    // ingest
    let mut catalog = Catalog::new();
    let now = Utc::now();
    for ds in &bench.datasources {
        let meta = IngestMetadata { title: ds.title.clone(), industry_tag: Some(bench.industry.clone()) };
        let result = if let Some(p) = &ds.path {
            fs::read(p)
                .map_err(|e| format!("{}: {e}", p.display()))
                .and_then(|b| String::from_utf8(b).map_err(|e| format!("{}: {e}", p.display())))
                .map(|text| {
                    catalog.push_text(SourceKind::LocalFile, &text, meta, now);
                })
        } else if let Some(text) = &ds.text {
            catalog.push_text(SourceKind::RawText, text, meta, now);
            Ok(())
        } else {
            let url = ds.url.as_deref().unwrap_or_default();
            catalog.ingest(SourceKind::UrlFetch, url.as_bytes(), meta).map(|_| ()).map_err(|e| e.to_string())
        };
        result.map_err(|e| run.fail(Stage::Ingest, e))?;
    }
    run.log.push(format!("ingest: {} documents", catalog.len()));

    let ctx = RetrievalContext::prepare(
        catalog.documents(),
        config.chunk_config(),
        config.length_threshold,
        encoder,
        config.k,
        config.prompt_budget,
    )
    .map_err(|e| run.pipeline_failure(e))?;
    run.log.push(format!("strategy: {:?}, {} chunks indexed", ctx.strategy, ctx.index().len()));

    // generate, bounded concurrency, results in query order
    let limit = backend.max_in_flight().max(1);
    let mut outcomes: Vec<Result<QueryOutcome, PipelineError>> = Vec::with_capacity(bench.queries.len());
    for batch in bench.queries.chunks(limit) {
        let batch_results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = batch
                .iter()
                .map(|q| {
                    let ctx = &ctx;
                    s.spawn(move || ctx.answer(&q.query_text, Some(&q.query_id), &q.fact_keys, backend))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("query worker panicked")).collect()
        });
        outcomes.extend(batch_results);
    }

    let mut traces = Vec::new();
    let mut facts: Vec<ExtractedFact> = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = BTreeSet::new();
    for (q, outcome) in bench.queries.iter().zip(outcomes) {
        let outcome = outcome.map_err(|e| {
            let mut err = run.pipeline_failure(e);
            err.message = format!("query {}: {}", q.query_id, err.message);
            err
        })?;
        run.log.push(format!(
            "query {}: {} hits, {} facts parsed",
            q.query_id,
            outcome.hits.len(),
            outcome.extraction.facts.len()
        ));
        for f in &outcome.extraction.facts {
            if seen.insert(f.fact_key.clone()) {
                facts.push(f.clone());
            } else {
                warnings.push(format!("query {}: {} already answered by an earlier query, ignored", q.query_id, f.fact_key));
            }
        }
        traces.push(QueryTrace {
            query_id: q.query_id.clone(),
            hits: outcome.hits,
            prompt_notes: outcome.prompt.notes,
            parsed_keys: outcome.extraction.facts.iter().map(|f| f.fact_key.clone()).collect(),
            warnings: outcome.extraction.warnings,
        });
    }

    // account
    let units = UnitTable::default();
    let by_key: BTreeMap<&str, &ExtractedFact> = facts.iter().map(|f| (f.fact_key.as_str(), f)).collect();
    let mut items = Vec::new();
    let mut missing_inventory = Vec::new();
    for m in &bench.inventory {
        let Some(fact) = by_key.get(m.fact_key.as_str()) else {
            missing_inventory.push(m.fact_key.clone());
            warnings.push(format!("inventory fact {} not retrieved; {} left out of the footprint", m.fact_key, m.activity));
            continue;
        };
        let (quantity, unit) = per_functional_unit(fact, &bench.functional_unit, &units)
            .map_err(|e| run.fail(Stage::Account, e))?;
        items.push(InventoryItem {
            activity: m.activity.clone(),
            quantity,
            unit,
            lifecycle_stage: m.lifecycle_stage,
        });
    }
    let footprint = compute_footprint_with(&items, &factors, bench.scope, &bench.functional_unit, &units)
        .map_err(|e| run.fail(Stage::Account, e))?;
    run.log.push(format!("account: {} items, total {}", items.len(), footprint.total));

    // score
    let retrieved: BTreeSet<String> = facts.iter().map(|f| f.fact_key.clone()).collect();
    let truth_keys: BTreeSet<String> = bench.truths.iter().map(|t| t.fact_key.clone()).collect();
    let irr_pct = compute_irr(&retrieved, &truth_keys).map_err(|e| run.fail(Stage::Score, e))?;
    let id = compute_id(&facts, &bench.truths, &units).map_err(|e| run.fail(Stage::Score, e))?;
    let ad = compute_ad(&footprint.total, bench.true_footprint).map_err(|e| run.fail(Stage::Score, e))?;
    warnings.extend(id.warnings);

    Ok(MetricsReport {
        industry: bench.industry.clone(),
        irr_pct,
        id_pct: id.id_pct,
        ad,
        true_footprint: bench.true_footprint,
        footprint,
        per_fact: id.per_fact,
        missing_inventory,
        warnings,
        queries: traces,
        run: RunMetadata {
            encoder: ctx.encoder.to_string(),
            template_version: TEMPLATE_VERSION.to_string(),
            k: config.k,
            backend_kind: backend.kind().to_string(),
            strategy: ctx.strategy,
            factor_db_version: factors.version.clone(),
            chunk_count: ctx.index().len(),
            config: config.clone(),
            generated_at: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        },
    })
}

/// Converts a per-functional-unit fact (`X/<fu'>`) into a quantity of `X` per `<fu>`.
fn per_functional_unit(
    fact: &ExtractedFact,
    functional_unit: &str,
    units: &UnitTable,
) -> Result<(crate::Estimate, String), String> {
    match fact.unit.split_once('/') {
        Some((num, _)) => {
            let target = format!("{}/{functional_unit}", num.trim());
            let value = units
                .convert_estimate(fact.value, &fact.unit, &target)
                .map_err(|e| format!("{}: {e}", fact.fact_key))?;
            Ok((value, num.trim().to_string()))
        }
        None => Ok((fact.value, fact.unit.clone())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Estimate;

    #[test]
    fn per_fu_conversion() {
        let units = UnitTable::default();
        let fact = ExtractedFact {
            fact_key: "k".into(),
            value: Estimate::Point(13.5),
            unit: "kWh/kg".into(),
            sources: vec![],
            provenance: vec![],
            raw_span: String::new(),
        };
        let (q, u) = per_functional_unit(&fact, "t", &units).unwrap();
        assert_eq!(q, Estimate::Point(13500.0));
        assert_eq!(u, "kWh");
    }
}
