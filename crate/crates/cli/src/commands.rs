use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use esgx_core::agent::{
    extract_document, read_records, records_to_jsonl, sort_records, ExtractConfig, ExtractionRecord, Flag, Providers,
};
use esgx_core::analytics::{
    company_rates, disclosure_csv, disclosure_stats, emission_intensity, frequency_csv, intensity_by_industry,
    intensity_csv, key_action_frequencies, DocInfo, Grouping, ThemeMap,
};
use esgx_core::eval::{
    comparison_table, evaluate_corpus, load_labels, report_table, run_ablation, AblationArm, AblationConfig, KbSource,
    LabelSet, UnitAliases,
};
use esgx_core::fsutil::write_atomic;
use esgx_core::metadata::MetadataRegistry;
use rayon::prelude::*;
use serde::Serialize;

use crate::backends::Backends;
use crate::config::{synthetic_config, Mode, RunConfig, BUNDLED_REGISTRY};
use crate::corpus::{self, Corpus, DiskKbs};
use crate::manifest::RunManifest;
use crate::GlobalArgs;

pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_PROVIDER: u8 = 3;
pub const EXIT_OUTPUT: u8 = 4;

/// An error carrying its process exit code.
#[derive(Debug)]
pub struct Coded {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Coded {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Coded {}

fn coded(code: u8, message: impl Into<String>) -> anyhow::Error {
    Coded {
        code,
        message: message.into(),
    }
    .into()
}

pub fn config_error(message: impl Into<String>) -> anyhow::Error {
    coded(EXIT_CONFIG, message)
}

pub fn input_error(message: impl Into<String>) -> anyhow::Error {
    coded(EXIT_INPUT, message)
}

pub fn provider_error(message: impl Into<String>) -> anyhow::Error {
    coded(EXIT_PROVIDER, message)
}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    e.chain()
        .find_map(|c| c.downcast_ref::<Coded>())
        .map_or(EXIT_OUTPUT, |c| c.code)
}

struct Run {
    cfg: RunConfig,
    registry: MetadataRegistry,
    dry_run: bool,
}

impl Run {
    fn new(g: &GlobalArgs) -> Result<Run> {
        let mut cfg = RunConfig::load(&g.config).map_err(config_error)?;
        if let Some(o) = &g.output {
            cfg.output = o.clone();
        }
        let registry = load_registry(&cfg.registry).map_err(config_error)?;
        Ok(Run {
            cfg,
            registry,
            dry_run: g.dry_run,
        })
    }

    fn out_dir(&self, command: &str) -> PathBuf {
        self.cfg.output.join(command)
    }

    fn manifest(&self, command: &str) -> Result<RunManifest> {
        let mut m = RunManifest::start(command, serde_json::to_value(&self.cfg)?);
        if self.cfg.registry != BUNDLED_REGISTRY {
            m.input(Path::new(&self.cfg.registry))?;
        }
        Ok(m)
    }

    fn arm(&self, flag: Option<&str>) -> Result<AblationConfig> {
        let id = flag.unwrap_or(&self.cfg.arm);
        AblationArm::from_id(id)
            .map(AblationArm::config)
            .ok_or_else(|| config_error(format!("unknown arm `{id}`")))
    }

    /// Load the corpus, turning ingest failures into manifest warnings.
    fn corpus(&self, manifest: &mut RunManifest) -> Result<Corpus> {
        let c = corpus::load(&self.cfg.corpus)
            .with_context(|| format!("reading corpus {}", self.cfg.corpus.display()))
            .map_err(|e| input_error(format!("{e:#}")))?;
        for (path, err) in &c.failures {
            manifest.warn(format!("skipped {}: {err}", path.display()));
        }
        if c.docs.is_empty() {
            return Err(input_error(format!(
                "no readable reports in {}",
                self.cfg.corpus.display()
            )));
        }
        for d in &c.docs {
            manifest.input(&d.path)?;
        }
        Ok(c)
    }

    fn extract_config(&self, use_knowledge: bool) -> ExtractConfig {
        ExtractConfig {
            retrieval: self.cfg.retrieval,
            use_knowledge,
            retries: self.cfg.extraction.retries,
            retry_base_delay_ms: self.cfg.extraction.retry_base_delay_ms,
            params: self.cfg.extraction.params,
        }
    }

    fn labels(&self, flag: Option<&Path>, manifest: &mut RunManifest) -> Result<Vec<LabelSet>> {
        let path = flag
            .map(Path::to_path_buf)
            .or_else(|| self.cfg.labels.clone())
            .ok_or_else(|| input_error("no labels file given (config `labels` or --labels)"))?;
        let labels = load_labels(&path).map_err(|e| input_error(format!("labels {}: {e}", path.display())))?;
        if labels.is_empty() {
            return Err(input_error(format!("labels {} cover zero documents", path.display())));
        }
        for l in &labels {
            l.validate(&self.registry)
                .map_err(|e| input_error(format!("labels {}: {e}", path.display())))?;
        }
        manifest.input(&path)?;
        Ok(labels)
    }

    fn aliases(&self, manifest: &mut RunManifest) -> Result<UnitAliases> {
        match &self.cfg.evaluation.unit_aliases {
            None => Ok(UnitAliases::bundled()),
            Some(p) => {
                manifest.input(p)?;
                UnitAliases::load(p).map_err(config_error)
            }
        }
    }

    fn records(&self, flag: Option<&Path>, manifest: &mut RunManifest) -> Result<Vec<ExtractionRecord>> {
        let path = flag
            .map(Path::to_path_buf)
            .unwrap_or_else(|| self.out_dir("extract").join(RECORDS_FILE));
        let records = read_records(&path).map_err(|e| input_error(format!("records {}: {e}", path.display())))?;
        manifest.input(&path)?;
        Ok(records)
    }

    fn plan(&self, command: &str, lines: &[String]) {
        println!("plan: {command}");
        println!("  config: {}", serde_json::to_string(&self.cfg).unwrap_or_default());
        for l in lines {
            println!("  {l}");
        }
    }
}

pub fn load_registry(spec: &str) -> Result<MetadataRegistry, String> {
    if spec == BUNDLED_REGISTRY {
        return Ok(MetadataRegistry::bundled_hkex());
    }
    let path = Path::new(spec);
    if !path.is_file() {
        return Err(format!("registry file not found: {spec}"));
    }
    MetadataRegistry::load(path).map_err(|e| format!("registry {spec}: {e}"))
}

const RECORDS_FILE: &str = "records.jsonl";

fn write(path: &Path, content: &str, outputs: &mut Vec<PathBuf>) -> Result<()> {
    write_atomic(path, content.as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    outputs.push(path.to_path_buf());
    Ok(())
}

fn pretty<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn report_files(dir: &Path) -> Vec<String> {
    corpus::list_reports(dir)
        .map(|fs| fs.iter().map(|p| format!("report: {}", p.display())).collect())
        .unwrap_or_else(|e| vec![format!("corpus unreadable: {e}")])
}

pub fn ingest(g: &GlobalArgs) -> Result<()> {
    let run = Run::new(g)?;
    let dir = run.out_dir("ingest");
    if run.dry_run {
        let mut lines = report_files(&run.cfg.corpus);
        lines.push(format!("write: {}/<doc_id>.json, manifest.json", dir.display()));
        run.plan("ingest", &lines);
        return Ok(());
    }
    let mut manifest = run.manifest("ingest")?;
    let corpus = run.corpus(&mut manifest)?;
    let mut outputs = Vec::new();
    for d in &corpus.docs {
        write(
            &dir.join(format!("{}.json", d.doc.doc_id)),
            &pretty(&d.doc)?,
            &mut outputs,
        )?;
    }
    manifest.finish(&dir, &outputs)?;
    println!(
        "ingested {} documents, {} skipped",
        corpus.docs.len(),
        corpus.failures.len()
    );
    Ok(())
}

pub fn build_kb(g: &GlobalArgs, arm: Option<&str>) -> Result<()> {
    let run = Run::new(g)?;
    let arm = run.arm(arm)?;
    let kb_cfg = arm.kb_config(&run.cfg.kb.structured(), run.cfg.kb.naive_window);
    let dir = run.out_dir("build-kb");
    if run.dry_run {
        let mut lines = report_files(&run.cfg.corpus);
        lines.push(format!("arm: {}", arm.config_id));
        lines.push(format!("kb config: {}", serde_json::to_string(&kb_cfg)?));
        lines.push(format!("cache: {}", run.cfg.cache_dir().display()));
        lines.push(format!("write: {}/<doc_id>.kb.json, manifest.json", dir.display()));
        run.plan("build-kb", &lines);
        return Ok(());
    }
    let mut manifest = run.manifest("build-kb")?;
    let corpus = run.corpus(&mut manifest)?;
    let b = Backends::from_config(&run.cfg, false)?;
    manifest.providers = b.names(false);
    let kbs = DiskKbs::new(run.cfg.cache_dir(), &corpus, b.embedder.as_ref(), &b.summarizer);
    let built: Vec<_> = corpus
        .docs
        .par_iter()
        .map(|d| (d.doc.doc_id.clone(), kbs.kb(&d.doc, &kb_cfg)))
        .collect();
    let mut outputs = Vec::new();
    for (doc_id, kb) in built {
        match kb {
            Ok(kb) => {
                let path = dir.join(format!("{doc_id}.kb.json"));
                kb.save(&path).with_context(|| format!("writing {}", path.display()))?;
                outputs.push(path);
            }
            Err(e) => manifest.warn(format!("{doc_id}: knowledge base not built: {e}")),
        }
    }
    let n = outputs.len();
    manifest.finish(&dir, &outputs)?;
    println!("built {n} knowledge bases");
    Ok(())
}

/// Records and traces of one arm over the corpus, in document order.
fn run_arm(
    run: &Run,
    corpus: &Corpus,
    b: &Backends,
    arm: &AblationConfig,
    manifest: &mut RunManifest,
) -> Result<(Vec<ExtractionRecord>, Vec<esgx_core::retrieval::RetrievalTrace>)> {
    let kb_cfg = arm.kb_config(&run.cfg.kb.structured(), run.cfg.kb.naive_window);
    let kbs = DiskKbs::new(run.cfg.cache_dir(), corpus, b.embedder.as_ref(), &b.summarizer);
    let chat = b.chat.as_ref().expect("chat provider built");
    let providers = Providers {
        embedder: b.embedder.as_ref(),
        reranker: arm.use_enhanced_retrieval.then_some(b.reranker.as_ref()),
        chat,
    };
    let cfg = run.extract_config(arm.use_knowledge);
    let results: Vec<_> = corpus
        .docs
        .par_iter()
        .map(|d| {
            let kb = kbs.kb(&d.doc, &kb_cfg).map_err(|e| e.to_string())?;
            let kb = if arm.use_enhanced_retrieval {
                kb
            } else {
                std::sync::Arc::new(kb.text_only())
            };
            extract_document(&d.doc.doc_id, &kb, &run.registry, providers, &cfg).map_err(|e| e.to_string())
        })
        .collect();
    let (mut records, mut traces) = (Vec::new(), Vec::new());
    for (d, r) in corpus.docs.iter().zip(results) {
        match r {
            Ok(out) => {
                records.extend(out.records);
                traces.extend(out.traces);
            }
            Err(e) => manifest.warn(format!("{}: extraction failed: {e}", d.doc.doc_id)),
        }
    }
    sort_records(&mut records);
    let failed = records.iter().filter(|r| r.has(Flag::ProviderFailed)).count();
    if failed > 0 {
        manifest.warn(format!("{failed} records flagged provider_failed"));
    }
    if run.cfg.providers.mode == Mode::Online && !records.is_empty() && failed == records.len() {
        return Err(provider_error("every provider call failed; chat provider unreachable"));
    }
    Ok((records, traces))
}

pub fn extract(g: &GlobalArgs, arm: Option<&str>) -> Result<()> {
    let run = Run::new(g)?;
    let arm = run.arm(arm)?;
    let dir = run.out_dir("extract");
    if run.dry_run {
        let mut lines = report_files(&run.cfg.corpus);
        lines.push(format!("arm: {}", serde_json::to_string(&arm)?));
        lines.push(format!("indicators: {}", run.registry.len()));
        lines.push(format!(
            "write: {}/records.jsonl, traces.jsonl, manifest.json",
            dir.display()
        ));
        run.plan("extract", &lines);
        return Ok(());
    }
    let mut manifest = run.manifest("extract")?;
    let corpus = run.corpus(&mut manifest)?;
    let b = Backends::from_config(&run.cfg, true)?;
    manifest.providers = b.names(arm.use_enhanced_retrieval);
    if let Some(p) = &run.cfg.providers.mock_replies {
        manifest.input(p)?;
    }
    let (records, traces) = run_arm(&run, &corpus, &b, &arm, &mut manifest)?;
    let mut outputs = Vec::new();
    write(&dir.join(RECORDS_FILE), &records_to_jsonl(&records), &mut outputs)?;
    let traces: String = traces
        .iter()
        .map(|t| serde_json::to_string(t).map(|s| s + "\n"))
        .collect::<Result<_, _>>()?;
    write(&dir.join("traces.jsonl"), &traces, &mut outputs)?;
    let warnings = manifest.warnings.len();
    manifest.finish(&dir, &outputs)?;
    println!(
        "extracted {} records from {} documents ({} warnings)",
        records.len(),
        corpus.docs.len(),
        warnings
    );
    Ok(())
}

fn provider_label(cfg: &RunConfig) -> String {
    match cfg.providers.mode {
        Mode::Online => cfg.providers.chat.as_ref().map_or("online".into(), |c| c.name.clone()),
        Mode::Offline => cfg
            .providers
            .mock_replies
            .as_ref()
            .and_then(|p| esgx_core::agent::MockProvider::load(p).ok())
            .map_or("offline".into(), |m| {
                esgx_core::agent::ChatProvider::name(&m).to_string()
            }),
    }
}

pub fn evaluate(g: &GlobalArgs, records: Option<&Path>, labels: Option<&Path>, arm: Option<&str>) -> Result<()> {
    let run = Run::new(g)?;
    let arm = run.arm(arm)?;
    let dir = run.out_dir("evaluate");
    if run.dry_run {
        run.plan(
            "evaluate",
            &[
                format!(
                    "records: {}",
                    records
                        .map_or_else(|| run.out_dir("extract").join(RECORDS_FILE), Path::to_path_buf)
                        .display()
                ),
                format!("labels: {:?}", labels.map(Path::to_path_buf).or(run.cfg.labels.clone())),
                format!("write: {}/report.json, report.txt, manifest.json", dir.display()),
            ],
        );
        return Ok(());
    }
    let mut manifest = run.manifest("evaluate")?;
    let labels = run.labels(labels, &mut manifest)?;
    let records = run.records(records, &mut manifest)?;
    let aliases = run.aliases(&mut manifest)?;
    let opts = run.cfg.evaluation.options().map_err(config_error)?;
    let report = evaluate_corpus(
        &labels,
        &records,
        &run.registry,
        &aliases,
        &opts,
        &arm.config_id,
        &provider_label(&run.cfg),
    )
    .map_err(|e| input_error(e.to_string()))?;
    let mut outputs = Vec::new();
    write(&dir.join("report.json"), &pretty(&report)?, &mut outputs)?;
    let table = report_table(&report);
    write(&dir.join("report.txt"), &table, &mut outputs)?;
    manifest.finish(&dir, &outputs)?;
    print!("{table}");
    Ok(())
}

pub fn ablate(g: &GlobalArgs, arms: &str, labels: Option<&Path>) -> Result<()> {
    let run = Run::new(g)?;
    let configs: Vec<AblationConfig> = if arms == "all" {
        AblationArm::ALL.iter().map(|a| a.config()).collect()
    } else {
        arms.split(',')
            .map(|a| run.arm(Some(a.trim())))
            .collect::<Result<_>>()?
    };
    let dir = run.out_dir("ablate");
    if run.dry_run {
        let mut lines = report_files(&run.cfg.corpus);
        for c in &configs {
            lines.push(format!("arm: {}", serde_json::to_string(c)?));
        }
        lines.push(format!(
            "write: {}/report.json, comparison.txt, records/<arm>.jsonl, manifest.json",
            dir.display()
        ));
        run.plan("ablate", &lines);
        return Ok(());
    }
    let mut manifest = run.manifest("ablate")?;
    let labels = run.labels(labels, &mut manifest)?;
    let corpus = run.corpus(&mut manifest)?;
    let aliases = run.aliases(&mut manifest)?;
    let opts = run.cfg.evaluation.options().map_err(config_error)?;
    let b = Backends::from_config(&run.cfg, true)?;
    manifest.providers = b.names(true);
    if let Some(p) = &run.cfg.providers.mock_replies {
        manifest.input(p)?;
    }
    let labeled: std::collections::BTreeSet<&str> = labels.iter().map(|l| l.doc_id.as_str()).collect();
    let docs: Vec<_> = corpus
        .docs
        .iter()
        .filter(|d| labeled.contains(d.doc.doc_id.as_str()))
        .map(|d| d.doc.clone())
        .collect();
    for d in &corpus.docs {
        if !labeled.contains(d.doc.doc_id.as_str()) {
            manifest.warn(format!("{}: no labels, left out of the ablation", d.doc.doc_id));
        }
    }
    let labels: Vec<LabelSet> = labels
        .into_iter()
        .filter(|l| docs.iter().any(|d| d.doc_id == l.doc_id))
        .collect();
    if docs.is_empty() {
        return Err(input_error("no corpus document has labels"));
    }
    let kbs = DiskKbs::new(run.cfg.cache_dir(), &corpus, b.embedder.as_ref(), &b.summarizer);
    let providers = Providers {
        embedder: b.embedder.as_ref(),
        reranker: Some(b.reranker.as_ref()),
        chat: b.chat.as_ref().expect("chat provider built"),
    };
    let outcome = run_ablation(
        &docs,
        &run.registry,
        &labels,
        &configs,
        providers,
        &kbs,
        &run.cfg.kb.structured(),
        run.cfg.kb.naive_window,
        &run.extract_config(true),
        &aliases,
        &opts,
    )
    .map_err(|e| input_error(e.to_string()))?;
    for r in &outcome.reports {
        for f in &r.failures {
            manifest.warn(format!("{} / {}: {}", r.config_id, f.doc_id, f.error));
        }
    }
    let mut outputs = Vec::new();
    for (arm, records) in &outcome.records {
        write(
            &dir.join("records").join(format!("{arm}.jsonl")),
            &records_to_jsonl(records),
            &mut outputs,
        )?;
    }
    write(&dir.join("report.json"), &pretty(&outcome.reports)?, &mut outputs)?;
    let table = comparison_table(&outcome.reports);
    write(&dir.join("comparison.txt"), &table, &mut outputs)?;
    manifest.finish(&dir, &outputs)?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct AnalyticsSummary {
    company_rates: Vec<esgx_core::analytics::CompanyRates>,
    disclosure_by_industry: Vec<esgx_core::analytics::DisclosureStats>,
    disclosure_overall: Vec<esgx_core::analytics::DisclosureStats>,
    intensity: esgx_core::analytics::IntensityReport,
    intensity_by_industry: Vec<esgx_core::analytics::IndustryIntensity>,
    key_actions: Vec<esgx_core::analytics::TermFrequencyTable>,
}

pub fn analyze(g: &GlobalArgs, records: Option<&Path>) -> Result<()> {
    let run = Run::new(g)?;
    let dir = run.out_dir("analyze");
    if run.dry_run {
        run.plan(
            "analyze",
            &[
                format!(
                    "records: {}",
                    records
                        .map_or_else(|| run.out_dir("extract").join(RECORDS_FILE), Path::to_path_buf)
                        .display()
                ),
                format!(
                    "write: {}/analytics.json, disclosure.csv, intensity.csv, key_actions.csv, manifest.json",
                    dir.display()
                ),
            ],
        );
        return Ok(());
    }
    let mut manifest = run.manifest("analyze")?;
    let records = run.records(records, &mut manifest)?;
    let corpus = run.corpus(&mut manifest)?;
    let aliases = run.aliases(&mut manifest)?;
    let themes = match &run.cfg.analytics.theme_map {
        None => ThemeMap::bundled(),
        Some(p) => {
            manifest.input(p)?;
            ThemeMap::load(p).map_err(config_error)?
        }
    };
    let docs: Vec<DocInfo> = corpus.docs.iter().map(|d| DocInfo::from(&d.doc)).collect();
    let a = &run.cfg.analytics;
    let intensity = emission_intensity(&records, &docs, (&a.scope1_id, &a.scope2_id), &aliases);
    for issue in &intensity.issues {
        manifest.warn(format!("{}: {}", issue.doc_id, issue.issue));
    }
    let summary = AnalyticsSummary {
        company_rates: company_rates(&records, &run.registry, &docs),
        disclosure_by_industry: disclosure_stats(&records, &run.registry, &docs, Grouping::ByIndustry),
        disclosure_overall: disclosure_stats(&records, &run.registry, &docs, Grouping::Overall),
        intensity_by_industry: intensity_by_industry(&intensity.stats),
        key_actions: key_action_frequencies(&records, &run.registry, &themes, a.top_n),
        intensity,
    };
    let mut outputs = Vec::new();
    write(&dir.join("analytics.json"), &pretty(&summary)?, &mut outputs)?;
    let mut rates = summary.disclosure_by_industry.clone();
    rates.extend(summary.disclosure_overall.iter().cloned());
    write(&dir.join("disclosure.csv"), &disclosure_csv(&rates), &mut outputs)?;
    write(
        &dir.join("intensity.csv"),
        &intensity_csv(&summary.intensity.stats),
        &mut outputs,
    )?;
    write(
        &dir.join("key_actions.csv"),
        &frequency_csv(&summary.key_actions),
        &mut outputs,
    )?;
    manifest.finish(&dir, &outputs)?;
    print!("{}", disclosure_csv(&rates));
    Ok(())
}

pub fn metadata_validate(path: &Path) -> Result<()> {
    let reg = MetadataRegistry::load(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    println!("ok: {} indicators in {}", reg.len(), path.display());
    Ok(())
}

pub fn metadata_stats(path: &str) -> Result<()> {
    let reg = if path == BUNDLED_REGISTRY {
        MetadataRegistry::bundled_hkex()
    } else {
        MetadataRegistry::load(Path::new(path)).map_err(|e| input_error(format!("{path}: {e}")))?
    };
    print!("{}", reg.stats_table());
    Ok(())
}

pub fn synth(g: &GlobalArgs, out: &Path, seed: u64, docs: usize) -> Result<()> {
    if docs == 0 {
        return Err(config_error("--docs must be positive"));
    }
    let registry = MetadataRegistry::bundled_hkex();
    let corpus = esgx_core::synthetic::generate(&registry, seed, docs, esgx_core::kb::DEFAULT_NAIVE_WINDOW);
    let mut files = corpus.files();
    files.push((PathBuf::from("esgx.toml"), synthetic_config()));
    if g.dry_run {
        println!("plan: synth (seed {seed}, {docs} documents)");
        for (rel, _) in &files {
            println!("  write: {}", out.join(rel).display());
        }
        return Ok(());
    }
    let config = serde_json::json!({ "seed": seed, "docs": docs, "registry": BUNDLED_REGISTRY });
    let manifest = RunManifest::start("synth", config);
    let mut outputs = Vec::new();
    for (rel, content) in &files {
        write(&out.join(rel), content, &mut outputs)?;
    }
    manifest.finish(out, &outputs)?;
    println!("wrote {} files to {}", outputs.len(), out.display());
    Ok(())
}
