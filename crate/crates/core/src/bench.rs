//! Benchmark harness: QA datasets, per-variant runs and result tables.
//!
//! Dataset files are JSONL, one item per line:
//!
//! ```json
//! {"id": "mcq-001", "qtype": "mcq", "question": "...", "reference": "(b) ...",
//!  "choices": [{"label": "a", "text": "..."}, {"label": "b", "text": "..."}]}
//! ```
//!
//! `choices` is only meaningful for MCQ items; when present the labelled
//! options are appended to the question as `(a) text` lines.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chunker::{token_count, ChunkingParams};
use crate::corpus::Corpus;
use crate::metrics::{self, Metric, MetricReport};
use crate::pipelines::{self, IndexSet, PipelineError, PipelineVariant};
use crate::prompts::{PromptTemplates, QuestionType};
use crate::providers::{ProviderModels, Providers};

/// Questions and references longer than this many tokens are dropped.
pub const MAX_ITEM_TOKENS: usize = 600;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read dataset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("dataset contains no usable items")]
    EmptyDataset,
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("no runs to report")]
    NoRuns,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub qtype: QuestionType,
    pub question: String,
    pub reference: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<Choice>>,
}

impl QaItem {
    /// Question text handed to retrieval and the prompt.
    pub fn query_text(&self) -> String {
        let mut q = self.question.trim().to_owned();
        if let Some(choices) = &self.choices {
            for c in choices {
                let _ = write!(q, "\n({}) {}", c.label, c.text.trim());
            }
        }
        q
    }
}

fn choice_label_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\([a-zA-Z]\)").expect("valid regex"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedItem {
    pub line: usize,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub qtype: QuestionType,
    pub items: Vec<QaItem>,
    /// Over-length items dropped while loading.
    pub rejected: Vec<RejectedItem>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub fn parse_dataset(text: &str, qtype: QuestionType) -> Result<Dataset, BenchError> {
    let mut items = Vec::new();
    let mut rejected = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let item: QaItem = serde_json::from_str(raw).map_err(|e| BenchError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let malformed = |reason: String| BenchError::MalformedRow { line, reason };
        if item.qtype != qtype {
            return Err(malformed(format!("qtype {} in a {} dataset", item.qtype, qtype)));
        }
        if item.id.trim().is_empty() {
            return Err(malformed("empty id".into()));
        }
        if item.question.trim().is_empty() || item.reference.trim().is_empty() {
            return Err(malformed(format!("item {} has an empty question or reference", item.id)));
        }
        if qtype == QuestionType::Mcq && !choice_label_regex().is_match(&item.reference) {
            return Err(malformed(format!("MCQ item {} has no (x) choice label in its reference", item.id)));
        }
        let (q_len, r_len) = (token_count(&item.question), token_count(&item.reference));
        if q_len > MAX_ITEM_TOKENS || r_len > MAX_ITEM_TOKENS {
            let reason = format!("question {q_len} tokens, reference {r_len} tokens (limit {MAX_ITEM_TOKENS})");
            tracing::info!(id = %item.id, %reason, "item rejected");
            rejected.push(RejectedItem {
                line,
                id: item.id,
                reason,
            });
            continue;
        }
        items.push(item);
    }
    if items.is_empty() {
        return Err(BenchError::EmptyDataset);
    }
    Ok(Dataset {
        qtype,
        items,
        rejected,
    })
}

pub fn load_dataset(path: impl AsRef<Path>, qtype: QuestionType) -> Result<Dataset, BenchError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, qtype)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub variant: PipelineVariant,
    pub k: usize,
    pub chunk_size: usize,
    pub chunk_overlap: usize,
    pub providers: ProviderModels,
    pub seed: u64,
    /// Rows scored concurrently.
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub qtype: QuestionType,
    pub question: String,
    pub answer: String,
    pub reference: String,
    pub chunk_ids: Vec<String>,
    pub contexts: Vec<String>,
    pub images: Vec<uuid::Uuid>,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub item_id: String,
    pub message: String,
}

/// Mean of each metric over the rows where it applies, in percent.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregates(pub BTreeMap<Metric, f64>);

impl Aggregates {
    pub fn from_rows(rows: &[EvalRecord]) -> Self {
        let mut out = BTreeMap::new();
        for metric in Metric::ALL {
            let values: Vec<f64> = rows.iter().filter_map(|r| r.metrics.get(metric)).collect();
            if !values.is_empty() {
                out.insert(metric, values.iter().sum::<f64>() / values.len() as f64 * 100.0);
            }
        }
        Self(out)
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.0.get(&metric).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub config: BenchConfig,
    pub qtype: QuestionType,
    pub rows: Vec<EvalRecord>,
    pub errors: Vec<RowError>,
    pub aggregates: Aggregates,
}

impl BenchRun {
    pub fn dataset_size(&self) -> usize {
        self.rows.len() + self.errors.len()
    }

    pub fn error_rate(&self) -> f64 {
        if self.dataset_size() == 0 {
            0.0
        } else {
            self.errors.len() as f64 / self.dataset_size() as f64
        }
    }
}

pub fn evaluate_item(
    item: &QaItem,
    corpus: &Corpus,
    index: &IndexSet,
    k: usize,
    providers: &Providers,
    templates: &PromptTemplates,
) -> Result<EvalRecord, String> {
    let answer = pipelines::answer(&item.query_text(), item.qtype, corpus, index, k, providers, templates)
        .map_err(|e| e.to_string())?;
    let contexts = answer.bundle.contexts();
    let judge = providers.judge.as_ref();
    let m = |r: Result<f64, metrics::MetricError>| r.map_err(|e| e.to_string());

    let report = MetricReport {
        factual_correctness: Some(m(metrics::factual_correctness(&answer.text, &item.reference, judge))?),
        semantic_similarity: Some(m(metrics::semantic_similarity(
            &answer.text,
            &item.reference,
            providers.scorer.as_ref(),
        ))?),
        rouge1_f1: (item.qtype == QuestionType::Mcq).then(|| metrics::rouge1_f1(&answer.text, &item.reference)),
        context_precision: Some(m(metrics::context_precision(&item.reference, &contexts, judge))?),
        context_recall: Some(m(metrics::context_recall(&item.reference, &contexts, judge))?),
    };

    Ok(EvalRecord {
        item_id: item.id.clone(),
        qtype: item.qtype,
        question: item.question.clone(),
        answer: answer.text.clone(),
        reference: item.reference.clone(),
        chunk_ids: answer.bundle.text_hits.iter().map(|h| h.chunk_id.to_string()).collect(),
        contexts: contexts.iter().map(|c| c.to_string()).collect(),
        images: answer.bundle.presented_images(),
        metrics: report,
    })
}

/// Runs every item of `dataset` against a prebuilt index.
pub fn run_bench_with_index(
    corpus: &Corpus,
    dataset: &Dataset,
    index: &IndexSet,
    config: &BenchConfig,
    providers: &Providers,
    templates: &PromptTemplates,
) -> BenchRun {
    let score = |item: &QaItem| (item.id.clone(), evaluate_item(item, corpus, index, config.k, providers, templates));
    let mut results: Vec<(String, Result<EvalRecord, String>)> = match rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
    {
        Ok(pool) => pool.install(|| dataset.items.par_iter().map(score).collect()),
        Err(_) => dataset.items.iter().map(score).collect(),
    };
    results.sort_by(|a, b| a.0.cmp(&b.0));

    let mut rows = Vec::new();
    let mut errors = Vec::new();
    for (item_id, r) in results {
        match r {
            Ok(row) => rows.push(row),
            Err(message) => {
                tracing::warn!(%item_id, %message, "row failed");
                errors.push(RowError { item_id, message });
            }
        }
    }
    let aggregates = Aggregates::from_rows(&rows);
    BenchRun {
        config: config.clone(),
        qtype: dataset.qtype,
        rows,
        errors,
        aggregates,
    }
}

pub fn run_bench(
    corpus: &Corpus,
    dataset: &Dataset,
    config: &BenchConfig,
    providers: &Providers,
    templates: &PromptTemplates,
) -> Result<BenchRun, BenchError> {
    let params = ChunkingParams::new(config.chunk_size, config.chunk_overlap)
        .map_err(|e| PipelineError::Manifest(e.to_string()))?;
    let index = pipelines::build_index(corpus, config.variant, params, providers)?;
    Ok(run_bench_with_index(corpus, dataset, &index, config, providers, templates))
}

/// Runs every dataset against every variant, building each index once.
/// Runs come back variant-major, in the order given.
pub fn sweep(
    corpus: &Corpus,
    datasets: &[Dataset],
    variants: &[PipelineVariant],
    base: &BenchConfig,
    providers: &Providers,
    templates: &PromptTemplates,
) -> Result<Vec<BenchRun>, BenchError> {
    let params = ChunkingParams::new(base.chunk_size, base.chunk_overlap)
        .map_err(|e| PipelineError::Manifest(e.to_string()))?;
    let mut runs = Vec::with_capacity(datasets.len() * variants.len());
    for &variant in variants {
        let index = pipelines::build_index(corpus, variant, params, providers)?;
        let config = BenchConfig {
            variant,
            ..base.clone()
        };
        for dataset in datasets {
            runs.push(run_bench_with_index(corpus, dataset, &index, &config, providers, templates));
        }
    }
    Ok(runs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
}

struct Column {
    title: String,
    qtype: QuestionType,
    metric: Metric,
}

struct Table {
    caption: &'static str,
    columns: Vec<Column>,
}

fn tables() -> Vec<Table> {
    use QuestionType::*;
    let col = |qtype: QuestionType, metric: Metric| Column {
        title: format!("{} {} (%)", qtype.label(), metric.label()),
        qtype,
        metric,
    };
    let mut answer_cols = Vec::new();
    for q in [MathQ, Mcq, Rq] {
        answer_cols.push(col(q, Metric::FactualCorrectness));
        answer_cols.push(col(q, Metric::SemanticSimilarity));
    }
    let mut context_cols = Vec::new();
    for m in [Metric::ContextPrecision, Metric::ContextRecall] {
        for q in [Mcq, MathQ, Rq] {
            context_cols.push(col(q, m));
        }
    }
    vec![
        Table {
            caption: "Comparison of metrics across methods",
            columns: answer_cols,
        },
        Table {
            caption: "ROUGE-1 for MCQ",
            columns: vec![col(Mcq, Metric::Rouge1F1)],
        },
        Table {
            caption: "Context precision and recall",
            columns: context_cols,
        },
    ]
}

type Cell = Option<f64>;

/// Rows in first-seen variant order, cells looked up by (qtype, metric).
fn grid(runs: &[BenchRun], table: &Table) -> Vec<(PipelineVariant, Vec<Cell>)> {
    let mut variants: Vec<PipelineVariant> = Vec::new();
    for r in runs {
        if !variants.contains(&r.config.variant) {
            variants.push(r.config.variant);
        }
    }
    let lookup = |v: PipelineVariant, c: &Column| -> Cell {
        runs.iter()
            .filter(|r| r.config.variant == v && r.qtype == c.qtype)
            .find_map(|r| r.aggregates.get(c.metric))
    };
    variants
        .into_iter()
        .map(|v| (v, table.columns.iter().map(|c| lookup(v, c)).collect()))
        .collect()
}

fn fmt_cell(v: Cell) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "-".into(),
    }
}

/// For each column, whether each row holds the column maximum (at two decimals).
fn best_flags(rows: &[(PipelineVariant, Vec<Cell>)], ncols: usize) -> Vec<Vec<bool>> {
    let rounded = |v: f64| (v * 100.0).round() as i64;
    let best: Vec<Option<i64>> = (0..ncols)
        .map(|c| rows.iter().filter_map(|(_, cells)| cells[c].map(rounded)).max())
        .collect();
    rows.iter()
        .map(|(_, cells)| {
            cells
                .iter()
                .enumerate()
                .map(|(c, v)| matches!((v, best[c]), (Some(x), Some(b)) if rounded(*x) == b))
                .collect()
        })
        .collect()
}

/// Renders runs as result tables. Best value per column is bold in markdown
/// and marked `best=1` in CSV.
pub fn render_report(runs: &[BenchRun], format: ReportFormat) -> Result<String, BenchError> {
    if runs.is_empty() {
        return Err(BenchError::NoRuns);
    }
    let mut out = String::new();
    if format == ReportFormat::Csv {
        out.push_str("table,method,dataset,metric,value,best\n");
    }
    for table in tables() {
        let rows = grid(runs, &table);
        if rows.iter().all(|(_, cells)| cells.iter().all(Option::is_none)) {
            continue;
        }
        let flags = best_flags(&rows, table.columns.len());
        match format {
            ReportFormat::Markdown => {
                let _ = writeln!(out, "## {}\n", table.caption);
                out.push_str("| Method |");
                for c in &table.columns {
                    let _ = write!(out, " {} |", c.title);
                }
                out.push_str("\n|---|");
                for _ in &table.columns {
                    out.push_str("---:|");
                }
                out.push('\n');
                for ((variant, cells), flags) in rows.iter().zip(&flags) {
                    let _ = write!(out, "| {} |", variant.label());
                    for (v, best) in cells.iter().zip(flags) {
                        let s = fmt_cell(*v);
                        if *best {
                            let _ = write!(out, " **{s}** |");
                        } else {
                            let _ = write!(out, " {s} |");
                        }
                    }
                    out.push('\n');
                }
                out.push('\n');
            }
            ReportFormat::Csv => {
                for ((variant, cells), flags) in rows.iter().zip(&flags) {
                    for ((c, v), best) in table.columns.iter().zip(cells).zip(flags) {
                        if v.is_none() {
                            continue;
                        }
                        let _ = writeln!(
                            out,
                            "\"{}\",{},{},{},{},{}",
                            table.caption,
                            variant.label(),
                            c.qtype.label(),
                            c.metric.label(),
                            fmt_cell(*v),
                            u8::from(*best)
                        );
                    }
                }
            }
        }
    }
    let failed: usize = runs.iter().map(|r| r.errors.len()).sum();
    if format == ReportFormat::Markdown {
        let total: usize = runs.iter().map(BenchRun::dataset_size).sum();
        let _ = writeln!(out, "Rows scored: {}, failed: {failed}", total - failed);
    }
    Ok(out)
}

pub fn emit_report(runs: &[BenchRun], format: ReportFormat, path: impl AsRef<Path>) -> Result<(), BenchError> {
    let text = render_report(runs, format)?;
    let path = path.as_ref();
    fs::write(path, text).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item_json(id: &str, qtype: &str, q: &str, r: &str) -> String {
        serde_json::json!({"id": id, "qtype": qtype, "question": q, "reference": r}).to_string()
    }

    #[test]
    fn loader_rejects_overlength_items() {
        let long = vec!["word"; 700].join(" ");
        let text = [
            item_json("r1", "rq", "What is casting?", "Pouring metal into a mold."),
            item_json("r2", "rq", "Why?", &long),
        ]
        .join("\n");
        let ds = parse_dataset(&text, QuestionType::Rq).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.rejected.len(), 1);
        assert_eq!(ds.rejected[0].id, "r2");
        assert_eq!(ds.rejected[0].line, 2);
    }

    #[test]
    fn mcq_requires_choice_label() {
        let text = item_json("m1", "mcq", "Pick one", "the second option");
        assert!(matches!(
            parse_dataset(&text, QuestionType::Mcq),
            Err(BenchError::MalformedRow { line: 1, .. })
        ));
        let ok = item_json("m1", "mcq", "Pick one", "Answer. (b)");
        assert_eq!(parse_dataset(&ok, QuestionType::Mcq).unwrap().len(), 1);
    }

    #[test]
    fn empty_and_malformed_datasets() {
        assert!(matches!(parse_dataset("\n\n", QuestionType::Rq), Err(BenchError::EmptyDataset)));
        assert!(matches!(
            parse_dataset("{not json", QuestionType::Rq),
            Err(BenchError::MalformedRow { line: 1, .. })
        ));
        let wrong_type = item_json("x", "mathq", "q", "r");
        assert!(matches!(
            parse_dataset(&wrong_type, QuestionType::Rq),
            Err(BenchError::MalformedRow { .. })
        ));
    }

    #[test]
    fn query_text_appends_choices() {
        let item = QaItem {
            id: "m".into(),
            qtype: QuestionType::Mcq,
            question: "Which are metals?".into(),
            reference: "(a)".into(),
            choices: Some(vec![
                Choice { label: "a".into(), text: "iron".into() },
                Choice { label: "b".into(), text: "glass".into() },
            ]),
        };
        assert_eq!(item.query_text(), "Which are metals?\n(a) iron\n(b) glass");
    }

    fn run(variant: PipelineVariant, qtype: QuestionType, fc: f64) -> BenchRun {
        let row = EvalRecord {
            item_id: "1".into(),
            qtype,
            question: "q".into(),
            answer: "a".into(),
            reference: "r".into(),
            chunk_ids: vec![],
            contexts: vec![],
            images: vec![],
            metrics: MetricReport {
                factual_correctness: Some(fc),
                semantic_similarity: Some(fc),
                ..Default::default()
            },
        };
        let rows = vec![row];
        BenchRun {
            config: BenchConfig {
                variant,
                k: 1,
                chunk_size: 600,
                chunk_overlap: 100,
                providers: ProviderModels {
                    text_embedder: "t".into(),
                    mm_embedder: "m".into(),
                    generator: "g".into(),
                    describer: "d".into(),
                    judge: "j".into(),
                    scorer: "s".into(),
                },
                seed: 0,
                workers: 1,
            },
            qtype,
            aggregates: Aggregates::from_rows(&rows),
            rows,
            errors: vec![],
        }
    }

    #[test]
    fn single_run_is_one_row() {
        let md = render_report(&[run(PipelineVariant::Manu2, QuestionType::Rq, 0.5)], ReportFormat::Markdown).unwrap();
        let data_rows: Vec<&str> = md.lines().filter(|l| l.starts_with("| ManuRAG_2")).collect();
        assert_eq!(data_rows.len(), 1);
        assert!(data_rows[0].contains("**50.00**"));
    }

    #[test]
    fn dominating_run_flagged_everywhere() {
        let runs = [
            run(PipelineVariant::RagRaw, QuestionType::MathQ, 0.2),
            run(PipelineVariant::Manu4, QuestionType::MathQ, 0.9),
        ];
        let csv = render_report(&runs, ReportFormat::Csv).unwrap();
        for line in csv.lines().skip(1) {
            let best = line.ends_with(",1");
            assert_eq!(best, line.contains("ManuRAG_4"), "{line}");
        }
        assert!(render_report(&[], ReportFormat::Csv).is_err());
    }

    #[test]
    fn aggregates_skip_absent_metrics() {
        let r = run(PipelineVariant::Manu1, QuestionType::Rq, 0.25);
        assert_eq!(r.aggregates.get(Metric::FactualCorrectness), Some(25.0));
        assert_eq!(r.aggregates.get(Metric::Rouge1F1), None);
    }
}
