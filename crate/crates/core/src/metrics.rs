//! Answer and retrieval quality metrics.
//!
//! Zero-denominator cases score 0, except a reference with no claims for
//! context recall, which is [`MetricError::UndefinedMetric`]: averaging a
//! silent zero would bias the benchmark.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::offline::normalized_tokens;
use crate::providers::{Judge, ProviderError, SimilarityScorer};

/// Ranks considered by context precision.
pub const CONTEXT_PRECISION_K: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("input is empty")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClaimVerdicts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl ClaimVerdicts {
    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            return 0.0;
        }
        let (p, r) = (self.precision(), self.recall());
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-row scores. `None` means the metric does not apply to the row.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub factual_correctness: Option<f64>,
    pub semantic_similarity: Option<f64>,
    pub rouge1_f1: Option<f64>,
    pub context_precision: Option<f64>,
    pub context_recall: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    FactualCorrectness,
    SemanticSimilarity,
    Rouge1F1,
    ContextPrecision,
    ContextRecall,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::FactualCorrectness,
        Metric::SemanticSimilarity,
        Metric::Rouge1F1,
        Metric::ContextPrecision,
        Metric::ContextRecall,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Metric::FactualCorrectness => "Factual Correctness",
            Metric::SemanticSimilarity => "Semantic Similarity",
            Metric::Rouge1F1 => "ROUGE-1",
            Metric::ContextPrecision => "Context Precision",
            Metric::ContextRecall => "Context Recall",
        }
    }
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::FactualCorrectness => self.factual_correctness,
            Metric::SemanticSimilarity => self.semantic_similarity,
            Metric::Rouge1F1 => self.rouge1_f1,
            Metric::ContextPrecision => self.context_precision,
            Metric::ContextRecall => self.context_recall,
        }
    }
}

fn require(text: &str) -> Result<(), MetricError> {
    if text.trim().is_empty() {
        Err(MetricError::EmptyInput)
    } else {
        Ok(())
    }
}

pub fn claim_verdicts(answer: &str, reference: &str, judge: &dyn Judge) -> Result<ClaimVerdicts, MetricError> {
    require(answer)?;
    require(reference)?;
    let answer_claims = judge.decompose_claims(answer)?;
    let reference_claims = judge.decompose_claims(reference)?;
    let mut v = ClaimVerdicts::default();
    for claim in &answer_claims {
        if judge.entails(claim, reference)? {
            v.tp += 1;
        } else {
            v.fp += 1;
        }
    }
    for claim in &reference_claims {
        if !judge.entails(claim, answer)? {
            v.fn_ += 1;
        }
    }
    Ok(v)
}

/// Claim-level F1 of the answer against the reference.
pub fn factual_correctness(answer: &str, reference: &str, judge: &dyn Judge) -> Result<f64, MetricError> {
    Ok(claim_verdicts(answer, reference, judge)?.f1())
}

pub fn semantic_similarity(answer: &str, reference: &str, scorer: &dyn SimilarityScorer) -> Result<f64, MetricError> {
    require(answer)?;
    require(reference)?;
    let s = scorer.similarity_score(answer, reference)?;
    Ok(s.clamp(0.0, 1.0))
}

/// Brackets also separate unigrams so glued choice labels like `(a)(b)` count
/// as one unigram per label.
fn unigram_counts(text: &str) -> (HashMap<String, usize>, usize) {
    let mut counts = HashMap::new();
    let mut total = 0;
    let spaced: String = text
        .chars()
        .map(|c| if matches!(c, '(' | ')' | '[' | ']') { ' ' } else { c })
        .collect();
    for t in normalized_tokens(&spaced) {
        *counts.entry(t).or_insert(0) += 1;
        total += 1;
    }
    (counts, total)
}

/// ROUGE-1 F1 with clipped unigram counts.
pub fn rouge1_f1(answer: &str, reference: &str) -> f64 {
    let (a, a_total) = unigram_counts(answer);
    let (r, r_total) = unigram_counts(reference);
    let overlap: usize = a
        .iter()
        .map(|(tok, n)| (*n).min(r.get(tok).copied().unwrap_or(0)))
        .sum();
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / a_total as f64;
    let rc = overlap as f64 / r_total as f64;
    2.0 * p * rc / (p + rc)
}

/// Mean of precision@k over the relevant ranks.
pub fn context_precision_at_k(relevance: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut sum = 0f64;
    for (i, relevant) in relevance.iter().enumerate() {
        if *relevant {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        sum / hits as f64
    }
}

/// A context is relevant when it entails at least one reference claim.
pub fn context_relevance(
    reference: &str,
    contexts: &[&str],
    judge: &dyn Judge,
) -> Result<Vec<bool>, MetricError> {
    require(reference)?;
    let claims = judge.decompose_claims(reference)?;
    contexts
        .iter()
        .take(CONTEXT_PRECISION_K)
        .map(|ctx| {
            for claim in &claims {
                if judge.entails(claim, ctx)? {
                    return Ok(true);
                }
            }
            Ok(false)
        })
        .collect()
}

pub fn context_precision(reference: &str, contexts: &[&str], judge: &dyn Judge) -> Result<f64, MetricError> {
    Ok(context_precision_at_k(&context_relevance(reference, contexts, judge)?))
}

/// Fraction of reference claims entailed by the concatenated contexts.
pub fn context_recall(reference: &str, contexts: &[&str], judge: &dyn Judge) -> Result<f64, MetricError> {
    require(reference)?;
    let claims = judge.decompose_claims(reference)?;
    if claims.is_empty() {
        return Err(MetricError::UndefinedMetric("reference has no claims"));
    }
    if contexts.is_empty() {
        return Ok(0.0);
    }
    let joined = contexts.join("\n");
    let mut attributed = 0;
    for claim in &claims {
        if judge.entails(claim, &joined)? {
            attributed += 1;
        }
    }
    Ok(attributed as f64 / claims.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::providers::OfflineJudge;

    #[test]
    fn f1_from_verdicts() {
        let v = ClaimVerdicts { tp: 2, fp: 1, fn_: 1 };
        assert!((v.precision() - 2.0 / 3.0).abs() < 1e-12);
        assert!((v.recall() - 2.0 / 3.0).abs() < 1e-12);
        assert!((v.f1() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(ClaimVerdicts { tp: 0, fp: 3, fn_: 2 }.f1(), 0.0);
        assert_eq!(ClaimVerdicts::default().f1(), 0.0);
    }

    #[test]
    fn factual_correctness_examples() {
        let j = OfflineJudge;
        let text = "Steel expands when heated. Aluminum conducts heat.";
        assert_eq!(factual_correctness(text, text, &j).unwrap(), 1.0);
        assert_eq!(
            factual_correctness("Copper is ductile.", "Glass is brittle.", &j).unwrap(),
            0.0
        );
        // Two shared claims, one extra on each side.
        let answer = "steel expands. iron rusts. glass flows";
        let reference = "steel expands. iron rusts. copper bends";
        let v = claim_verdicts(answer, reference, &j).unwrap();
        assert_eq!(v, ClaimVerdicts { tp: 2, fp: 1, fn_: 1 });
        assert!((factual_correctness(answer, reference, &j).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge1_f1("the cutting speed", "the cutting speed"), 1.0);
        assert!((rouge1_f1("(a) (b) (c)", "(a) (c) (d)") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge1_f1("alpha beta", "gamma delta"), 0.0);
        // clipped multiplicity: answer repeats "a" three times, reference once
        let got = rouge1_f1("a a a", "a b");
        let (p, r) = (1.0 / 3.0, 1.0 / 2.0);
        assert!((got - 2.0 * p * r / (p + r)).abs() < 1e-12);
    }

    #[test]
    fn context_precision_examples() {
        assert_eq!(context_precision_at_k(&[true, true, true]), 1.0);
        assert!((context_precision_at_k(&[true, false, true]) - 5.0 / 6.0).abs() < 1e-12);
        assert_eq!(context_precision_at_k(&[false, false, false]), 0.0);
        assert_eq!(context_precision_at_k(&[]), 0.0);
    }

    #[test]
    fn context_recall_examples() {
        let j = OfflineJudge;
        let reference = "Steel expands when heated. Aluminum is light.";
        assert_eq!(context_recall(reference, &[reference], &j).unwrap(), 1.0);
        assert_eq!(context_recall(reference, &[], &j).unwrap(), 0.0);
        assert_eq!(
            context_recall(". ;", &["x"], &j),
            Err(MetricError::UndefinedMetric("reference has no claims"))
        );
    }

    #[test]
    fn semantic_similarity_clamps() {
        struct Fixed(f64);
        impl SimilarityScorer for Fixed {
            fn model_name(&self) -> &str {
                "fixed"
            }
            fn similarity_score(&self, _: &str, _: &str) -> Result<f64, ProviderError> {
                Ok(self.0)
            }
        }
        assert_eq!(semantic_similarity("a", "b", &Fixed(0.42)).unwrap(), 0.42);
        assert_eq!(semantic_similarity("a", "b", &Fixed(1.3)).unwrap(), 1.0);
        assert_eq!(semantic_similarity("a", "b", &Fixed(-0.2)).unwrap(), 0.0);
        assert_eq!(semantic_similarity("", "b", &Fixed(0.5)), Err(MetricError::EmptyInput));
    }
}
