use manurag::metrics::{
    claim_verdicts, context_precision, context_precision_at_k, context_recall, factual_correctness, rouge1_f1,
    ClaimVerdicts, CONTEXT_PRECISION_K,
};
use manurag::providers::OfflineJudge;

#[test]
fn factual_correctness_two_one_one() {
    let v = ClaimVerdicts { tp: 2, fp: 1, fn_: 1 };
    assert!((v.f1() - 0.6667).abs() < 1e-4);

    let judge = OfflineJudge;
    let answer = "Steel expands when heated. Aluminum conducts heat. Glass is a metal.";
    let reference = "Steel expands when heated. Aluminum conducts heat. Copper is ductile.";
    assert_eq!(claim_verdicts(answer, reference, &judge).unwrap(), v);
    assert!((factual_correctness(answer, reference, &judge).unwrap() - 0.6667).abs() < 1e-4);
}

#[test]
fn rouge_choice_labels() {
    assert!((rouge1_f1("(a)(b)(c)", "(a)(c)(d)") - 0.6667).abs() < 1e-4);
    assert!((rouge1_f1("(a) (b) (c)", "(a) (c) (d)") - 0.6667).abs() < 1e-4);
}

/// Hand-computed mean of precision@k over relevant ranks, K = 3.
#[test]
fn all_eight_precision_patterns() {
    assert_eq!(CONTEXT_PRECISION_K, 3);
    let table: [([bool; 3], f64); 8] = [
        ([false, false, false], 0.0),
        ([true, false, false], 1.0),
        ([false, true, false], 1.0 / 2.0),
        ([false, false, true], 1.0 / 3.0),
        ([true, true, false], 1.0),
        ([true, false, true], (1.0 + 2.0 / 3.0) / 2.0),
        ([false, true, true], (1.0 / 2.0 + 2.0 / 3.0) / 2.0),
        ([true, true, true], 1.0),
    ];
    for (pattern, want) in table {
        let got = context_precision_at_k(&pattern);
        assert!((got - want).abs() < 1e-4, "{pattern:?}: {got} vs {want}");
    }
    assert!((context_precision_at_k(&[true, false, true]) - 0.8333).abs() < 1e-4);
}

#[test]
fn precision_through_the_judge() {
    let judge = OfflineJudge;
    let reference = "A riser feeds the casting. The sprue carries metal.";
    let contexts = ["A riser feeds the casting as it shrinks.", "Welding joins parts.", "The sprue carries metal down."];
    let got = context_precision(reference, &contexts, &judge).unwrap();
    assert!((got - 0.8333).abs() < 1e-4);
}

#[test]
fn recall_three_of_four() {
    let judge = OfflineJudge;
    let reference = "Steel expands when heated. Aluminum conducts heat. Copper is ductile. Glass is brittle.";
    let contexts = ["Steel expands when heated, aluminum conducts heat.", "Copper is ductile and easy to draw."];
    assert_eq!(context_recall(reference, &contexts, &judge).unwrap(), 0.75);
}
