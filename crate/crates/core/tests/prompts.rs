mod common;

use manurag::prompts::{context_string, render_prompt, PromptTemplates};
use manurag::QuestionType;

const CONTEXT_A: &str = "Casting is a solidification process.";
const CONTEXT_B: &str = "A riser feeds {shrinkage}.";
const QUERY: &str = "What does a riser do? $x_{1}$";

#[test]
fn rendered_prompts_match_golden_files() {
    let context = context_string([CONTEXT_A, CONTEXT_B]);
    for qtype in QuestionType::ALL {
        let golden = std::fs::read_to_string(common::fixtures().join(format!("prompts/{}.golden", qtype.key()))).unwrap();
        assert_eq!(render_prompt(qtype, &context, QUERY), golden, "{qtype}");
    }
}

#[test]
fn template_directory_overrides() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("rq.txt"), "C={context_str} Q={query_str}").unwrap();
    let t = PromptTemplates::from_dir(dir.path()).unwrap();
    assert_eq!(t.render(QuestionType::Rq, "c", "q"), "C=c Q=q");
    assert_eq!(t.template(QuestionType::Mcq), PromptTemplates::default().template(QuestionType::Mcq));
}
