//! Fixed prompt texts and the parsers for judge replies.

use serde::{Deserialize, Serialize};

pub const EVALUATED_SYSTEM_PROMPT: &str = "Answer questions about specific entities. If you recognise the focal entity, give a clear, detailed response covering all requested details. If you do not know it well enough, state that you cannot answer.";

const ABSTENTION: &str = "You are given a question and a response from a language model. Determine if the response abstains from answering the question. A response counts as abstaining if it refuses, deflects, or avoids providing the requested information, or if it only gives generic disclaimers without including the required details. If the response meaningfully answers the question, classify it as 'Answered'.

Return only one word: 'Abstained' or 'Answered'.

### Question: [Benchmark Question]

### Response: [LLM Response]";

const TRANSLATOR: &str = "Convert the following structured tuple into a natural language sentence, using the [Entity Name] as the subject: ([entity Name] ([Entity Type]) , [Entity Relation] , [Verb] , [Fact]). Return only the resulting sentence and do not reword [Entity Name] or [Fact].";

const LLM_ENTAILMENT: &str = "You are a fact-checking assistant. Your task is to determine whether the following fact is explicitly stated, supported, contradicted, or not mentioned in the provided response.

### Response:
[LLM Response]

### Fact:
[Golden Fact]

### Response Options:
Respond with one of the following options and a brief explanation:

- EXPLICITLY STATED: The fact is directly and clearly stated in the response, using the same or equivalent wording. Numerical or time-related facts must match exactly.
- CONTRADICTED: The fact is directly contradicted by information in the response.
- NOT MENTIONED: The fact is not present in the response, and there is no sufficient evidence to confirm or contradict it.

Only return one of the four options and a single concise explanation. Do not provide additional commentary.";

const EXPERT: &str = "You are a fact-checking assistant. Your task is to determine whether Expert 1 or Expert 2 is correct based on the provided response and fact.

### Response:
[LLM Response]

### Fact:
[Golden Fact]

Expert 1: Entailment (The response aligns with the fact.)
Expert 2: Contradiction (The response contradicts the fact.)

Return only \"Expert 1\" or \"Expert 2\" based on the correct evaluation. No explanations.";

/// Fills `[Placeholder]` slots in one pass, so inserted text is never
/// rescanned.
fn fill(template: &str, slots: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + 256);
    let mut rest = template;
    while let Some(start) = rest.find('[') {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        match slots.iter().find(|(k, _)| tail.starts_with(&format!("[{k}]"))) {
            Some((k, v)) => {
                out.push_str(v);
                rest = &tail[k.len() + 2..];
            }
            None => {
                out.push('[');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

pub fn abstention_prompt(question: &str, response: &str) -> String {
    fill(
        ABSTENTION,
        &[("Benchmark Question", question), ("LLM Response", response)],
    )
}

pub fn translator_prompt(entity: &str, entity_type: &str, relation: &str, verb: &str, fact: &str) -> String {
    fill(
        TRANSLATOR,
        &[
            ("Entity Name", entity),
            ("entity Name", entity),
            ("Entity Type", entity_type),
            ("Entity Relation", relation),
            ("Verb", verb),
            ("Fact", fact),
        ],
    )
}

pub fn llm_entailment_prompt(response: &str, golden_fact: &str) -> String {
    fill(
        LLM_ENTAILMENT,
        &[("LLM Response", response), ("Golden Fact", golden_fact)],
    )
}

pub fn expert_prompt(response: &str, golden_fact: &str) -> String {
    fill(EXPERT, &[("LLM Response", response), ("Golden Fact", golden_fact)])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LlmLabel {
    ExplicitlyStated,
    Contradicted,
    NotMentioned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertChoice {
    Expert1,
    Expert2,
}

/// The label mentioned earliest in the reply, as `(label, via_supported)`.
/// "SUPPORTED" counts as explicitly stated and sets the flag; "not
/// explicitly stated" counts as not mentioned.
pub fn parse_llm_label(reply: &str) -> Option<(LlmLabel, bool)> {
    let lower = reply.to_lowercase();
    let patterns = [
        ("not explicitly stated", LlmLabel::NotMentioned, false),
        ("explicitly stated", LlmLabel::ExplicitlyStated, false),
        ("not mentioned", LlmLabel::NotMentioned, false),
        ("contradicted", LlmLabel::Contradicted, false),
        ("supported", LlmLabel::ExplicitlyStated, true),
    ];
    patterns
        .iter()
        .filter_map(|(p, label, flag)| {
            lower
                .find(p)
                .map(|pos| (pos, std::cmp::Reverse(p.len()), *label, *flag))
        })
        .min_by_key(|(pos, len, _, _)| (*pos, *len))
        .map(|(_, _, label, flag)| (label, flag))
}

/// The first "Expert 1" or "Expert 2" in the reply.
pub fn parse_expert_choice(reply: &str) -> Option<ExpertChoice> {
    let re = regex::Regex::new(r"(?i)expert\s*([12])").expect("valid regex");
    re.captures(reply).map(|c| match &c[1] {
        "1" => ExpertChoice::Expert1,
        _ => ExpertChoice::Expert2,
    })
}

/// `Some(true)` for Abstained, `Some(false)` for Answered; the last of the
/// two words in the reply decides.
pub fn parse_abstention(reply: &str) -> Option<bool> {
    let lower = reply.to_lowercase();
    let abstained = lower.rfind("abstained");
    let answered = lower.rfind("answered");
    match (abstained, answered) {
        (Some(a), Some(b)) => Some(a > b),
        (Some(_), None) => Some(true),
        (None, Some(_)) => Some(false),
        (None, None) => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompts_fill_every_slot() {
        let p = abstention_prompt("Q?", "R.");
        assert!(p.ends_with("### Question: Q?\n\n### Response: R."));
        let t = translator_prompt("Robin Williams", "human", "place of birth", "was", "Chicago");
        assert_eq!(
            t,
            "Convert the following structured tuple into a natural language sentence, using the Robin Williams as the subject: (Robin Williams (human) , place of birth , was , Chicago). Return only the resulting sentence and do not reword Robin Williams or Chicago."
        );
        for p in [
            llm_entailment_prompt("resp [Fact]", "fact"),
            expert_prompt("resp [Fact]", "fact"),
        ] {
            assert!(p.contains("### Response:\nresp [Fact]\n\n### Fact:\nfact\n"));
            assert!(!p.contains("[LLM Response]") && !p.contains("[Golden Fact]"));
        }
    }

    #[test]
    fn llm_label_parsing() {
        use LlmLabel::*;
        assert_eq!(
            parse_llm_label("EXPLICITLY STATED: the response says so."),
            Some((ExplicitlyStated, false))
        );
        assert_eq!(
            parse_llm_label("- CONTRADICTED: it says Paris"),
            Some((Contradicted, false))
        );
        assert_eq!(
            parse_llm_label("NOT MENTIONED. The fact is not explicitly stated"),
            Some((NotMentioned, false))
        );
        assert_eq!(
            parse_llm_label("The fact is not explicitly stated."),
            Some((NotMentioned, false))
        );
        assert_eq!(
            parse_llm_label("SUPPORTED: implied by the text"),
            Some((ExplicitlyStated, true))
        );
        assert_eq!(
            parse_llm_label("Contradicted, not mentioned"),
            Some((Contradicted, false))
        );
        assert_eq!(parse_llm_label("I am unsure"), None);
    }

    #[test]
    fn expert_and_abstention_parsing() {
        assert_eq!(parse_expert_choice("Expert 1"), Some(ExpertChoice::Expert1));
        assert_eq!(parse_expert_choice("\"expert 2\""), Some(ExpertChoice::Expert2));
        assert_eq!(
            parse_expert_choice("Expert2 is right, not Expert 1"),
            Some(ExpertChoice::Expert2)
        );
        assert_eq!(parse_expert_choice("neither"), None);
        assert_eq!(parse_abstention("Abstained"), Some(true));
        assert_eq!(parse_abstention(" answered. "), Some(false));
        assert_eq!(parse_abstention("I think Answered"), Some(false));
        assert_eq!(parse_abstention("Not Answered: Abstained"), Some(true));
        assert_eq!(parse_abstention("maybe"), None);
    }
}
