//! The QA prompt suite and message rendering.

use serde::{Deserialize, Serialize};

use crate::dataio::{AgentDesign, DatasetRecord};

pub const RAW: &str =
    "Given a question, a news context, and retrieved documents, answer the question.
The final answer must appear on the last line in the format: \\boxed{<answer>}";

pub const COT: &str = "You are a multi-hop reasoning expert and an expert QA agent. Given a question, and the context, think step-by-step. The final answer must appear on the last line in the format: \\boxed{<answer>}";

pub const DEBATER_A: &str = "You are Debater A. Your goal is to propose the most plausible answer using the provided context.
  - Make ONE clear claim (the candidate answer).
  - Support it with 1-2 ultra-short quotes (verbatim substrings) and name the hops.
  - Explain the link between the quotes in <=2 sentences.
Do NOT use outside knowledge and do NOT output the final boxed answer. Make your answer really short and concise.";

pub const DEBATER_B: &str = "You are Debater B. Your goal is to stress-test A's claim using ONLY the provided context.
  - If A's quotes or hops are weak, inconsistent, or incomplete, point it out and give corrected quotes/hops.
  - If a better candidate exists, state ONE alternative with 1-2 short quotes and <=2 sentences of reasoning.
  - If A is already well-supported, briefly confirm but add one missing check.
Do NOT use outside knowledge and do NOT output the final boxed answer. Make your answer really short and concise.";

pub const DEBATE_JUDGE: &str = "You are the Judge. Read A and B as supporting analyses and decide the best final answer using ONLY the given context.
If evidence is thin, still make your best context-based guess.
Output MUST include nothing but brief final answer in the format: \\boxed{}.";

pub const REACT: &str = "You are a multi-hop reasoning expert and an expert QA agent.
Given a question, a news context, and retrieved documents, think step-by-step, silently chain facts to derive a thinking plan,
then use this plan to derive the final brief answer.
Your output format MUST be a brief final answer on the last line in the format: \\boxed{<answer>}.";

pub const REFLECT: &str = "You are a judge overseeing a multi-hop reasoning expert and an expert QA agent.
Given a question, a news context, and retrieved documents, you will evaluate the agent's answer based on the correctness and notes.
If the answer is incorrect or incomplete, provide constructive feedback and suggest specific revisions to improve the answer.
If the answer is correct and complete, indicate that no further revisions are needed.
Your output MUST end with either:
  - \"Status: revise\" followed by specific feedback and revision suggestions, if the answer needs improvement.
  - \"Status: final\" if the answer is correct and complete.
If you indicate \"Status: revise\", also include a short \"Feedback: <your feedback here>\" section before the final answer.";

pub const THINK_A: &str = "You are a multi-hop reasoning expert and an expert QA agent.
Given a question, a news context, and retrieved documents, think step-by-step, chain facts to derive the answer.
Give your final answer as a single entity, and a concise reasoning process that leads to the answer.";

pub const THINK_B: &str = THINK_A;

pub const SUMMARIZE: &str = "You are the multi-hop reasoning expert and an expert QA agent. You receive outputs from other agents. Use them as supporting signals.
If A and B agree on the same short span, return it. If they differ, pick the best answer with your own reasoning.
Your output format MUST end with the brief final answer on the last line in the format: \\boxed{<answer>}.";

pub const NOTE: &str = "Here are the rules you must STRICTLY follow:
1. Always return the answer as the SHORTEST exact entity only. The answer is always within 10 words, and usually within 5 words.
2. If the question is yes/no, respond strictly with yes or no only.
3. For year ranges, never use hyphens; instead, use \"from XXXX to YYYY\" or \"XXXX until YYYY\".
4. Do not output sentences, explanations, or phrases with verbs; the answer must be a single entity expression only.
5. One way or another, you must return your best guess, and the final answer must be in the format: \\boxed{<answer>}.";

/// Agent-entity relevance judge used to build manage edges.
pub const ENTITY_JUDGE: &str = "You are a judge assigning context entities to a QA agent.
Given a question, the entities of its context with the relations between them, and the agent's prompt, score how relevant each entity is for this agent to answer the question.
Return the highest-scoring entities, most relevant first, copied exactly from the entity list and separated by semicolons, on the last line in the format: \\boxed{<entity>; <entity>; ...}";

/// Prompt that characterises an agent design; used in agent descriptions.
pub fn primary_system_prompt(design: AgentDesign) -> &'static str {
    match design {
        AgentDesign::Raw => RAW,
        AgentDesign::Cot | AgentDesign::Sc => COT,
        AgentDesign::ReactReflect => REACT,
        AgentDesign::Mad => DEBATE_JUDGE,
        AgentDesign::Summary => SUMMARIZE,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: String,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// A role prompt applied to one record. `extra` carries earlier turns
/// (debate arguments, reflect feedback, ...).
pub fn render(system: &str, record: &DatasetRecord, extra: &[(&str, &str)]) -> Vec<Message> {
    let mut user = format!(
        "Question: {}\n\nContext: {}\n",
        record.question, record.context
    );
    for (label, text) in extra {
        user.push_str(&format!("\n{label}:\n{text}\n"));
    }
    user.push('\n');
    user.push_str(NOTE);
    vec![Message::system(system), Message::user(user)]
}

/// Question text recovered from a rendered user message.
pub fn question_of(messages: &[Message]) -> Option<&str> {
    let user = messages.iter().find(|m| m.role == "user")?;
    let rest = user.content.strip_prefix("Question: ")?;
    Some(rest.split_once("\n\nContext: ").map_or(rest, |(q, _)| q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::parse_dataset;

    #[test]
    fn rendered_prompts_end_with_note() {
        let line = r#"{"question":"Who?","context":"Ctx.","answers":["a"]}"#;
        let rec = parse_dataset(line, "t").unwrap().remove(0);
        let m = render(DEBATER_B, &rec, &[("Debater A", "claim")]);
        assert!(m.last().unwrap().content.ends_with(NOTE));
        assert_eq!(m[0].content, DEBATER_B);
        assert_eq!(question_of(&m), Some("Who?"));
    }
}
