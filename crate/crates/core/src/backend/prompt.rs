use super::{GenerationRequest, ScaleQuery};

/// Recorded in every session log so transcripts stay interpretable when the
/// template changes.
pub const TEMPLATE_VERSION: &str = "prompt-v1";

/// Renders a request into a single prompt string.
///
/// Section order is fixed: persona, demographics, political standpoint,
/// trigger, transcript (one `author: content` line per entry), instruction.
/// Empty sections other than the persona are omitted.
pub fn assemble_prompt(request: &GenerationRequest) -> String {
    let mut out = String::new();
    out.push_str(&format!("Your name is {}.\n", request.agent_name));
    out.push_str(&format!("{}\n", request.persona));
    if !request.demographics.is_empty() {
        out.push_str(&format!("\n{}\n", request.demographics));
    }
    out.push_str(&format!(
        "\nPolitical standpoint: {}\n",
        request.political_standpoint
    ));
    if !request.trigger.is_empty() {
        out.push_str(&format!("\nDiscussion:\n{}\n", request.trigger));
    }
    if !request.transcript.is_empty() {
        out.push_str("\nConversation so far:\n");
        for (author, content) in &request.transcript {
            out.push_str(&format!("{author}: {content}\n"));
        }
    }
    if !request.instruction.is_empty() {
        out.push_str(&format!("\n{}\n", request.instruction));
    }
    out
}

pub fn assemble_scale_prompt(query: &ScaleQuery) -> String {
    assemble_prompt(&query.as_generation_request())
}
