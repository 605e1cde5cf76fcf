//! ReAct loop: the model alternates `Thought` / `Action` / `Action Input`
//! turns with tool observations until it emits `Final Answer`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use crate::index::Modality;
use crate::provider::{ChatMessage, ChatProvider, ChatRequest};

pub const TRANSCRIPT_SCHEMA_VERSION: u32 = 1;
pub const PROMPT_VERSION: &str = "react-v1";
pub const DEFAULT_MAX_STEPS: usize = 10;
pub const DEFAULT_MAX_TOOL_OUTPUT_CHARS: usize = 4000;
pub const TRUNCATION_MARKER: &str = "…[truncated]";
pub const CORRECTIVE_OBSERVATION: &str = "Respond using the Thought/Action grammar: \"Thought: ...\" followed by either \"Action: <tool>\" and \"Action Input: <input>\", or \"Final Answer: <answer>\".";
/// Tool name recorded for turns the parser could not read.
pub const INVALID_ACTION: &str = "(invalid)";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub input_schema: String,
}

/// Failure text a tool hands back to the loop; it becomes an observation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolError(pub String);

impl std::fmt::Display for ToolError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<crate::Error> for ToolError {
    fn from(e: crate::Error) -> Self {
        ToolError(e.to_string())
    }
}

impl From<String> for ToolError {
    fn from(s: String) -> Self {
        ToolError(s)
    }
}

pub trait Tool: Send + Sync {
    fn spec(&self) -> ToolSpec;
    fn call(&self, input: &str) -> Result<String, ToolError>;
}

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: Vec<Arc<dyn Tool>>,
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tool, replacing any tool with the same name.
    pub fn register(&mut self, tool: Arc<dyn Tool>) {
        let name = tool.spec().name;
        self.tools.retain(|t| t.spec().name != name);
        self.tools.push(tool);
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Tool>> {
        self.tools.iter().find(|t| t.spec().name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.iter().map(|t| t.spec().name).collect()
    }

    pub fn specs(&self) -> Vec<ToolSpec> {
        self.tools.iter().map(|t| t.spec()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelOutput {
    Action {
        thought: String,
        tool: String,
        input: String,
    },
    FinalAnswer {
        thought: String,
        answer: String,
    },
    ParseFailure {
        raw: String,
    },
}

fn strip_directive<'a>(line: &'a str, directive: &str) -> Option<&'a str> {
    let head = line.get(..directive.len())?;
    head.eq_ignore_ascii_case(directive).then(|| &line[directive.len()..])
}

fn is_directive(line: &str) -> bool {
    ["Thought:", "Action:", "Action Input:", "Observation:", "Final Answer:"]
        .iter()
        .any(|d| strip_directive(line, d).is_some())
}

/// Reads one model turn. The first `Action:` or `Final Answer:` line
/// decides the outcome; text after `Final Answer:` runs to the end, and the
/// action input runs until an `Observation:` line or the next directive.
pub fn parse_model_output(text: &str) -> ModelOutput {
    let lines: Vec<&str> = text.lines().collect();
    let mut thought: Vec<String> = Vec::new();
    let mut in_thought = false;
    for (i, raw) in lines.iter().enumerate() {
        let line = raw.trim_start();
        if let Some(rest) = strip_directive(line, "Final Answer:") {
            let mut answer = vec![rest.trim().to_string()];
            answer.extend(lines[i + 1..].iter().map(|l| l.to_string()));
            let answer = answer.join("\n").trim().to_string();
            if answer.is_empty() {
                break;
            }
            return ModelOutput::FinalAnswer {
                thought: thought.join("\n").trim().to_string(),
                answer,
            };
        }
        if strip_directive(line, "Action Input:").is_some() {
            in_thought = false;
            continue;
        }
        if let Some(rest) = strip_directive(line, "Action:") {
            let tool = rest.trim().to_string();
            if tool.is_empty() {
                break;
            }
            let mut input: Vec<String> = Vec::new();
            let mut collecting = false;
            for next in &lines[i + 1..] {
                let n = next.trim_start();
                if let Some(r) = strip_directive(n, "Action Input:") {
                    if collecting {
                        break;
                    }
                    collecting = true;
                    input.push(r.trim().to_string());
                } else if is_directive(n) {
                    break;
                } else if collecting {
                    input.push(next.to_string());
                }
            }
            return ModelOutput::Action {
                thought: thought.join("\n").trim().to_string(),
                tool,
                input: input.join("\n").trim().to_string(),
            };
        }
        if let Some(rest) = strip_directive(line, "Thought:") {
            in_thought = true;
            thought.push(rest.trim().to_string());
        } else if in_thought {
            thought.push(raw.to_string());
        }
    }
    ModelOutput::ParseFailure { raw: text.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Tool,
    ParseFailure,
    Answer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool_name: String,
    pub tool_input: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentStep {
    pub step_no: usize,
    pub kind: StepKind,
    pub thought: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<ToolCall>,
    /// Full tool output; the model saw at most `max_tool_output_chars`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observation: Option<String>,
    #[serde(default)]
    pub observation_truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Answer,
    StepLimit,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Citation {
    pub doc_id: String,
    pub record_id: String,
    pub modality: Modality,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub schema_version: u32,
    pub session_id: String,
    pub query: String,
    pub steps: Vec<AgentStep>,
    pub final_answer: String,
    pub citations: Vec<Citation>,
    pub terminated_by: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Limits {
    pub max_steps: usize,
    pub max_tool_output_chars: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            max_tool_output_chars: DEFAULT_MAX_TOOL_OUTPUT_CHARS,
        }
    }
}

pub fn truncate_observation(text: &str, max_chars: usize) -> (String, bool) {
    if text.chars().count() <= max_chars {
        return (text.to_string(), false);
    }
    let mut s: String = text.chars().take(max_chars).collect();
    s.push_str(TRUNCATION_MARKER);
    (s, true)
}

/// Runs a tool by name. Unknown names, tool errors and panics all come back
/// as observation text.
pub fn dispatch(tool_name: &str, input: &str, registry: &ToolRegistry) -> String {
    let Some(tool) = registry.get(tool_name) else {
        return format!("unknown tool {tool_name}; available: [{}]", registry.names().join(", "));
    };
    match catch_unwind(AssertUnwindSafe(|| tool.call(input))) {
        Ok(Ok(out)) => out,
        Ok(Err(e)) => format!("tool error: {e}"),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            format!("tool error: panicked: {msg}")
        }
    }
}

pub fn system_prompt(registry: &ToolRegistry) -> String {
    let mut s = String::from(
        "You are a research assistant for analog and mixed-signal circuit design. Work step by step.\n\
         Each turn, write exactly one of:\n\n\
         Thought: <your reasoning>\nAction: <tool name>\nAction Input: <tool input>\n\n\
         or, once you have what you need:\n\n\
         Thought: <your reasoning>\nFinal Answer: <answer citing paper titles>\n\n\
         After an action you will receive \"Observation: <tool output>\". Tools:\n",
    );
    for spec in registry.specs() {
        s.push_str(&format!(
            "- {}: {} Input: {}\n",
            spec.name, spec.description, spec.input_schema
        ));
    }
    s
}

/// Deterministic policy used as the offline model's reply: search the
/// database for the question once, then answer with the top two text
/// passages of that search, tagged with their result numbers.
pub fn fallback_turn(query: &str, steps: &[AgentStep], registry: &ToolRegistry) -> String {
    let searched = steps
        .iter()
        .rev()
        .find(|s| s.kind == StepKind::Tool && s.action.as_ref().is_some_and(|a| a.tool_name == "search_db"));
    match searched {
        None if registry.get("search_db").is_some() => format!(
            "Thought: I should look this up in the database first.\nAction: search_db\nAction Input: {}",
            query.trim()
        ),
        None => "Thought: No search tool is available.\nFinal Answer: I cannot search the database to answer this."
            .to_string(),
        Some(step) => {
            let obs = step.observation.as_deref().unwrap_or("");
            // "[n] <title> (text): <passage>" lines become "<passage> [n]"
            let texts: Vec<String> = obs
                .lines()
                .filter_map(|l| {
                    let (head, passage) = l.split_once(" (text): ")?;
                    let tag = head.split_whitespace().next().filter(|t| t.starts_with('['))?;
                    Some(format!("{} {tag}", passage.trim()))
                })
                .take(2)
                .collect();
            if texts.is_empty() {
                "Thought: The database has nothing relevant.\nFinal Answer: The database has no information on this question."
                    .to_string()
            } else {
                format!(
                    "Thought: The search results answer the question.\nFinal Answer: {}",
                    texts.join(" ")
                )
            }
        }
    }
}

/// Runs the loop. `observer` sees every step as soon as it is complete.
pub fn run_session(
    query: &str,
    registry: &ToolRegistry,
    llm: &dyn ChatProvider,
    limits: &Limits,
    observer: &mut dyn FnMut(&AgentStep),
) -> Transcript {
    let started_at = Utc::now();
    let mut messages = vec![
        ChatMessage::system(system_prompt(registry)),
        ChatMessage::user(format!("Question: {}", query.trim())),
    ];
    let mut steps: Vec<AgentStep> = Vec::new();
    let mut final_answer = String::new();
    let mut terminated_by = Termination::StepLimit;
    let mut error = None;

    for step_no in 1..=limits.max_steps.max(1) {
        let request = ChatRequest::new(messages.clone()).with_fallback(fallback_turn(query, &steps, registry));
        let reply = match llm.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                terminated_by = Termination::Error;
                error = Some(e.to_string());
                break;
            }
        };
        messages.push(ChatMessage::assistant(reply.clone()));
        let step = match parse_model_output(&reply) {
            ModelOutput::FinalAnswer { thought, answer } => {
                final_answer = answer;
                terminated_by = Termination::Answer;
                AgentStep {
                    step_no,
                    kind: StepKind::Answer,
                    thought,
                    action: None,
                    observation: None,
                    observation_truncated: false,
                }
            }
            ModelOutput::Action { thought, tool, input } => {
                let full = dispatch(&tool, &input, registry);
                let (shown, truncated) = truncate_observation(&full, limits.max_tool_output_chars);
                messages.push(ChatMessage::user(format!("Observation: {shown}")));
                AgentStep {
                    step_no,
                    kind: StepKind::Tool,
                    thought,
                    action: Some(ToolCall {
                        tool_name: tool,
                        tool_input: input,
                    }),
                    observation: Some(full),
                    observation_truncated: truncated,
                }
            }
            ModelOutput::ParseFailure { raw } => {
                messages.push(ChatMessage::user(format!("Observation: {CORRECTIVE_OBSERVATION}")));
                AgentStep {
                    step_no,
                    kind: StepKind::ParseFailure,
                    thought: String::new(),
                    action: Some(ToolCall {
                        tool_name: INVALID_ACTION.into(),
                        tool_input: raw,
                    }),
                    observation: Some(CORRECTIVE_OBSERVATION.into()),
                    observation_truncated: false,
                }
            }
        };
        observer(&step);
        steps.push(step);
        if terminated_by == Termination::Answer {
            break;
        }
    }

    if terminated_by == Termination::StepLimit {
        final_answer = format!("Stopped after {} steps without a final answer.", steps.len());
        if let Some(obs) = steps.iter().rev().find_map(|s| s.observation.as_deref()) {
            let (short, _) = truncate_observation(obs, 300);
            final_answer.push_str(&format!(" Last observation: {short}"));
        }
    }

    Transcript {
        schema_version: TRANSCRIPT_SCHEMA_VERSION,
        session_id: Uuid::new_v4().to_string(),
        query: query.to_string(),
        steps,
        final_answer,
        citations: Vec::new(),
        terminated_by,
        error,
        started_at,
        finished_at: Utc::now(),
    }
}

fn push_field(out: &mut String, label: &str, value: &str) {
    out.push_str(label);
    out.push(' ');
    let mut lines = value.lines();
    out.push_str(lines.next().unwrap_or(""));
    out.push('\n');
    for l in lines {
        out.push_str("  ");
        out.push_str(l);
        out.push('\n');
    }
}

/// ReAct text form of a transcript; continuation lines are indented by two
/// spaces so every directive starts a line.
pub fn render_react(t: &Transcript) -> String {
    let mut out = String::new();
    for s in &t.steps {
        push_field(&mut out, "Thought:", &s.thought);
        match s.kind {
            StepKind::Answer => push_field(&mut out, "Final Answer:", &t.final_answer),
            _ => {
                let a = s.action.as_ref();
                push_field(&mut out, "Action:", a.map_or("", |a| a.tool_name.as_str()));
                push_field(&mut out, "Action Input:", a.map_or("", |a| a.tool_input.as_str()));
                push_field(&mut out, "Observation:", s.observation.as_deref().unwrap_or(""));
            }
        }
    }
    out
}

/// Checks the structural rules of a transcript and that its ReAct text
/// matches `(Thought Action ActionInput Observation)* (Thought FinalAnswer)?`.
pub fn validate_transcript(t: &Transcript, max_steps: usize) -> Result<(), String> {
    if t.steps.len() > max_steps {
        return Err(format!("{} steps exceed the limit of {max_steps}", t.steps.len()));
    }
    for (i, s) in t.steps.iter().enumerate() {
        if s.step_no != i + 1 {
            return Err(format!("step {} numbered {}", i + 1, s.step_no));
        }
        let last = i + 1 == t.steps.len();
        match s.kind {
            StepKind::Answer => {
                if !last {
                    return Err(format!("answer at step {} is not the last step", s.step_no));
                }
                if s.action.is_some() || s.observation.is_some() {
                    return Err(format!("answer step {} carries an action", s.step_no));
                }
            }
            StepKind::Tool | StepKind::ParseFailure => {
                if s.action.is_none() || s.observation.is_none() {
                    return Err(format!("step {} lacks an action or observation", s.step_no));
                }
            }
        }
    }
    let ends_with_answer = t.steps.last().is_some_and(|s| s.kind == StepKind::Answer);
    match t.terminated_by {
        Termination::Answer if !ends_with_answer || t.final_answer.trim().is_empty() => {
            return Err("terminated by answer without a final answer step".into())
        }
        Termination::StepLimit if ends_with_answer || t.steps.len() != max_steps => {
            return Err("step-limit termination before the limit".into())
        }
        Termination::Error if t.error.is_none() => return Err("error termination without message".into()),
        _ => {}
    }

    // grammar over the rendered text
    const CYCLE: [&str; 4] = ["Thought:", "Action:", "Action Input:", "Observation:"];
    let mut expect = 0usize;
    let mut answered = false;
    for line in render_react(t).lines() {
        if line.starts_with("  ") {
            continue;
        }
        if answered {
            return Err(format!("text after final answer: {line}"));
        }
        if expect == 1 && line.starts_with("Final Answer:") {
            answered = true;
            expect = 0;
            continue;
        }
        if !line.starts_with(CYCLE[expect]) || (expect == 1 && line.starts_with("Action Input:")) {
            return Err(format!("expected {} but found {line:?}", CYCLE[expect]));
        }
        expect = (expect + 1) % 4;
    }
    if expect != 0 {
        return Err("transcript ends mid-cycle".into());
    }
    Ok(())
}
