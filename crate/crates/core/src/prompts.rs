//! Prompt templates for every language-model role in the pipeline.
//!
//! The first line of each template doubles as a marker the offline mock
//! backend uses to recognize the prompt kind.

use crate::registry::CandidateKind;

pub const TOOL_MUTATION_MARKER: &str = "# Role: Expert Tool Designer";
pub const AGENT_MUTATION_MARKER: &str = "# Role: Expert Agent Architect";
pub const TASK_MARKER: &str = "# Role: Task Designer";
pub const USER_SIM_MARKER: &str = "# Role: Simulated User";
pub const ASSISTANT_SIM_MARKER: &str = "# Role: Simulated Assistant";
pub const RESULT_SIM_MARKER: &str = "# Role: Tool Environment Simulator";
pub const SUMMARY_MARKER: &str = "# Role: Result Summarizer";
pub const REASONER_MARKER: &str = "# Role: Light Routing Agent";

pub const MUTATION_STRATEGY_HEADING: &str = "## Mutation Strategy: ";
pub const ORIGINAL_TOOL_HEADING: &str = "## Original Tool Analysis";
pub const AGENT_NAME_LABEL: &str = "**Agent Name**: ";
pub const AGENT_DESCRIPTION_LABEL: &str = "**Description**: ";
pub const AGENT_TOOLS_LABEL: &str = "**Tools Used by This Agent**:";
pub const AGENT_SCHEMA_LABEL: &str = "**Agent InputSchema (Parameters)**:";

pub const CANDIDATES_OPEN: &str = "<candidates>";
pub const CANDIDATES_CLOSE: &str = "</candidates>";
pub const TASK_LABEL: &str = "Task: ";
pub const GOAL_LABEL: &str = "Next goal: ";
pub const PLANNED_LABEL: &str = "Planned candidate: ";
pub const OUTCOME_LABEL: &str = "Outcome: ";
pub const CANDIDATE_LABEL: &str = "Candidate: ";
pub const ARGUMENTS_LABEL: &str = "Arguments: ";
pub const RESULT_LABEL: &str = "Result: ";
pub const OPENING_FLAG: &str = "Conversation stage: opening";
pub const FAILURE_FLAG: &str = "Previous call failed: yes";
pub const ALL_DONE: &str = "none (all planned steps are complete)";

pub const ROUTE_TOOL: &str = "route_candidate";
pub const EXECUTE_TOOL: &str = "execute_candidate";
pub const TOOL_RESULT_LABEL: &str = "Tool result: ";

pub fn tool_mutation_prompt(
    base_tool_json: &str,
    strategy_name: &str,
    strategy_description: &str,
    tags_json: &str,
) -> String {
    format!(
        r#"{TOOL_MUTATION_MARKER}

You are an expert tool designer specializing in creating innovative software tools through genetic algorithm-inspired mutations. Your expertise includes API design, parameter optimization, and functional enhancement.

## Your Task

Perform a **MUTATION OPERATION** on the given tool to create a new, related but distinct tool that serves a similar domain but with meaningful innovations.

{ORIGINAL_TOOL_HEADING}

{base_tool_json}

{MUTATION_STRATEGY_HEADING}{strategy_name}

{strategy_description}

## Design Requirements

### Functional Requirements:
- **Innovation**: Create meaningful functional differences while maintaining domain relevance
- **Utility**: Ensure the new tool solves a real problem or improves upon existing functionality
- **Compatibility**: Maintain similar complexity level and use case applicability

### Technical Requirements:
- **Parameters**: Design intuitive, well-typed parameters following JSON Schema standards
- **Naming**: Use clear, descriptive names that immediately convey purpose
- **Documentation**: Write concise but comprehensive descriptions
- **Validation**: Include appropriate parameter validation and constraints

### Constraints:
- Keep the same domain tags: {tags_json}
- Avoid direct copying - ensure meaningful differentiation
- Maintain professional tool naming conventions
- Focus on practical, implementable functionality

## Expected Output

Return **ONLY** valid JSON in this exact format (no markdown, no extra text):

{{
  "name": "descriptive_tool_name",
  "description": "Clear, actionable description of what this tool does and why it's useful",
  "inputSchema": {{
    "type": "object",
    "properties": {{
      "parameter_name": {{
        "type": "appropriate_type",
        "description": "What this parameter does and how to use it",
        "default": "optional_default_value"
      }}
    }},
    "required": ["list_required_parameters"]
  }},
  "tags": {tags_json}
}}

**CRITICAL**: Use only double quotes, no single quotes. No markdown formatting.

**Note**: Only include a "results" field if the tool produces structured output that requires explicit definition.

## Quality Checklist
- Tool name is descriptive and unique
- Description clearly explains purpose and value
- Parameters are well-designed with proper types
- Required parameters are logically necessary
- JSON syntax is valid and complete
"#
    )
}

pub fn agent_mutation_prompt(
    agent_name: &str,
    agent_description: &str,
    agent_tools_json: &str,
    agent_schema_json: &str,
    strategy_name: &str,
    strategy_description: &str,
) -> String {
    format!(
        r#"{AGENT_MUTATION_MARKER}

You are an expert AI agent architect specializing in designing autonomous agents through genetic algorithm-inspired mutations. Your expertise includes agent workflow design, tool orchestration, and capability planning.

## Your Task

Perform a **MUTATION OPERATION** on the given agent to create a new, related but distinct agent that serves a similar purpose but with meaningful innovations in its capabilities and tool composition.

## Original Agent Analysis

{AGENT_NAME_LABEL}{agent_name}

{AGENT_DESCRIPTION_LABEL}{agent_description}

{AGENT_TOOLS_LABEL}

{agent_tools_json}

{AGENT_SCHEMA_LABEL}

{agent_schema_json}

{MUTATION_STRATEGY_HEADING}{strategy_name}

{strategy_description}

## Design Requirements

### Agent Design Principles:
- **Coherent Toolset**: The tools should work together to accomplish the agent's goals
- **Clear Workflow**: The agent should have a logical flow of operations
- **Practical Utility**: The agent should solve real-world problems
- **Tool Synergy**: Tools should complement each other, not duplicate functionality

### Tool Evolution Guidelines:
- You may ADD new tools that enhance the agent's capabilities
- You may MODIFY existing tools to better fit the new agent's purpose
- You may REMOVE tools that don't align with the new agent's focus
- You may RENAME tools to reflect their new context
- Aim for 4-8 tools per agent (not too few, not too many)

### Naming Convention:
- Agent name MUST end with "_agent" suffix
- Use snake_case format
- Name should clearly indicate the agent's primary function
- Example: "code_review_agent", "data_analysis_agent", "document_qa_agent"

### Tags Guidelines:
- Tags should categorize the agent's primary domain or capability
- Use descriptive tags like: "code agent", "search agent", "web agent", "data agent", "research agent", "automation agent", "analysis agent", "multimodal agent", etc.
- Can include multiple tags if the agent spans multiple domains

## Expected Output

Return **ONLY** valid JSON in this exact format (no markdown, no extra text):

{{
  "name": "descriptive_name_agent",
  "description": "Clear description of what this agent does, its primary use cases, and how it accomplishes its goals",
  "tools": [
    "tool_name_1",
    "tool_name_2",
    "tool_name_3"
  ],
  "inputSchema": {{
    "type": "object",
    "properties": {{
      "parameter_name": {{
        "type": "appropriate_type",
        "description": "Detailed description of what this parameter configures for the agent"
      }}
    }}
  }},
  "tags": ["category agent"]
}}

**CRITICAL REQUIREMENTS:**
- Agent name MUST end with "_agent"
- Use only double quotes, no single quotes
- No markdown formatting
- Tools array should contain 4-8 tool names
- Each tool name should be descriptive and use snake_case
- Tags should be descriptive category labels (e.g., "code agent", "search agent", "web agent")
- Each parameter in inputSchema.properties MUST have a detailed "description" field

## Quality Checklist
- Agent name ends with "_agent" and clearly describes purpose
- Description explains the agent's workflow and capabilities
- Tools form a coherent set that enables the agent's goals
- Tools are appropriately evolved from the original (not just copied)
- Parameters make sense for configuring this agent
- Each parameter has a clear, detailed description in inputSchema
- Tags accurately categorize the agent's domain
- JSON syntax is valid and complete
"#
    )
}

pub fn task_prompt(kind: CandidateKind, candidates_json: &str) -> String {
    format!(
        r#"{TASK_MARKER}

You design realistic multi-step user tasks that require several of the {kind}s listed below, possibly with dependencies between steps (one step consuming another's output).

{CANDIDATES_OPEN}
{candidates_json}
{CANDIDATES_CLOSE}

Write one task description a real user could ask for, and a coarse-grained execution plan. Every step must name exactly one {kind} from the list above by its exact name; do not invent {kind}s.

Return ONLY valid JSON in this format (no markdown):
{{"task": "task description", "steps": [{{"goal": "what this step achieves", "candidate": "exact_{kind}_name"}}]}}
"#
    )
}

pub struct UserTurnContext<'a> {
    pub task: &'a str,
    pub plan_outline: &'a str,
    pub transcript: &'a str,
    pub next_goal: Option<&'a str>,
    pub opening: bool,
    pub previous_failed: bool,
}

pub fn user_sim_prompt(ctx: &UserTurnContext<'_>) -> String {
    let mut out = format!(
        "{USER_SIM_MARKER}\n\nYou play the user in a conversation with an AI assistant. Speak naturally and briefly, as a real user would. Never mention internal tool names unless the assistant used them first.\n\n{TASK_LABEL}{}\n\nPlan:\n{}\n\n",
        ctx.task, ctx.plan_outline
    );
    if ctx.opening {
        out.push_str(OPENING_FLAG);
        out.push('\n');
    }
    if ctx.previous_failed {
        out.push_str(FAILURE_FLAG);
        out.push('\n');
    }
    match ctx.next_goal {
        Some(goal) => out.push_str(&format!("{GOAL_LABEL}{goal}\n")),
        None => out.push_str(&format!("{GOAL_LABEL}{ALL_DONE}\n")),
    }
    out.push_str(&format!(
        "\nConversation so far:\n{}\n\nWrite the user's next message only.",
        ctx.transcript
    ));
    out
}

pub struct AssistantTurnContext<'a> {
    pub kind: CandidateKind,
    pub candidates_json: &'a str,
    pub transcript: &'a str,
    pub planned: Option<(&'a str, &'a str)>,
}

pub fn assistant_sim_prompt(ctx: &AssistantTurnContext<'_>) -> String {
    let kind = ctx.kind;
    let planned = match ctx.planned {
        Some((name, goal)) => format!("{PLANNED_LABEL}{name}\nStep goal: {goal}"),
        None => format!("{PLANNED_LABEL}{ALL_DONE}"),
    };
    format!(
        r#"{ASSISTANT_SIM_MARKER}

You play an AI assistant that solves the user's request by calling {kind}s. Available {kind}s:

{CANDIDATES_OPEN}
{candidates}
{CANDIDATES_CLOSE}

Conversation so far:
{transcript}

{planned}

If a candidate is planned, call it (at most two calls per turn) with arguments that satisfy its inputSchema. If no candidate is planned, answer the user without calls.

Return ONLY valid JSON (no markdown):
{{"thought": "brief reasoning", "calls": [{{"name": "exact_name", "arguments": {{}}}}], "answer": "text shown to the user when no calls are made"}}
"#,
        candidates = ctx.candidates_json,
        transcript = ctx.transcript,
    )
}

pub fn result_sim_prompt(spec_json: &str, name: &str, arguments_json: &str, fail: bool) -> String {
    let outcome = if fail { "failure" } else { "success" };
    format!(
        "{RESULT_SIM_MARKER}\n\nYou simulate the execution environment. Produce the raw output the candidate below would return for these arguments. Keep it short and realistic. For a failure, return an error message a real service might emit.\n\nSpecification:\n{spec_json}\n\n{CANDIDATE_LABEL}{name}\n{ARGUMENTS_LABEL}{arguments_json}\n{OUTCOME_LABEL}{outcome}\n"
    )
}

pub fn summary_prompt(name: &str, result: &str, failed: bool) -> String {
    let outcome = if failed { "failure" } else { "success" };
    format!(
        "{SUMMARY_MARKER}\n\nYou are the assistant. Briefly tell the user what the call returned.\n\n{CANDIDATE_LABEL}{name}\n{OUTCOME_LABEL}{outcome}\n{RESULT_LABEL}{result}\n"
    )
}

fn noun(kind: CandidateKind) -> (&'static str, &'static str, &'static str) {
    match kind {
        CandidateKind::Agent => ("Agent", "agent", "agents"),
        CandidateKind::Tool => ("Tool", "tool", "tools"),
    }
}

/// System prompt of the history-aware router.
pub fn router_system_prompt(kind: CandidateKind) -> String {
    let (title, one, many) = noun(kind);
    format!(
        "You are {article} {title} Router.\nYour task is to analyze the meaning of a user query and select the most relevant {many} based on the {many}' descriptions and schemas.\n\nGuidelines:\n1. Consider both the {one} descriptions and input schemas when judging relevance.\n2. Use the inputSchema to understand what parameters each {one} accepts.\n3. Do not infer hidden capabilities or invent {many}.\n4. Return only one {one} that is most relevant.\n5. Output strictly in the required format: [\"{one}_name\"], no extra commentary.",
        article = if kind == CandidateKind::Agent { "an" } else { "a" },
    )
}

/// User prompt of the router; `history_block` is the full `<history>…</history>` element.
pub fn router_user_prompt(kind: CandidateKind, history_block: &str, query: &str, pool_json: &str) -> String {
    let (_, one, many) = noun(kind);
    format!(
        "Below are examples of the user's past interactions, including queries and system responses:\n{history_block}\n\nCurrent user query:\n<current query>\"{query}\"</current query>\n\nAvailable {many}:\n<{many}>{pool_json}</{many}>\n\nTask:\n<task>\nAnalyze the current query in the context of the user's past queries and {one} descriptions.\nReturn the most relevant {one} based on their descriptions and schemas.\n</task>\n\nOutput requirements:\n###\n- First, think through your reasoning inside <think></think> tags\n- Then output only one {one} name as a JSON array\n- Format:\n<think>\nYour reasoning about which {one} to select...\n</think>\n\n[\"{one}_name\"]\n###"
    )
}

/// The two tool specifications shown to the light routing agent's reasoner.
pub fn reasoner_tool_specs() -> String {
    format!(
        r#"[
  {{
    "name": "{ROUTE_TOOL}",
    "description": "Ask the router for the single best candidate for your current need. The router sees the whole conversation so far.",
    "inputSchema": {{"type": "object", "properties": {{"need": {{"type": "string", "description": "What you need done next"}}}}, "required": ["need"]}}
  }},
  {{
    "name": "{EXECUTE_TOOL}",
    "description": "Execute the candidate most recently returned by {ROUTE_TOOL} with the given arguments.",
    "inputSchema": {{"type": "object", "properties": {{"arguments": {{"type": "object", "description": "Arguments for the routed candidate"}}}}, "required": ["arguments"]}}
  }}
]"#
    )
}

pub fn reasoner_system_prompt() -> String {
    format!(
        "{REASONER_MARKER}\n\nYou solve the user's task step by step. You cannot see the catalog of available tools or agents. To get something done, call {ROUTE_TOOL} with a description of your need, then call {EXECUTE_TOOL} to run the routed candidate. When the task is complete, give the final answer.\n\nYou have exactly these tools:\n<tools>\n{}\n</tools>\n\nReply with ONLY valid JSON (no markdown), one of:\n{{\"thought\": \"...\", \"tool\": \"{ROUTE_TOOL}\", \"arguments\": {{\"need\": \"...\"}}}}\n{{\"thought\": \"...\", \"tool\": \"{EXECUTE_TOOL}\", \"arguments\": {{\"arguments\": {{}}}}}}\n{{\"thought\": \"...\", \"answer\": \"final answer\"}}",
        reasoner_tool_specs()
    )
}

/// Extracts the text following `label` up to the end of its line.
pub(crate) fn line_after<'a>(text: &'a str, label: &str) -> Option<&'a str> {
    let start = text.find(label)? + label.len();
    let rest = &text[start..];
    Some(rest.split('\n').next().unwrap_or(rest).trim())
}

/// Extracts the text between `open` and the next `close`.
pub(crate) fn between<'a>(text: &'a str, open: &str, close: &str) -> Option<&'a str> {
    let start = text.find(open)? + open.len();
    let len = text[start..].find(close)?;
    Some(&text[start..start + len])
}
