//! Contact-change detection over demonstration frames via an OpenAI-
//! compatible vision chat endpoint, plus the parser for its mandated output
//! format.
//!
//! The endpoint answers with two lines:
//!
//! ```text
//! Initial Graph: [(`cube', table'),(`robot left', `table'), ...]
//! ModeChangeDetection: [(15, (`robot right', 'cube'), `Add'), ...]
//! ```
//!
//! The tuple syntax is tolerant of mixed quote characters; node names are
//! normalized to lowercase snake_case.

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::contact::{apply_events, ContactEvent, ContactGraph, Edge, EventOp, FrameToStep};
use crate::error::{Error, Result};

/// Where contact streams come from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ContactSource {
    /// Ground-truth events recorded by the simulator.
    SimGroundTruth,
    /// A recorded contact JSON file per demonstration.
    RecordedJson { dir: String },
    /// A live vision-language endpoint.
    VlmHttp(VlmConfig),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct VlmConfig {
    /// Full chat-completions URL, e.g. `http://host:port/v1/chat/completions`.
    pub endpoint_url: String,
    pub model_name: String,
    /// Name of the environment variable carrying the API key; empty = no auth.
    pub api_key_env_var: String,
    pub timeout_s: f64,
    /// Frames were extracted from the demonstration at this rate.
    pub frame_rate_hz: f64,
}

impl Default for VlmConfig {
    fn default() -> Self {
        VlmConfig {
            endpoint_url: "http://127.0.0.1:8080/v1/chat/completions".into(),
            model_name: "qwen2.5-vl-72b-instruct".into(),
            api_key_env_var: String::new(),
            timeout_s: 120.0,
            frame_rate_hz: 10.0,
        }
    }
}

impl VlmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_s > 0.0) {
            return Err(Error::validation("timeout_s must be positive"));
        }
        if !(self.frame_rate_hz > 0.0) {
            return Err(Error::validation("frame_rate_hz must be positive"));
        }
        Ok(())
    }

    pub fn frame_to_step(&self, control_rate_hz: f64) -> FrameToStep {
        FrameToStep::from_rates(self.frame_rate_hz, control_rate_hz)
    }
}

/// Scene description rendered into the prompt.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TaskMeta {
    pub task_name: String,
    pub objects: Vec<String>,
    pub surfaces: Vec<String>,
    pub duration_s: f64,
}

/// Renders the contact-detection prompt for one frame sequence.
pub fn render_prompt(meta: &TaskMeta) -> String {
    format!(
        "Task: {task}\n\
         Task-related objects: {objects}\n\
         Supporting surfaces: {surfaces}\n\
         Video duration: {duration} seconds\n\
         \n\
         You will analyze a sequence of video frames to detect contact relationship changes, given the information below:\n\
         \n\
         FRAME INDEXING GUIDE:\n\
         The files are named as {{ frame_00000.jpg, frame_00001.jpg, ... }}. The frame index <frame_idx> corresponds to the value in the filename.\n\
         \n\
         CRITICAL CONTACT DETECTION RULES:\n\
         1. Grasp (robot-object): only when the robot gripper/fingers are PHYSICALLY CLOSED around the object AND the object moves with the robot.\n\
         2. Approach vs Grasp: a robot moving toward an object is not grasping. Only report grasp when contact is ESTABLISHED and MAINTAINED.\n\
         3. Visual confirmation: look for both gripper fingers touching/enclosing the object, object displacement caused by the robot, and clear physical contact rather than proximity.\n\
         \n\
         Answer the following questions step by step based on the given frame sequence:\n\
         1. Using objects, robots, and surfaces as nodes, and the contact relationships among them as edges, construct a graph describing the initial contact relationships. The <initial_graph> is a list of edges over the nodes of the whole scene. Initially, all objects should connect to the surface.\n\
         2. Starting from <initial_graph>, detect contact mode changes by analyzing each video frame in sequence. Only report contact changes when you can CLEARLY observe physical contact establishment or breaking, or object state changes (lifted, moved, released). Establishing contact is an Add operation; breaking contact is a Remove operation.\n\
         \n\
         Provide the final output in the following format, without additional explanation:\n\
         Initial Graph: <initial_graph>\n\
         ModeChangeDetection: [(<frame_idx>, <edge>, <Add> or <Remove>), ...]\n",
        task = meta.task_name,
        objects = meta.objects.join(", "),
        surfaces = meta.surfaces.join(", "),
        duration = meta.duration_s,
    )
}

// ---------------------------------------------------------------------------
// Response parsing
// ---------------------------------------------------------------------------

fn normalize_name(raw: &str) -> String {
    raw.trim_matches(|c: char| c.is_whitespace() || c == '`' || c == '\'' || c == '"')
        .to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
}

/// Splits the inside of a bracketed list into top-level tuple strings.
fn top_level_tuples(body: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for c in body.chars() {
        match c {
            '(' => {
                depth += 1;
                if depth >= 1 {
                    cur.push(c);
                }
            }
            ')' => {
                if depth == 0 {
                    // tolerate a stray closing parenthesis between tuples
                    continue;
                }
                depth -= 1;
                cur.push(c);
                if depth == 0 {
                    out.push(cur.trim().to_string());
                    cur.clear();
                }
            }
            ',' if depth == 0 => {}
            _ => {
                if depth > 0 {
                    cur.push(c);
                }
            }
        }
    }
    if depth != 0 {
        return Err(Error::VlmParse(format!("unbalanced parentheses in `{body}`")));
    }
    Ok(out)
}

/// Splits one tuple body at its top-level commas.
fn tuple_fields(tuple: &str) -> Result<Vec<String>> {
    let inner = tuple
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::VlmParse(format!("not a tuple: `{tuple}`")))?;
    let mut fields = Vec::new();
    let mut depth = 0usize;
    let mut cur = String::new();
    for c in inner.chars() {
        match c {
            '(' => {
                depth += 1;
                cur.push(c);
            }
            ')' => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| Error::VlmParse(format!("unbalanced tuple `{tuple}`")))?;
                cur.push(c);
            }
            ',' if depth == 0 => {
                fields.push(cur.trim().to_string());
                cur.clear();
            }
            _ => cur.push(c),
        }
    }
    if !cur.trim().is_empty() {
        fields.push(cur.trim().to_string());
    }
    Ok(fields)
}

fn parse_edge(field: &str) -> Result<Edge> {
    let parts = tuple_fields(field)?;
    if parts.len() != 2 {
        return Err(Error::VlmParse(format!("edge needs two nodes: `{field}`")));
    }
    let a = normalize_name(&parts[0]);
    let b = normalize_name(&parts[1]);
    if a.is_empty() || b.is_empty() {
        return Err(Error::VlmParse(format!("empty node name in `{field}`")));
    }
    Ok(Edge::new(a, b))
}

fn extract_bracket_list<'a>(text: &'a str, label: &str) -> Result<&'a str> {
    let at = text
        .find(label)
        .ok_or_else(|| Error::VlmParse(format!("missing `{label}` section")))?;
    let rest = &text[at + label.len()..];
    let open = rest
        .find('[')
        .ok_or_else(|| Error::VlmParse(format!("`{label}` has no list")))?;
    let mut depth = 0usize;
    for (i, c) in rest[open..].char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(&rest[open + 1..open + i]);
                }
            }
            _ => {}
        }
    }
    Err(Error::VlmParse(format!("`{label}` list never closes")))
}

/// The typed parse of a contact-detection reply.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedContacts {
    pub initial: ContactGraph,
    pub events: Vec<ContactEvent>,
}

/// Parses the mandated two-section output and validates event consistency
/// against the initial graph.
pub fn parse_response(text: &str, known_nodes: &[String]) -> Result<ParsedContacts> {
    let init_body = extract_bracket_list(text, "Initial Graph")?;
    let edges = top_level_tuples(init_body)?
        .iter()
        .map(|t| parse_edge(t))
        .collect::<Result<Vec<Edge>>>()?;
    let initial = ContactGraph::new(known_nodes.iter().map(|n| normalize_name(n)), edges)?;

    let events_body = extract_bracket_list(text, "ModeChangeDetection")?;
    let mut events = Vec::new();
    for tuple in top_level_tuples(events_body)? {
        let fields = tuple_fields(&tuple)?;
        if fields.len() != 3 {
            return Err(Error::VlmParse(format!(
                "event tuple needs (frame, edge, op): `{tuple}`"
            )));
        }
        let frame_idx: u64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::VlmParse(format!("bad frame index `{}`", fields[0])))?;
        let edge = parse_edge(&fields[1])?;
        let op = match normalize_name(&fields[2]).as_str() {
            "add" => EventOp::Add,
            "remove" => EventOp::Remove,
            other => {
                return Err(Error::VlmParse(format!("unknown operation `{other}`")));
            }
        };
        events.push(ContactEvent { frame_idx, edge, op });
    }
    // reject streams that cannot be applied
    apply_events(&initial, &events)?;
    Ok(ParsedContacts { initial, events })
}

// ---------------------------------------------------------------------------
// HTTP client
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: Vec<ContentPart>,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ContentPart {
    Text { text: String },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Serialize)]
struct ImageUrl {
    url: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// Lists `frame_*.jpg` files in order.
fn list_frames(frames_dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut frames: Vec<std::path::PathBuf> = std::fs::read_dir(frames_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("frame_") && n.ends_with(".jpg"))
                .unwrap_or(false)
        })
        .collect();
    frames.sort();
    if frames.is_empty() {
        return Err(Error::validation(format!(
            "no frame_*.jpg files in {}",
            frames_dir.display()
        )));
    }
    Ok(frames)
}

fn is_timeout(e: &reqwest::Error) -> bool {
    e.is_timeout()
}

/// Sends the prompt plus frames to the endpoint and parses the reply.
///
/// Synchronous, with one retry on transport errors; timeouts, bad statuses,
/// unparseable replies, and inconsistent event streams are distinct errors.
pub fn fetch_contacts_vlm(
    frames_dir: &Path,
    cfg: &VlmConfig,
    meta: &TaskMeta,
) -> Result<ParsedContacts> {
    cfg.validate()?;
    let frames = list_frames(frames_dir)?;
    let prompt = render_prompt(meta);

    use base64::Engine;
    let mut content = vec![ContentPart::Text { text: prompt }];
    for frame in &frames {
        let bytes = std::fs::read(frame)?;
        let b64 = base64::engine::general_purpose::STANDARD.encode(&bytes);
        content.push(ContentPart::ImageUrl {
            image_url: ImageUrl { url: format!("data:image/jpeg;base64,{b64}") },
        });
    }
    let request = ChatRequest {
        model: &cfg.model_name,
        messages: vec![ChatMessage { role: "user", content }],
    };

    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs_f64(cfg.timeout_s))
        .build()
        .map_err(|e| Error::VlmTransport(e.to_string()))?;

    let api_key = if cfg.api_key_env_var.is_empty() {
        None
    } else {
        Some(std::env::var(&cfg.api_key_env_var).map_err(|_| {
            Error::validation(format!(
                "api key environment variable {} is not set",
                cfg.api_key_env_var
            ))
        })?)
    };

    let send = || -> std::result::Result<reqwest::blocking::Response, reqwest::Error> {
        let mut req = client.post(&cfg.endpoint_url).json(&request);
        if let Some(key) = &api_key {
            req = req.bearer_auth(key);
        }
        req.send()
    };

    let response = match send() {
        Ok(r) => r,
        Err(e) if is_timeout(&e) => return Err(Error::VlmTimeout(cfg.timeout_s)),
        Err(_) => match send() {
            // one retry on transport failure
            Ok(r) => r,
            Err(e) if is_timeout(&e) => return Err(Error::VlmTimeout(cfg.timeout_s)),
            Err(e) => return Err(Error::VlmTransport(e.to_string())),
        },
    };

    let status = response.status();
    let body = response.text().map_err(|e| {
        if is_timeout(&e) {
            Error::VlmTimeout(cfg.timeout_s)
        } else {
            Error::VlmTransport(e.to_string())
        }
    })?;
    if !status.is_success() {
        return Err(Error::VlmStatus { status: status.as_u16(), body });
    }
    let chat: ChatResponse =
        serde_json::from_str(&body).map_err(|e| Error::VlmParse(format!("bad envelope: {e}")))?;
    let content = chat
        .choices
        .first()
        .map(|c| c.message.content.clone())
        .ok_or_else(|| Error::VlmParse("no choices in reply".into()))?;

    let mut known: Vec<String> = meta.objects.clone();
    known.extend(meta.surfaces.iter().cloned());
    known.push("robot_left".into());
    known.push("robot_right".into());
    parse_response(&content, &known)
}

/// The canonical example reply used by tests and the mock endpoint.
pub const EXAMPLE_RESPONSE: &str = "Initial Graph: [(`cube', table'),(`robot left', `table'),(`robot right', `table' )]\nModeChangeDetection: [(15, (`robot right', 'cube'), `Add'), (40, (`table', `cube'), `Remove'), (60, (`robot left' ,`cube') ,`Add'), (70, (`robot right' ,`cube') ,`Remove'), (80, (`table', `cube'), `Add'))]";

#[cfg(test)]
mod tests {
    use super::*;

    fn known() -> Vec<String> {
        vec![
            "cube".into(),
            "table".into(),
            "robot_left".into(),
            "robot_right".into(),
        ]
    }

    #[test]
    fn example_reply_parses_into_typed_values() {
        let parsed = parse_response(EXAMPLE_RESPONSE, &known()).unwrap();
        assert_eq!(parsed.initial.edges.len(), 3);
        assert!(parsed.initial.has_edge("cube", "table"));
        assert!(parsed.initial.has_edge("robot_left", "table"));
        assert!(parsed.initial.has_edge("robot_right", "table"));
        assert_eq!(parsed.events.len(), 5);
        assert_eq!(parsed.events[0].frame_idx, 15);
        assert_eq!(parsed.events[0].edge, Edge::new("robot_right", "cube"));
        assert_eq!(parsed.events[0].op, EventOp::Add);
        assert_eq!(parsed.events[4].frame_idx, 80);
        assert_eq!(parsed.events[4].edge, Edge::new("cube", "table"));
        assert_eq!(parsed.events[4].op, EventOp::Add);
    }

    #[test]
    fn missing_mode_change_section_is_parse_error() {
        let text = "Initial Graph: [(`cube', `table')]";
        assert!(matches!(parse_response(text, &known()), Err(Error::VlmParse(_))));
    }

    #[test]
    fn inconsistent_events_are_rejected() {
        let text = "Initial Graph: [(`cube', `table')]\nModeChangeDetection: [(5, (`robot left', `cube'), `Remove')]";
        assert!(matches!(
            parse_response(text, &known()),
            Err(Error::EventConsistency { frame: 5, .. })
        ));
    }

    #[test]
    fn malformed_tuple_is_parse_error() {
        let text = "Initial Graph: [(`cube', `table')]\nModeChangeDetection: [(abc, (`robot left', `cube'), `Add')]";
        assert!(matches!(parse_response(text, &known()), Err(Error::VlmParse(_))));
        let text2 = "Initial Graph: [(`cube', `table')]\nModeChangeDetection: [(5, (`robot left'), `Add')]";
        assert!(matches!(parse_response(text2, &known()), Err(Error::VlmParse(_))));
    }

    #[test]
    fn prompt_carries_scene_fields() {
        let meta = TaskMeta {
            task_name: "transfer_cube".into(),
            objects: vec!["cube".into()],
            surfaces: vec!["table".into()],
            duration_s: 8.0,
        };
        let p = render_prompt(&meta);
        assert!(p.contains("transfer_cube"));
        assert!(p.contains("FRAME INDEXING GUIDE"));
        assert!(p.contains("Initial Graph:"));
        assert!(p.contains("ModeChangeDetection:"));
    }

    #[test]
    fn name_normalization() {
        assert_eq!(normalize_name("`robot right'"), "robot_right");
        assert_eq!(normalize_name(" 'CUBE' "), "cube");
    }
}
