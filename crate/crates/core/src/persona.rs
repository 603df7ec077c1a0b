//! Latent persona extraction.
//!
//! A language model reads a user's profile and recent posts and answers with
//! a single flat JSON object:
//!
//! ```json
//! {"moral_values": ["care"], "human_values": ["benevolence"],
//!  "views": [{"target": "carbon tax", "stance": "favor"}],
//!  "profession": null, "interests": ["cycling"], "summary": "..."}
//! ```
//!
//! Belief tokens are normalized against the closed vocabulary; anything
//! outside it is dropped with a warning.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::datamodel::{self, UserRecord};
use crate::graph::{BeliefFamily, BeliefId};
use crate::llm::{fingerprint, LlmClient, LlmError, TASK_PERSONA};

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("llm call failed: {source}")]
    Transport {
        #[source]
        source: LlmError,
        /// Last raw answer received before the failure, if any.
        raw: Option<String>,
    },
    #[error("unparseable persona after {attempts} attempt(s): {message}; raw: {raw}")]
    Unparseable {
        attempts: u32,
        message: String,
        raw: String,
    },
    #[error("no JSON object found in model output")]
    NoObject,
    #[error("{path}:{line}: {message}")]
    File {
        path: String,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stance {
    Favor,
    Against,
    Neutral,
}

impl Stance {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "favor" | "favour" | "for" | "support" | "positive" => Some(Stance::Favor),
            "against" | "oppose" | "negative" => Some(Stance::Against),
            "neutral" | "mixed" => Some(Stance::Neutral),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct View {
    pub target: String,
    pub stance: Stance,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentPersona {
    pub user_id: String,
    pub moral_values: Vec<BeliefId>,
    pub human_values: Vec<BeliefId>,
    pub views: Vec<View>,
    pub profession: Option<String>,
    pub interests: Vec<String>,
    pub summary: String,
}

impl LatentPersona {
    /// Moral then human values.
    pub fn beliefs(&self) -> impl Iterator<Item = BeliefId> + '_ {
        self.moral_values.iter().chain(&self.human_values).copied()
    }

    /// Single-line JSON, the form stored in `personas.jsonl` and quoted in
    /// social-context prompts.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("persona serializes")
    }
}

/// Shown in place of an empty profile.
pub const NO_PROFILE: &str = "(no profile available)";
pub const NO_POSTS: &str = "(no posts available)";

pub const DEFAULT_HISTORY_CAP: usize = 50;

/// A rendered `(system, user)` prompt pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub system: String,
    pub user: String,
}

impl Prompt {
    pub fn text(&self) -> String {
        format!("{}\n\n{}", self.system, self.user)
    }

    pub fn fingerprint(&self) -> String {
        fingerprint(&self.system, &self.user)
    }
}

fn persona_system_prompt() -> String {
    let human: Vec<&str> = BeliefId::ALL
        .iter()
        .filter(|b| b.family() == BeliefFamily::HumanValue)
        .map(|b| b.as_str())
        .collect();
    let moral: Vec<&str> = BeliefId::ALL
        .iter()
        .filter(|b| b.family() == BeliefFamily::MoralValue)
        .map(|b| b.as_str())
        .collect();
    format!(
        "{TASK_PERSONA}
You analyze a social media user from their profile and recent posts and infer the beliefs \
that drive how they react to news: their human values, their moral values, their views on \
entities and issues, their profession, and their interests.
Answer with exactly one JSON object and nothing else, using these keys:
  \"moral_values\": list drawn only from [{}]
  \"human_values\": list drawn only from [{}]
  \"views\": list of {{\"target\": text, \"stance\": \"favor\" | \"against\" | \"neutral\"}}
  \"profession\": text or null
  \"interests\": list of text
  \"summary\": one or two sentences describing the user
Use empty lists when the evidence is insufficient.",
        moral.join(", "),
        human.join(", ")
    )
}

/// Renders the persona-extraction prompt. Only the last `history_cap`
/// posts are included; empty inputs produce explicit "not available" lines.
pub fn render_persona_prompt(profile: &str, history: &[String], history_cap: usize) -> Prompt {
    let mut user = String::new();
    let profile = profile.trim();
    user.push_str("Profile: ");
    user.push_str(if profile.is_empty() { NO_PROFILE } else { profile });
    user.push('\n');
    let start = history.len().saturating_sub(history_cap);
    let posts = &history[start..];
    if posts.is_empty() {
        user.push_str("Recent posts: ");
        user.push_str(NO_POSTS);
        user.push('\n');
    } else {
        user.push_str("Recent posts:\n");
        for p in posts {
            user.push_str("- ");
            // Keep one post per line.
            user.push_str(&p.replace('\n', " "));
            user.push('\n');
        }
    }
    Prompt {
        system: persona_system_prompt(),
        user,
    }
}

const REPAIR_INSTRUCTION: &str =
    "\n\nYour previous answer could not be parsed. Reply with only the JSON object described in the instructions.";

/// A parsed persona plus the belief tokens that were discarded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPersona {
    pub persona: LatentPersona,
    pub dropped: Vec<String>,
}

/// Finds the first JSON object embedded in `text`.
pub(crate) fn first_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

fn string_list(v: Option<&Value>) -> Vec<String> {
    match v {
        Some(Value::Array(items)) => items
            .iter()
            .filter_map(|x| match x {
                Value::String(s) => Some(s.clone()),
                Value::Null => None,
                other => Some(other.to_string()),
            })
            .collect(),
        Some(Value::String(s)) => s
            .split([',', ';'])
            .map(|t| t.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect(),
        _ => Vec::new(),
    }
}

fn push_unique<T: PartialEq>(list: &mut Vec<T>, item: T) {
    if !list.contains(&item) {
        list.push(item);
    }
}

/// Parses a model answer in the persona schema.
///
/// Unknown keys are ignored, belief tokens are matched case-insensitively and
/// filed under their own family, duplicates are removed, and
/// out-of-vocabulary beliefs are dropped.
pub fn parse_persona_response(text: &str) -> Result<ParsedPersona, PersonaError> {
    let obj = first_json_object(text).ok_or(PersonaError::NoObject)?;
    let mut persona = LatentPersona {
        user_id: obj.get("user_id").and_then(Value::as_str).unwrap_or_default().to_string(),
        ..Default::default()
    };
    let mut dropped = Vec::new();
    let tokens = string_list(obj.get("moral_values"))
        .into_iter()
        .chain(string_list(obj.get("human_values")));
    for token in tokens {
        match BeliefId::normalize(&token) {
            Some(b) if b.family() == BeliefFamily::MoralValue => push_unique(&mut persona.moral_values, b),
            Some(b) => push_unique(&mut persona.human_values, b),
            None => {
                log::warn!("dropping out-of-vocabulary belief \"{token}\"");
                dropped.push(token);
            }
        }
    }
    if let Some(Value::Array(views)) = obj.get("views") {
        for v in views {
            let target = v.get("target").and_then(Value::as_str);
            let stance = v.get("stance").and_then(Value::as_str).and_then(Stance::parse);
            match (target, stance) {
                (Some(t), Some(s)) if !t.trim().is_empty() => push_unique(
                    &mut persona.views,
                    View {
                        target: t.trim().to_string(),
                        stance: s,
                    },
                ),
                _ => log::warn!("dropping malformed view {v}"),
            }
        }
    }
    persona.profession = obj
        .get("profession")
        .and_then(Value::as_str)
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string);
    for i in string_list(obj.get("interests")) {
        push_unique(&mut persona.interests, i);
    }
    persona.summary = obj.get("summary").and_then(Value::as_str).unwrap_or_default().to_string();
    Ok(ParsedPersona { persona, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersonaOptions {
    pub history_cap: usize,
    pub max_retries: u32,
}

impl Default for PersonaOptions {
    fn default() -> Self {
        Self {
            history_cap: DEFAULT_HISTORY_CAP,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub user_id: String,
    pub fingerprint: String,
    pub raw: String,
    pub persona: LatentPersona,
}

/// Per-user persona cache keyed by prompt fingerprint. Entries whose
/// fingerprint no longer matches the rendered prompt are never served.
#[derive(Debug, Default)]
pub struct PersonaCache {
    entries: Mutex<BTreeMap<String, CacheEntry>>,
    path: Option<PathBuf>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl PersonaCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens a JSON-lines cache file (created on [`PersonaCache::save`]).
    pub fn open(path: &Path) -> Result<Self, PersonaError> {
        let mut entries = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|source| PersonaError::Io {
                path: path.display().to_string(),
                source,
            })?;
            for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                let e: CacheEntry = serde_json::from_str(line).map_err(|e| PersonaError::File {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
                entries.insert(e.user_id.clone(), e);
            }
        }
        Ok(Self {
            entries: Mutex::new(entries),
            path: Some(path.to_path_buf()),
            ..Default::default()
        })
    }

    pub fn get(&self, user_id: &str, fingerprint: &str) -> Option<LatentPersona> {
        let entries = self.entries.lock().expect("persona cache lock");
        let hit = entries
            .get(user_id)
            .filter(|e| e.fingerprint == fingerprint)
            .map(|e| e.persona.clone());
        match hit {
            Some(_) => self.hits.fetch_add(1, Ordering::Relaxed),
            None => self.misses.fetch_add(1, Ordering::Relaxed),
        };
        hit
    }

    pub fn insert(&self, entry: CacheEntry) {
        self.entries
            .lock()
            .expect("persona cache lock")
            .insert(entry.user_id.clone(), entry);
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("persona cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rewrites the backing file, sorted by user id. No-op for in-memory caches.
    pub fn save(&self) -> Result<(), PersonaError> {
        let Some(path) = &self.path else { return Ok(()) };
        let entries = self.entries.lock().expect("persona cache lock");
        let text = datamodel::to_jsonl(entries.values());
        datamodel::write_file(path, text.as_bytes()).map_err(|source| PersonaError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Extracts the latent persona of `user`, consulting and filling `cache`.
///
/// Unparseable answers are retried up to `max_retries` times with a repair
/// instruction appended.
pub fn extract_latent_persona(
    client: &dyn LlmClient,
    user: &UserRecord,
    cache: Option<&PersonaCache>,
    options: &PersonaOptions,
) -> Result<LatentPersona, PersonaError> {
    let prompt = render_persona_prompt(&user.profile, &user.history, options.history_cap);
    let fp = prompt.fingerprint();
    if let Some(hit) = cache.and_then(|c| c.get(&user.id, &fp)) {
        return Ok(hit);
    }
    let mut user_msg = prompt.user.clone();
    let mut last_raw: Option<String> = None;
    let attempts = options.max_retries + 1;
    for attempt in 0..attempts {
        let raw = client
            .complete(&prompt.system, &user_msg)
            .map_err(|source| PersonaError::Transport {
                source,
                raw: last_raw.clone(),
            })?;
        match parse_persona_response(&raw) {
            Ok(mut parsed) => {
                parsed.persona.user_id = user.id.clone();
                if let Some(c) = cache {
                    c.insert(CacheEntry {
                        user_id: user.id.clone(),
                        fingerprint: fp,
                        raw,
                        persona: parsed.persona.clone(),
                    });
                }
                return Ok(parsed.persona);
            }
            Err(e) => {
                log::warn!("persona for {} unparseable (attempt {}): {e}", user.id, attempt + 1);
                last_raw = Some(raw);
                if attempt == 0 {
                    user_msg.push_str(REPAIR_INSTRUCTION);
                }
            }
        }
    }
    Err(PersonaError::Unparseable {
        attempts,
        message: "no JSON object found in model output".into(),
        raw: last_raw.unwrap_or_default(),
    })
}

/// Extracts personas for every user, in input order, on up to `threads`
/// worker threads.
pub fn extract_all(
    client: &dyn LlmClient,
    users: &[UserRecord],
    cache: Option<&PersonaCache>,
    options: &PersonaOptions,
    threads: usize,
) -> Result<Vec<LatentPersona>, PersonaError> {
    let threads = threads.max(1);
    if threads == 1 || users.len() < 2 {
        return users
            .iter()
            .map(|u| extract_latent_persona(client, u, cache, options))
            .collect();
    }
    let chunk = users.len().div_ceil(threads);
    let results: Vec<Result<Vec<LatentPersona>, PersonaError>> = std::thread::scope(|s| {
        let handles: Vec<_> = users
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|u| extract_latent_persona(client, u, cache, options))
                        .collect::<Result<Vec<_>, _>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("extraction thread")).collect()
    });
    let mut out = Vec::with_capacity(users.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

pub fn write_personas(personas: &[LatentPersona], path: &Path) -> Result<(), PersonaError> {
    datamodel::write_file(path, datamodel::to_jsonl(personas).as_bytes()).map_err(|source| PersonaError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads `personas.jsonl`. Lines must be serialized personas; belief symbols
/// outside the vocabulary are rejected here (unlike model output).
pub fn read_personas(path: &Path) -> Result<Vec<LatentPersona>, PersonaError> {
    let text = std::fs::read_to_string(path).map_err(|source| PersonaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line).map_err(|e| PersonaError::File {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::MockClient;

    fn user(id: &str, profile: &str, history: &[&str]) -> UserRecord {
        UserRecord {
            id: id.into(),
            profile: profile.into(),
            history: history.iter().map(|s| s.to_string()).collect(),
            follower_count: 0,
        }
    }

    #[test]
    fn prompt_empty_user() {
        let p = render_persona_prompt("", &[], 50);
        assert!(p.user.contains(NO_PROFILE));
        assert!(p.user.contains(NO_POSTS));
        assert!(p.system.contains("\"moral_values\""));
    }

    #[test]
    fn prompt_history_cap() {
        let h: Vec<String> = (1..=5).map(|i| format!("post number {i}")).collect();
        let p = render_persona_prompt("x", &h, 2);
        assert!(!p.user.contains("post number 3"));
        assert!(p.user.contains("post number 4"));
        assert!(p.user.contains("post number 5"));
        assert_eq!(p, render_persona_prompt("x", &h, 2));
        assert!(render_persona_prompt("x", &h, 0).user.contains(NO_POSTS));
    }

    #[test]
    fn parse_examples() {
        let p = parse_persona_response(
            r#"{"moral_values":["care"],"human_values":["benevolence"],"views":[],"profession":null,"interests":[],"summary":"s"}"#,
        )
        .unwrap()
        .persona;
        assert_eq!(p.moral_values, vec![BeliefId::Care]);
        assert_eq!(p.human_values, vec![BeliefId::Benevolence]);
        assert_eq!(p.summary, "s");

        let p = parse_persona_response(r#"Sure! {"moral_values": "CARE, Harm"} hope this helps"#)
            .unwrap()
            .persona;
        assert_eq!(p.moral_values, vec![BeliefId::Care, BeliefId::Harm]);

        assert!(matches!(
            parse_persona_response("I think this user likes dogs."),
            Err(PersonaError::NoObject)
        ));
    }

    #[test]
    fn empty_object_is_minimal_persona() {
        let p = parse_persona_response("{}").unwrap().persona;
        assert_eq!(p, LatentPersona::default());
    }

    #[test]
    fn out_of_vocabulary_dropped() {
        let parsed = parse_persona_response(r#"{"moral_values":["honor","care"],"human_values":["Self-Direction"]}"#)
            .unwrap();
        assert_eq!(parsed.dropped, vec!["honor".to_string()]);
        assert_eq!(parsed.persona.moral_values, vec![BeliefId::Care]);
        assert_eq!(parsed.persona.human_values, vec![BeliefId::SelfDirection]);
    }

    #[test]
    fn mock_extraction_is_stable() {
        let client = MockClient::new(7);
        let u = user("u1", "nurse who cares about fairness", &["helping people"]);
        let a = extract_latent_persona(&client, &u, None, &PersonaOptions::default()).unwrap();
        let b = extract_latent_persona(&client, &u, None, &PersonaOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.user_id, "u1");
        assert!(a.moral_values.iter().all(|b| b.family() == BeliefFamily::MoralValue));
        assert_eq!(a.moral_values, vec![BeliefId::Fairness]);
    }

    #[test]
    fn retries_then_succeeds() {
        let client = MockClient::scripted(vec!["no idea".into(), r#"{"moral_values":["care"]}"#.into()]);
        let p = extract_latent_persona(&client, &user("u", "", &[]), None, &PersonaOptions::default()).unwrap();
        assert_eq!(p.moral_values, vec![BeliefId::Care]);
        assert_eq!(client.calls(), 2);
    }

    #[test]
    fn gives_up_with_raw_text() {
        let client = MockClient::fixed("still prose");
        let opts = PersonaOptions {
            max_retries: 2,
            ..Default::default()
        };
        match extract_latent_persona(&client, &user("u", "", &[]), None, &opts) {
            Err(PersonaError::Unparseable { attempts, raw, .. }) => {
                assert_eq!(attempts, 3);
                assert_eq!(raw, "still prose");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(client.calls(), 3);
    }

    #[test]
    fn cache_serves_only_fresh_entries() {
        let cache = PersonaCache::in_memory();
        let client = MockClient::new(1);
        let u = user("u", "loyalty first", &[]);
        extract_latent_persona(&client, &u, Some(&cache), &PersonaOptions::default()).unwrap();
        extract_latent_persona(&client, &u, Some(&cache), &PersonaOptions::default()).unwrap();
        assert_eq!(client.calls(), 1);
        assert_eq!(cache.hits(), 1);

        let changed = user("u", "tradition first", &[]);
        let p = extract_latent_persona(&client, &changed, Some(&cache), &PersonaOptions::default()).unwrap();
        assert_eq!(client.calls(), 2);
        assert_eq!(p.human_values, vec![BeliefId::Tradition]);
    }

    #[test]
    fn parallel_matches_sequential() {
        let client = MockClient::new(5);
        let users: Vec<UserRecord> = (0..9)
            .map(|i| user(&format!("u{i}"), &format!("profile {i}"), &["care about things"]))
            .collect();
        let opts = PersonaOptions::default();
        let seq = extract_all(&client, &users, None, &opts, 1).unwrap();
        let par = extract_all(&client, &users, None, &opts, 4).unwrap();
        assert_eq!(seq, par);
    }
}
