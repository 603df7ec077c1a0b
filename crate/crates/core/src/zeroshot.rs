//! Zero-shot forecasting with a chat model: the user's most influential
//! follow-neighbors are summarized into a social context that is prompted
//! alongside the user's own latent persona and the headline.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{self, Dataset, Intensity, NewsItem, Polarity, ResponseRecord, Split, UserRecord};
use crate::graph::HeteroGraph;
use crate::llm::{LlmClient, LlmError, TASK_PREDICT, TASK_SOCIAL};
use crate::metrics::{evaluate, EvalReport, MetricError, Prediction};
use crate::persona::{extract_latent_persona, LatentPersona, PersonaCache, PersonaError, PersonaOptions, Prompt, NO_POSTS, NO_PROFILE};

pub const DEFAULT_K: usize = 25;

/// Summary used when a user has no follow-neighbors to aggregate.
pub const NO_SOCIAL_CONTEXT: &str = "(no social context available)";

#[derive(Debug, Error)]
pub enum ZeroShotError {
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("unknown news item {0}")]
    UnknownNews(String),
    #[error("unparseable answer after {attempts} attempts: {raw:?}")]
    Unparseable { attempts: u32, raw: String },
    #[error("test split is empty")]
    EmptyTest,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroShotMode {
    /// Profile, history and headline only.
    Baseline,
    /// Adds the user's latent persona.
    Latent,
    /// Adds the latent persona and the aggregated social context.
    Social,
}

impl ZeroShotMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ZeroShotMode::Baseline => "baseline",
            ZeroShotMode::Latent => "latent",
            ZeroShotMode::Social => "social",
        }
    }
}

impl fmt::Display for ZeroShotMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ZeroShotMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(ZeroShotMode::Baseline),
            "latent" => Ok(ZeroShotMode::Latent),
            "social" => Ok(ZeroShotMode::Social),
            _ => Err(format!("unknown mode {s:?} (expected baseline, latent or social)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SocialContext {
    pub user_id: String,
    pub summary: String,
    /// Neighbor ids in rank order.
    pub contributors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroShotPrediction {
    pub polarity: Polarity,
    pub intensity: Intensity,
    pub raw: String,
}

/// Follower counts by user id, as recorded in the dataset.
pub fn follower_counts(dataset: &Dataset) -> BTreeMap<String, u64> {
    dataset.users().iter().map(|u| (u.id.clone(), u.follower_count)).collect()
}

/// The `k` follow-neighbors (either direction) with the most followers.
/// Ties go to the smaller id; users without a recorded count rank as 0.
pub fn filter_neighbors(
    graph: &HeteroGraph,
    counts: &BTreeMap<String, u64>,
    user_id: &str,
    k: usize,
) -> Result<Vec<String>, ZeroShotError> {
    if !graph.users().contains(user_id) {
        return Err(ZeroShotError::UnknownUser(user_id.to_string()));
    }
    let mut ranked: Vec<(u64, String)> = graph
        .follow_neighbors(user_id)
        .into_iter()
        .map(|n| (counts.get(&n).copied().unwrap_or(0), n))
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    Ok(ranked.into_iter().take(k).map(|(_, n)| n).collect())
}

/// Social-context prompt listing neighbor personas in rank order.
pub fn render_social_prompt(neighbors: &[LatentPersona]) -> Prompt {
    let system = format!(
        "{TASK_SOCIAL}
You are given the personas of the most influential accounts connected to a social media user, \
most influential first. Summarize in a few sentences the values, moral views and stances that \
dominate this social circle, as they would shape how the user reacts to news."
    );
    let mut user = String::from("Neighbor personas:\n");
    for (i, p) in neighbors.iter().enumerate() {
        user.push_str(&format!("{}. {}\n", i + 1, p.to_json()));
    }
    Prompt { system, user }
}

/// Summarizes neighbor personas into a social context. No call is made for
/// an empty neighbor list.
pub fn aggregate_social_context(
    client: &dyn LlmClient,
    user_id: &str,
    neighbors: &[LatentPersona],
) -> Result<SocialContext, ZeroShotError> {
    let contributors = neighbors.iter().map(|p| p.user_id.clone()).collect();
    if neighbors.is_empty() {
        return Ok(SocialContext {
            user_id: user_id.to_string(),
            summary: NO_SOCIAL_CONTEXT.to_string(),
            contributors,
        });
    }
    let prompt = render_social_prompt(neighbors);
    let reply = client.complete(&prompt.system, &prompt.user)?;
    Ok(SocialContext {
        user_id: user_id.to_string(),
        summary: reply.trim().to_string(),
        contributors,
    })
}

/// The strict answer line.
pub fn format_answer(polarity: Polarity, intensity: Intensity) -> String {
    format!("polarity={}; intensity={}", polarity.as_str(), intensity.get())
}

fn field_value<'a>(lower: &'a str, key: &str) -> impl Iterator<Item = &'a str> + 'a {
    let key = key.to_string();
    lower.match_indices(key.as_str()).map(|(i, _)| i + key.len()).collect::<Vec<_>>().into_iter().filter_map(move |at| {
        let rest = lower[at..].trim_start();
        let rest = rest.strip_prefix('=').or_else(|| rest.strip_prefix(':'))?;
        Some(rest.trim_start())
    })
}

/// Parses `polarity=<p>; intensity=<0-3>`, tolerating either field order,
/// `:` instead of `=`, any case and surrounding text.
pub fn parse_answer(text: &str) -> Result<(Polarity, Intensity), String> {
    let lower = text.to_lowercase();
    let polarity = field_value(&lower, "polarity")
        .find_map(|v| {
            let word: String = v.chars().take_while(|c| c.is_alphabetic()).collect();
            Polarity::parse(&word)
        })
        .ok_or_else(|| "no polarity field".to_string())?;
    let digits: Option<String> = field_value(&lower, "intensity")
        .map(|v| v.chars().take_while(|c| c.is_ascii_digit()).collect::<String>())
        .find(|d| !d.is_empty());
    let digits = digits.ok_or_else(|| "no intensity field".to_string())?;
    let intensity = digits
        .parse::<u8>()
        .ok()
        .and_then(Intensity::new)
        .ok_or_else(|| format!("intensity {digits} outside 0-3"))?;
    Ok((polarity, intensity))
}

fn predict_system_prompt() -> String {
    format!(
        "{TASK_PREDICT}
You forecast how a social media user will respond to a news headline. Use everything given \
about the user. Answer with exactly one line in this format:
polarity=<negative|neutral|positive>; intensity=<0-3>
where intensity 0 means no emotion and 3 a very strong one."
    )
}

/// Prediction prompt for one `(user, news)` pair. Sections are included
/// when given; the headline is always the last line.
pub fn render_prediction_prompt(
    user: &UserRecord,
    news: &NewsItem,
    latent: Option<&LatentPersona>,
    social: Option<&SocialContext>,
    history_cap: usize,
) -> Prompt {
    let mut text = String::new();
    let profile = user.profile.trim();
    text.push_str("Profile: ");
    text.push_str(if profile.is_empty() { NO_PROFILE } else { profile });
    text.push('\n');
    let posts = &user.history[user.history.len().saturating_sub(history_cap)..];
    if posts.is_empty() {
        text.push_str(&format!("Recent posts: {NO_POSTS}\n"));
    } else {
        text.push_str("Recent posts:\n");
        for p in posts {
            text.push_str(&format!("- {}\n", p.replace('\n', " ")));
        }
    }
    if let Some(p) = latent {
        text.push_str(&format!("Latent persona: {}\n", p.to_json()));
    }
    if let Some(s) = social {
        text.push_str(&format!("Social context: {}\n", s.summary.replace('\n', " ")));
    }
    text.push_str(&format!("Headline: {}\n", news.headline.replace('\n', " ")));
    Prompt {
        system: predict_system_prompt(),
        user: text,
    }
}

const REPAIR_INSTRUCTION: &str =
    "\n\nYour previous answer could not be parsed. Reply with exactly one line: polarity=<negative|neutral|positive>; intensity=<0-3>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ZeroShotOptions {
    pub k: usize,
    pub max_retries: u32,
    pub history_cap: usize,
}

impl Default for ZeroShotOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            max_retries: 3,
            history_cap: crate::persona::DEFAULT_HISTORY_CAP,
        }
    }
}

/// Asks the model for a forecast, retrying with a repair instruction when
/// the answer cannot be parsed.
pub fn predict_zero_shot(
    client: &dyn LlmClient,
    user: &UserRecord,
    news: &NewsItem,
    latent: Option<&LatentPersona>,
    social: Option<&SocialContext>,
    options: &ZeroShotOptions,
) -> Result<ZeroShotPrediction, ZeroShotError> {
    let prompt = render_prediction_prompt(user, news, latent, social, options.history_cap);
    let mut msg = prompt.user.clone();
    let attempts = options.max_retries + 1;
    let mut raw = String::new();
    for attempt in 0..attempts {
        raw = client.complete(&prompt.system, &msg)?;
        match parse_answer(&raw) {
            Ok((polarity, intensity)) => {
                return Ok(ZeroShotPrediction {
                    polarity,
                    intensity,
                    raw,
                })
            }
            Err(e) => {
                log::warn!("answer for ({}, {}) unparseable: {e}", user.id, news.id);
                if attempt == 0 {
                    msg.push_str(REPAIR_INSTRUCTION);
                }
            }
        }
    }
    Err(ZeroShotError::Unparseable { attempts, raw })
}

/// One line of `zeroshot_predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroShotRecord {
    pub user_id: String,
    pub news_id: String,
    pub mode: ZeroShotMode,
    pub polarity: Polarity,
    pub intensity: Intensity,
    pub raw: String,
}

#[derive(Debug, Clone)]
pub struct ZeroShotRun {
    /// Successful predictions in test-split order.
    pub records: Vec<ZeroShotRecord>,
    /// Metrics over the successful predictions; `failures` is set.
    pub report: EvalReport,
}

/// Persona and social-context caches shared across samples.
struct Contexts<'a> {
    client: &'a dyn LlmClient,
    dataset: &'a Dataset,
    known: BTreeMap<String, LatentPersona>,
    cache: &'a PersonaCache,
    persona_options: PersonaOptions,
    social: BTreeMap<String, SocialContext>,
}

impl Contexts<'_> {
    fn persona(&mut self, user_id: &str) -> Result<LatentPersona, ZeroShotError> {
        if let Some(p) = self.known.get(user_id) {
            return Ok(p.clone());
        }
        let user = self
            .dataset
            .user(user_id)
            .ok_or_else(|| ZeroShotError::UnknownUser(user_id.to_string()))?;
        let p = extract_latent_persona(self.client, user, Some(self.cache), &self.persona_options)?;
        self.known.insert(user_id.to_string(), p.clone());
        Ok(p)
    }

    fn social(&mut self, graph: &HeteroGraph, counts: &BTreeMap<String, u64>, user_id: &str, k: usize) -> Result<SocialContext, ZeroShotError> {
        if let Some(s) = self.social.get(user_id) {
            return Ok(s.clone());
        }
        let neighbors = filter_neighbors(graph, counts, user_id, k)?;
        let personas = neighbors.iter().map(|n| self.persona(n)).collect::<Result<Vec<_>, _>>()?;
        let ctx = aggregate_social_context(self.client, user_id, &personas)?;
        self.social.insert(user_id.to_string(), ctx.clone());
        Ok(ctx)
    }
}

/// Runs the zero-shot pipeline over every test sample. Known personas are
/// used as given; missing ones are extracted on demand. Per-sample failures
/// are counted and skipped.
#[allow(clippy::too_many_arguments)]
pub fn run_zero_shot_eval(
    graph: &HeteroGraph,
    dataset: &Dataset,
    client: &dyn LlmClient,
    mode: ZeroShotMode,
    options: &ZeroShotOptions,
    personas: &[LatentPersona],
    cache: &PersonaCache,
    persona_options: &PersonaOptions,
) -> Result<ZeroShotRun, ZeroShotError> {
    let test = dataset.split(Split::Test);
    if test.is_empty() {
        return Err(ZeroShotError::EmptyTest);
    }
    let counts = follower_counts(dataset);
    let mut ctx = Contexts {
        client,
        dataset,
        known: personas.iter().map(|p| (p.user_id.clone(), p.clone())).collect(),
        cache,
        persona_options: *persona_options,
        social: BTreeMap::new(),
    };
    let mut records = Vec::new();
    let mut gold: Vec<&ResponseRecord> = Vec::new();
    let mut failures = 0usize;
    for r in test {
        let result = (|| {
            let user = dataset.user(&r.user_id).ok_or_else(|| ZeroShotError::UnknownUser(r.user_id.clone()))?;
            let news = dataset.news_item(&r.news_id).ok_or_else(|| ZeroShotError::UnknownNews(r.news_id.clone()))?;
            let latent = match mode {
                ZeroShotMode::Baseline => None,
                _ => Some(ctx.persona(&r.user_id)?),
            };
            let social = match mode {
                ZeroShotMode::Social => Some(ctx.social(graph, &counts, &r.user_id, options.k)?),
                _ => None,
            };
            predict_zero_shot(client, user, news, latent.as_ref(), social.as_ref(), options)
        })();
        match result {
            Ok(p) => {
                records.push(ZeroShotRecord {
                    user_id: r.user_id.clone(),
                    news_id: r.news_id.clone(),
                    mode,
                    polarity: p.polarity,
                    intensity: p.intensity,
                    raw: p.raw,
                });
                gold.push(r);
            }
            Err(e) => {
                log::warn!("zero-shot sample ({}, {}) failed: {e}", r.user_id, r.news_id);
                failures += 1;
            }
        }
    }
    let preds: Vec<Prediction> = records
        .iter()
        .map(|r| Prediction {
            user_id: r.user_id.clone(),
            news_id: r.news_id.clone(),
            polarity: r.polarity,
            intensity: r.intensity,
        })
        .collect();
    let mut report = evaluate(&preds, &gold)?;
    report.failures = Some(failures);
    Ok(ZeroShotRun { records, report })
}

pub fn write_predictions(records: &[ZeroShotRecord], path: &Path) -> Result<(), ZeroShotError> {
    datamodel::write_file(path, datamodel::to_jsonl(records).as_bytes()).map_err(|source| ZeroShotError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BeliefId;
    use crate::llm::MockClient;

    fn graph(follows: &[(&str, &str)], users: &[&str]) -> HeteroGraph {
        HeteroGraph::from_parts(
            users.iter().map(|s| s.to_string()),
            Vec::<String>::new(),
            Vec::<BeliefId>::new(),
            follows.iter().map(|(a, b)| (a.to_string(), b.to_string())),
            Vec::<(String, String)>::new(),
            Vec::<(String, BeliefId)>::new(),
        )
        .unwrap()
    }

    fn counts(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn filter_examples() {
        let g = graph(&[("u", "a"), ("b", "u"), ("u", "c")], &["u", "a", "b", "c"]);
        let c = counts(&[("a", 10), ("b", 5), ("c", 7)]);
        assert_eq!(filter_neighbors(&g, &c, "u", 2).unwrap(), vec!["a", "c"]);
        assert!(filter_neighbors(&g, &c, "u", 0).unwrap().is_empty());
        assert_eq!(filter_neighbors(&g, &c, "u", 9).unwrap().len(), 3);
        let g = graph(&[("u", "a"), ("u", "b")], &["u", "a", "b"]);
        let c = counts(&[("a", 5), ("b", 5)]);
        assert_eq!(filter_neighbors(&g, &c, "u", 1).unwrap(), vec!["a"]);
        assert!(matches!(filter_neighbors(&g, &c, "zz", 1), Err(ZeroShotError::UnknownUser(_))));
    }

    #[test]
    fn empty_neighbors_make_no_call() {
        let client = MockClient::new(1);
        let ctx = aggregate_social_context(&client, "u", &[]).unwrap();
        assert_eq!(ctx.summary, NO_SOCIAL_CONTEXT);
        assert_eq!(client.calls(), 0);
    }

    #[test]
    fn single_neighbor_prompt_contains_its_persona() {
        let p = LatentPersona {
            user_id: "a".into(),
            moral_values: vec![BeliefId::Fairness],
            ..Default::default()
        };
        let prompt = render_social_prompt(std::slice::from_ref(&p));
        assert_eq!(prompt.user, format!("Neighbor personas:\n1. {}\n", p.to_json()));
    }

    #[test]
    fn parse_examples() {
        let pos = Intensity::new(2).unwrap();
        assert_eq!(parse_answer("polarity=positive; intensity=2").unwrap(), (Polarity::Positive, pos));
        assert_eq!(
            parse_answer("Intensity: 3, Polarity: negative").unwrap(),
            (Polarity::Negative, Intensity::new(3).unwrap())
        );
        assert!(parse_answer("intensity=7").is_err());
        assert!(parse_answer("polarity=positive; intensity=7").is_err());
        assert!(parse_answer("I think it is positive").is_err());
    }

    #[test]
    fn parse_round_trip() {
        for p in Polarity::ALL {
            for i in 0..=3 {
                let i = Intensity::new(i).unwrap();
                assert_eq!(parse_answer(&format_answer(p, i)).unwrap(), (p, i));
            }
        }
    }

    #[test]
    fn retries_then_fails() {
        let client = MockClient::fixed("intensity=7");
        let user = UserRecord {
            id: "u".into(),
            profile: String::new(),
            history: vec![],
            follower_count: 0,
        };
        let news = NewsItem {
            id: "n".into(),
            headline: "h".into(),
        };
        let r = predict_zero_shot(&client, &user, &news, None, None, &ZeroShotOptions::default());
        assert!(matches!(r, Err(ZeroShotError::Unparseable { attempts: 4, .. })));
        assert_eq!(client.calls(), 4);
    }

    #[test]
    fn repaired_answer_accepted() {
        let client = MockClient::scripted(vec!["no idea".into(), "polarity=neutral; intensity=0".into()]);
        let user = UserRecord {
            id: "u".into(),
            profile: "p".into(),
            history: vec![],
            follower_count: 0,
        };
        let news = NewsItem {
            id: "n".into(),
            headline: "h".into(),
        };
        let p = predict_zero_shot(&client, &user, &news, None, None, &ZeroShotOptions::default()).unwrap();
        assert_eq!(p.polarity, Polarity::Neutral);
    }

    #[test]
    fn headline_is_last_line() {
        let user = UserRecord {
            id: "u".into(),
            profile: "p".into(),
            history: vec!["x".into()],
            follower_count: 0,
        };
        let news = NewsItem {
            id: "n".into(),
            headline: "two\nlines".into(),
        };
        let prompt = render_prediction_prompt(&user, &news, None, None, 50);
        assert_eq!(prompt.user.lines().last().unwrap(), "Headline: two lines");
        assert!(prompt.system.starts_with(TASK_PREDICT));
    }
}
