//! Record types, label semantics and dataset file I/O.
//!
//! A dataset lives in four UTF-8 files: `users.jsonl`, `news.jsonl`,
//! `responses.jsonl` (one JSON object per line) and `follows.tsv` (two
//! tab-separated ids per line, source follows target). Loading validates
//! referential integrity; a dataset that loads is safe to build a graph from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: parse error: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}:{line}: unknown {what} id \"{id}\"")]
    Dangling {
        file: String,
        line: usize,
        what: &'static str,
        id: String,
    },
    #[error("{file}:{line}: duplicate {what} id \"{id}\"")]
    Duplicate {
        file: String,
        line: usize,
        what: &'static str,
        id: String,
    },
    #[error("{file}:{line}: {message}")]
    Invalid {
        file: String,
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

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: String,
    #[serde(default)]
    pub profile: String,
    #[serde(default)]
    pub history: Vec<String>,
    #[serde(default)]
    pub follower_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewsItem {
    pub id: String,
    pub headline: String,
}

/// Sentiment polarity of a response. The discriminant is the class index
/// used by the model head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Negative = 0,
    Neutral = 1,
    Positive = 2,
}

impl Polarity {
    pub const ALL: [Polarity; 3] = [Polarity::Negative, Polarity::Neutral, Polarity::Positive];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Negative => "negative",
            Polarity::Neutral => "neutral",
            Polarity::Positive => "positive",
        }
    }

    /// Case-insensitive parse of the three label names.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "negative" => Some(Polarity::Negative),
            "neutral" => Some(Polarity::Neutral),
            "positive" => Some(Polarity::Positive),
            _ => None,
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Response intensity on the inclusive 0..=3 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Intensity(u8);

impl Intensity {
    pub const MAX: u8 = 3;
    pub const CLASSES: usize = 4;

    pub fn new(v: u8) -> Option<Self> {
        (v <= Self::MAX).then_some(Intensity(v))
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u8> for Intensity {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Intensity::new(v).ok_or_else(|| format!("intensity {v} outside 0..=3"))
    }
}

impl From<Intensity> for u8 {
    fn from(i: Intensity) -> u8 {
        i.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub user_id: String,
    pub news_id: String,
    pub polarity: Polarity,
    pub intensity: Intensity,
    pub split: Split,
}

impl ResponseRecord {
    pub fn signed(&self) -> SignedIntensity {
        signed_intensity(self.polarity, self.intensity)
    }
}

/// Intensity carrying the polarity sign, in -3..=3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SignedIntensity(i8);

impl SignedIntensity {
    pub fn get(self) -> i8 {
        self.0
    }
}

/// Neutral responses map to 0 regardless of the annotated intensity.
pub fn signed_intensity(polarity: Polarity, intensity: Intensity) -> SignedIntensity {
    let k = intensity.get() as i8;
    SignedIntensity(match polarity {
        Polarity::Positive => k,
        Polarity::Negative => -k,
        Polarity::Neutral => 0,
    })
}

/// Locations of the four dataset files.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetPaths {
    pub users: PathBuf,
    pub news: PathBuf,
    pub responses: PathBuf,
    pub follows: PathBuf,
}

impl DatasetPaths {
    /// The conventional file names inside `dir`.
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            users: dir.join("users.jsonl"),
            news: dir.join("news.jsonl"),
            responses: dir.join("responses.jsonl"),
            follows: dir.join("follows.tsv"),
        }
    }
}

/// Validated, immutable record collections.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    users: Vec<UserRecord>,
    news: Vec<NewsItem>,
    responses: Vec<ResponseRecord>,
    follows: Vec<(String, String)>,
    user_index: BTreeMap<String, usize>,
    news_index: BTreeMap<String, usize>,
}

impl Dataset {
    /// Validates and assembles a dataset. Text fields are whitespace-trimmed.
    pub fn new(
        users: Vec<UserRecord>,
        news: Vec<NewsItem>,
        responses: Vec<ResponseRecord>,
        follows: Vec<(String, String)>,
    ) -> Result<Self, DataError> {
        Self::assemble(users, news, responses, follows, &LineMap::default())
    }

    fn assemble(
        mut users: Vec<UserRecord>,
        mut news: Vec<NewsItem>,
        responses: Vec<ResponseRecord>,
        follows: Vec<(String, String)>,
        lines: &LineMap,
    ) -> Result<Self, DataError> {
        let mut user_index = BTreeMap::new();
        for (i, u) in users.iter_mut().enumerate() {
            u.profile = u.profile.trim().to_string();
            for post in &mut u.history {
                *post = post.trim().to_string();
            }
            if user_index.insert(u.id.clone(), i).is_some() {
                return Err(DataError::Duplicate {
                    file: lines.users.clone(),
                    line: lines.line(&lines.user_lines, i),
                    what: "user",
                    id: u.id.clone(),
                });
            }
        }
        let mut news_index = BTreeMap::new();
        for (i, n) in news.iter_mut().enumerate() {
            n.headline = n.headline.trim().to_string();
            if n.headline.is_empty() {
                return Err(DataError::Invalid {
                    file: lines.news.clone(),
                    line: lines.line(&lines.news_lines, i),
                    message: format!("news \"{}\" has an empty headline", n.id),
                });
            }
            if news_index.insert(n.id.clone(), i).is_some() {
                return Err(DataError::Duplicate {
                    file: lines.news.clone(),
                    line: lines.line(&lines.news_lines, i),
                    what: "news",
                    id: n.id.clone(),
                });
            }
        }
        for (i, r) in responses.iter().enumerate() {
            let dangling = |what, id: &str| DataError::Dangling {
                file: lines.responses.clone(),
                line: lines.line(&lines.response_lines, i),
                what,
                id: id.to_string(),
            };
            if !user_index.contains_key(&r.user_id) {
                return Err(dangling("user", &r.user_id));
            }
            if !news_index.contains_key(&r.news_id) {
                return Err(dangling("news", &r.news_id));
            }
        }
        for (i, (src, dst)) in follows.iter().enumerate() {
            for id in [src, dst] {
                if !user_index.contains_key(id) {
                    return Err(DataError::Dangling {
                        file: lines.follows.clone(),
                        line: lines.line(&lines.follow_lines, i),
                        what: "user",
                        id: id.clone(),
                    });
                }
            }
        }
        Ok(Self {
            users,
            news,
            responses,
            follows,
            user_index,
            news_index,
        })
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn news(&self) -> &[NewsItem] {
        &self.news
    }

    pub fn responses(&self) -> &[ResponseRecord] {
        &self.responses
    }

    pub fn follows(&self) -> &[(String, String)] {
        &self.follows
    }

    pub fn user(&self, id: &str) -> Option<&UserRecord> {
        self.user_index.get(id).map(|&i| &self.users[i])
    }

    pub fn news_item(&self, id: &str) -> Option<&NewsItem> {
        self.news_index.get(id).map(|&i| &self.news[i])
    }

    pub fn split(&self, split: Split) -> Vec<&ResponseRecord> {
        self.responses.iter().filter(|r| r.split == split).collect()
    }

    /// Ids of users that respond at least once in `split`.
    pub fn responders(&self, split: Split) -> BTreeSet<&str> {
        self.responses
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.user_id.as_str())
            .collect()
    }
}

/// Source line numbers for records, so validation errors can point into files.
#[derive(Debug, Default)]
struct LineMap {
    users: String,
    news: String,
    responses: String,
    follows: String,
    user_lines: Vec<usize>,
    news_lines: Vec<usize>,
    response_lines: Vec<usize>,
    follow_lines: Vec<usize>,
}

impl LineMap {
    fn line(&self, lines: &[usize], i: usize) -> usize {
        lines.get(i).copied().unwrap_or(i + 1)
    }
}

fn read_text(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses non-blank lines of a JSON-lines file, returning the records and
/// their 1-based line numbers.
fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(Vec<T>, Vec<usize>), DataError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| DataError::Parse {
            file: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
        lines.push(i + 1);
    }
    Ok((out, lines))
}

fn read_follows(path: &Path) -> Result<(Vec<(String, String)>, Vec<usize>), DataError> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                out.push((a.to_string(), b.to_string()));
                lines.push(i + 1);
            }
            _ => {
                return Err(DataError::Parse {
                    file: path.display().to_string(),
                    line: i + 1,
                    message: "expected two tab-separated ids".into(),
                })
            }
        }
    }
    Ok((out, lines))
}

/// Reads and validates the four dataset files.
pub fn load_dataset(paths: &DatasetPaths) -> Result<Dataset, DataError> {
    let (users, user_lines) = read_jsonl::<UserRecord>(&paths.users)?;
    let (news, news_lines) = read_jsonl::<NewsItem>(&paths.news)?;
    let (responses, response_lines) = read_jsonl::<ResponseRecord>(&paths.responses)?;
    let (follows, follow_lines) = read_follows(&paths.follows)?;
    let lines = LineMap {
        users: paths.users.display().to_string(),
        news: paths.news.display().to_string(),
        responses: paths.responses.display().to_string(),
        follows: paths.follows.display().to_string(),
        user_lines,
        news_lines,
        response_lines,
        follow_lines,
    };
    Dataset::assemble(users, news, responses, follows, &lines)
}

/// Serializes records one JSON object per line, LF-terminated.
pub fn to_jsonl<'a, T: Serialize + 'a>(records: impl IntoIterator<Item = &'a T>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<(), std::io::Error> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents)
}

/// Writes the four dataset files in the format [`load_dataset`] reads.
pub fn write_dataset(dataset: &Dataset, paths: &DatasetPaths) -> Result<(), DataError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| DataError::Io { path, source }
    };
    write_file(&paths.users, to_jsonl(&dataset.users).as_bytes()).map_err(io(&paths.users))?;
    write_file(&paths.news, to_jsonl(&dataset.news).as_bytes()).map_err(io(&paths.news))?;
    write_file(&paths.responses, to_jsonl(&dataset.responses).as_bytes())
        .map_err(io(&paths.responses))?;
    let mut follows = String::new();
    for (a, b) in &dataset.follows {
        follows.push_str(a);
        follows.push('\t');
        follows.push_str(b);
        follows.push('\n');
    }
    write_file(&paths.follows, follows.as_bytes()).map_err(io(&paths.follows))?;
    Ok(())
}

/// Partitions the test split by responder activity: a sample is a lurker
/// sample iff its user has fewer than `threshold` history posts.
pub fn lurker_split(dataset: &Dataset, threshold: usize) -> (Vec<&ResponseRecord>, Vec<&ResponseRecord>) {
    dataset
        .split(Split::Test)
        .into_iter()
        .partition(|r| is_lurker(dataset, &r.user_id, threshold))
}

pub fn is_lurker(dataset: &Dataset, user_id: &str, threshold: usize) -> bool {
    dataset.user(user_id).map_or(true, |u| u.history.len() < threshold)
}

/// Default history-length threshold below which a user counts as a lurker.
pub const LURKER_THRESHOLD: usize = 50;

/// Evaluation samples whose responder never responds in `train`.
pub fn unseen_user_split<'a, 'b>(
    train: impl IntoIterator<Item = &'a ResponseRecord>,
    eval: impl IntoIterator<Item = &'b ResponseRecord>,
) -> Vec<&'b ResponseRecord> {
    let seen: BTreeSet<&str> = train.into_iter().map(|r| r.user_id.as_str()).collect();
    eval.into_iter()
        .filter(|r| !seen.contains(r.user_id.as_str()))
        .collect()
}
