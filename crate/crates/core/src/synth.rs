//! Planted-belief synthetic worlds.
//!
//! Follows are driven by communities while beliefs are drawn independently
//! of community, so belief-sharing users are usually far apart in the
//! follow graph. Response labels are a deterministic function of the
//! responder's beliefs and the news item's stance vector, plus label noise.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{
    write_dataset, DataError, Dataset, DatasetPaths, Intensity, NewsItem, Polarity, ResponseRecord, Split, UserRecord,
};
use crate::graph::{build_graph, distant_shared_belief_ratio, BeliefFamily, BeliefId, GraphError, GraphOptions};
use crate::persona::{write_personas, LatentPersona, PersonaError};
use crate::rng::SplitMix64;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic world configuration: {0}")]
    Config(String),
    #[error("configuration leaves the {0:?} split empty")]
    EmptySplit(Split),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_communities: usize,
    pub beliefs_per_user: usize,
    pub p_follow_intra: f64,
    pub p_follow_inter: f64,
    pub n_news: usize,
    pub responses_per_news: usize,
    pub lurker_fraction: f64,
    pub label_noise: f64,
    /// Polarity threshold on the stance score.
    pub theta: f64,
    /// Posts written by each non-lurker.
    pub history_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 300,
            n_communities: 4,
            beliefs_per_user: 3,
            p_follow_intra: 0.05,
            p_follow_inter: 0.002,
            n_news: 150,
            responses_per_news: 60,
            lurker_fraction: 0.6,
            label_noise: 0.1,
            theta: 0.5,
            history_len: 60,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        for (name, p) in [
            ("p_follow_intra", self.p_follow_intra),
            ("p_follow_inter", self.p_follow_inter),
            ("lurker_fraction", self.lurker_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} is not a probability"));
            }
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return bad(format!("label_noise = {} outside [0, 1)", self.label_noise));
        }
        if self.n_users == 0 || self.n_communities == 0 || self.n_news == 0 || self.responses_per_news == 0 {
            return bad("counts must be positive".into());
        }
        if self.beliefs_per_user == 0 || self.beliefs_per_user > BeliefId::COUNT {
            return bad(format!("beliefs_per_user must be in 1..={}", BeliefId::COUNT));
        }
        if self.responses_per_news > self.n_users {
            return bad("responses_per_news exceeds n_users".into());
        }
        if !(self.theta >= 0.0) {
            return bad("theta must be non-negative".into());
        }
        Ok(())
    }
}

/// A generated world plus the hidden variables that produced it.
#[derive(Debug, Clone)]
pub struct World {
    pub dataset: Dataset,
    pub gold_personas: Vec<LatentPersona>,
    pub communities: BTreeMap<String, usize>,
    /// One weight per belief, in vocabulary order.
    pub stances: BTreeMap<String, [f64; BeliefId::COUNT]>,
}

/// Noise-free label: polarity from the sign of `s` against `theta`,
/// intensity `min(3, floor(|s|))`.
pub fn label_for(beliefs: &[BeliefId], stance: &[f64; BeliefId::COUNT], theta: f64) -> (Polarity, Intensity) {
    let s: f64 = beliefs.iter().map(|b| stance[b.index()]).sum();
    let polarity = if s > theta {
        Polarity::Positive
    } else if s < -theta {
        Polarity::Negative
    } else {
        Polarity::Neutral
    };
    let intensity = Intensity::new((s.abs().floor() as u8).min(Intensity::MAX)).expect("clamped");
    (polarity, intensity)
}

/// Stance marker for a belief: `pro`/`anti` glued to the belief name with
/// underscores removed, so that it survives tokenization as one word.
pub fn stance_marker(belief: BeliefId, positive: bool) -> String {
    format!("{}{}", if positive { "pro" } else { "anti" }, belief.as_str().replace('_', ""))
}

/// Headline whose markers repeat `round(4 |stance|)` times per belief.
pub fn headline_for(index: usize, stance: &[f64; BeliefId::COUNT]) -> String {
    let mut words = vec![format!("story {index}:")];
    for b in BeliefId::ALL {
        let w = stance[b.index()];
        let reps = (4.0 * w.abs()).round() as usize;
        let marker = stance_marker(b, w > 0.0);
        words.extend(std::iter::repeat_n(marker, reps));
    }
    words.join(" ")
}

fn persona_of(user_id: &str, beliefs: &[BeliefId]) -> LatentPersona {
    let (moral, human): (Vec<BeliefId>, Vec<BeliefId>) =
        beliefs.iter().partition(|b| b.family() == BeliefFamily::MoralValue);
    LatentPersona {
        user_id: user_id.to_string(),
        moral_values: moral,
        human_values: human,
        summary: "planted beliefs".into(),
        ..Default::default()
    }
}

pub fn generate_world(config: &SynthConfig) -> Result<World, SynthError> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let n = config.n_users;
    let ids: Vec<String> = (0..n).map(|i| format!("u{i:04}")).collect();
    let community: Vec<usize> = (0..n).map(|_| rng.below(config.n_communities as u64) as usize).collect();

    let mut beliefs: Vec<Vec<BeliefId>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut pool = BeliefId::ALL.to_vec();
        let mut chosen = Vec::with_capacity(config.beliefs_per_user);
        for _ in 0..config.beliefs_per_user {
            let k = rng.below(pool.len() as u64) as usize;
            chosen.push(pool.swap_remove(k));
        }
        chosen.sort_by_key(|b| b.index());
        beliefs.push(chosen);
    }
    let lurker: Vec<bool> = (0..n).map(|_| rng.bernoulli(config.lurker_fraction)).collect();

    let mut follows = Vec::new();
    let mut in_degree = vec![0u64; n];
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let p = if community[a] == community[b] {
                config.p_follow_intra
            } else {
                config.p_follow_inter
            };
            if rng.bernoulli(p) {
                follows.push((ids[a].clone(), ids[b].clone()));
                in_degree[b] += 1;
            }
        }
    }

    let users: Vec<UserRecord> = (0..n)
        .map(|i| {
            let names: Vec<&str> = beliefs[i].iter().map(|b| b.as_str()).collect();
            let (profile, history) = if lurker[i] {
                (String::new(), Vec::new())
            } else {
                let profile = format!("Cares about {}.", names.join(", "));
                let history = (0..config.history_len)
                    .map(|j| format!("post {j}: thinking about {} today", names[j % names.len()]))
                    .collect();
                (profile, history)
            };
            UserRecord {
                id: ids[i].clone(),
                profile,
                history,
                follower_count: 10 * in_degree[i] + rng.below(100),
            }
        })
        .collect();

    let mut news = Vec::with_capacity(config.n_news);
    let mut stances = BTreeMap::new();
    let mut responses = Vec::new();
    for j in 0..config.n_news {
        let id = format!("n{j:03}");
        let mut stance = [0.0; BeliefId::COUNT];
        for w in stance.iter_mut() {
            *w = rng.uniform(-1.0, 1.0);
        }
        news.push(NewsItem {
            id: id.clone(),
            headline: headline_for(j, &stance),
        });
        // Responders: a uniform sample without replacement.
        let mut pool: Vec<usize> = (0..n).collect();
        for _ in 0..config.responses_per_news {
            let u = pool.swap_remove(rng.below(pool.len() as u64) as usize);
            let (mut polarity, mut intensity) = label_for(&beliefs[u], &stance, config.theta);
            if rng.bernoulli(config.label_noise) {
                polarity = Polarity::ALL[rng.below(3) as usize];
            }
            if rng.bernoulli(config.label_noise) {
                intensity = Intensity::new(rng.below(4) as u8).expect("in range");
            }
            responses.push(ResponseRecord {
                user_id: ids[u].clone(),
                news_id: id.clone(),
                polarity,
                intensity,
                split: Split::Train,
            });
        }
        stances.insert(id, stance);
    }

    // 80/10/10 by response, in a seeded order.
    let total = responses.len();
    let mut order: Vec<usize> = (0..total).collect();
    for i in (1..total).rev() {
        order.swap(i, rng.below(i as u64 + 1) as usize);
    }
    let n_train = total * 8 / 10;
    let n_dev = total / 10;
    for (rank, &i) in order.iter().enumerate() {
        responses[i].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
    for split in [Split::Train, Split::Dev, Split::Test] {
        if !responses.iter().any(|r| r.split == split) {
            return Err(SynthError::EmptySplit(split));
        }
    }

    let gold_personas = (0..n).map(|i| persona_of(&ids[i], &beliefs[i])).collect();
    let communities = ids.iter().cloned().zip(community).collect();
    Ok(World {
        dataset: Dataset::new(users, news, responses, follows)?,
        gold_personas,
        communities,
        stances,
    })
}

/// Writes the dataset files and `gold_personas.jsonl` into `dir`.
pub fn write_world(world: &World, dir: &Path) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir).map_err(|source| DataError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    write_dataset(&world.dataset, &DatasetPaths::in_dir(dir))?;
    write_personas(&world.gold_personas, &dir.join("gold_personas.jsonl"))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldStats {
    pub users: usize,
    pub lurkers: usize,
    pub follow_edges: usize,
    pub responses: usize,
    pub distant_shared_belief_ratio: f64,
    pub polarity_counts: BTreeMap<Polarity, usize>,
    pub intensity_counts: BTreeMap<u8, usize>,
}

pub fn world_statistics(dataset: &Dataset, gold_personas: &[LatentPersona]) -> Result<WorldStats, SynthError> {
    let graph = build_graph(dataset, gold_personas, &GraphOptions::default())?;
    let mut polarity_counts = BTreeMap::new();
    let mut intensity_counts = BTreeMap::new();
    for r in dataset.responses() {
        *polarity_counts.entry(r.polarity).or_insert(0) += 1;
        *intensity_counts.entry(r.intensity.get()).or_insert(0) += 1;
    }
    Ok(WorldStats {
        users: dataset.users().len(),
        lurkers: dataset
            .users()
            .iter()
            .filter(|u| u.history.len() < crate::datamodel::LURKER_THRESHOLD)
            .count(),
        follow_edges: dataset.follows().len(),
        responses: dataset.responses().len(),
        distant_shared_belief_ratio: distant_shared_belief_ratio(&graph),
        polarity_counts,
        intensity_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::to_jsonl;

    fn small() -> SynthConfig {
        SynthConfig {
            n_users: 40,
            n_news: 10,
            responses_per_news: 10,
            ..Default::default()
        }
    }

    #[test]
    fn label_formula() {
        let mut stance = [0.0; BeliefId::COUNT];
        stance[BeliefId::Care.index()] = 2.4;
        let (p, i) = label_for(&[BeliefId::Care], &stance, 0.5);
        assert_eq!((p, i.get()), (Polarity::Positive, 2));
        stance[BeliefId::Care.index()] = -0.5;
        assert_eq!(label_for(&[BeliefId::Care], &stance, 0.5).0, Polarity::Neutral);
    }

    #[test]
    fn all_lurkers() {
        let w = generate_world(&SynthConfig {
            lurker_fraction: 1.0,
            ..small()
        })
        .unwrap();
        assert!(w.dataset.users().iter().all(|u| u.history.is_empty() && u.profile.is_empty()));
    }

    #[test]
    fn noise_free_labels_rederive() {
        let cfg = SynthConfig {
            label_noise: 0.0,
            ..small()
        };
        let w = generate_world(&cfg).unwrap();
        let beliefs: BTreeMap<&str, Vec<BeliefId>> =
            w.gold_personas.iter().map(|p| (p.user_id.as_str(), p.beliefs().collect())).collect();
        for r in w.dataset.responses() {
            let expect = label_for(&beliefs[r.user_id.as_str()], &w.stances[&r.news_id], cfg.theta);
            assert_eq!((r.polarity, r.intensity), expect);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(to_jsonl(&a.gold_personas), to_jsonl(&b.gold_personas));
        let c = generate_world(&SynthConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn complete_single_community_has_ratio_zero() {
        let cfg = SynthConfig {
            n_users: 20,
            n_communities: 1,
            p_follow_intra: 1.0,
            n_news: 5,
            responses_per_news: 10,
            ..Default::default()
        };
        let w = generate_world(&cfg).unwrap();
        let s = world_statistics(&w.dataset, &w.gold_personas).unwrap();
        assert_eq!(s.distant_shared_belief_ratio, 0.0);
    }

    #[test]
    fn tiny_world_split_empty() {
        let cfg = SynthConfig {
            n_users: 3,
            n_news: 1,
            responses_per_news: 3,
            ..Default::default()
        };
        assert!(matches!(generate_world(&cfg), Err(SynthError::EmptySplit(_))));
    }

    #[test]
    fn markers_are_single_tokens() {
        let m = stance_marker(BeliefId::SelfDirection, true);
        assert_eq!(crate::embed::tokenize(&m).count(), 1);
    }
}
