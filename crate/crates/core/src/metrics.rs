//! Correlation and F1 metrics over polarity / signed-intensity predictions.
//!
//! Raw metric functions return fractions; [`EvalReport`] holds percentages.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::datamodel::{is_lurker, signed_intensity, Dataset, Intensity, Polarity, ResponseRecord, Split};
use crate::graph::BeliefId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("correlation needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("prediction {index} is for ({pred_user}, {pred_news}) but gold is ({gold_user}, {gold_news})")]
    Misaligned {
        index: usize,
        pred_user: String,
        pred_news: String,
        gold_user: String,
        gold_news: String,
    },
}

/// A correlation coefficient; `degenerate` is set (and `value` is 0) when
/// either input has zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

impl Correlation {
    const DEGENERATE: Correlation = Correlation {
        value: 0.0,
        degenerate: true,
    };
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(MetricError::TooFewSamples(x.len()));
    }
    Ok(())
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation, MetricError> {
    check_pair(x, y)?;
    if is_constant(x) || is_constant(y) {
        return Ok(Correlation::DEGENERATE);
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation::DEGENERATE);
    }
    Ok(Correlation {
        value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // Positions i..j hold ranks i+1..=j.
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Spearman rank correlation (Pearson over average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Correlation, MetricError> {
    check_pair(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

fn check_labels(t: &[Polarity], p: &[Polarity]) -> Result<(), MetricError> {
    if t.len() != p.len() {
        return Err(MetricError::LengthMismatch {
            left: t.len(),
            right: p.len(),
        });
    }
    Ok(())
}

/// Accuracy. An empty input scores 0.
pub fn micro_f1(truth: &[Polarity], pred: &[Polarity]) -> Result<f64, MetricError> {
    check_labels(truth, pred)?;
    if truth.is_empty() {
        return Ok(0.0);
    }
    let hits = truth.iter().zip(pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// F1 of each polarity class, in class-index order. A class with no true
/// and no predicted instances scores 0.
pub fn per_class_f1(truth: &[Polarity], pred: &[Polarity]) -> Result<[f64; 3], MetricError> {
    check_labels(truth, pred)?;
    let mut tp = [0usize; 3];
    let mut n_true = [0usize; 3];
    let mut n_pred = [0usize; 3];
    for (t, p) in truth.iter().zip(pred) {
        n_true[t.index()] += 1;
        n_pred[p.index()] += 1;
        if t == p {
            tp[t.index()] += 1;
        }
    }
    // F1 = 2 tp / (|true| + |pred|)
    Ok(std::array::from_fn(|c| {
        let denom = n_true[c] + n_pred[c];
        if denom == 0 {
            0.0
        } else {
            2.0 * tp[c] as f64 / denom as f64
        }
    }))
}

/// Unweighted mean of [`per_class_f1`] over all three classes.
pub fn macro_f1(truth: &[Polarity], pred: &[Polarity]) -> Result<f64, MetricError> {
    Ok(per_class_f1(truth, pred)?.iter().sum::<f64>() / 3.0)
}

/// A model's answer for one `(user, news)` sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub user_id: String,
    pub news_id: String,
    pub polarity: Polarity,
    pub intensity: Intensity,
}

impl Prediction {
    pub fn signed(&self) -> f64 {
        signed_intensity(self.polarity, self.intensity).get() as f64
    }
}

fn percent<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64((x * 100.0).round() / 100.0)
}

/// Evaluation summary. All four metrics are percentages.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub n_samples: usize,
    #[serde(serialize_with = "percent")]
    pub r_s: f64,
    #[serde(serialize_with = "percent")]
    pub r: f64,
    #[serde(serialize_with = "percent")]
    pub mif1: f64,
    #[serde(serialize_with = "percent")]
    pub maf1: f64,
    pub r_s_degenerate: bool,
    pub r_degenerate: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failures: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lurkers: Option<Box<EvalReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unseen: Option<Box<EvalReport>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub by_belief: Option<BTreeMap<BeliefId, EvalReport>>,
}

impl EvalReport {
    /// Pretty JSON with percentages rounded to 2 decimals.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn correlation_or_degenerate(r: Result<Correlation, MetricError>) -> Correlation {
    match r {
        Ok(c) => c,
        Err(_) => Correlation::DEGENERATE,
    }
}

/// Scores aligned predictions against gold records. Fewer than two samples
/// yield degenerate correlations.
pub fn evaluate(predictions: &[Prediction], gold: &[&ResponseRecord]) -> Result<EvalReport, MetricError> {
    if predictions.len() != gold.len() {
        return Err(MetricError::LengthMismatch {
            left: predictions.len(),
            right: gold.len(),
        });
    }
    for (i, (p, g)) in predictions.iter().zip(gold).enumerate() {
        if p.user_id != g.user_id || p.news_id != g.news_id {
            return Err(MetricError::Misaligned {
                index: i,
                pred_user: p.user_id.clone(),
                pred_news: p.news_id.clone(),
                gold_user: g.user_id.clone(),
                gold_news: g.news_id.clone(),
            });
        }
    }
    let ps: Vec<f64> = predictions.iter().map(Prediction::signed).collect();
    let gs: Vec<f64> = gold.iter().map(|g| g.signed().get() as f64).collect();
    let pp: Vec<Polarity> = predictions.iter().map(|p| p.polarity).collect();
    let gp: Vec<Polarity> = gold.iter().map(|g| g.polarity).collect();
    let rs = correlation_or_degenerate(spearman(&ps, &gs));
    let r = correlation_or_degenerate(pearson(&ps, &gs));
    Ok(EvalReport {
        n_samples: gold.len(),
        r_s: 100.0 * rs.value,
        r: 100.0 * r.value,
        mif1: 100.0 * micro_f1(&gp, &pp)?,
        maf1: 100.0 * macro_f1(&gp, &pp)?,
        r_s_degenerate: rs.degenerate,
        r_degenerate: r.degenerate,
        failures: None,
        lurkers: None,
        unseen: None,
        by_belief: None,
    })
}

/// Which subset reports to attach in [`evaluate_with`].
#[derive(Debug, Clone, Default)]
pub struct Breakdowns<'a> {
    /// Lurker subset, with the history-length threshold.
    pub lurkers: Option<usize>,
    /// Samples whose user never responds in the training split.
    pub unseen: bool,
    /// Beliefs per user for per-belief segments.
    pub beliefs: Option<&'a BTreeMap<String, Vec<BeliefId>>>,
}

fn subset<'a>(
    predictions: &[Prediction],
    gold: &[&'a ResponseRecord],
    keep: impl Fn(&ResponseRecord) -> bool,
) -> (Vec<Prediction>, Vec<&'a ResponseRecord>) {
    predictions
        .iter()
        .zip(gold)
        .filter(|(_, g)| keep(g))
        .map(|(p, g)| (p.clone(), *g))
        .unzip()
}

/// [`evaluate`] plus the requested breakdowns. A sample counts toward every
/// belief its responder holds.
pub fn evaluate_with(
    predictions: &[Prediction],
    gold: &[&ResponseRecord],
    dataset: &Dataset,
    breakdowns: &Breakdowns,
) -> Result<EvalReport, MetricError> {
    let mut report = evaluate(predictions, gold)?;
    if let Some(threshold) = breakdowns.lurkers {
        let (p, g) = subset(predictions, gold, |r| is_lurker(dataset, &r.user_id, threshold));
        report.lurkers = Some(Box::new(evaluate(&p, &g)?));
    }
    if breakdowns.unseen {
        let seen: BTreeSet<&str> = dataset.split(Split::Train).iter().map(|r| r.user_id.as_str()).collect();
        let (p, g) = subset(predictions, gold, |r| !seen.contains(r.user_id.as_str()));
        report.unseen = Some(Box::new(evaluate(&p, &g)?));
    }
    if let Some(beliefs) = breakdowns.beliefs {
        let mut segments = BTreeMap::new();
        for b in BeliefId::ALL {
            let holds = |r: &ResponseRecord| beliefs.get(&r.user_id).is_some_and(|bs| bs.contains(&b));
            let (p, g) = subset(predictions, gold, holds);
            if !g.is_empty() {
                segments.insert(b, evaluate(&p, &g)?);
            }
        }
        report.by_belief = Some(segments);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use Polarity::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn pearson_examples() {
        assert!(close(pearson(&[1., 2., 3.], &[2., 4., 6.]).unwrap().value, 1.0));
        assert!(close(pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap().value, -1.0));
        assert!(close(pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap().value, 0.8));
        assert!(pearson(&[1.], &[1.]).is_err());
        assert!(pearson(&[1., 2.], &[1.]).is_err());
    }

    #[test]
    fn spearman_examples() {
        assert!(close(spearman(&[1., 5., 9.], &[-4., 0., 100.]).unwrap().value, 1.0));
        let r = spearman(&[1., 2., 2., 3.], &[1., 2., 3., 4.]).unwrap().value;
        assert!(close(r, 4.5 / (4.5f64 * 5.0).sqrt()));
        let c = spearman(&[2., 2., 2.], &[1., 2., 3.]).unwrap();
        assert!(c.degenerate);
        assert_eq!(c.value, 0.0);
    }

    #[test]
    fn constant_non_representable_mean_is_degenerate() {
        assert!(pearson(&[0.1, 0.1, 0.1], &[1., 2., 3.]).unwrap().degenerate);
    }

    #[test]
    fn average_ranks_ties() {
        assert_eq!(average_ranks(&[3., 1., 3., 2.]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn f1_examples() {
        assert!(close(micro_f1(&[Positive, Negative, Neutral], &[Positive, Negative, Positive]).unwrap(), 2.0 / 3.0));
        let m = macro_f1(&[Positive, Positive, Negative], &[Positive, Negative, Negative]).unwrap();
        assert!(close(m, 4.0 / 9.0));
    }

    #[test]
    fn majority_identity() {
        // 4341 majority-class labels out of 10000, predictor always says majority.
        let mut truth = vec![Neutral; 4341];
        truth.extend(vec![Positive; 3000]);
        truth.extend(vec![Negative; 2659]);
        let pred = vec![Neutral; truth.len()];
        assert!((100.0 * micro_f1(&truth, &pred).unwrap() - 43.41).abs() < 0.01);
        assert!((100.0 * macro_f1(&truth, &pred).unwrap() - 20.18).abs() < 0.01);
    }

    fn rec(u: &str, n: &str, p: Polarity, i: u8) -> ResponseRecord {
        ResponseRecord {
            user_id: u.into(),
            news_id: n.into(),
            polarity: p,
            intensity: Intensity::new(i).unwrap(),
            split: Split::Test,
        }
    }

    fn pred_of(r: &ResponseRecord) -> Prediction {
        Prediction {
            user_id: r.user_id.clone(),
            news_id: r.news_id.clone(),
            polarity: r.polarity,
            intensity: r.intensity,
        }
    }

    #[test]
    fn perfect_predictions() {
        let gold = [rec("a", "n", Positive, 2), rec("b", "n", Negative, 1), rec("c", "n", Neutral, 0)];
        let g: Vec<&ResponseRecord> = gold.iter().collect();
        let p: Vec<Prediction> = gold.iter().map(pred_of).collect();
        let r = evaluate(&p, &g).unwrap();
        assert!(close(r.r_s, 100.0) && close(r.r, 100.0) && close(r.mif1, 100.0) && close(r.maf1, 100.0));
    }

    #[test]
    fn all_neutral_is_degenerate() {
        let gold = [rec("a", "n", Positive, 2), rec("b", "n", Negative, 1)];
        let g: Vec<&ResponseRecord> = gold.iter().collect();
        let p: Vec<Prediction> = gold
            .iter()
            .map(|r| Prediction {
                polarity: Neutral,
                intensity: Intensity::new(3).unwrap(),
                ..pred_of(r)
            })
            .collect();
        let r = evaluate(&p, &g).unwrap();
        assert!(r.r_s_degenerate && r.r_degenerate);
        assert_eq!(r.r, 0.0);
    }

    #[test]
    fn misaligned_rejected() {
        let gold = [rec("a", "n", Positive, 2)];
        let mut p = pred_of(&gold[0]);
        p.news_id = "m".into();
        assert!(matches!(evaluate(&[p], &[&gold[0]]), Err(MetricError::Misaligned { .. })));
    }

    #[test]
    fn belief_segments_count_every_belief() {
        use crate::datamodel::{NewsItem, UserRecord};
        let users = ["a", "b"].map(|id| UserRecord {
            id: id.into(),
            profile: String::new(),
            history: vec![],
            follower_count: 0,
        });
        let news = vec![NewsItem {
            id: "n".into(),
            headline: "h".into(),
        }];
        let gold = vec![rec("a", "n", Positive, 1), rec("b", "n", Negative, 1)];
        let ds = Dataset::new(users.to_vec(), news, gold.clone(), vec![]).unwrap();
        let beliefs: BTreeMap<String, Vec<BeliefId>> = [
            ("a".to_string(), vec![BeliefId::Care]),
            ("b".to_string(), vec![BeliefId::Care, BeliefId::Loyalty]),
        ]
        .into();
        let g: Vec<&ResponseRecord> = gold.iter().collect();
        let p: Vec<Prediction> = gold.iter().map(pred_of).collect();
        let r = evaluate_with(
            &p,
            &g,
            &ds,
            &Breakdowns {
                lurkers: Some(50),
                unseen: true,
                beliefs: Some(&beliefs),
            },
        )
        .unwrap();
        let seg = r.by_belief.unwrap();
        assert_eq!(seg[&BeliefId::Care].n_samples, 2);
        assert_eq!(seg[&BeliefId::Loyalty].n_samples, 1);
        assert_eq!(r.lurkers.unwrap().n_samples, 2);
        assert_eq!(r.unseen.unwrap().n_samples, 2);
    }

    #[test]
    fn report_json_rounds_to_two_decimals() {
        let r = EvalReport {
            n_samples: 3,
            r_s: 46.6449,
            r: -12.345678,
            mif1: 43.41,
            maf1: 20.1839,
            r_s_degenerate: false,
            r_degenerate: false,
            failures: None,
            lurkers: None,
            unseen: None,
            by_belief: None,
        };
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["r_s"], 46.64);
        assert_eq!(v["r"], -12.35);
        assert_eq!(v["maf1"], 20.18);
    }
}
