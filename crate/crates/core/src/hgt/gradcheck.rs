use super::{backward, model_forward, HgtConfig, HgtError, HgtParams, Mode, PairLogits, Topology};
use crate::train::cross_entropy;

/// Scalar function of the logits used to drive a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub enum Objective {
    /// Joint cross-entropy with `(polarity, intensity)` class labels per pair.
    CrossEntropy(Vec<(usize, usize)>),
    /// `sum_p <w_p, logits_p>`; the loss gradient is `w` itself.
    Linear(Vec<PairLogits<f64>>),
}

impl Objective {
    fn value_and_grad(&self, logits: &[PairLogits<f64>]) -> Result<(f64, Vec<PairLogits<f64>>), HgtError> {
        match self {
            Objective::Linear(w) => {
                if w.len() != logits.len() {
                    return Err(HgtError::TraceMismatch(format!("{} weights for {} pairs", w.len(), logits.len())));
                }
                let mut total = 0.0;
                for (l, w) in logits.iter().zip(w) {
                    total += l.polarity.iter().zip(&w.polarity).map(|(a, b)| a * b).sum::<f64>();
                    total += l.intensity.iter().zip(&w.intensity).map(|(a, b)| a * b).sum::<f64>();
                }
                Ok((total, w.clone()))
            }
            Objective::CrossEntropy(labels) => {
                if labels.len() != logits.len() {
                    return Err(HgtError::TraceMismatch(format!("{} labels for {} pairs", labels.len(), logits.len())));
                }
                let mut total = 0.0;
                let mut grads = Vec::with_capacity(labels.len());
                for (l, &(p, i)) in logits.iter().zip(labels) {
                    let mut g = PairLogits::zero();
                    let (lp, gp) = cross_entropy(&l.polarity, p).map_err(|e| HgtError::Config(e.to_string()))?;
                    let (li, gi) = cross_entropy(&l.intensity, i).map_err(|e| HgtError::Config(e.to_string()))?;
                    g.polarity.copy_from_slice(&gp);
                    g.intensity.copy_from_slice(&gi);
                    total += lp + li;
                    grads.push(g);
                }
                Ok((total, grads))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Tensor name and flat index within it of the worst parameter.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

/// Magnitude below which gradients are compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`; in particular `0/0` is 0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares [`backward`] against central differences for every parameter.
/// Runs in eval mode, so dropout is off.
pub fn check_gradients(
    topology: &Topology,
    features: &[f64],
    params: &HgtParams<f64>,
    config: &HgtConfig,
    pairs: &[(usize, usize)],
    objective: &Objective,
    eps: f64,
) -> Result<GradCheckReport, HgtError> {
    if !(eps > 0.0) {
        return Err(HgtError::BadEps(eps));
    }
    let out = model_forward(topology, features, params, config, pairs, Mode::Eval)?;
    let (_, loss_grad) = objective.value_and_grad(&out.logits)?;
    let grads = backward(&out.trace, topology, params, config, &loss_grad)?;

    let loss_at = |p: &HgtParams<f64>| -> Result<f64, HgtError> {
        let out = model_forward(topology, features, p, config, pairs, Mode::Eval)?;
        Ok(objective.value_and_grad(&out.logits)?.0)
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let mut probe = params.clone();
    for spec in params.layout().specs() {
        for (j, idx) in spec.range().enumerate() {
            let orig = probe.data()[idx];
            probe.data_mut()[idx] = orig + eps;
            let up = loss_at(&probe)?;
            probe.data_mut()[idx] = orig - eps;
            let down = loss_at(&probe)?;
            probe.data_mut()[idx] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads.data()[idx];
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((spec.name.clone(), j));
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::{init_params, EdgeType};
    use super::*;
    use crate::graph::NodeKind;
    use crate::rng::SplitMix64;

    #[test]
    fn zero_eps_rejected() {
        let topo = Topology::new(vec![NodeKind::User, NodeKind::Media], vec![]).unwrap();
        let cfg = HgtConfig {
            layers: 1,
            heads: 1,
            dim: 2,
            dropout: 0.0,
            ..Default::default()
        };
        let p = init_params(&cfg, 1).unwrap();
        let obj = Objective::Linear(vec![PairLogits::zero()]);
        let r = check_gradients(&topo, &[0.0; 4], &p, &cfg, &[(0, 1)], &obj, 0.0);
        assert!(matches!(r, Err(HgtError::BadEps(_))));
    }

    #[test]
    fn zero_loss_grad_reports_zero() {
        let topo = Topology::new(
            vec![NodeKind::User, NodeKind::Media],
            vec![(0, 1, EdgeType::Interacts), (1, 0, EdgeType::InteractedBy)],
        )
        .unwrap();
        let cfg = HgtConfig {
            layers: 1,
            heads: 1,
            dim: 2,
            dropout: 0.0,
            ..Default::default()
        };
        let p = init_params(&cfg, 1).unwrap();
        let obj = Objective::Linear(vec![PairLogits::zero()]);
        let r = check_gradients(&topo, &[0.1, 0.2, -0.3, 0.4], &p, &cfg, &[(0, 1)], &obj, 1e-4).unwrap();
        assert_eq!(r.max_rel_err, 0.0);
    }

    #[test]
    fn six_node_toy_graph_matches_finite_differences() {
        use NodeKind::*;
        let kinds = vec![User, User, User, Media, Belief, Belief];
        let mut edges = Vec::new();
        for (s, t, e) in [
            (0, 1, EdgeType::Follows),
            (2, 1, EdgeType::Follows),
            (1, 0, EdgeType::Follows),
            (0, 3, EdgeType::Interacts),
            (2, 3, EdgeType::Interacts),
            (1, 4, EdgeType::Believes),
            (0, 5, EdgeType::Believes),
            (2, 5, EdgeType::Believes),
        ] {
            edges.push((s, t, e));
            edges.push((t, s, e.reverse()));
        }
        let topo = Topology::new(kinds, edges).unwrap();
        let cfg = HgtConfig {
            layers: 2,
            heads: 2,
            dim: 4,
            dropout: 0.0,
            ..Default::default()
        };
        let p = init_params(&cfg, 7).unwrap();
        let mut rng = SplitMix64::new(3);
        let x: Vec<f64> = (0..24).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let obj = Objective::CrossEntropy(vec![(0, 2), (2, 1), (1, 3)]);
        let r = check_gradients(&topo, &x, &p, &cfg, &[(0, 3), (1, 3), (2, 3)], &obj, 1e-4).unwrap();
        assert!(r.max_rel_err < 1e-4, "{r:?}");
        assert_eq!(r.checked, p.len());
    }
}
