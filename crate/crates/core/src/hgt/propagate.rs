use super::params::LinearSlot;
use super::{Activation, EdgeType, HgtConfig, HgtError, HgtParams, Mode, Topology, INTENSITY_CLASSES, OUTPUT_LOGITS, POLARITY_CLASSES};
use crate::linalg::{affine, affine_backward, axpy, dot};
use crate::rng::SplitMix64;
use crate::Scalar;

/// Intermediates of one layer, enough to replay it and differentiate it.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace<T> {
    pub input: Vec<T>,
    pub k: Vec<T>,
    pub q: Vec<T>,
    pub v: Vec<T>,
    /// Per edge type, per source slot: `k_i(s)^T W^att_i` for all heads.
    pub katt: Vec<Vec<T>>,
    /// Per edge type, per source slot: `W^msg_i v_i(s)` for all heads.
    pub msg: Vec<Vec<T>>,
    /// Per edge, per head: the bilinear form before prior and scaling.
    pub raw: Vec<T>,
    /// Per edge, per head: attention weight.
    pub alpha: Vec<T>,
    /// Aggregated messages before activation.
    pub agg: Vec<T>,
    pub act: Vec<T>,
    /// Inverted-dropout multipliers (`0` or `1/(1-p)`), train mode only.
    pub mask: Option<Vec<T>>,
    pub output: Vec<T>,
}

impl<T: Scalar> LayerTrace<T> {
    /// Attention weights of edge `edge`, one per head.
    pub fn attention(&self, edge: usize, heads: usize) -> &[T] {
        &self.alpha[edge * heads..(edge + 1) * heads]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLogits<T> {
    pub polarity: [T; POLARITY_CLASSES],
    pub intensity: [T; INTENSITY_CLASSES],
}

impl<T: Scalar> PairLogits<T> {
    pub fn zero() -> Self {
        Self {
            polarity: [T::zero(); POLARITY_CLASSES],
            intensity: [T::zero(); INTENSITY_CLASSES],
        }
    }

    fn from_slice(s: &[T]) -> Self {
        let mut out = Self::zero();
        out.polarity.copy_from_slice(&s[..POLARITY_CLASSES]);
        out.intensity.copy_from_slice(&s[POLARITY_CLASSES..OUTPUT_LOGITS]);
        out
    }

    fn to_array(self) -> [T; OUTPUT_LOGITS] {
        let mut a = [T::zero(); OUTPUT_LOGITS];
        a[..POLARITY_CLASSES].copy_from_slice(&self.polarity);
        a[POLARITY_CLASSES..].copy_from_slice(&self.intensity);
        a
    }

    pub fn scaled(self, f: T) -> Self {
        Self {
            polarity: self.polarity.map(|x| x * f),
            intensity: self.intensity.map(|x| x * f),
        }
    }
}

/// Everything [`backward`] needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub layers: Vec<LayerTrace<T>>,
    /// Node states after the last layer.
    pub final_states: Vec<T>,
    pub pairs: Vec<(usize, usize)>,
    pub hidden_pre: Vec<T>,
    pub hidden: Vec<T>,
    pub(crate) param_len: usize,
    pub(crate) node_count: usize,
    pub(crate) dim: usize,
    pub(crate) activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub logits: Vec<PairLogits<T>>,
    pub trace: ForwardTrace<T>,
}

fn check_finite<T: Scalar>(values: &[T], layer: usize) -> Result<(), HgtError> {
    if values.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(HgtError::NonFinite { layer })
    }
}

fn apply_linear<T: Scalar>(out: &mut [T], slot: &LinearSlot, data: &[T], x: &[T]) {
    affine(out, slot.weight(data), slot.bias(data), x);
}

/// One propagation layer. The returned trace carries the layer output.
pub fn hgt_layer_forward<T: Scalar>(
    input: &[T],
    topology: &Topology,
    params: &HgtParams<T>,
    layer: usize,
    config: &HgtConfig,
    mode: Mode,
) -> Result<LayerTrace<T>, HgtError> {
    let d = config.dim;
    let heads = config.heads;
    let dk = config.head_dim();
    let n = topology.node_count();
    let slots = params
        .layout()
        .layers
        .get(layer)
        .ok_or_else(|| HgtError::TraceMismatch(format!("no parameters for layer {layer}")))?;
    let data = params.data();
    if input.len() != n * d {
        return Err(HgtError::FeatureDim {
            expected: d,
            actual: if n == 0 { 0 } else { input.len() / n },
        });
    }

    let mut k = vec![T::zero(); n * d];
    let mut q = vec![T::zero(); n * d];
    let mut v = vec![T::zero(); n * d];
    for node in 0..n {
        let kind = topology.kind(node).index();
        let x = &input[node * d..(node + 1) * d];
        apply_linear(&mut k[node * d..(node + 1) * d], &slots.k[kind], data, x);
        apply_linear(&mut q[node * d..(node + 1) * d], &slots.q[kind], data, x);
        apply_linear(&mut v[node * d..(node + 1) * d], &slots.v[kind], data, x);
    }

    let mut katt = Vec::with_capacity(EdgeType::COUNT);
    let mut msg = Vec::with_capacity(EdgeType::COUNT);
    for e in EdgeType::ALL {
        let sources = topology.sources(e);
        let mut ka = vec![T::zero(); sources.len() * d];
        let mut ms = vec![T::zero(); sources.len() * d];
        for (slot, &s) in sources.iter().enumerate() {
            for i in 0..heads {
                let att_w = &data[slots.att[e.index()] + i * dk * dk..][..dk * dk];
                let msg_w = &data[slots.msg[e.index()] + i * dk * dk..][..dk * dk];
                let ks = &k[s * d + i * dk..][..dk];
                let vs = &v[s * d + i * dk..][..dk];
                let out = &mut ka[slot * d + i * dk..][..dk];
                for r in 0..dk {
                    axpy(out, ks[r], &att_w[r * dk..(r + 1) * dk]);
                }
                let out = &mut ms[slot * d + i * dk..][..dk];
                for (r, o) in out.iter_mut().enumerate() {
                    *o = dot(&msg_w[r * dk..(r + 1) * dk], vs);
                }
            }
        }
        katt.push(ka);
        msg.push(ms);
    }

    let mu = &data[slots.mu..slots.mu + EdgeType::COUNT];
    let scale = T::one() / T::of(dk as f64).sqrt();
    let edges = topology.edges();
    let mut raw = vec![T::zero(); edges.len() * heads];
    let mut alpha = vec![T::zero(); edges.len() * heads];
    let mut agg = vec![T::zero(); n * d];
    let mut act = vec![T::zero(); n * d];
    let mut output = input.to_vec();

    let keep = T::one() - T::of(config.dropout);
    let mut mask = match mode {
        Mode::Train { seed } if config.dropout > 0.0 => {
            let mut rng = SplitMix64::keyed(seed, layer as u64);
            let inv = T::one() / keep;
            Some(
                (0..n * d)
                    .map(|_| if rng.bernoulli(config.dropout) { T::zero() } else { inv })
                    .collect::<Vec<T>>(),
            )
        }
        _ => None,
    };

    let mut scores: Vec<T> = Vec::new();
    let mut z = vec![T::zero(); d];
    for t in 0..n {
        let incoming = topology.incoming(t);
        if incoming.is_empty() {
            if let Some(m) = mask.as_mut() {
                // Unused; zeroed so the trace does not depend on isolated nodes.
                m[t * d..(t + 1) * d].fill(T::zero());
            }
            continue;
        }
        for i in 0..heads {
            let qt = &q[t * d + i * dk..][..dk];
            scores.clear();
            for &ei in incoming {
                let et = edges[ei].2.index();
                let slot = topology.source_slot(ei);
                let r = dot(&katt[et][slot * d + i * dk..][..dk], qt);
                raw[ei * heads + i] = r;
                scores.push(r * mu[et] * scale);
            }
            let max = scores.iter().fold(T::neg_infinity(), |m, &s| m.max(s));
            let mut total = T::zero();
            for s in scores.iter_mut() {
                *s = (*s - max).exp();
                total += *s;
            }
            let agg_i = &mut agg[t * d + i * dk..][..dk];
            for (j, &ei) in incoming.iter().enumerate() {
                let a = scores[j] / total;
                alpha[ei * heads + i] = a;
                let et = edges[ei].2.index();
                let slot = topology.source_slot(ei);
                axpy(agg_i, a, &msg[et][slot * d + i * dk..][..dk]);
            }
        }
        for c in t * d..(t + 1) * d {
            act[c] = config.activation.apply(agg[c]);
        }
        for c in 0..d {
            z[c] = match &mask {
                Some(m) => act[t * d + c] * m[t * d + c],
                None => act[t * d + c],
            };
        }
        let kind = topology.kind(t).index();
        let out = &mut output[t * d..(t + 1) * d];
        let a = &slots.a[kind];
        let (w, b) = (a.weight(data), a.bias(data));
        for (o, y) in out.iter_mut().enumerate() {
            *y += b[o] + dot(&w[o * d..(o + 1) * d], &z);
        }
    }
    check_finite(&output, layer)?;
    Ok(LayerTrace {
        input: input.to_vec(),
        k,
        q,
        v,
        katt,
        msg,
        raw,
        alpha,
        agg,
        act,
        mask,
        output,
    })
}

/// Runs all layers and the classifier on `(user node, media node)` pairs.
pub fn model_forward<T: Scalar>(
    topology: &Topology,
    features: &[T],
    params: &HgtParams<T>,
    config: &HgtConfig,
    pairs: &[(usize, usize)],
    mode: Mode,
) -> Result<ForwardOutput<T>, HgtError> {
    config.validate()?;
    let d = config.dim;
    let n = topology.node_count();
    if params.layout().layers.len() != config.layers {
        return Err(HgtError::TraceMismatch(format!(
            "parameters have {} layers, config {}",
            params.layout().layers.len(),
            config.layers
        )));
    }
    if features.len() != n * d {
        return Err(HgtError::FeatureDim {
            expected: d,
            actual: if n == 0 { 0 } else { features.len() / n },
        });
    }
    for &(u, m) in pairs {
        for x in [u, m] {
            if x >= n {
                return Err(HgtError::NodeIndex(x));
            }
        }
    }
    let mut layers = Vec::with_capacity(config.layers);
    let mut state = features.to_vec();
    for l in 0..config.layers {
        let trace = hgt_layer_forward(&state, topology, params, l, config, mode)?;
        state = trace.output.clone();
        layers.push(trace);
    }

    let data = params.data();
    let head = &params.layout().head;
    let p = pairs.len();
    let w = head.hidden.weight(data);
    let bias = head.hidden.bias(data);
    // The hidden layer acts on concat(user, media), so each half is applied
    // once per distinct node rather than once per pair.
    let mut user_part = vec![T::zero(); n * d];
    let mut media_part = vec![T::zero(); n * d];
    let mut done = vec![[false; 2]; n];
    for &(u, m) in pairs {
        for (side, node, part) in [(0, u, &mut user_part), (1, m, &mut media_part)] {
            if !done[node][side] {
                done[node][side] = true;
                half_matvec(&mut part[node * d..(node + 1) * d], w, side, &state[node * d..(node + 1) * d]);
            }
        }
    }
    let mut hidden_pre = vec![T::zero(); p * d];
    let mut hidden = vec![T::zero(); p * d];
    let mut logits = Vec::with_capacity(p);
    let mut out = [T::zero(); OUTPUT_LOGITS];
    for (pi, &(u, m)) in pairs.iter().enumerate() {
        let hp = &mut hidden_pre[pi * d..(pi + 1) * d];
        for j in 0..d {
            hp[j] = bias[j] + user_part[u * d + j] + media_part[m * d + j];
        }
        let hv = &mut hidden[pi * d..(pi + 1) * d];
        for (y, &x) in hv.iter_mut().zip(hp.iter()) {
            *y = config.activation.apply(x);
        }
        apply_linear(&mut out, &head.out, data, hv);
        logits.push(PairLogits::from_slice(&out));
    }
    check_finite(&hidden, config.layers)?;
    if logits.iter().any(|l| l.to_array().iter().any(|x| !x.is_finite())) {
        return Err(HgtError::NonFinite { layer: config.layers });
    }
    Ok(ForwardOutput {
        logits,
        trace: ForwardTrace {
            layers,
            final_states: state,
            pairs: pairs.to_vec(),
            hidden_pre,
            hidden,
            param_len: params.len(),
            node_count: n,
            dim: d,
            activation: config.activation,
        },
    })
}

/// `y = W[:, side*d..(side+1)*d] x` for a `d x 2d` row-major `W`.
fn half_matvec<T: Scalar>(y: &mut [T], w: &[T], side: usize, x: &[T]) {
    let d = x.len();
    for (o, yo) in y.iter_mut().enumerate() {
        let row = o * 2 * d + side * d;
        *yo = dot(&w[row..row + d], x);
    }
}

/// Mutable weight and bias gradient views of a linear block.
fn grad_linear<'a, T>(g: &'a mut [T], slot: &LinearSlot) -> (&'a mut [T], &'a mut [T]) {
    debug_assert!(slot.w < slot.b);
    let (lo, hi) = g.split_at_mut(slot.b);
    (&mut lo[slot.w..slot.w + slot.out * slot.inp], &mut hi[..slot.out])
}

/// Exact reverse-mode gradients of `sum_p <loss_grad[p], logits[p]>` with
/// respect to every parameter.
pub fn backward<T: Scalar>(
    trace: &ForwardTrace<T>,
    topology: &Topology,
    params: &HgtParams<T>,
    config: &HgtConfig,
    loss_grad: &[PairLogits<T>],
) -> Result<HgtParams<T>, HgtError> {
    if trace.param_len != params.len()
        || trace.layers.len() != params.layout().layers.len()
        || trace.node_count != topology.node_count()
        || trace.dim != config.dim
    {
        return Err(HgtError::TraceMismatch("trace was produced by a different model or graph".into()));
    }
    if loss_grad.len() != trace.pairs.len() {
        return Err(HgtError::TraceMismatch(format!(
            "{} loss gradients for {} pairs",
            loss_grad.len(),
            trace.pairs.len()
        )));
    }
    let d = config.dim;
    let n = topology.node_count();
    let data = params.data();
    let mut grads = params.zeros_like();
    let g = grads.data_mut();
    let head = &params.layout().head;
    let act = trace.activation;

    let mut d_state = vec![T::zero(); n * d];
    let mut dh = vec![T::zero(); d];
    // Per node and side, the summed gradient of the hidden pre-activations.
    let mut d_part = [vec![T::zero(); n * d], vec![T::zero(); n * d]];
    let mut used = vec![[false; 2]; n];
    for (pi, &(u, m)) in trace.pairs.iter().enumerate() {
        let dl = loss_grad[pi].to_array();
        let hp = &trace.hidden_pre[pi * d..(pi + 1) * d];
        let hv = &trace.hidden[pi * d..(pi + 1) * d];
        dh.fill(T::zero());
        let (dw, db) = grad_linear(g, &head.out);
        affine_backward(&dl, head.out.weight(data), hv, dw, db, Some(&mut dh));
        for j in 0..d {
            dh[j] *= act.derivative(hp[j], hv[j]);
        }
        let (_, db) = grad_linear(g, &head.hidden);
        axpy(db, T::one(), &dh);
        for (side, node) in [(0, u), (1, m)] {
            used[node][side] = true;
            axpy(&mut d_part[side][node * d..(node + 1) * d], T::one(), &dh);
        }
    }
    let w = head.hidden.weight(data);
    for node in 0..n {
        for side in 0..2 {
            if !used[node][side] {
                continue;
            }
            let dp = &d_part[side][node * d..(node + 1) * d];
            let x = &trace.final_states[node * d..(node + 1) * d];
            let (dw, _) = grad_linear(g, &head.hidden);
            let ds = &mut d_state[node * d..(node + 1) * d];
            for (o, &go) in dp.iter().enumerate() {
                if go == T::zero() {
                    continue;
                }
                let row = o * 2 * d + side * d;
                axpy(&mut dw[row..row + d], go, x);
                axpy(ds, go, &w[row..row + d]);
            }
        }
    }

    for l in (0..trace.layers.len()).rev() {
        d_state = layer_backward(&trace.layers[l], &d_state, topology, params, l, config, g);
    }
    Ok(grads)
}

/// Backward through one layer: accumulates parameter gradients into `g` and
/// returns the gradient with respect to the layer input.
fn layer_backward<T: Scalar>(
    tr: &LayerTrace<T>,
    d_out: &[T],
    topology: &Topology,
    params: &HgtParams<T>,
    layer: usize,
    config: &HgtConfig,
    g: &mut [T],
) -> Vec<T> {
    let d = config.dim;
    let heads = config.heads;
    let dk = config.head_dim();
    let n = topology.node_count();
    let data = params.data();
    let slots = &params.layout().layers[layer];
    let edges = topology.edges();
    let mu = &data[slots.mu..slots.mu + EdgeType::COUNT];
    let scale = T::one() / T::of(dk as f64).sqrt();

    let mut d_in = d_out.to_vec();
    let mut dq = vec![T::zero(); n * d];
    let mut dk_buf = vec![T::zero(); n * d];
    let mut dv = vec![T::zero(); n * d];
    let mut dkatt: Vec<Vec<T>> = tr.katt.iter().map(|x| vec![T::zero(); x.len()]).collect();
    let mut dmsg: Vec<Vec<T>> = tr.msg.iter().map(|x| vec![T::zero(); x.len()]).collect();
    let mut dmu = [T::zero(); EdgeType::COUNT];

    let mut z = vec![T::zero(); d];
    let mut dz = vec![T::zero(); d];
    let mut dalpha: Vec<T> = Vec::new();
    for t in 0..n {
        let incoming = topology.incoming(t);
        if incoming.is_empty() {
            continue;
        }
        let dy = &d_out[t * d..(t + 1) * d];
        if dy.iter().all(|x| *x == T::zero()) {
            continue;
        }
        let kind = topology.kind(t).index();
        for c in 0..d {
            z[c] = match &tr.mask {
                Some(m) => tr.act[t * d + c] * m[t * d + c],
                None => tr.act[t * d + c],
            };
        }
        dz.fill(T::zero());
        let a = &slots.a[kind];
        let (dw, db) = grad_linear(g, a);
        affine_backward(dy, a.weight(data), &z, dw, db, Some(&mut dz));
        for c in 0..d {
            let idx = t * d + c;
            let m = tr.mask.as_ref().map_or(T::one(), |m| m[idx]);
            dz[c] = dz[c] * m * config.activation.derivative(tr.agg[idx], tr.act[idx]);
        }
        for i in 0..heads {
            let dagg = &dz[i * dk..(i + 1) * dk];
            dalpha.clear();
            let mut weighted = T::zero();
            for &ei in incoming {
                let et = edges[ei].2.index();
                let slot = topology.source_slot(ei);
                let a = tr.alpha[ei * heads + i];
                let da = dot(dagg, &tr.msg[et][slot * d + i * dk..][..dk]);
                axpy(&mut dmsg[et][slot * d + i * dk..][..dk], a, dagg);
                weighted += a * da;
                dalpha.push(da);
            }
            for (j, &ei) in incoming.iter().enumerate() {
                let et = edges[ei].2.index();
                let slot = topology.source_slot(ei);
                let a = tr.alpha[ei * heads + i];
                let dscore = a * (dalpha[j] - weighted);
                dmu[et] += dscore * tr.raw[ei * heads + i] * scale;
                let draw = dscore * mu[et] * scale;
                axpy(&mut dq[t * d + i * dk..][..dk], draw, &tr.katt[et][slot * d + i * dk..][..dk]);
                axpy(&mut dkatt[et][slot * d + i * dk..][..dk], draw, &tr.q[t * d + i * dk..][..dk]);
            }
        }
    }
    for (e, dm) in dmu.iter().enumerate() {
        g[slots.mu + e] += *dm;
    }

    for e in EdgeType::ALL {
        let ei = e.index();
        for (slot, &s) in topology.sources(e).iter().enumerate() {
            for i in 0..heads {
                let att_off = slots.att[ei] + i * dk * dk;
                let msg_off = slots.msg[ei] + i * dk * dk;
                let att_w = &data[att_off..att_off + dk * dk];
                let msg_w = &data[msg_off..msg_off + dk * dk];
                let dka = &dkatt[ei][slot * d + i * dk..][..dk];
                let dms = &dmsg[ei][slot * d + i * dk..][..dk];
                let ks = &tr.k[s * d + i * dk..][..dk];
                let vs = &tr.v[s * d + i * dk..][..dk];
                let dks = &mut dk_buf[s * d + i * dk..][..dk];
                for r in 0..dk {
                    let row = &att_w[r * dk..(r + 1) * dk];
                    dks[r] += dot(row, dka);
                    axpy(&mut g[att_off + r * dk..att_off + (r + 1) * dk], ks[r], dka);
                }
                let dvs = &mut dv[s * d + i * dk..][..dk];
                for r in 0..dk {
                    if dms[r] == T::zero() {
                        continue;
                    }
                    axpy(dvs, dms[r], &msg_w[r * dk..(r + 1) * dk]);
                    axpy(&mut g[msg_off + r * dk..msg_off + (r + 1) * dk], dms[r], vs);
                }
            }
        }
    }

    for node in 0..n {
        let kind = topology.kind(node).index();
        let x = &tr.input[node * d..(node + 1) * d];
        let dx = &mut d_in[node * d..(node + 1) * d];
        for (slot, grad) in [
            (&slots.k[kind], &dk_buf),
            (&slots.q[kind], &dq),
            (&slots.v[kind], &dv),
        ] {
            let gy = &grad[node * d..(node + 1) * d];
            if gy.iter().all(|x| *x == T::zero()) {
                continue;
            }
            let (dw, db) = grad_linear(g, slot);
            affine_backward(gy, slot.weight(data), x, dw, db, Some(&mut *dx));
        }
    }
    d_in
}

#[cfg(test)]
mod tests {
    use super::super::init_params;
    use super::*;
    use crate::graph::NodeKind;

    fn toy() -> (Topology, HgtConfig) {
        use NodeKind::*;
        // users 0,1,2; media 3; beliefs 4,5
        let kinds = vec![User, User, User, Media, Belief, Belief];
        let mut edges = Vec::new();
        for (s, t, e) in [
            (0, 1, EdgeType::Follows),
            (2, 1, EdgeType::Follows),
            (0, 3, EdgeType::Interacts),
            (1, 4, EdgeType::Believes),
            (0, 5, EdgeType::Believes),
        ] {
            edges.push((s, t, e));
            edges.push((t, s, e.reverse()));
        }
        let cfg = HgtConfig {
            layers: 2,
            heads: 2,
            dim: 8,
            dropout: 0.0,
            ..Default::default()
        };
        (Topology::new(kinds, edges).unwrap(), cfg)
    }

    fn features(n: usize, d: usize) -> Vec<f64> {
        let mut rng = SplitMix64::new(11);
        (0..n * d).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    #[test]
    fn isolated_node_passes_through() {
        use NodeKind::*;
        let topo = Topology::new(vec![User, User, Media], vec![(0, 2, EdgeType::Interacts)]).unwrap();
        let cfg = HgtConfig {
            layers: 1,
            heads: 2,
            dim: 4,
            ..Default::default()
        };
        let p = init_params::<f64>(&cfg, 1).unwrap();
        let x = features(3, 4);
        let tr = hgt_layer_forward(&x, &topo, &p, 0, &cfg, Mode::Train { seed: 3 }).unwrap();
        assert_eq!(&tr.output[..8], &x[..8]);
        assert_ne!(&tr.output[8..], &x[8..]);
    }

    #[test]
    fn singleton_attention_is_one() {
        use NodeKind::*;
        let topo = Topology::new(vec![User, Media], vec![(0, 1, EdgeType::Interacts)]).unwrap();
        let cfg = HgtConfig {
            layers: 1,
            heads: 4,
            dim: 8,
            ..Default::default()
        };
        let p = init_params::<f64>(&cfg, 1).unwrap();
        let tr = hgt_layer_forward(&features(2, 8), &topo, &p, 0, &cfg, Mode::Eval).unwrap();
        assert!(tr.attention(0, 4).iter().all(|&a| a == 1.0));
    }

    #[test]
    fn eval_forward_is_bitwise_deterministic() {
        let (topo, cfg) = toy();
        let p = init_params::<f64>(&cfg, 5).unwrap();
        let x = features(6, 8);
        let a = model_forward(&topo, &x, &p, &cfg, &[(0, 3), (1, 3)], Mode::Eval).unwrap();
        let b = model_forward(&topo, &x, &p, &cfg, &[(0, 3), (1, 3)], Mode::Eval).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_head_gives_uniform_softmax() {
        let (topo, cfg) = toy();
        let mut p = init_params::<f64>(&cfg, 5).unwrap();
        let spec = p.layout().spec("head.out.weight").unwrap().range();
        p.data_mut()[spec].fill(0.0);
        let out = model_forward(&topo, &features(6, 8), &p, &cfg, &[(0, 3)], Mode::Eval).unwrap();
        assert_eq!(out.logits[0].polarity, [0.0; 3]);
    }

    #[test]
    fn zero_layers_uses_initial_features() {
        let (topo, mut cfg) = toy();
        cfg.layers = 0;
        let p = init_params::<f64>(&cfg, 5).unwrap();
        let x = features(6, 8);
        let out = model_forward(&topo, &x, &p, &cfg, &[(2, 3)], Mode::Eval).unwrap();
        assert_eq!(out.trace.final_states, x);
    }

    #[test]
    fn pair_order_does_not_matter() {
        let (topo, cfg) = toy();
        let p = init_params::<f64>(&cfg, 5).unwrap();
        let x = features(6, 8);
        let a = model_forward(&topo, &x, &p, &cfg, &[(0, 3), (1, 3), (2, 3)], Mode::Eval).unwrap();
        let b = model_forward(&topo, &x, &p, &cfg, &[(2, 3), (0, 3), (1, 3)], Mode::Eval).unwrap();
        assert_eq!(a.logits[0], b.logits[1]);
        assert_eq!(a.logits[1], b.logits[2]);
        assert_eq!(a.logits[2], b.logits[0]);
    }

    #[test]
    fn train_mode_depends_only_on_seed() {
        let (topo, mut cfg) = toy();
        cfg.dropout = 0.5;
        let p = init_params::<f64>(&cfg, 5).unwrap();
        let x = features(6, 8);
        let run = |seed| model_forward(&topo, &x, &p, &cfg, &[(0, 3)], Mode::Train { seed }).unwrap();
        assert_eq!(run(1), run(1));
        assert_ne!(run(1).logits, run(2).logits);
    }

    #[test]
    fn backward_is_linear_in_loss_grad() {
        let (topo, cfg) = toy();
        let p = init_params::<f64>(&cfg, 5).unwrap();
        let out = model_forward(&topo, &features(6, 8), &p, &cfg, &[(0, 3), (1, 3)], Mode::Eval).unwrap();
        let mut lg = vec![PairLogits::zero(); 2];
        lg[0].polarity = [0.3, -0.1, 0.2];
        lg[1].intensity = [0.5, 0.0, -0.25, 0.1];
        let g1 = backward(&out.trace, &topo, &p, &cfg, &lg).unwrap();
        let lg2: Vec<_> = lg.iter().map(|l| l.scaled(2.0)).collect();
        let g2 = backward(&out.trace, &topo, &p, &cfg, &lg2).unwrap();
        for (a, b) in g1.data().iter().zip(g2.data()) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn absent_edge_type_has_zero_gradient() {
        use NodeKind::*;
        let topo = Topology::new(
            vec![User, Media],
            vec![(0, 1, EdgeType::Interacts), (1, 0, EdgeType::InteractedBy)],
        )
        .unwrap();
        let cfg = HgtConfig {
            layers: 1,
            heads: 2,
            dim: 4,
            dropout: 0.0,
            ..Default::default()
        };
        let p = init_params::<f64>(&cfg, 2).unwrap();
        let x = features(2, 4);
        let out = model_forward(&topo, &x, &p, &cfg, &[(0, 1)], Mode::Eval).unwrap();
        let mut lg = vec![PairLogits::zero()];
        lg[0].polarity = [1.0, -1.0, 0.5];
        let g = backward(&out.trace, &topo, &p, &cfg, &lg).unwrap();
        assert!(g.tensor("layer0.att.follows").unwrap().iter().all(|&x| x == 0.0));
        assert!(g.tensor("layer0.belief.k.weight").unwrap().iter().all(|&x| x == 0.0));
        assert_eq!(g.tensor("layer0.mu").unwrap()[EdgeType::Believes.index()], 0.0);
        // A single incoming edge has attention weight 1 whatever the scores.
        assert!(g.tensor("layer0.att.interacts").unwrap().iter().all(|&x| x == 0.0));
        assert!(g.tensor("layer0.msg.interacts").unwrap().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn mismatched_trace_rejected() {
        let (topo, cfg) = toy();
        let p = init_params::<f64>(&cfg, 5).unwrap();
        let out = model_forward(&topo, &features(6, 8), &p, &cfg, &[(0, 3)], Mode::Eval).unwrap();
        let other_cfg = HgtConfig { layers: 1, ..cfg };
        let other = init_params::<f64>(&other_cfg, 5).unwrap();
        assert!(backward(&out.trace, &topo, &other, &other_cfg, &[PairLogits::zero()]).is_err());
        assert!(backward(&out.trace, &topo, &p, &cfg, &[]).is_err());
    }

    #[test]
    fn nan_input_fails_fast() {
        let (topo, cfg) = toy();
        let p = init_params::<f64>(&cfg, 5).unwrap();
        let mut x = features(6, 8);
        x[0] = f64::NAN;
        assert!(matches!(
            model_forward(&topo, &x, &p, &cfg, &[(0, 3)], Mode::Eval),
            Err(HgtError::NonFinite { layer: 0 })
        ));
    }
}
