use std::sync::Arc;

use super::{EdgeType, HgtConfig, HgtError, OUTPUT_LOGITS};
use crate::graph::NodeKind;
use crate::rng::SplitMix64;
use crate::Scalar;

/// A named tensor inside the flat parameter buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Offsets of a `y = W x + b` block (`W` is `out x inp`, row-major).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LinearSlot {
    pub w: usize,
    pub b: usize,
    pub out: usize,
    pub inp: usize,
}

impl LinearSlot {
    pub fn weight<'a, T>(&self, data: &'a [T]) -> &'a [T] {
        &data[self.w..self.w + self.out * self.inp]
    }

    pub fn bias<'a, T>(&self, data: &'a [T]) -> &'a [T] {
        &data[self.b..self.b + self.out]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct LayerSlots {
    /// Indexed by node kind.
    pub k: [LinearSlot; 3],
    pub q: [LinearSlot; 3],
    pub v: [LinearSlot; 3],
    pub a: [LinearSlot; 3],
    /// Offset of the `heads x d_k x d_k` block for each edge type.
    pub att: [usize; EdgeType::COUNT],
    pub msg: [usize; EdgeType::COUNT],
    /// Offset of the per-edge-type prior vector.
    pub mu: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct HeadSlots {
    pub hidden: LinearSlot,
    pub out: LinearSlot,
}

/// Names, shapes and offsets of every parameter for a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    specs: Vec<TensorSpec>,
    pub(crate) layers: Vec<LayerSlots>,
    pub(crate) head: HeadSlots,
    total: usize,
}

struct Builder {
    specs: Vec<TensorSpec>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>) -> usize {
        let offset = self.total;
        let spec = TensorSpec { name, shape, offset };
        self.total += spec.len();
        self.specs.push(spec);
        offset
    }

    fn linear(&mut self, prefix: &str, out: usize, inp: usize) -> LinearSlot {
        let w = self.push(format!("{prefix}.weight"), vec![out, inp]);
        let b = self.push(format!("{prefix}.bias"), vec![out]);
        LinearSlot { w, b, out, inp }
    }
}

impl Layout {
    pub fn new(config: &HgtConfig) -> Self {
        let d = config.dim;
        let dk = config.head_dim();
        let mut b = Builder {
            specs: Vec::new(),
            total: 0,
        };
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut lin = |name: &str| {
                NodeKind::ALL.map(|kind| b.linear(&format!("layer{l}.{}.{name}", kind.as_str()), d, d))
            };
            let k = lin("k");
            let q = lin("q");
            let v = lin("v");
            let a = lin("a");
            let att = EdgeType::ALL.map(|e| b.push(format!("layer{l}.att.{}", e.as_str()), vec![config.heads, dk, dk]));
            let msg = EdgeType::ALL.map(|e| b.push(format!("layer{l}.msg.{}", e.as_str()), vec![config.heads, dk, dk]));
            let mu = b.push(format!("layer{l}.mu"), vec![EdgeType::COUNT]);
            layers.push(LayerSlots {
                k,
                q,
                v,
                a,
                att,
                msg,
                mu,
            });
        }
        let head = HeadSlots {
            hidden: b.linear("head.hidden", d, 2 * d),
            out: b.linear("head.out", OUTPUT_LOGITS, d),
        };
        Self {
            specs: b.specs,
            layers,
            head,
            total: b.total,
        }
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn spec(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }
}

/// All model parameters in one flat buffer. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct HgtParams<T> {
    layout: Arc<Layout>,
    data: Vec<T>,
}

impl<T: Scalar> HgtParams<T> {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![T::zero(); layout.total()];
        Self { layout, data }
    }

    pub fn from_data(layout: Arc<Layout>, data: Vec<T>) -> Result<Self, HgtError> {
        if data.len() != layout.total() {
            return Err(HgtError::TraceMismatch(format!(
                "buffer has {} values, layout needs {}",
                data.len(),
                layout.total()
            )));
        }
        Ok(Self { layout, data })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.layout.clone())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout.spec(name).map(|s| &self.data[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let range = self.layout.spec(name)?.range();
        Some(&mut self.data[range])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scale(&mut self, factor: T) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    pub fn cast<U: Scalar>(&self) -> HgtParams<U> {
        HgtParams {
            layout: self.layout.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, x| m.max(x.abs()))
    }
}

/// Xavier-uniform weights (bound `sqrt(6 / (fan_in + fan_out))`), zero
/// biases, all attention priors 1. Tensor `i` draws from the SplitMix64
/// stream `(seed, i)`.
pub fn init_params<T: Scalar>(config: &HgtConfig, seed: u64) -> Result<HgtParams<T>, HgtError> {
    config.validate()?;
    let layout = Arc::new(Layout::new(config));
    let mut params = HgtParams::zeros(layout.clone());
    for (i, spec) in layout.specs().iter().enumerate() {
        let values = &mut params.data[spec.range()];
        if spec.name.ends_with(".bias") {
            continue;
        }
        if spec.name.ends_with(".mu") {
            values.fill(T::one());
            continue;
        }
        // Weights are `out x inp`, per-head blocks `heads x d_k x d_k`.
        let n = spec.shape.len();
        let (fan_out, fan_in) = (spec.shape[n - 2], spec.shape[n - 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut rng = SplitMix64::keyed(seed, i as u64);
        for v in values.iter_mut() {
            *v = T::of(rng.uniform(-bound, bound));
        }
    }
    Ok(params)
}
