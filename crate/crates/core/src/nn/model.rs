use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::hyper::{CellType, HyperParams};
use super::layers::{
    bidirectional_wrap, recurrent_sequence, tcn_block, ConvWeights, RecurrentWeights, Residual,
    SeparableWeights,
};
use super::spec::{assemble, Direction, LayerDesc, LayerKind, LayerSpec};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Padding, Tensor, Var};

/// A named trainable array.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Inverted dropout applied between stages while training.
#[derive(Debug, Clone)]
pub struct Dropout {
    rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self {
            rate,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn apply(&mut self, g: &mut Graph, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - self.rate);
        let shape = g.value(x).shape().to_vec();
        let n = g.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| {
                if self.rng.random::<f64>() < self.rate {
                    0.0
                } else {
                    keep
                }
            })
            .collect();
        let m = g.constant(Tensor::from_parts(shape, mask));
        g.mul(x, m)
    }
}

/// Assembled architecture plus its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: LayerSpec,
    params: Vec<Param>,
}

impl Model {
    /// Random initialization, deterministic in `seed`.
    pub fn new(hp: &HyperParams, seed: u64) -> Result<Self> {
        let spec = assemble(hp)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .layers
            .iter()
            .enumerate()
            .flat_map(|(i, layer)| {
                layer
                    .param_shapes(i)
                    .into_iter()
                    .map(move |(name, shape)| (layer.kind, name, shape))
            })
            .map(|(kind, name, shape)| {
                let value = init_param(kind, &name, &shape, &mut rng);
                Param { name, value }
            })
            .collect();
        Ok(Self { spec, params })
    }

    /// All weights zero; every forward pass yields zero logits.
    pub fn zeros(hp: &HyperParams) -> Result<Self> {
        let spec = assemble(hp)?;
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| Param {
                value: Tensor::zeros(&shape),
                name,
            })
            .collect();
        Ok(Self { spec, params })
    }

    /// Rebuilds a model from stored weights, checking names and shapes
    /// against the assembled architecture.
    pub fn from_params(hp: &HyperParams, params: Vec<Param>) -> Result<Self> {
        let spec = assemble(hp)?;
        let expected = spec.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "architecture has {} weight arrays, got {}",
                expected.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in expected.iter().zip(&params) {
            if name != &p.name {
                return Err(Error::Checkpoint(format!(
                    "expected weight {name}, found {}",
                    p.name
                )));
            }
            if shape.as_slice() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "weight {name} has shape {:?}, architecture needs {shape:?}",
                    p.value.shape()
                )));
            }
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn hyperparams(&self) -> &HyperParams {
        &self.spec.hyperparams
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every weight in `g`, in spec order.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect()
    }

    /// Logits `[2 x T]` for input `[C x T]`. Dropout, when given, is applied
    /// after the conv stage and after the recurrent stage.
    pub fn forward(
        &self,
        g: &mut Graph,
        x: Var,
        vars: &[Var],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let shape = g.value(x).shape();
        if shape.len() != 2 || shape[0] != self.spec.input_channels() {
            return Err(Error::Dimension(format!(
                "model expects [{} x T] input, got {shape:?}",
                self.spec.input_channels()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || {
            it.next()
                .ok_or_else(|| Error::Contract("too few bound weights".into()))
        };
        let mut h = x;
        let layers = &self.spec.layers;
        for (i, layer) in layers.iter().enumerate() {
            h = apply_layer(g, layer, h, &mut next)?;
            let stage_ends = layers.get(i + 1).is_some_and(|n| {
                std::mem::discriminant(&n.kind) != std::mem::discriminant(&layer.kind)
            });
            if stage_ends && layer.kind != LayerKind::Head {
                if let Some(d) = dropout.as_deref_mut() {
                    h = d.apply(g, h)?;
                }
            }
        }
        Ok(h)
    }

    /// Inference-only logits.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, xv, &vars, None)?;
        Ok(g.value(out).clone())
    }

    /// Per-timestep argmax labels; a tie resolves to no-blink.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<u8>> {
        Ok(argmax_labels(&self.logits(x)?))
    }
}

/// Label 1 where the blink logit strictly exceeds the no-blink logit.
pub fn argmax_labels(logits: &Tensor) -> Vec<u8> {
    logits
        .row(0)
        .iter()
        .zip(logits.row(1))
        .map(|(z0, z1)| u8::from(z1 > z0))
        .collect()
}

fn apply_layer(
    g: &mut Graph,
    layer: &LayerDesc,
    x: Var,
    next: &mut impl FnMut() -> Result<Var>,
) -> Result<Var> {
    let separable = |next: &mut dyn FnMut() -> Result<Var>| -> Result<ConvWeights> {
        Ok(ConvWeights::Separable(SeparableWeights {
            depth_w: next()?,
            depth_b: Some(next()?),
            point_w: next()?,
            point_b: Some(next()?),
        }))
    };
    let standard = |next: &mut dyn FnMut() -> Result<Var>| -> Result<ConvWeights> {
        Ok(ConvWeights::Standard {
            w: next()?,
            b: Some(next()?),
        })
    };
    let dilation = layer.dilation.unwrap_or(1);
    match layer.kind {
        LayerKind::Conv | LayerKind::SeparableConv => {
            let w = if layer.kind == LayerKind::Conv {
                standard(next)?
            } else {
                separable(next)?
            };
            let h = w.apply(g, x, Padding::Same, dilation)?;
            Ok(g.relu(h))
        }
        LayerKind::TcnBlock | LayerKind::SeparableTcnBlock => {
            let (c1, c2) = if layer.kind == LayerKind::TcnBlock {
                (standard(next)?, standard(next)?)
            } else {
                (separable(next)?, separable(next)?)
            };
            let residual = if layer.in_width == layer.out_width {
                Residual::Identity
            } else {
                Residual::Projection {
                    w: next()?,
                    b: next()?,
                }
            };
            tcn_block(g, x, &c1, &c2, &residual, dilation)
        }
        LayerKind::Recurrent(cell) => {
            let mut dir = || -> Result<RecurrentWeights> {
                let (w_ih, w_hh, b_ih) = (next()?, next()?, next()?);
                let b_hh = match cell {
                    CellType::Gru => Some(next()?),
                    CellType::Lstm => None,
                };
                Ok(RecurrentWeights {
                    cell,
                    w_ih,
                    w_hh,
                    b_ih,
                    b_hh,
                })
            };
            match layer.direction {
                Some(Direction::Bidirectional) => {
                    let fwd = dir()?;
                    let bwd = dir()?;
                    bidirectional_wrap(g, x, &fwd, &bwd)
                }
                _ => {
                    let fwd = dir()?;
                    recurrent_sequence(g, x, &fwd, false)
                }
            }
        }
        LayerKind::Head => {
            let (w, b) = (next()?, next()?);
            g.conv1d(x, w, Some(b), Padding::Same, 1)
        }
    }
}

fn init_param(kind: LayerKind, name: &str, shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut uniform =
        |bound: f64| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..=bound)).collect() };
    let gates = if matches!(kind, LayerKind::Recurrent(CellType::Lstm)) {
        4
    } else {
        3
    };
    let data = if name.ends_with(".w_hh") {
        uniform((1.0 / shape[1] as f64).sqrt())
    } else if name.ends_with(".w_ih") {
        uniform((gates as f64 / shape[0] as f64).sqrt())
    } else if shape.len() == 1 {
        let mut b = vec![0.0; n];
        if matches!(kind, LayerKind::Recurrent(CellType::Lstm)) {
            // Forget-gate slice of the (i, f, g, o) bias.
            let u = n / 4;
            b[u..2 * u].fill(1.0);
        }
        b
    } else {
        let (fan_in, fan_out) = match shape {
            [_, k] => (*k, *k),
            [o, i, k] => (i * k, o * k),
            _ => (n, n),
        };
        uniform((6.0 / (fan_in + fan_out) as f64).sqrt())
    };
    Tensor::from_parts(shape.to_vec(), data)
}
