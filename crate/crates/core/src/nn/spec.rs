//! Architecture description produced from hyperparameters.
//!
//! A [`LayerSpec`] is the single source of truth for parameter names and
//! shapes: model initialization, checkpoints and parameter counting all read
//! [`LayerDesc::param_shapes`].

use serde::{Deserialize, Serialize};

use super::hyper::{CellKind, CellType, ConvFamily, HyperParams};
use crate::error::{Error, Result};

/// Logits per timestep: no-blink, blink.
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Same-padded standard conv followed by ReLU.
    Conv,
    /// Same-padded depthwise conv, pointwise conv, ReLU.
    SeparableConv,
    /// Two causal dilated convs with ReLU plus a residual path.
    TcnBlock,
    /// [`LayerKind::TcnBlock`] built from depthwise-separable convs.
    SeparableTcnBlock,
    Recurrent(CellType),
    /// Per-timestep linear map to class logits.
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Bidirectional,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDesc {
    pub kind: LayerKind,
    pub in_width: usize,
    pub out_width: usize,
    pub kernel: Option<usize>,
    pub dilation: Option<usize>,
    pub direction: Option<Direction>,
}

/// Name and shape of every trainable array, in binding order.
pub type ParamShapes = Vec<(String, Vec<usize>)>;

impl LayerDesc {
    pub fn is_conv(&self) -> bool {
        matches!(
            self.kind,
            LayerKind::Conv
                | LayerKind::SeparableConv
                | LayerKind::TcnBlock
                | LayerKind::SeparableTcnBlock
        )
    }

    /// Hidden units of a recurrent layer (per direction).
    pub fn units(&self) -> usize {
        match self.direction {
            Some(Direction::Bidirectional) => self.out_width / 2,
            _ => self.out_width,
        }
    }

    pub fn param_shapes(&self, index: usize) -> ParamShapes {
        let p = |suffix: &str, shape: Vec<usize>| (format!("l{index}.{suffix}"), shape);
        let (cin, cout) = (self.in_width, self.out_width);
        let k = self.kernel.unwrap_or(1);
        let separable = |prefix: &str, cin: usize, cout: usize| {
            vec![
                p(&format!("{prefix}depth.w"), vec![cin, k]),
                p(&format!("{prefix}depth.b"), vec![cin]),
                p(&format!("{prefix}point.w"), vec![cout, cin, 1]),
                p(&format!("{prefix}point.b"), vec![cout]),
            ]
        };
        let projection = || {
            if cin == cout {
                vec![]
            } else {
                vec![p("proj.w", vec![cout, cin, 1]), p("proj.b", vec![cout])]
            }
        };
        match self.kind {
            LayerKind::Conv => vec![p("conv.w", vec![cout, cin, k]), p("conv.b", vec![cout])],
            LayerKind::SeparableConv => separable("", cin, cout),
            LayerKind::TcnBlock => {
                let mut v = vec![
                    p("conv1.w", vec![cout, cin, k]),
                    p("conv1.b", vec![cout]),
                    p("conv2.w", vec![cout, cout, k]),
                    p("conv2.b", vec![cout]),
                ];
                v.extend(projection());
                v
            }
            LayerKind::SeparableTcnBlock => {
                let mut v = separable("conv1.", cin, cout);
                v.extend(separable("conv2.", cout, cout));
                v.extend(projection());
                v
            }
            LayerKind::Recurrent(cell) => {
                let u = self.units();
                let gates = match cell {
                    CellType::Lstm => 4,
                    CellType::Gru => 3,
                };
                let dirs: &[&str] = match self.direction {
                    Some(Direction::Bidirectional) => &["fwd", "bwd"],
                    _ => &["fwd"],
                };
                let mut v = Vec::new();
                for d in dirs {
                    v.push(p(&format!("{d}.w_ih"), vec![gates * u, cin]));
                    v.push(p(&format!("{d}.w_hh"), vec![gates * u, u]));
                    match cell {
                        CellType::Lstm => v.push(p(&format!("{d}.b"), vec![gates * u])),
                        CellType::Gru => {
                            v.push(p(&format!("{d}.b_ih"), vec![gates * u]));
                            v.push(p(&format!("{d}.b_hh"), vec![gates * u]));
                        }
                    }
                }
                v
            }
            LayerKind::Head => vec![
                ("head.w".to_string(), vec![cout, cin, 1]),
                ("head.b".to_string(), vec![cout]),
            ],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.param_shapes(0)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum()
    }

    /// Scalar multiplications per output timestep in the forward pass.
    pub fn multiply_count(&self) -> usize {
        let (cin, cout) = (self.in_width, self.out_width);
        let k = self.kernel.unwrap_or(1);
        let proj = if cin == cout { 0 } else { cin * cout };
        match self.kind {
            LayerKind::Conv => cout * cin * k,
            LayerKind::SeparableConv => cin * k + cout * cin,
            LayerKind::TcnBlock => cout * cin * k + cout * cout * k + proj,
            LayerKind::SeparableTcnBlock => {
                (cin * k + cout * cin) + (cout * k + cout * cout) + proj
            }
            LayerKind::Recurrent(cell) => {
                let u = self.units();
                let dirs = if self.direction == Some(Direction::Bidirectional) {
                    2
                } else {
                    1
                };
                // Matrix-vector products plus the elementwise gating products.
                let per_dir = match cell {
                    CellType::Lstm => 4 * u * (cin + u) + 3 * u,
                    CellType::Gru => 3 * u * (cin + u) + 3 * u,
                };
                dirs * per_dir
            }
            LayerKind::Head => cout * cin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub hyperparams: HyperParams,
    pub layers: Vec<LayerDesc>,
}

impl LayerSpec {
    pub fn param_shapes(&self) -> ParamShapes {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| l.param_shapes(i))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(LayerDesc::parameter_count).sum()
    }

    pub fn multiply_count(&self) -> usize {
        self.layers.iter().map(LayerDesc::multiply_count).sum()
    }

    pub fn input_channels(&self) -> usize {
        self.hyperparams.num_channels
    }

    /// Width of the convolutional stage, when there is one.
    pub fn conv_width(&self) -> Option<usize> {
        self.layers
            .iter()
            .rfind(|l| l.is_conv())
            .map(|l| l.out_width)
    }

    /// True when every output step depends only on current and past inputs.
    pub fn is_causal(&self) -> bool {
        self.layers.iter().all(|l| match l.kind {
            LayerKind::Conv | LayerKind::SeparableConv => false,
            LayerKind::Recurrent(_) => l.direction == Some(Direction::Forward),
            _ => true,
        })
    }

    fn check(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].out_width != pair[1].in_width {
                return Err(Error::Config(format!(
                    "layer widths disagree: {} -> {}",
                    pair[0].out_width, pair[1].in_width
                )));
            }
        }
        match self.layers.last() {
            Some(l) if l.kind == LayerKind::Head && l.out_width == NUM_CLASSES => Ok(()),
            _ => Err(Error::Config("spec must end in a 2-logit head".into())),
        }
    }
}

/// Builds the architecture for `hp`. Depthwise kinds get a conv-stage width
/// chosen by [`matched_separable_width`].
pub fn assemble(hp: &HyperParams) -> Result<LayerSpec> {
    hp.validate()?;
    let width = if hp.model_kind.is_separable() {
        matched_separable_width(hp)?
    } else {
        hp.num_filters.unwrap_or(0)
    };
    let spec = build(hp, width);
    spec.check()?;
    Ok(spec)
}

/// Exact trainable-scalar count of the assembled architecture.
pub fn parameter_count(spec: &LayerSpec) -> usize {
    spec.parameter_count()
}

fn build(hp: &HyperParams, conv_width: usize) -> LayerSpec {
    let kind = hp.model_kind;
    let mut layers = Vec::new();
    let mut width = hp.num_channels;
    if let Some(family) = kind.conv_family() {
        let k = hp.filter_size.expect("validated");
        let blocks = hp.num_blocks.expect("validated");
        for b in 0..blocks {
            let (lk, dilation) = match (family, kind.is_separable()) {
                (ConvFamily::Cnn, false) => (LayerKind::Conv, 1),
                (ConvFamily::Cnn, true) => (LayerKind::SeparableConv, 1),
                (ConvFamily::Tcn, false) => (LayerKind::TcnBlock, 1 << b),
                (ConvFamily::Tcn, true) => (LayerKind::SeparableTcnBlock, 1 << b),
            };
            layers.push(LayerDesc {
                kind: lk,
                in_width: width,
                out_width: conv_width,
                kernel: Some(k),
                dilation: Some(dilation),
                direction: None,
            });
            width = conv_width;
        }
    }
    if let Some(cell) = hp.cell() {
        let units = hp.num_units.expect("validated");
        let out = if cell.bidirectional() {
            2 * units
        } else {
            units
        };
        for _ in 0..hp.num_rnn_blocks.expect("validated") {
            layers.push(LayerDesc {
                kind: LayerKind::Recurrent(cell.cell_type()),
                in_width: width,
                out_width: out,
                kernel: None,
                dilation: None,
                direction: Some(if cell.bidirectional() {
                    Direction::Bidirectional
                } else {
                    Direction::Forward
                }),
            });
            width = out;
        }
    }
    layers.push(LayerDesc {
        kind: LayerKind::Head,
        in_width: width,
        out_width: NUM_CLASSES,
        kernel: None,
        dilation: None,
        direction: None,
    });
    LayerSpec {
        hyperparams: hp.clone(),
        layers,
    }
}

/// Relative parameter-count tolerance a depthwise model is widened to meet.
pub const PARITY_TOLERANCE: f64 = 0.10;

/// Conv-stage width of a depthwise model: the smallest widening of
/// `num_filters` whose total parameter count is within [`PARITY_TOLERANCE`]
/// of the standard-conv model with the same hyperparameters. When one step
/// jumps over the band, the nearer of the two straddling widths is used.
pub fn matched_separable_width(hp: &HyperParams) -> Result<usize> {
    let filters = hp
        .num_filters
        .ok_or_else(|| Error::Config("num_filters is required for depthwise models".into()))?;
    let mut standard = hp.clone();
    standard.model_kind = hp.model_kind.standard_counterpart();
    let target = build(&standard, filters).parameter_count() as f64;
    let gap = |w: usize| (build(hp, w).parameter_count() as f64 - target) / target;
    let mut width = filters;
    loop {
        let g = gap(width);
        if g.abs() <= PARITY_TOLERANCE || (g > 0.0 && width == filters) {
            return Ok(width);
        }
        if g > 0.0 {
            return Ok(if gap(width - 1).abs() <= g {
                width - 1
            } else {
                width
            });
        }
        width += 1;
    }
}

/// Receptive field in samples of `blocks` TCN blocks with kernel `k`.
pub fn tcn_receptive_field(k: usize, blocks: usize) -> usize {
    1 + 2 * (k - 1) * ((1 << blocks) - 1)
}

/// Convenience: the cell of a recurrent layer as a [`CellKind`].
pub fn cell_kind_of(layer: &LayerDesc) -> Option<CellKind> {
    match (layer.kind, layer.direction) {
        (LayerKind::Recurrent(CellType::Lstm), Some(Direction::Bidirectional)) => {
            Some(CellKind::BiLstm)
        }
        (LayerKind::Recurrent(CellType::Lstm), _) => Some(CellKind::Lstm),
        (LayerKind::Recurrent(CellType::Gru), Some(Direction::Bidirectional)) => {
            Some(CellKind::BiGru)
        }
        (LayerKind::Recurrent(CellType::Gru), _) => Some(CellKind::Gru),
        _ => None,
    }
}
