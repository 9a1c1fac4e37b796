use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{CellKind, HyperParams, ModelKind};

/// Value lists for one model kind. An empty list marks an axis that does
/// not apply to the kind.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelAxes {
    pub filter_size: Vec<usize>,
    pub num_blocks: Vec<usize>,
    pub num_channels: Vec<usize>,
    pub num_filters: Vec<usize>,
    pub num_rnn_blocks: Vec<usize>,
    pub num_units: Vec<usize>,
    /// Cell of a hybrid's recurrent stage; empty means BiLSTM only.
    pub rnn_cell: Vec<CellKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridEntry {
    pub model: ModelKind,
    pub axes: ModelAxes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub models: Vec<GridEntry>,
}

const CHANNELS: [usize; 3] = [1, 3, 5];
const FILTERS: [usize; 3] = [8, 16, 32];
const UNITS: [usize; 3] = [8, 16, 32];

fn conv_axes(filter_size: &[usize], num_blocks: &[usize]) -> ModelAxes {
    ModelAxes {
        filter_size: filter_size.to_vec(),
        num_blocks: num_blocks.to_vec(),
        num_channels: CHANNELS.to_vec(),
        num_filters: FILTERS.to_vec(),
        ..ModelAxes::default()
    }
}

fn hybrid_axes(filter_size: &[usize]) -> ModelAxes {
    ModelAxes {
        num_rnn_blocks: vec![1, 2],
        num_units: UNITS.to_vec(),
        ..conv_axes(filter_size, &[1, 2, 3])
    }
}

fn rnn_axes() -> ModelAxes {
    ModelAxes {
        num_channels: CHANNELS.to_vec(),
        num_rnn_blocks: vec![1, 2, 3, 4],
        num_units: UNITS.to_vec(),
        ..ModelAxes::default()
    }
}

impl GridSpec {
    /// The full published search grid, 11 model kinds.
    pub fn table_one() -> Self {
        use ModelKind::*;
        let entries = [
            (CnnDw, conv_axes(&[5, 11, 15], &[1, 2, 3, 4])),
            (CnnSt, conv_axes(&[5, 11, 15], &[1, 2, 3, 4])),
            (CnnRnnDw, hybrid_axes(&[5, 15])),
            (CnnRnnSt, hybrid_axes(&[5, 15])),
            (BiLstm, rnn_axes()),
            (Gru, rnn_axes()),
            (Lstm, rnn_axes()),
            (TcnDw, conv_axes(&[5, 11, 15], &[1, 2, 3, 4])),
            (TcnSt, conv_axes(&[5, 11, 15], &[1, 2, 3, 4])),
            (TcnRnnDw, hybrid_axes(&[5, 11, 15])),
            (TcnRnnSt, hybrid_axes(&[5, 11, 15])),
        ];
        GridSpec {
            models: entries
                .into_iter()
                .map(|(model, axes)| GridEntry { model, axes })
                .collect(),
        }
    }

    /// Two small configurations per model kind of the full grid, at one
    /// channel count. Used for smoke searches.
    pub fn coarse(num_channels: usize) -> Self {
        let mut spec = Self::table_one();
        for e in &mut spec.models {
            let a = &mut e.axes;
            a.num_channels = vec![num_channels];
            let conv = !a.filter_size.is_empty();
            let rnn = !a.num_units.is_empty();
            if conv {
                a.filter_size = vec![5];
                a.num_blocks = vec![1];
                a.num_filters = if rnn { vec![8] } else { vec![8, 16] };
            }
            if rnn {
                a.num_rnn_blocks = vec![1];
                a.num_units = vec![8, 16];
            }
        }
        spec
    }

    /// Keeps only the entries for `kinds`.
    pub fn restrict(mut self, kinds: &[ModelKind]) -> Self {
        self.models.retain(|e| kinds.contains(&e.model));
        self
    }

    /// Replaces every channel axis.
    pub fn with_channels(mut self, channels: &[usize]) -> Self {
        for e in &mut self.models {
            e.axes.num_channels = channels.to_vec();
        }
        self
    }
}

fn axis(
    name: &str,
    values: &[usize],
    applicable: bool,
    kind: ModelKind,
) -> Result<Vec<Option<usize>>> {
    match (applicable, values.is_empty()) {
        (true, true) => Err(Error::Config(format!("{kind}: axis {name} is empty"))),
        (false, false) => Err(Error::Config(format!("{kind}: axis {name} does not apply"))),
        (true, false) => Ok(values.iter().map(|&v| Some(v)).collect()),
        (false, true) => Ok(vec![None]),
    }
}

/// Number of configurations an entry expands to.
pub fn entry_size(e: &GridEntry) -> usize {
    let nonzero = |v: usize| v.max(1);
    let a = &e.axes;
    let cells = if e.model.is_hybrid() {
        nonzero(a.rnn_cell.len())
    } else {
        1
    };
    [
        a.filter_size.len(),
        a.num_blocks.len(),
        a.num_channels.len(),
        a.num_filters.len(),
        a.num_rnn_blocks.len(),
        a.num_units.len(),
    ]
    .into_iter()
    .map(nonzero)
    .product::<usize>()
        * cells
}

/// Full cartesian product of every entry, in entry order, then channels,
/// filter size, blocks, filters, recurrent blocks, units and cell.
pub fn enumerate_grid(spec: &GridSpec) -> Result<Vec<HyperParams>> {
    if spec.models.is_empty() {
        return Err(Error::Config("grid lists no models".into()));
    }
    let mut out = Vec::new();
    for e in &spec.models {
        let kind = e.model;
        let a = &e.axes;
        let conv = kind.conv_family().is_some();
        let rnn = kind.has_recurrent_stage();
        if a.num_channels.is_empty() {
            return Err(Error::Config(format!("{kind}: axis num_channels is empty")));
        }
        let filter_size = axis("filter_size", &a.filter_size, conv, kind)?;
        let num_blocks = axis("num_blocks", &a.num_blocks, conv, kind)?;
        let num_filters = axis("num_filters", &a.num_filters, conv, kind)?;
        let num_rnn_blocks = axis("num_rnn_blocks", &a.num_rnn_blocks, rnn, kind)?;
        let num_units = axis("num_units", &a.num_units, rnn, kind)?;
        let cells: Vec<Option<CellKind>> = match (kind.is_hybrid(), a.rnn_cell.is_empty()) {
            (true, true) => vec![Some(CellKind::BiLstm)],
            (true, false) => a.rnn_cell.iter().copied().map(Some).collect(),
            (false, true) => vec![None],
            (false, false) => {
                return Err(Error::Config(format!(
                    "{kind}: axis rnn_cell does not apply"
                )))
            }
        };
        for &num_channels in &a.num_channels {
            for &fs in &filter_size {
                for &nb in &num_blocks {
                    for &nf in &num_filters {
                        for &nrb in &num_rnn_blocks {
                            for &nu in &num_units {
                                for &cell in &cells {
                                    let hp = HyperParams {
                                        model_kind: kind,
                                        filter_size: fs,
                                        num_blocks: nb,
                                        num_channels,
                                        num_filters: nf,
                                        num_rnn_blocks: nrb,
                                        num_units: nu,
                                        rnn_cell: cell,
                                    };
                                    hp.validate()?;
                                    out.push(hp);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
