use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture family. Labels follow the hyperparameter table naming,
/// where the depthwise TCN hybrid is the unsuffixed `TCN-RNN`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "CNN-ST")]
    CnnSt,
    #[serde(rename = "CNN-DW")]
    CnnDw,
    #[serde(rename = "TCN-ST")]
    TcnSt,
    #[serde(rename = "TCN-DW")]
    TcnDw,
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "BiLSTM")]
    BiLstm,
    #[serde(rename = "BiGRU")]
    BiGru,
    #[serde(rename = "CNN-RNN-ST")]
    CnnRnnSt,
    #[serde(rename = "CNN-RNN-DW")]
    CnnRnnDw,
    #[serde(rename = "TCN-RNN-ST")]
    TcnRnnSt,
    #[serde(rename = "TCN-RNN")]
    TcnRnnDw,
}

/// Convolutional front end of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvFamily {
    /// Same-padded blocks.
    Cnn,
    /// Causal dilated residual blocks.
    Tcn,
}

/// Recurrent cell used by a recurrent stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CellKind {
    #[serde(rename = "LSTM")]
    Lstm,
    #[serde(rename = "GRU")]
    Gru,
    #[serde(rename = "BiLSTM")]
    BiLstm,
    #[serde(rename = "BiGRU")]
    BiGru,
}

/// Gate structure of a recurrent cell, independent of direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellType {
    Lstm,
    Gru,
}

impl CellKind {
    pub const ALL: [CellKind; 4] = [
        CellKind::Lstm,
        CellKind::Gru,
        CellKind::BiLstm,
        CellKind::BiGru,
    ];

    pub fn cell_type(self) -> CellType {
        match self {
            CellKind::Lstm | CellKind::BiLstm => CellType::Lstm,
            CellKind::Gru | CellKind::BiGru => CellType::Gru,
        }
    }

    pub fn bidirectional(self) -> bool {
        matches!(self, CellKind::BiLstm | CellKind::BiGru)
    }

    pub fn label(self) -> &'static str {
        match self {
            CellKind::Lstm => "LSTM",
            CellKind::Gru => "GRU",
            CellKind::BiLstm => "BiLSTM",
            CellKind::BiGru => "BiGRU",
        }
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            "bilstm" => Ok(CellKind::BiLstm),
            "bigru" => Ok(CellKind::BiGru),
            _ => Err(Error::Config(format!("unknown recurrent cell {s:?}"))),
        }
    }
}

impl ModelKind {
    pub const ALL: [ModelKind; 12] = [
        ModelKind::CnnSt,
        ModelKind::CnnDw,
        ModelKind::TcnSt,
        ModelKind::TcnDw,
        ModelKind::Lstm,
        ModelKind::Gru,
        ModelKind::BiLstm,
        ModelKind::BiGru,
        ModelKind::CnnRnnSt,
        ModelKind::CnnRnnDw,
        ModelKind::TcnRnnSt,
        ModelKind::TcnRnnDw,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ModelKind::CnnSt => "CNN-ST",
            ModelKind::CnnDw => "CNN-DW",
            ModelKind::TcnSt => "TCN-ST",
            ModelKind::TcnDw => "TCN-DW",
            ModelKind::Lstm => "LSTM",
            ModelKind::Gru => "GRU",
            ModelKind::BiLstm => "BiLSTM",
            ModelKind::BiGru => "BiGRU",
            ModelKind::CnnRnnSt => "CNN-RNN-ST",
            ModelKind::CnnRnnDw => "CNN-RNN-DW",
            ModelKind::TcnRnnSt => "TCN-RNN-ST",
            ModelKind::TcnRnnDw => "TCN-RNN",
        }
    }

    /// Name used in leaderboard tables, where the standard CNN hybrid is
    /// reported as plain `CNN-RNN`.
    pub fn table_label(self) -> &'static str {
        match self {
            ModelKind::CnnRnnSt => "CNN-RNN",
            other => other.label(),
        }
    }

    pub fn conv_family(self) -> Option<ConvFamily> {
        match self {
            ModelKind::CnnSt | ModelKind::CnnDw | ModelKind::CnnRnnSt | ModelKind::CnnRnnDw => {
                Some(ConvFamily::Cnn)
            }
            ModelKind::TcnSt | ModelKind::TcnDw | ModelKind::TcnRnnSt | ModelKind::TcnRnnDw => {
                Some(ConvFamily::Tcn)
            }
            _ => None,
        }
    }

    pub fn is_separable(self) -> bool {
        matches!(
            self,
            ModelKind::CnnDw | ModelKind::TcnDw | ModelKind::CnnRnnDw | ModelKind::TcnRnnDw
        )
    }

    pub fn is_hybrid(self) -> bool {
        matches!(
            self,
            ModelKind::CnnRnnSt | ModelKind::CnnRnnDw | ModelKind::TcnRnnSt | ModelKind::TcnRnnDw
        )
    }

    /// Cell of a purely recurrent model.
    pub fn pure_cell(self) -> Option<CellKind> {
        match self {
            ModelKind::Lstm => Some(CellKind::Lstm),
            ModelKind::Gru => Some(CellKind::Gru),
            ModelKind::BiLstm => Some(CellKind::BiLstm),
            ModelKind::BiGru => Some(CellKind::BiGru),
            _ => None,
        }
    }

    pub fn has_recurrent_stage(self) -> bool {
        self.is_hybrid() || self.pure_cell().is_some()
    }

    /// Standard-convolution counterpart of a depthwise kind.
    pub fn standard_counterpart(self) -> ModelKind {
        match self {
            ModelKind::CnnDw => ModelKind::CnnSt,
            ModelKind::TcnDw => ModelKind::TcnSt,
            ModelKind::CnnRnnDw => ModelKind::CnnRnnSt,
            ModelKind::TcnRnnDw => ModelKind::TcnRnnSt,
            other => other,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase();
        let kind = match key.as_str() {
            "CNN-ST" => ModelKind::CnnSt,
            "CNN-DW" => ModelKind::CnnDw,
            "TCN-ST" => ModelKind::TcnSt,
            "TCN-DW" => ModelKind::TcnDw,
            "LSTM" => ModelKind::Lstm,
            "GRU" => ModelKind::Gru,
            "BILSTM" => ModelKind::BiLstm,
            "BIGRU" => ModelKind::BiGru,
            "CNN-RNN-ST" | "CNN-RNN" => ModelKind::CnnRnnSt,
            "CNN-RNN-DW" => ModelKind::CnnRnnDw,
            "TCN-RNN-ST" => ModelKind::TcnRnnSt,
            "TCN-RNN" | "TCN-RNN-DW" => ModelKind::TcnRnnDw,
            _ => return Err(Error::Config(format!("unknown model kind {s:?}"))),
        };
        Ok(kind)
    }
}

/// One point of the hyperparameter grid. `None` marks a field that does not
/// apply to the model kind.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperParams {
    pub model_kind: ModelKind,
    pub filter_size: Option<usize>,
    pub num_blocks: Option<usize>,
    pub num_channels: usize,
    pub num_filters: Option<usize>,
    pub num_rnn_blocks: Option<usize>,
    pub num_units: Option<usize>,
    /// Recurrent cell of a hybrid model; pure recurrent kinds imply theirs.
    pub rnn_cell: Option<CellKind>,
}

pub const CHANNEL_COUNTS: [usize; 3] = [1, 3, 5];

impl HyperParams {
    pub fn conv(
        kind: ModelKind,
        filter_size: usize,
        num_blocks: usize,
        num_channels: usize,
        num_filters: usize,
    ) -> Self {
        Self {
            model_kind: kind,
            filter_size: Some(filter_size),
            num_blocks: Some(num_blocks),
            num_channels,
            num_filters: Some(num_filters),
            num_rnn_blocks: None,
            num_units: None,
            rnn_cell: None,
        }
    }

    pub fn recurrent(
        kind: ModelKind,
        num_channels: usize,
        num_rnn_blocks: usize,
        num_units: usize,
    ) -> Self {
        Self {
            model_kind: kind,
            filter_size: None,
            num_blocks: None,
            num_channels,
            num_filters: None,
            num_rnn_blocks: Some(num_rnn_blocks),
            num_units: Some(num_units),
            rnn_cell: None,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn hybrid(
        kind: ModelKind,
        filter_size: usize,
        num_blocks: usize,
        num_channels: usize,
        num_filters: usize,
        num_rnn_blocks: usize,
        num_units: usize,
        cell: CellKind,
    ) -> Self {
        Self {
            model_kind: kind,
            filter_size: Some(filter_size),
            num_blocks: Some(num_blocks),
            num_channels,
            num_filters: Some(num_filters),
            num_rnn_blocks: Some(num_rnn_blocks),
            num_units: Some(num_units),
            rnn_cell: Some(cell),
        }
    }

    /// Best-scoring configuration of the reference leaderboard: CNN-RNN,
    /// filter 15, 2 blocks, 32 filters, 2 BiLSTM blocks of 32 units.
    pub fn reference_winner(num_channels: usize) -> Self {
        Self::hybrid(
            ModelKind::CnnRnnSt,
            15,
            2,
            num_channels,
            32,
            2,
            32,
            CellKind::BiLstm,
        )
    }

    /// Checks the applicability pattern of every field against the kind.
    pub fn validate(&self) -> Result<()> {
        let kind = self.model_kind;
        if !CHANNEL_COUNTS.contains(&self.num_channels) {
            return Err(Error::Config(format!(
                "num_channels must be 1, 3 or 5, got {}",
                self.num_channels
            )));
        }
        let conv = kind.conv_family().is_some();
        let rnn = kind.has_recurrent_stage();
        check_field("filter_size", self.filter_size, conv, kind)?;
        check_field("num_blocks", self.num_blocks, conv, kind)?;
        check_field("num_filters", self.num_filters, conv, kind)?;
        check_field("num_rnn_blocks", self.num_rnn_blocks, rnn, kind)?;
        check_field("num_units", self.num_units, rnn, kind)?;
        check_field("rnn_cell", self.rnn_cell, kind.is_hybrid(), kind)?;
        if let Some(k) = self.filter_size {
            if k % 2 == 0 {
                return Err(Error::Config(format!("filter_size must be odd, got {k}")));
            }
        }
        for (name, v) in [
            ("filter_size", self.filter_size),
            ("num_blocks", self.num_blocks),
            ("num_filters", self.num_filters),
            ("num_rnn_blocks", self.num_rnn_blocks),
            ("num_units", self.num_units),
        ] {
            if v == Some(0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Cell used by the recurrent stage, if any.
    pub fn cell(&self) -> Option<CellKind> {
        self.model_kind.pure_cell().or(self.rnn_cell)
    }

    /// Stable short digest identifying this configuration.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("hyperparams serialize");
        let hash = Sha256::digest(json.as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn check_field<T>(name: &str, value: Option<T>, applicable: bool, kind: ModelKind) -> Result<()> {
    match (value.is_some(), applicable) {
        (true, false) => Err(Error::Config(format!("{name} does not apply to {kind}"))),
        (false, true) => Err(Error::Config(format!("{name} is required for {kind}"))),
        _ => Ok(()),
    }
}
