//! Layer zoo and model assembly.

pub mod hyper;
pub mod layers;
pub mod model;
pub mod spec;

pub use hyper::{CellKind, CellType, ConvFamily, HyperParams, ModelKind, CHANNEL_COUNTS};
pub use model::{argmax_labels, Dropout, Model, Param};
pub use spec::{
    assemble, matched_separable_width, parameter_count, tcn_receptive_field, Direction, LayerDesc,
    LayerKind, LayerSpec, NUM_CLASSES, PARITY_TOLERANCE,
};
