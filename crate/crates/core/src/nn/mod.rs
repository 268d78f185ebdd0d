//! Minimal dense autodiff and the tracking networks.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod layers;
mod nets;
mod params;
mod tensor;

pub use gradcheck::{grad_check, op_suite, GradCheckOptions, GradCheckReport};
pub use graph::{apply_stat_updates, Graph, StatUpdate, Var, NORM_EPS, NORM_MOMENTUM};
pub use layers::Mlp;
pub use nets::{
    segment_ids, PointEncoder, SegNet, Stage1Net, Stage1Out, Stage2Net, VanillaNet, Widths, SEG_IN, SEG_OUT,
    STAGE1_IN, STAGE2_IN,
};
pub use params::{kaiming_uniform, Adam, Gradients, ParamEntry, ParamStore};
pub use tensor::Tensor;
