// Comparisons such as `!(x > 0.0)` are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptation;
pub mod commands;
pub mod fitting;
pub mod io;
pub mod model;
pub mod pipeline;
pub mod stats;
pub mod synth;
