//! Water cycle and fully informed water cycle optimizers for AC optimal power flow.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod grid;
pub mod multiperiod;
pub mod objectives;
pub mod powerflow;
pub mod wca;
