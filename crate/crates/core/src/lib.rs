// `!(x >= 0.0)` style checks are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod cli;
pub mod conditions;
pub mod majorization;
pub mod montecarlo;
pub mod numerics;
pub mod optimizer;
pub mod rate;
