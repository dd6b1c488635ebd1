// `!(v > 0.0)` guards deliberately reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod error;
pub mod forward;
pub mod grid;
pub mod io;
pub mod oracle;
pub mod probes;
pub mod sampling;
pub mod states;
pub mod tomography;

pub use error::{QstError, Result};
pub use grid::{AxisGrid, ComplexField2D, Sign, C64};
