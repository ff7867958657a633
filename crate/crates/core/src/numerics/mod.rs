//! Dense matrix arithmetic and reverse-mode differentiation.

pub mod gradcheck;
pub mod matrix;
pub mod tape;

pub use gradcheck::grad_check;
pub use matrix::Matrix;
pub use tape::{Tape, Var};
