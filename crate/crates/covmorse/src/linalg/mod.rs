pub mod eigs;
pub mod ldl;
pub mod ordering;
pub mod sparse;

pub use sparse::{CsrMatrix, C64};
