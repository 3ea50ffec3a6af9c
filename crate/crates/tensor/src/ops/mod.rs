pub(crate) mod activation;
pub(crate) mod basic;
pub(crate) mod conv;
pub(crate) mod norm;
pub(crate) mod shape;

pub use conv::Padding;
pub use norm::{BatchMoments, BatchNormState};
