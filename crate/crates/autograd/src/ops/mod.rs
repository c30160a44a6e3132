mod attention;
mod conv;
mod elementwise;
pub(crate) mod linear;
mod norm;

pub use attention::attention_weights;
pub use conv::{conv3d, Conv3dSpec};
