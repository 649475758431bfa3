mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;

pub use conv::conv_output_dim;
pub use norm::BatchNormConfig;
