pub mod broadcast;
pub mod conv;
pub mod elementwise;
pub mod linalg;
pub mod norm;
pub mod shape;

pub use conv::conv_values;
pub use elementwise::{leaky_relu, sigmoid, softplus, Binary, Unary, LRELU_SLOPE};
pub use linalg::matmul_values;
pub use shape::flip_transpose_values;
