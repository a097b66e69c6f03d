//! Dense-network substrate with manual backpropagation.

mod adam;
mod layer;
pub mod loss;
mod matrix;

pub use adam::Adam;
pub use layer::{leaky_relu, DenseLayer, Mlp, LEAKY_SLOPE};
pub use matrix::Matrix;

/// Visits every (parameter, gradient) tensor pair in a fixed order.
pub trait Parameters {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&mut [f64], &[f64]));
}
