//! Weight initialization: centered uniform with half-width
//! gain * sqrt(6 / (fan_in + fan_out)).
//!
//! Hidden layers feeding a ReLU use gain sqrt(2), which keeps activation
//! variance roughly constant through the stack (plain Glorot loses half
//! the variance at every rectifier and starves the deeper heads at desk
//! scale). Output layers use gain 1.

use super::Tensor;
use crate::rng::Rng;

pub const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

pub fn scaled_uniform(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut Rng,
) -> Tensor {
    let half_width = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.range_f64(-half_width, half_width)).collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data length by construction")
}

pub fn glorot_uniform(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut Rng) -> Tensor {
    scaled_uniform(shape, fan_in, fan_out, 1.0, rng)
}
