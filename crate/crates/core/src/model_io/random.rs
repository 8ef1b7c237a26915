//! Seeded fixture models.
//!
//! The generator is xoshiro256** whose 256-bit state is expanded from the
//! 64-bit seed with SplitMix64 (`rand_xoshiro::Xoshiro256StarStar::seed_from_u64`).
//! Each draw takes the top 53 bits of `next_u64` as `u in [0, 1)` and maps it
//! to `-0.1 + 0.2 u`. Tensors are filled in [`ModelConfig::tensor_shapes`]
//! order, row-major:
//!
//! - projection matrices (`wq wk wv wo w_gate w_up w_down`): draw / sqrt(d_model)
//! - embedding and position tables: draw
//! - normalization gains: 1 + draw
//! - normalization biases: draw

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::error::Result;
use crate::tensor::Tensor;
use crate::transformer::{ModelConfig, ModelWeights};

fn unit(rng: &mut Xoshiro256StarStar) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn random_model(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let proj_scale = 1.0 / (config.d_model as f64).sqrt();
    let precision = config.precision;
    ModelWeights::from_fn(config.clone(), |name, shape| {
        let n: usize = shape.iter().product();
        let (offset, scale) = if name.ends_with(".gain") {
            (1.0, 1.0)
        } else if name.ends_with(".bias") || name == "embed" || name == "positions" {
            (0.0, 1.0)
        } else {
            (0.0, proj_scale)
        };
        let data = (0..n).map(|_| offset + scale * (-0.1 + 0.2 * unit(&mut rng))).collect();
        Tensor::new(shape.to_vec(), data, precision)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = ModelConfig::tiny(2, 16, 2, 11);
        assert_eq!(random_model(&cfg, 42).unwrap(), random_model(&cfg, 42).unwrap());
        assert_ne!(random_model(&cfg, 42).unwrap(), random_model(&cfg, 43).unwrap());
    }

    #[test]
    fn ranges() {
        let cfg = ModelConfig::tiny(1, 16, 2, 11);
        let w = random_model(&cfg, 1).unwrap();
        assert!(w.embed.max_abs() <= 0.1);
        assert!(w.layers[0].wq.max_abs() <= 0.1 / 4.0);
        let g = &w.layers[0].attn_norm.gain;
        assert!(g.data().iter().all(|&v| (0.9..=1.1).contains(&v)));
    }
}
