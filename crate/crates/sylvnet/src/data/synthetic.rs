//! Synthetic rating instances with planted low-rank structure and
//! community-aligned side graphs.

use super::network::Network;
use super::ratings::PriorAssociation;
use super::DataError;
use crate::sparse::CsrMatrix;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub n1: usize,
    pub n2: usize,
    /// Rank of the latent score matrix before quantization.
    pub rank: usize,
    /// Fraction of entries observed.
    pub observe_frac: f64,
    /// Number of rating classes; ratings are 1..=k.
    pub classes: usize,
    /// Within-community edge probability of the planted graphs.
    pub p_in: f64,
    /// Cross-community edge probability.
    pub p_out: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n1: 200,
            n2: 150,
            rank: 2,
            observe_frac: 0.3,
            classes: 5,
            p_in: 0.25,
            p_out: 0.02,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub net1: Network,
    pub net2: Network,
    pub prior: PriorAssociation,
}

/// Samples latent factors, quantizes their products into rating classes by
/// quantile thresholds, observes a random subset, and plants two-block
/// community graphs aligned with the sign of the first latent dimension.
/// Node features are the (noisy) latent factors, so k-NN or direct use both
/// carry signal. Deterministic for a fixed config.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gauss = |rng: &mut ChaCha8Rng| {
        // Box-Muller: two uniforms to one normal deviate.
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let u = Array2::from_shape_fn((cfg.n1, cfg.rank), |_| gauss(&mut rng));
    let v = Array2::from_shape_fn((cfg.n2, cfg.rank), |_| gauss(&mut rng));
    let scores = u.dot(&v.t());

    // Quantile thresholds over all scores give roughly balanced classes.
    let mut sorted: Vec<f64> = scores.iter().cloned().collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let thresholds: Vec<f64> = (1..cfg.classes)
        .map(|c| sorted[(c * sorted.len()) / cfg.classes])
        .collect();
    let quantize = |s: f64| -> f64 {
        let mut class = 1usize;
        for &t in &thresholds {
            if s >= t {
                class += 1;
            }
        }
        class as f64
    };

    let mut h = Array2::zeros((cfg.n1, cfg.n2));
    let mut mask = Array2::zeros((cfg.n1, cfg.n2));
    for i in 0..cfg.n1 {
        for j in 0..cfg.n2 {
            if rng.random_range(0.0..1.0) < cfg.observe_frac {
                h[[i, j]] = quantize(scores[[i, j]]);
                mask[[i, j]] = 1.0;
            }
        }
    }
    let classes: Vec<f64> = (1..=cfg.classes).map(|c| c as f64).collect();
    let prior = PriorAssociation::new(h, mask, classes)?;

    let community = |factors: &crate::Mat, i: usize| factors[[i, 0]] >= 0.0;
    let plant = |n: usize, factors: &crate::Mat, rng: &mut ChaCha8Rng| {
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let p = if community(factors, i) == community(factors, j) {
                    cfg.p_in
                } else {
                    cfg.p_out
                };
                if rng.random_range(0.0..1.0) < p {
                    triplets.push((i, j, 1.0));
                    triplets.push((j, i, 1.0));
                }
            }
        }
        CsrMatrix::from_triplets(n, n, &triplets)
    };
    let adj1 = plant(cfg.n1, &u, &mut rng);
    let adj2 = plant(cfg.n2, &v, &mut rng);

    let noisy = |factors: &crate::Mat, rng: &mut ChaCha8Rng| {
        factors.mapv(|x| x) + Array2::from_shape_fn(factors.raw_dim(), |_| 0.1 * gauss(rng))
    };
    let f1 = noisy(&u, &mut rng);
    let f2 = noisy(&v, &mut rng);

    Ok(SyntheticData {
        net1: Network::new(adj1, f1)?,
        net2: Network::new(adj2, f2)?,
        prior,
    })
}
