//! Latent-belief sampling: reparameterized posterior draws during training
//! and short-run Langevin chains from the energy-shaped prior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::numerics::tape::{NodeId, Tape};

/// Seeded standard-normal generator with explicit state.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| self.normal()).collect();
        Matrix::from_vec(rows, cols, data)
    }

    /// Access to the underlying generator for non-normal draws.
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Uniform integer in `[0, bound)`.
    pub fn uniform_usize(&mut self, bound: usize) -> usize {
        self.rng.gen_range(0..bound)
    }

    /// Independent stream derived from this one (consumes one draw).
    pub fn fork(&mut self) -> NoiseStream {
        NoiseStream::new(self.rng.gen::<u64>())
    }
}

/// Langevin chain settings.
#[derive(Debug, Clone, Copy)]
pub struct LangevinConfig {
    pub steps: usize,
    pub step_size: f64,
    pub noise_on: bool,
}

impl Default for LangevinConfig {
    fn default() -> Self {
        LangevinConfig {
            steps: 20,
            step_size: 0.4,
            noise_on: true,
        }
    }
}

/// Gradient of the energy term `C` at a batch of latents, one row per chain.
/// Rows must not interact: chain independence rests on it.
pub trait LatentEnergy {
    fn grad(&self, z: &Matrix) -> Result<Matrix>;
}

/// Energy `C(z) = 0.5 * a * ||z||^2`, used as a stationarity oracle: under
/// the prior-corrected dynamics its equilibrium is N(0, 1/(1+a) I).
pub struct QuadraticEnergy {
    pub a: f64,
}

impl LatentEnergy for QuadraticEnergy {
    fn grad(&self, z: &Matrix) -> Result<Matrix> {
        Ok(z.scale(self.a))
    }
}

/// Differentiable reparameterized draw: `z = mu + exp(0.5 * log_var) ⊙ eps`.
pub fn reparameterize(tape: &mut Tape, mu: NodeId, log_var: NodeId, eps: &Matrix) -> Result<NodeId> {
    let e = tape.constant(eps.clone());
    let half = tape.scale(log_var, 0.5);
    let sigma = tape.exp(half);
    let scaled = tape.mul(sigma, e)?;
    tape.add(mu, scaled)
}

/// Reparameterized posterior sample with noise drawn from the stream.
pub fn sample_posterior(
    tape: &mut Tape,
    mu: NodeId,
    log_var: NodeId,
    noise: &mut NoiseStream,
) -> Result<NodeId> {
    let (rows, cols) = tape.value(mu).shape();
    let eps = noise.normal_matrix(rows, cols);
    reparameterize(tape, mu, log_var, &eps)
}

/// Short-run Langevin dynamics targeting `p(z) ∝ exp(-C(z)) N(z; 0, I)`:
///
/// `z <- z + s * (-grad C(z) - z) + sqrt(2 s) * eps`
///
/// starting from the given initialization. The returned state is a plain
/// matrix, detached from any tape.
pub fn run_langevin(
    energy: &dyn LatentEnergy,
    init: Matrix,
    cfg: &LangevinConfig,
    noise: &mut NoiseStream,
) -> Result<Matrix> {
    let mut z = init;
    let s = cfg.step_size;
    let noise_scale = (2.0 * s).sqrt();
    for k in 0..cfg.steps {
        let g = energy.grad(&z)?;
        if g.shape() != z.shape() {
            return Err(Error::dimension(
                "langevin",
                format!("grad {:?} vs state {:?}", g.shape(), z.shape()),
            ));
        }
        for i in 0..z.data.len() {
            let drift = s * (-g.data[i] - z.data[i]);
            let eps = if cfg.noise_on { noise.normal() } else { 0.0 };
            z.data[i] += drift + noise_scale * eps;
        }
        if let Some((r, c)) = z.first_non_finite() {
            return Err(Error::Numerical(format!(
                "langevin chain diverged at step {k} (row {r}, col {c})"
            )));
        }
    }
    Ok(z)
}

/// Langevin chain initialized from the reference prior N(0, I), one
/// independent chain per row.
pub fn langevin_from_prior(
    energy: &dyn LatentEnergy,
    rows: usize,
    dim: usize,
    cfg: &LangevinConfig,
    noise: &mut NoiseStream,
) -> Result<Matrix> {
    let init = noise.normal_matrix(rows, dim);
    run_langevin(energy, init, cfg, noise)
}

struct ZeroEnergy;

impl LatentEnergy for ZeroEnergy {
    fn grad(&self, z: &Matrix) -> Result<Matrix> {
        Ok(Matrix::zeros(z.rows, z.cols))
    }
}

/// Zero-cost energy: the chain targets the reference prior alone.
pub fn zero_energy() -> impl LatentEnergy {
    ZeroEnergy
}
