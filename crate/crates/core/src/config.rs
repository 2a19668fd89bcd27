//! Model and sampler hyperparameters.

use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::ScaleState;
use crate::stable::PositiveStable;

/// Thresholded power activation `g(ζ) = ζ^δ · 1{ζ > 0}` for `δ ∈ {0, 1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum Activation {
    /// `δ = 0`, the Heaviside step.
    Step,
    /// `δ = 1`, the rectified linear unit.
    Relu,
}

impl Activation {
    pub fn from_exponent(delta: u32) -> Result<Self> {
        match delta {
            0 => Ok(Activation::Step),
            1 => Ok(Activation::Relu),
            other => Err(Error::UnsupportedActivation(other)),
        }
    }

    pub fn exponent(self) -> u32 {
        match self {
            Activation::Step => 0,
            Activation::Relu => 1,
        }
    }
}

impl TryFrom<u32> for Activation {
    type Error = Error;
    fn try_from(delta: u32) -> Result<Self> {
        Activation::from_exponent(delta)
    }
}

impl From<Activation> for u32 {
    fn from(a: Activation) -> u32 {
        a.exponent()
    }
}

/// How the first-layer scale vector is proposed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FirstLayerUpdate {
    /// One proposal for the whole length-`I` vector.
    #[default]
    Joint,
    /// One proposal per input dimension, each with its own accept step.
    Coordinatewise,
}

/// Point prediction taken from the kept predictive draws.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointEstimate {
    #[default]
    Mean,
    Median,
}

/// Hyperparameters of the model and the sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Stability index in `(0, 2]`; `2` pins every scale at 1.
    pub alpha: f64,
    /// Activation exponent δ.
    pub delta: Activation,
    /// Number of layers `L ≥ 2` (one output layer, `L - 1` hidden).
    pub layers: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub sigma2_init: f64,
    /// Standard deviation of the random walk on `log σ²`.
    pub sigma2_step: f64,
    pub first_layer_update: FirstLayerUpdate,
    pub point_estimate: PointEstimate,
    /// Keep the training-block output kernel of every kept iteration.
    pub store_kernels: bool,
    /// Replace the likelihood by a constant. Diagnostic only: the chain then
    /// targets the prior, which is how the samplers are validated without data.
    pub prior_only: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            delta: Activation::Relu,
            layers: 2,
            iterations: 3000,
            burn_in: 300,
            thin: 1,
            seed: 0,
            sigma2_init: 1.0,
            sigma2_step: 0.1,
            first_layer_update: FirstLayerUpdate::Joint,
            point_estimate: PointEstimate::Mean,
            store_kernels: false,
            prior_only: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return bad(format!("alpha must lie in (0, 2], got {}", self.alpha));
        }
        if self.layers < 2 {
            return bad(format!("layers must be at least 2, got {}", self.layers));
        }
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if self.burn_in >= self.iterations {
            return bad(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            ));
        }
        if self.thin == 0 {
            return bad("thin must be positive".into());
        }
        if !(self.sigma2_init > 0.0 && self.sigma2_init.is_finite()) {
            return bad(format!("sigma2_init must be positive, got {}", self.sigma2_init));
        }
        if !(self.sigma2_step >= 0.0 && self.sigma2_step.is_finite()) {
            return bad(format!(
                "sigma2_step must be non-negative, got {}",
                self.sigma2_step
            ));
        }
        Ok(())
    }

    pub fn scale_prior(&self) -> Result<ScalePrior> {
        ScalePrior::from_alpha(self.alpha)
    }

    /// Number of states kept after burn-in and thinning.
    pub fn kept_count(&self) -> usize {
        (self.burn_in..self.iterations)
            .filter(|t| (t - self.burn_in).is_multiple_of(self.thin))
            .count()
    }

    pub(crate) fn is_kept(&self, iteration: usize) -> bool {
        iteration >= self.burn_in && (iteration - self.burn_in).is_multiple_of(self.thin)
    }
}

/// Prior on every scale: `S⁺(α/2)` for `α < 2`, the point mass at 1 for `α = 2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalePrior {
    Stable(PositiveStable),
    PointMass,
}

impl ScalePrior {
    pub fn from_alpha(alpha: f64) -> Result<Self> {
        if alpha == 2.0 {
            Ok(ScalePrior::PointMass)
        } else if alpha > 0.0 && alpha < 2.0 {
            Ok(ScalePrior::Stable(PositiveStable::new(alpha / 2.0)?))
        } else {
            Err(Error::Config(format!("alpha must lie in (0, 2], got {alpha}")))
        }
    }

    pub fn is_degenerate(&self) -> bool {
        matches!(self, ScalePrior::PointMass)
    }

    /// Index of the one-sided law (`1` for the point mass).
    pub fn alpha0(&self) -> f64 {
        match self {
            ScalePrior::Stable(law) => law.alpha0(),
            ScalePrior::PointMass => 1.0,
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            ScalePrior::Stable(law) => law.sample(rng),
            ScalePrior::PointMass => 1.0,
        }
    }

    /// A full scale state drawn from the prior.
    pub fn draw_state<R: Rng + ?Sized>(
        &self,
        input_dim: usize,
        layers: usize,
        rng: &mut R,
    ) -> ScaleState {
        let first_layer = (0..input_dim).map(|_| self.draw(rng)).collect();
        let hidden = (1..layers).map(|_| self.draw(rng)).collect();
        ScaleState { first_layer, hidden }
    }
}
