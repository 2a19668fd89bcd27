//! Stochastic layer kernels.
//!
//! Given positive scales, the first layer is the scaled Gram matrix
//! `Σ⁽¹⁾ = X · diag(S⁽¹⁾) · Xᵀ` and each further layer follows the
//! arc-cosine recursion
//!
//! ```text
//! v_k² = 1 + s Σ_kk,   ρ_kh = (1 + s Σ_kh) / (v_k v_h),   θ_kh = acos(ρ_kh)
//! Σ'_kh = π⁻¹ (v_k v_h)^δ J_δ(θ_kh)
//! ```
//!
//! with `J₀(θ) = π − θ` and `J₁(θ) = sin θ + (π − θ) cos θ`. The scale fed into
//! the step from layer 1 to layer 2 is 1, since `S⁽¹⁾` already sits inside
//! `Σ⁽¹⁾`; the step from layer `ℓ−1 ≥ 2` uses `s⁽ℓ⁻¹⁾`. The output covariance
//! is `K = s⁽ᴸ⁾ Σ⁽ᴸ⁾`.
//!
//! Every entry depends only on the two inputs involved, so the kernel of a
//! subset of inputs is exactly the principal submatrix of the full kernel.

use nalgebra::DMatrix;
use std::f64::consts::PI;

use crate::config::{Activation, ModelConfig};
use crate::error::{Error, Result};

/// Positive scales of one chain state.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleState {
    /// `S⁽¹⁾`, one scale per input dimension.
    pub first_layer: Vec<f64>,
    /// `s⁽²⁾, …, s⁽ᴸ⁾`.
    pub hidden: Vec<f64>,
}

impl ScaleState {
    /// All scales equal to 1, the deterministic (α = 2) state.
    pub fn ones(input_dim: usize, layers: usize) -> Self {
        Self {
            first_layer: vec![1.0; input_dim],
            hidden: vec![1.0; layers.saturating_sub(1)],
        }
    }

    /// Number of layers `L`.
    pub fn depth(&self) -> usize {
        self.hidden.len() + 1
    }

    /// `s⁽ᴸ⁾`.
    pub fn output_scale(&self) -> f64 {
        *self.hidden.last().expect("a scale state has at least one hidden scale")
    }

    /// Scale multiplying `Σ⁽ℓ⁾` in the conditional law of the layer-ℓ features:
    /// 1 for the first layer, `s⁽ℓ⁾` otherwise.
    pub fn feature_scale(&self, layer: usize) -> f64 {
        if layer <= 1 {
            1.0
        } else {
            self.hidden[layer - 2]
        }
    }

    /// Scale used by the step `Σ⁽ℓ⁻¹⁾ → Σ⁽ℓ⁾`.
    fn recursion_scale(&self, layer: usize) -> f64 {
        if layer <= 2 {
            1.0
        } else {
            self.hidden[layer - 3]
        }
    }

    pub fn validate(&self, input_dim: usize, layers: usize) -> Result<()> {
        if self.first_layer.len() != input_dim || self.hidden.len() + 1 != layers {
            return Err(Error::Shape(format!(
                "scale state has {} first-layer and {} hidden scales, expected {} and {}",
                self.first_layer.len(),
                self.hidden.len(),
                input_dim,
                layers.saturating_sub(1)
            )));
        }
        if let Some(bad) = self
            .first_layer
            .iter()
            .chain(&self.hidden)
            .find(|s| !(**s > 0.0 && s.is_finite()))
        {
            return Err(Error::Config(format!("scales must be positive and finite, got {bad}")));
        }
        Ok(())
    }

    /// All scales in trace order: `S⁽¹⁾` then `s⁽²⁾ … s⁽ᴸ⁾`.
    pub fn flatten(&self) -> Vec<f64> {
        self.first_layer.iter().chain(&self.hidden).copied().collect()
    }
}

/// `J_δ(θ)` for δ ∈ {0, 1}.
pub fn j_delta(delta: u32, theta: f64) -> Result<f64> {
    Ok(Activation::from_exponent(delta)?.angular(theta))
}

impl Activation {
    /// The angular function `J_δ(θ)`.
    pub fn angular(self, theta: f64) -> f64 {
        match self {
            Activation::Step => PI - theta,
            Activation::Relu => theta.sin() + (PI - theta) * theta.cos(),
        }
    }
}

/// `X · diag(scales) · Xᵀ`.
pub fn first_layer_kernel(x: &DMatrix<f64>, scales: &[f64]) -> Result<DMatrix<f64>> {
    if x.ncols() != scales.len() {
        return Err(Error::Shape(format!(
            "inputs have {} columns but {} first-layer scales were given",
            x.ncols(),
            scales.len()
        )));
    }
    let n = x.nrows();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        for h in k..n {
            let mut acc = 0.0;
            for (m, s) in scales.iter().enumerate() {
                acc += s * (x[(k, m)] * x[(h, m)]);
            }
            out[(k, h)] = acc;
            out[(h, k)] = acc;
        }
    }
    Ok(out)
}

/// One step of the arc-cosine recursion.
pub fn next_layer_kernel(
    prev: &DMatrix<f64>,
    scale: f64,
    activation: Activation,
) -> Result<DMatrix<f64>> {
    recurse(prev, scale, activation, None)
}

fn recurse(
    prev: &DMatrix<f64>,
    scale: f64,
    activation: Activation,
    layer: Option<usize>,
) -> Result<DMatrix<f64>> {
    if !prev.is_square() {
        return Err(Error::Shape(format!(
            "kernel must be square, got {}x{}",
            prev.nrows(),
            prev.ncols()
        )));
    }
    if prev.iter().any(|v| !v.is_finite()) || !scale.is_finite() {
        return Err(Error::Overflow { layer });
    }
    let n = prev.nrows();
    let var: Vec<f64> = (0..n).map(|k| 1.0 + scale * prev[(k, k)]).collect();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        // ρ = 1 on the diagonal and J_δ(0) = π for both activations.
        out[(k, k)] = match activation {
            Activation::Step => 1.0,
            Activation::Relu => var[k],
        };
        for h in (k + 1)..n {
            let norm = (var[k] * var[h]).sqrt();
            let rho = ((1.0 + scale * prev[(k, h)]) / norm).clamp(-1.0, 1.0);
            let angular = activation.angular(rho.acos()) / PI;
            let value = match activation {
                Activation::Step => angular,
                Activation::Relu => norm * angular,
            };
            out[(k, h)] = value;
            out[(h, k)] = value;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Overflow { layer });
    }
    Ok(out)
}

/// Layer kernels `Σ⁽¹⁾ … Σ⁽ᴸ⁾` plus the output covariance `s⁽ᴸ⁾ Σ⁽ᴸ⁾`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelStack {
    layers: Vec<DMatrix<f64>>,
    effective_output: DMatrix<f64>,
    alpha: f64,
    activation: Activation,
}

impl KernelStack {
    /// Builds every layer for the inputs `x` (rows are points).
    pub fn build(x: &DMatrix<f64>, state: &ScaleState, config: &ModelConfig) -> Result<Self> {
        if config.layers < 2 {
            return Err(Error::Config(format!(
                "layers must be at least 2, got {}",
                config.layers
            )));
        }
        state.validate(x.ncols(), config.layers)?;
        let first = first_layer_kernel(x, &state.first_layer)?;
        if first.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { layer: Some(1) });
        }
        let mut stack = Self {
            layers: vec![first],
            effective_output: DMatrix::zeros(0, 0),
            alpha: config.alpha,
            activation: config.delta,
        };
        stack.extend(state, config.layers)?;
        Ok(stack)
    }

    /// Rebuilds after the scales of `changed_layer` (1-based) moved to their
    /// values in `state`. Layers that do not depend on them are reused.
    pub fn rebuild(
        &self,
        x: &DMatrix<f64>,
        state: &ScaleState,
        changed_layer: usize,
    ) -> Result<Self> {
        let depth = self.depth();
        if changed_layer <= 1 {
            let config = ModelConfig {
                alpha: self.alpha,
                delta: self.activation,
                layers: depth,
                ..ModelConfig::default()
            };
            return Self::build(x, state, &config);
        }
        state.validate(x.ncols(), depth)?;
        // s⁽ℓ⁾ feeds Σ⁽ℓ⁺¹⁾, so layers 1..=ℓ stay valid.
        let keep = changed_layer.min(depth);
        let mut stack = Self {
            layers: self.layers[..keep].to_vec(),
            effective_output: DMatrix::zeros(0, 0),
            alpha: self.alpha,
            activation: self.activation,
        };
        stack.extend(state, depth)?;
        Ok(stack)
    }

    fn extend(&mut self, state: &ScaleState, depth: usize) -> Result<()> {
        while self.layers.len() < depth {
            let layer = self.layers.len() + 1;
            let prev = self.layers.last().expect("first layer present");
            let next = recurse(prev, state.recursion_scale(layer), self.activation, Some(layer))?;
            self.layers.push(next);
        }
        let output = state.output_scale() * self.layers.last().expect("non-empty stack");
        if output.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { layer: Some(depth) });
        }
        self.effective_output = output;
        Ok(())
    }

    pub fn layers(&self) -> &[DMatrix<f64>] {
        &self.layers
    }

    /// `Σ⁽ℓ⁾`, 1-based.
    pub fn layer(&self, layer: usize) -> &DMatrix<f64> {
        &self.layers[layer - 1]
    }

    pub fn effective_output(&self) -> &DMatrix<f64> {
        &self.effective_output
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn size(&self) -> usize {
        self.effective_output.nrows()
    }
}

/// Free-function form of [`KernelStack::build`].
pub fn build_stack(
    x_joint: &DMatrix<f64>,
    state: &ScaleState,
    config: &ModelConfig,
) -> Result<KernelStack> {
    KernelStack::build(x_joint, state, config)
}
