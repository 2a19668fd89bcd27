//! Metropolis-within-Gibbs posterior sampler.
//!
//! One sweep updates, in order, the first-layer scale vector, the hidden
//! scales `s⁽²⁾ … s⁽ᴸ⁻¹⁾`, the output scale `s⁽ᴸ⁾` and finally the noise
//! variance `σ²`. Scale moves are independence Metropolis–Hastings steps that
//! propose from the `S⁺(α/2)` prior, so the prior and proposal densities
//! cancel and a move is accepted with probability
//! `min(1, p(y | Λ*) / p(y | Λ))`, where `Λ = K + σ² I` on the training
//! inputs. After each sweep the kernel is rebuilt over training and test
//! inputs and a predictive draw is taken from the conditional Gaussian.
//!
//! Moves and predictive draws use separate streams of the same seed, so test
//! inputs never change the scale trajectory.

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::{FirstLayerUpdate, ModelConfig, ScalePrior};
use crate::data::{stack_rows, Dataset};
use crate::error::{Error, Result};
use crate::gaussian::{factorize, gaussian_loglik, predictive_moments, sample_mvn};
use crate::kernel::{KernelStack, ScaleState};
use crate::stable::{substream, Stream};

const MOVE_STREAM: u64 = 0;
const PREDICTIVE_STREAM: u64 = 1;
const OFFLINE_STREAM: u64 = 2;
const INIT_RETRIES: usize = 100;
const AUDIT_EVERY: usize = 100;

/// One chain state. `loglik` always refers to `scales` and `sigma2`.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub scales: ScaleState,
    pub sigma2: f64,
    /// `log p(y | K + σ² I)`, or 0 for prior-only chains.
    pub loglik: f64,
    stack: KernelStack,
}

impl ChainState {
    /// Kernel stack over the training inputs.
    pub fn stack(&self) -> &KernelStack {
        &self.stack
    }
}

/// Summary of a kept state.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub loglik: f64,
    pub sigma2: f64,
    pub scales: ScaleState,
}

/// Proposal and acceptance counts per update block.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Acceptance {
    /// Indexed by layer - 1.
    pub scale_proposed: Vec<usize>,
    pub scale_accepted: Vec<usize>,
    pub sigma2_proposed: usize,
    pub sigma2_accepted: usize,
}

impl Acceptance {
    fn new(layers: usize) -> Self {
        Self {
            scale_proposed: vec![0; layers],
            scale_accepted: vec![0; layers],
            ..Default::default()
        }
    }

    /// Acceptance rate of scale moves at `layer` (1-based).
    pub fn scale_rate(&self, layer: usize) -> f64 {
        let p = self.scale_proposed[layer - 1];
        if p == 0 {
            0.0
        } else {
            self.scale_accepted[layer - 1] as f64 / p as f64
        }
    }

    pub fn sigma2_rate(&self) -> f64 {
        if self.sigma2_proposed == 0 {
            0.0
        } else {
            self.sigma2_accepted as f64 / self.sigma2_proposed as f64
        }
    }
}

/// Output of [`run_chain`].
#[derive(Clone, Debug, Default)]
pub struct ChainTrace {
    /// Kept states after burn-in and thinning.
    pub rows: Vec<TraceRow>,
    /// One length-`m` draw per kept state (empty vectors without test inputs).
    pub predictive_draws: Vec<Vec<f64>>,
    /// Training-block output kernels `s⁽ᴸ⁾Σ⁽ᴸ⁾` per kept state, if requested.
    pub kernel_draws: Vec<DMatrix<f64>>,
    /// Log-likelihood after every sweep, including burn-in.
    pub loglik_trace: Vec<f64>,
    pub acceptance: Acceptance,
    /// Proposals rejected because the kernel or factorization failed.
    pub numeric_rejections: usize,
    /// Audits where the stored log-likelihood disagreed with a recomputation.
    pub audit_failures: usize,
}

impl ChainTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// `min(1, exp(proposed − current))`.
pub fn acceptance_probability(current_loglik: f64, proposed_loglik: f64) -> f64 {
    let delta = proposed_loglik - current_loglik;
    if delta >= 0.0 {
        1.0
    } else {
        delta.exp()
    }
}

/// Log of the half-Cauchy(1) density of `σ` expressed on `u = log σ²`,
/// up to a constant: `−log(1 + σ²) + u/2`.
fn log_sigma2_prior(log_sigma2: f64) -> f64 {
    -log_sigma2.exp().ln_1p() + 0.5 * log_sigma2
}

/// A single-owner chain over one dataset.
pub struct Sampler<'a> {
    data: &'a Dataset,
    config: ModelConfig,
    prior: ScalePrior,
    rng: Stream,
    predictive_rng: Stream,
    acceptance: Acceptance,
    numeric_rejections: usize,
    /// Joint output kernel for the last predicted scales.
    joint_cache: Option<(ScaleState, DMatrix<f64>)>,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a Dataset, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        data.validate()?;
        if data.n() < 2 && !config.prior_only {
            return Err(Error::Data(format!(
                "need at least 2 training points, got {}",
                data.n()
            )));
        }
        Ok(Self {
            data,
            config: config.clone(),
            prior: config.scale_prior()?,
            rng: substream(config.seed, MOVE_STREAM),
            predictive_rng: substream(config.seed, PREDICTIVE_STREAM),
            acceptance: Acceptance::new(config.layers),
            numeric_rejections: 0,
            joint_cache: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Log-likelihood of the training responses under `K + σ² I`.
    pub fn log_likelihood(&self, stack: &KernelStack, sigma2: f64) -> Result<f64> {
        if self.config.prior_only {
            return Ok(0.0);
        }
        let mut cov = stack.effective_output().clone();
        for i in 0..cov.nrows() {
            cov[(i, i)] += sigma2;
        }
        let factor = factorize(&cov)?;
        gaussian_loglik(&self.data.y, &factor)
    }

    fn evaluate(&self, scales: &ScaleState, sigma2: f64) -> Result<(KernelStack, f64)> {
        let stack = KernelStack::build(&self.data.x, scales, &self.config)?;
        let loglik = self.log_likelihood(&stack, sigma2)?;
        Ok((stack, loglik))
    }

    /// Starting state: scales from the prior (all 1 when α = 2), σ² from the
    /// configuration. Draws whose kernel cannot be factorized are retried.
    pub fn init_chain(&mut self) -> Result<ChainState> {
        let mut last_err = None;
        for _ in 0..INIT_RETRIES {
            let scales = self.prior.draw_state(
                self.data.input_dim(),
                self.config.layers,
                &mut self.rng,
            );
            match self.evaluate(&scales, self.config.sigma2_init) {
                Ok((stack, loglik)) if loglik.is_finite() => {
                    return Ok(ChainState { scales, sigma2: self.config.sigma2_init, loglik, stack })
                }
                Ok(_) => last_err = Some(Error::Overflow { layer: None }),
                Err(e) if e.is_numeric() => last_err = Some(e),
                Err(e) => return Err(e),
            }
            if self.prior.is_degenerate() {
                break;
            }
        }
        Err(last_err.expect("at least one attempt"))
    }

    fn accept<R: Rng>(rng: &mut R, current: f64, proposed: f64) -> bool {
        let u: f64 = rng.random();
        u < acceptance_probability(current, proposed)
    }

    /// Independence MH move for the scales of `layer` (1-based). For layer 1
    /// the whole vector is proposed at once unless the configuration asks
    /// for coordinate-wise moves. Returns whether any proposal was accepted.
    pub fn update_scale(&mut self, state: ChainState, layer: usize) -> (ChainState, bool) {
        assert!(
            (1..=self.config.layers).contains(&layer),
            "layer {layer} out of range 1..={}",
            self.config.layers
        );
        if self.prior.is_degenerate() {
            return (state, false);
        }
        if layer == 1 && self.config.first_layer_update == FirstLayerUpdate::Coordinatewise {
            let mut state = state;
            let mut any = false;
            for m in 0..state.scales.first_layer.len() {
                let mut scales = state.scales.clone();
                scales.first_layer[m] = self.prior.draw(&mut self.rng);
                let (next, accepted) = self.propose(state, scales, 1);
                state = next;
                any |= accepted;
            }
            return (state, any);
        }
        let mut scales = state.scales.clone();
        if layer == 1 {
            for s in scales.first_layer.iter_mut() {
                *s = self.prior.draw(&mut self.rng);
            }
        } else {
            scales.hidden[layer - 2] = self.prior.draw(&mut self.rng);
        }
        self.propose(state, scales, layer)
    }

    fn propose(&mut self, state: ChainState, scales: ScaleState, layer: usize) -> (ChainState, bool) {
        self.acceptance.scale_proposed[layer - 1] += 1;
        let candidate = state
            .stack
            .rebuild(&self.data.x, &scales, layer)
            .and_then(|stack| Ok((self.log_likelihood(&stack, state.sigma2)?, stack)));
        let (loglik, stack) = match candidate {
            Ok((ll, stack)) if ll.is_finite() => (ll, stack),
            Ok(_) | Err(_) => {
                // Still consume the uniform so the stream layout does not depend on failures.
                let _: f64 = self.rng.random();
                self.numeric_rejections += 1;
                debug!("layer {layer} proposal rejected: numeric failure");
                return (state, false);
            }
        };
        if Self::accept(&mut self.rng, state.loglik, loglik) {
            self.acceptance.scale_accepted[layer - 1] += 1;
            (ChainState { scales, sigma2: state.sigma2, loglik, stack }, true)
        } else {
            (state, false)
        }
    }

    /// Random-walk MH on `log σ²` under a half-Cauchy(1) prior on `σ`.
    pub fn update_sigma2(&mut self, state: ChainState) -> (ChainState, bool) {
        self.acceptance.sigma2_proposed += 1;
        if self.config.sigma2_step == 0.0 {
            self.acceptance.sigma2_accepted += 1;
            return (state, true);
        }
        let u = state.sigma2.ln();
        let z: f64 = self.rng.sample(StandardNormal);
        let u_new = u + self.config.sigma2_step * z;
        let sigma2 = u_new.exp();
        let loglik = match self.log_likelihood(&state.stack, sigma2) {
            Ok(ll) if ll.is_finite() && sigma2 > 0.0 && sigma2.is_finite() => ll,
            _ => {
                let _: f64 = self.rng.random();
                self.numeric_rejections += 1;
                debug!("sigma2 proposal rejected: numeric failure");
                return (state, false);
            }
        };
        let current = state.loglik + log_sigma2_prior(u);
        let proposed = loglik + log_sigma2_prior(u_new);
        if Self::accept(&mut self.rng, current, proposed) {
            self.acceptance.sigma2_accepted += 1;
            (ChainState { sigma2, loglik, ..state }, true)
        } else {
            (state, false)
        }
    }

    /// One full sweep over all blocks.
    pub fn sweep(&mut self, mut state: ChainState) -> ChainState {
        for layer in 1..=self.config.layers {
            state = self.update_scale(state, layer).0;
        }
        self.update_sigma2(state).0
    }

    /// Predictive draw at the dataset's test inputs for `state`.
    pub fn predictive_draw(&mut self, state: &ChainState) -> Result<Vec<f64>> {
        let x_test = match &self.data.x_test {
            Some(x_test) if x_test.nrows() > 0 => x_test,
            _ => return Ok(Vec::new()),
        };
        let cached = matches!(&self.joint_cache, Some((s, _)) if *s == state.scales);
        if !cached {
            self.joint_cache = None;
            let k = joint_kernel(&self.data.x, x_test, &state.scales, &self.config)?;
            self.joint_cache = Some((state.scales.clone(), k));
        }
        let k = &self.joint_cache.as_ref().expect("filled above").1;
        draw_from_joint(k, &self.data.y, state.sigma2, &mut self.predictive_rng)
    }

    /// Absolute difference between the stored log-likelihood and a fresh one.
    pub fn audit(&self, state: &ChainState) -> Result<f64> {
        let (_, fresh) = self.evaluate(&state.scales, state.sigma2)?;
        Ok((fresh - state.loglik).abs())
    }

    /// Runs the configured number of sweeps.
    pub fn run(mut self) -> Result<ChainTrace> {
        let mut state = self.init_chain()?;
        let mut trace = ChainTrace::default();
        let total = self.config.iterations;
        let report_every = (total / 10).max(1);
        for t in 0..total {
            state = self.sweep(state);
            trace.loglik_trace.push(state.loglik);
            if t % AUDIT_EVERY == 0 {
                let diff = self.audit(&state)?;
                if diff > 1e-8 * state.loglik.abs().max(1.0) {
                    warn!("iteration {t}: stored loglik differs from recomputation by {diff:e}");
                    trace.audit_failures += 1;
                }
            }
            if self.config.is_kept(t) {
                let draw = match self.predictive_draw(&state) {
                    Ok(d) => d,
                    Err(e) if e.is_numeric() => {
                        warn!("iteration {t}: predictive draw failed: {e}");
                        vec![f64::NAN; self.data.m()]
                    }
                    Err(e) => return Err(e),
                };
                trace.predictive_draws.push(draw);
                if self.config.store_kernels {
                    trace.kernel_draws.push(state.stack.effective_output().clone());
                }
                trace.rows.push(TraceRow {
                    iteration: t,
                    loglik: state.loglik,
                    sigma2: state.sigma2,
                    scales: state.scales.clone(),
                });
            }
            if (t + 1) % report_every == 0 {
                info!("iteration {}/{total}, loglik {:.3}", t + 1, state.loglik);
            }
        }
        trace.acceptance = self.acceptance;
        trace.numeric_rejections = self.numeric_rejections;
        Ok(trace)
    }
}

/// Builds the joint kernel over `[x_train, x_new]` for fixed scales and draws
/// from the conditional Gaussian of the new outputs.
pub(crate) fn predictive_draw_at<R: Rng>(
    x_train: &DMatrix<f64>,
    y: &DVector<f64>,
    x_new: &DMatrix<f64>,
    scales: &ScaleState,
    sigma2: f64,
    config: &ModelConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let k = joint_kernel(x_train, x_new, scales, config)?;
    draw_from_joint(&k, y, sigma2, rng)
}

fn joint_kernel(
    x_train: &DMatrix<f64>,
    x_new: &DMatrix<f64>,
    scales: &ScaleState,
    config: &ModelConfig,
) -> Result<DMatrix<f64>> {
    let joint = stack_rows(x_train, Some(x_new));
    Ok(KernelStack::build(&joint, scales, config)?.effective_output().clone())
}

fn draw_from_joint<R: Rng>(k: &DMatrix<f64>, y: &DVector<f64>, sigma2: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut lambda = k.clone();
    for i in 0..lambda.nrows() {
        lambda[(i, i)] += sigma2;
    }
    let moments = predictive_moments(&lambda, y)?;
    Ok(sample_mvn(&moments, rng)?.as_slice().to_vec())
}

/// Initial state of a chain seeded by `config.seed`.
pub fn init_chain(data: &Dataset, config: &ModelConfig) -> Result<ChainState> {
    Sampler::new(data, config)?.init_chain()
}

/// Runs a full chain.
pub fn run_chain(data: &Dataset, config: &ModelConfig) -> Result<ChainTrace> {
    Sampler::new(data, config)?.run()
}

/// Predictive draws at `x_new` from the stored scales and `σ²` of every kept
/// state, without re-running the chain. Returns one row per kept state, or
/// nothing when `x_new` has no rows.
pub fn offline_predict(
    trace: &ChainTrace,
    x_new: &DMatrix<f64>,
    data: &Dataset,
    config: &ModelConfig,
) -> Result<Vec<Vec<f64>>> {
    if x_new.nrows() == 0 {
        return Ok(Vec::new());
    }
    if x_new.ncols() != data.input_dim() {
        return Err(Error::Shape(format!(
            "new inputs have {} columns, training inputs {}",
            x_new.ncols(),
            data.input_dim()
        )));
    }
    let mut rng = substream(config.seed, OFFLINE_STREAM);
    trace
        .rows
        .iter()
        .map(|row| predictive_draw_at(&data.x, &data.y, x_new, &row.scales, row.sigma2, config, &mut rng))
        .collect()
}
