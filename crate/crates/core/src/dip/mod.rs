//! Untrained encoder–decoder prior for the `u` step.
//!
//! The network is fitted to the observed entries of `y` from the input
//! `z = x + λ₂/μ₂` with masked mean-squared error and Adam; its output is the
//! new `u`. Training may be halted by a windowed-moving-variance stopper, after
//! which θ stays frozen for the rest of the solve.

pub mod adam;
pub mod layers;
pub mod net;
pub mod wmv;

pub use adam::AdamState;
pub use layers::{ChannelNorm, Conv2d, ConvGrad};
pub use net::{grad_slices, Block, BlockGrad, DipNet, NetGrad, Tape};
pub use wmv::{StopReport, WmvStopper};

use ndarray::{Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::cube::{HsiCube, MaskCube};
use crate::error::{invalid, mismatch, Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DipConfig {
    pub channels: Vec<usize>,
    /// Channel normalization after every body convolution.
    pub normalize: bool,
    pub init_std: f64,
    pub lr: f64,
    pub wmv_window: usize,
    pub wmv_patience: usize,
    /// Freeze θ when the stopper fires. When off the stopper only records.
    pub early_stop: bool,
    /// Re-draw θ and reset Adam at every outer iteration instead of warm-starting.
    pub reinit_per_outer: bool,
    /// Never train; `u` is the output of the initial network.
    pub frozen: bool,
    /// After the stopper fires, keep returning the output produced at that
    /// outer iteration. When off, the frozen network is re-evaluated on every
    /// new input.
    pub hold_after_stop: bool,
}

impl Default for DipConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64],
            normalize: true,
            init_std: 0.02,
            lr: 0.1,
            wmv_window: 30,
            wmv_patience: 15,
            early_stop: true,
            reinit_per_outer: false,
            frozen: false,
            hold_after_stop: true,
        }
    }
}

impl DipConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(invalid("dip.channels entries must be positive"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(invalid("dip.lr must be positive"));
        }
        if !(self.init_std.is_finite() && self.init_std >= 0.0) {
            return Err(invalid("dip.init_std must be non-negative"));
        }
        if self.wmv_window < 2 || self.wmv_patience == 0 {
            return Err(invalid("dip.wmv_window must be >= 2 and dip.wmv_patience >= 1"));
        }
        Ok(())
    }
}

/// `f_θ(z)` as a cube.
pub fn forward<T: Real>(net: &DipNet<T>, z: &HsiCube<T>) -> Result<HsiCube<T>> {
    let out = net.forward(z.array())?;
    let cube = HsiCube::from_array(out);
    if !cube.is_finite() {
        return Err(Error::DipDiverged);
    }
    Ok(cube)
}

fn check_inputs<T: Real>(z: &HsiCube<T>, y: &HsiCube<T>, m: &MaskCube) -> Result<T> {
    if z.dims() != y.dims() || z.dims() != m.dims() {
        return Err(mismatch(format!("dip inputs z {}, y {}, mask {}", z.dims(), y.dims(), m.dims())));
    }
    let observed = m.observed_count();
    if observed == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(T::from_count(observed))
}

/// One Adam step on the masked loss; returns the pre-update loss and output.
fn step_with_output<T: Real>(
    net: &mut DipNet<T>,
    adam: &mut AdamState<T>,
    z: &HsiCube<T>,
    y: &HsiCube<T>,
    m: &MaskCube,
) -> Result<(T, Array3<T>)> {
    let count = check_inputs(z, y, m)?;
    let (out, tape) = net.forward_tape(z.array())?;
    let mut resid = Array3::<T>::zeros(out.dim());
    Zip::from(&mut resid).and(&out).and(y.array()).and(m.array()).for_each(|r, &o, &t, &w| {
        if w != 0 {
            *r = o - t;
        }
    });
    let loss = resid.iter().map(|&r| r * r).sum::<T>() / count;
    if !loss.is_finite() {
        return Err(Error::DipDiverged);
    }
    let two = T::lit(2.0);
    resid.mapv_inplace(|r| two * r / count);
    let grads = net.backward(&tape, resid.view());
    adam.update(net.params_mut(), &grad_slices(&grads));
    Ok((loss, out))
}

/// Masked loss `‖m ⊙ (f_θ(z) − y)‖² / Σm` before one Adam update of θ.
pub fn dip_step<T: Real>(net: &mut DipNet<T>, adam: &mut AdamState<T>, z: &HsiCube<T>, y: &HsiCube<T>, m: &MaskCube) -> Result<T> {
    Ok(step_with_output(net, adam, z, y, m)?.0)
}

#[derive(Debug, Clone)]
pub struct DipOutcome<T> {
    pub u: HsiCube<T>,
    /// Pre-update loss of every step taken.
    pub losses: Vec<T>,
    /// Pre-update outputs of every step taken, kept only when requested.
    pub outputs: Vec<HsiCube<T>>,
    /// The stopper fired during this call.
    pub fired: bool,
}

/// Options for [`dip_update`] beyond the required arguments.
#[derive(Debug, Clone, Copy)]
pub struct UpdateOptions {
    /// Stop training when the stopper fires; otherwise it only observes.
    pub early_stop: bool,
    pub keep_outputs: bool,
}

impl Default for UpdateOptions {
    fn default() -> Self {
        Self { early_stop: true, keep_outputs: false }
    }
}

/// Runs up to `inner_steps` steps, feeding each pre-update output to the
/// stopper, and returns `u = f_θ(z)` with the resulting θ.
#[allow(clippy::too_many_arguments)]
pub fn dip_update<T: Real>(
    net: &mut DipNet<T>,
    adam: &mut AdamState<T>,
    mut stopper: Option<&mut WmvStopper<T>>,
    z: &HsiCube<T>,
    y: &HsiCube<T>,
    m: &MaskCube,
    inner_steps: usize,
    opts: UpdateOptions,
) -> Result<DipOutcome<T>> {
    if inner_steps == 0 {
        return Err(invalid("inner_steps must be >= 1"));
    }
    check_inputs(z, y, m)?;
    let mut losses = Vec::with_capacity(inner_steps);
    let mut outputs = Vec::new();
    let mut fired = false;
    for _ in 0..inner_steps {
        if opts.early_stop && stopper.as_ref().is_some_and(|s| s.fired()) {
            break;
        }
        let (loss, out) = step_with_output(net, adam, z, y, m)?;
        losses.push(loss);
        if let Some(s) = stopper.as_deref_mut() {
            fired |= s.observe(out.as_slice().expect("standard layout"));
        }
        if opts.keep_outputs {
            outputs.push(HsiCube::from_array(out));
        }
    }
    Ok(DipOutcome { u: forward(net, z)?, losses, outputs, fired })
}

/// Network, optimizer and stopper carried through one solve.
#[derive(Debug, Clone)]
pub struct DipPrior<T> {
    pub net: DipNet<T>,
    pub adam: AdamState<T>,
    pub stopper: WmvStopper<T>,
    pub config: DipConfig,
    seed: u64,
    reinits: u64,
    held: Option<HsiCube<T>>,
}

impl<T: Real> DipPrior<T> {
    pub fn new(bands: usize, config: DipConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let net = DipNet::new(bands, &config.channels, config.normalize, config.init_std, seed)?;
        let adam = AdamState::new(&net.param_sizes(), T::lit(config.lr));
        let stopper = WmvStopper::new(config.wmv_window, config.wmv_patience)?;
        Ok(Self { net, adam, stopper, config, seed, reinits: 0, held: None })
    }

    /// Wraps an existing network, e.g. a hand-configured one.
    pub fn with_net(net: DipNet<T>, config: DipConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&net.param_sizes(), T::lit(config.lr));
        let stopper = WmvStopper::new(config.wmv_window, config.wmv_patience)?;
        Ok(Self { net, adam, stopper, config, seed: 0, reinits: 0, held: None })
    }

    /// One outer-iteration `u` update.
    pub fn update(&mut self, z: &HsiCube<T>, y: &HsiCube<T>, m: &MaskCube, inner_steps: usize, keep_outputs: bool) -> Result<DipOutcome<T>> {
        if self.config.frozen {
            check_inputs(z, y, m)?;
            return Ok(DipOutcome { u: forward(&self.net, z)?, losses: Vec::new(), outputs: Vec::new(), fired: false });
        }
        if self.config.reinit_per_outer {
            self.reinits += 1;
            let seed = self.seed.wrapping_add(self.reinits.wrapping_mul(0x9E37_79B9_7F4A_7C15));
            self.net = DipNet::new(self.net.bands(), &self.config.channels, self.config.normalize, self.config.init_std, seed)?;
            self.adam.reset();
        }
        if let Some(u) = &self.held {
            check_inputs(z, y, m)?;
            return Ok(DipOutcome { u: u.clone(), losses: Vec::new(), outputs: Vec::new(), fired: false });
        }
        let opts = UpdateOptions { early_stop: self.config.early_stop, keep_outputs };
        let out = dip_update(&mut self.net, &mut self.adam, Some(&mut self.stopper), z, y, m, inner_steps, opts)?;
        if self.config.hold_after_stop && self.config.early_stop && self.stopper.fired() {
            self.held = Some(out.u.clone());
        }
        Ok(out)
    }
}
