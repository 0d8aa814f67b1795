//! Gradient masks and the schedules that produce them.
//!
//! A [`GradMask`] holds, per parameter, the boolean support through which
//! gradients flow, plus one scalar rescale applied to surviving entries of
//! maskable parameters. Masks come from a [`MaskPolicy`] driven through a
//! [`MaskState`]:
//!
//! - per-batch policies draw a fresh Bernoulli mask every mini-batch, either
//!   per entry (`GradDrop`) or one draw per encoder layer (`LayerGradDrop`),
//!   optionally with a drop rate annealed from 0.9 toward 0 over training;
//! - epoch policies hold one mask for a whole epoch: `GradDropEpoch` grows a
//!   cumulative active set by sampling entries without replacement until the
//!   whole network is active at the final epoch, and `EpochToggle` trains
//!   only each epoch's freshly drawn subset, re-freezing earlier ones;
//! - freeze policies activate whole encoder layers, `k` more per epoch, top
//!   down or bottom up, or as a moving window of `k` layers.
//!
//! Embeddings and the classifier head are never masked under any policy.
//! Every draw comes from a stream keyed by `(seed, epoch, batch, name)`, so
//! the full mask sequence is a function of `(seed, policy, parameter set)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::rng::Stream;

/// Initial drop rate of the annealed schedules.
pub const ANNEAL_START: f64 = 0.9;

/// The mask policy family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    /// Standard fine-tuning: every gradient flows every step.
    Sft,
    /// Per-batch Bernoulli mask over every maskable gradient entry.
    GradDrop,
    /// Per-batch Bernoulli draw per encoder layer, broadcast to the layer.
    LayerGradDrop,
    /// Cumulative without-replacement mask, fixed for each epoch.
    GradDropEpoch,
    /// Epoch-wise mask of only the entries newly drawn this epoch.
    EpochToggle,
    /// GradDrop with the drop rate annealed linearly from 0.9 toward 0.
    AnnealGradDrop,
    /// LayerGradDrop with the annealed rate.
    AnnealLayerGradDrop,
    /// Unfreeze the top `k` more encoder layers each epoch, cumulatively.
    FreezeTopDown,
    /// Unfreeze from the bottom instead.
    FreezeBottomUp,
    /// Only the current window of `k` layers is active, sweeping top down.
    FreezeToggleTopDown,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 10] = [
        PolicyKind::Sft,
        PolicyKind::GradDrop,
        PolicyKind::LayerGradDrop,
        PolicyKind::GradDropEpoch,
        PolicyKind::EpochToggle,
        PolicyKind::AnnealGradDrop,
        PolicyKind::AnnealLayerGradDrop,
        PolicyKind::FreezeTopDown,
        PolicyKind::FreezeBottomUp,
        PolicyKind::FreezeToggleTopDown,
    ];

    /// Policies that draw a fresh mask every mini-batch.
    pub fn is_per_batch(self) -> bool {
        matches!(
            self,
            PolicyKind::GradDrop
                | PolicyKind::LayerGradDrop
                | PolicyKind::AnnealGradDrop
                | PolicyKind::AnnealLayerGradDrop
        )
    }

    /// Policies whose mask is fixed for a whole epoch.
    pub fn is_epoch_wise(self) -> bool {
        !self.is_per_batch()
    }

    fn is_layer_wise_batch(self) -> bool {
        matches!(self, PolicyKind::LayerGradDrop | PolicyKind::AnnealLayerGradDrop)
    }

    fn is_annealed(self) -> bool {
        matches!(self, PolicyKind::AnnealGradDrop | PolicyKind::AnnealLayerGradDrop)
    }

    /// Stable kebab-case name, matching the serialized form.
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Sft => "sft",
            PolicyKind::GradDrop => "grad-drop",
            PolicyKind::LayerGradDrop => "layer-grad-drop",
            PolicyKind::GradDropEpoch => "grad-drop-epoch",
            PolicyKind::EpochToggle => "epoch-toggle",
            PolicyKind::AnnealGradDrop => "anneal-grad-drop",
            PolicyKind::AnnealLayerGradDrop => "anneal-layer-grad-drop",
            PolicyKind::FreezeTopDown => "freeze-top-down",
            PolicyKind::FreezeBottomUp => "freeze-bottom-up",
            PolicyKind::FreezeToggleTopDown => "freeze-toggle-top-down",
        }
    }

    pub fn parse(s: &str) -> Result<PolicyKind> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy kind {s:?}")))
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A policy plus its hyperparameters.
///
/// `epochs` is the total training epoch count `T`; `layers_per_epoch` is the
/// `k` of the freeze policies. SFT ignores `p` and `k`; freeze policies
/// ignore `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPolicy {
    pub kind: PolicyKind,
    pub p: f64,
    pub epochs: usize,
    pub layers_per_epoch: usize,
    pub scale_grads: bool,
}

impl MaskPolicy {
    pub fn new(kind: PolicyKind, p: f64, epochs: usize) -> MaskPolicy {
        MaskPolicy {
            kind,
            p,
            epochs,
            layers_per_epoch: 1,
            scale_grads: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::Config(format!("policy p={} outside [0, 1)", self.p)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("policy epochs must be >= 1".into()));
        }
        if self.layers_per_epoch == 0 {
            return Err(Error::Config("layers_per_epoch must be >= 1".into()));
        }
        Ok(())
    }
}

/// Drop rate of the annealed schedules at epoch `epoch` of `total`:
/// starts at 0.9, falls by `1/T` per epoch, clamped at zero.
pub fn anneal_rate(epoch: usize, total: usize) -> f64 {
    (ANNEAL_START - epoch as f64 / total as f64).max(0.0)
}

/// Per-parameter support pattern.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    /// Every entry active.
    Full,
    /// Every entry frozen.
    Zero,
    /// Per-entry pattern, true = gradient flows.
    Entries(Vec<bool>),
}

impl Support {
    pub fn is_active(&self, idx: usize) -> bool {
        match self {
            Support::Full => true,
            Support::Zero => false,
            Support::Entries(e) => e[idx],
        }
    }

    pub fn count_active(&self, len: usize) -> usize {
        match self {
            Support::Full => len,
            Support::Zero => 0,
            Support::Entries(e) => e.iter().filter(|&&b| b).count(),
        }
    }
}

/// A realised gradient mask for one parameter set.
///
/// Non-maskable parameters always carry [`Support::Full`] and are never
/// rescaled; the scale applies only to surviving entries of maskable
/// parameters and equals `1/(1-p)` when the policy rescales, else 1.
#[derive(Debug, Clone)]
pub struct GradMask {
    supports: Vec<Support>,
    scale: f64,
}

impl GradMask {
    /// All-true mask with scale 1.
    pub fn full(params: &ParamSet) -> GradMask {
        GradMask {
            supports: vec![Support::Full; params.len()],
            scale: 1.0,
        }
    }

    pub fn support(&self, param_idx: usize) -> &Support {
        &self.supports[param_idx]
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Fraction of active entries per layer, indexed `0..=L+1`. Counting is
    /// exact; the division happens once per layer at the end.
    pub fn active_fraction(&self, params: &ParamSet) -> Vec<f64> {
        let totals = params.entries_per_layer();
        let mut active = vec![0usize; totals.len()];
        for (i, p) in params.iter().enumerate() {
            active[p.layer] += self.supports[i].count_active(p.tensor.len());
        }
        active
            .iter()
            .zip(&totals)
            .map(|(&a, &t)| if t == 0 { 1.0 } else { a as f64 / t as f64 })
            .collect()
    }

    /// Zero the masked entries of every maskable parameter's gradient and
    /// rescale the survivors. Non-maskable parameters are untouched.
    pub fn apply(&self, params: &ParamSet) -> Result<()> {
        for (i, p) in params.iter().enumerate() {
            if !p.maskable {
                continue;
            }
            let support = &self.supports[i];
            let scale = self.scale;
            p.tensor.with_data_grad_mut(|_, grad| -> Result<()> {
                let Some(g) = grad else {
                    return Err(Error::Contract(format!(
                        "no gradient to mask for parameter {}",
                        p.name
                    )));
                };
                match support {
                    Support::Full => {
                        if scale != 1.0 {
                            for v in g.iter_mut() {
                                *v *= scale;
                            }
                        }
                    }
                    Support::Zero => g.fill(0.0),
                    Support::Entries(e) => {
                        if e.len() != g.len() {
                            return Err(Error::Contract(format!(
                                "mask support length {} vs gradient {} for {}",
                                e.len(),
                                g.len(),
                                p.name
                            )));
                        }
                        for (v, &keep) in g.iter_mut().zip(e) {
                            *v = if keep { *v * scale } else { 0.0 };
                        }
                    }
                }
                Ok(())
            })?;
        }
        Ok(())
    }
}

/// Mutable schedule state for one training run: the epoch counter, the
/// current effective drop rate, and the cumulative active sets of the
/// without-replacement policies.
pub struct MaskState {
    seed: u64,
    policy: MaskPolicy,
    epoch: usize,
    batch_in_epoch: u64,
    p_current: f64,
    /// Ever-active set per parameter (maskable params only).
    cumulative: Vec<Option<Vec<bool>>>,
    /// Integer rounding offsets in `0..T`, drawn once per parameter, that
    /// decide which epochs absorb the fractional remainder of `len/T`.
    round_extra: Vec<usize>,
}

impl MaskState {
    pub fn new(seed: u64, policy: &MaskPolicy, params: &ParamSet) -> Result<MaskState> {
        policy.validate()?;
        let needs_sets = matches!(
            policy.kind,
            PolicyKind::GradDropEpoch | PolicyKind::EpochToggle
        );
        let mut cumulative = Vec::with_capacity(params.len());
        let mut round_extra = Vec::with_capacity(params.len());
        for p in params.iter() {
            if needs_sets && p.maskable {
                cumulative.push(Some(vec![false; p.tensor.len()]));
                let mut s = Stream::keyed(seed, 0, 0, &p.name);
                round_extra.push(s.below(policy.epochs));
            } else {
                cumulative.push(None);
                round_extra.push(0);
            }
        }
        let p0 = if policy.kind.is_annealed() {
            ANNEAL_START
        } else {
            policy.p
        };
        Ok(MaskState {
            seed,
            policy: policy.clone(),
            epoch: 0,
            batch_in_epoch: 0,
            p_current: p0,
            cumulative,
            round_extra,
        })
    }

    /// Epoch counter; 0 until the first `advance_epoch`.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Drop rate in effect: the (possibly annealed) Bernoulli rate for
    /// per-batch policies, 0 for the set-based and SFT policies.
    pub fn p_effective(&self) -> f64 {
        if self.policy.kind.is_per_batch() {
            self.p_current
        } else {
            0.0
        }
    }

    fn batch_scale(&self) -> f64 {
        if self.policy.scale_grads && self.p_current > 0.0 {
            1.0 / (1.0 - self.p_current)
        } else {
            1.0
        }
    }

    /// Move to the next epoch. Epoch-wise policies return the mask that
    /// applies to every batch of the epoch; per-batch policies update their
    /// rate and return `None`, expecting `sample_batch_mask` per mini-batch.
    pub fn advance_epoch(&mut self, params: &ParamSet) -> Result<Option<GradMask>> {
        if self.epoch >= self.policy.epochs {
            return Err(Error::Contract(format!(
                "advance_epoch past the last epoch (T = {})",
                self.policy.epochs
            )));
        }
        self.epoch += 1;
        self.batch_in_epoch = 0;
        let epoch = self.epoch;
        let total = self.policy.epochs;

        match self.policy.kind {
            PolicyKind::Sft => Ok(Some(GradMask::full(params))),
            PolicyKind::GradDrop | PolicyKind::LayerGradDrop => {
                self.p_current = self.policy.p;
                Ok(None)
            }
            PolicyKind::AnnealGradDrop | PolicyKind::AnnealLayerGradDrop => {
                self.p_current = anneal_rate(epoch, total);
                Ok(None)
            }
            PolicyKind::GradDropEpoch => {
                self.grow_cumulative(params)?;
                let supports = params
                    .iter()
                    .enumerate()
                    .map(|(i, p)| match (&self.cumulative[i], p.maskable) {
                        (Some(cum), true) => Support::Entries(cum.clone()),
                        _ => Support::Full,
                    })
                    .collect();
                Ok(Some(GradMask {
                    supports,
                    scale: 1.0,
                }))
            }
            PolicyKind::EpochToggle => {
                let newly = self.grow_cumulative(params)?;
                let supports = params
                    .iter()
                    .enumerate()
                    .map(|(i, p)| match (&newly[i], p.maskable) {
                        (Some(fresh), true) => Support::Entries(fresh.clone()),
                        _ => Support::Full,
                    })
                    .collect();
                Ok(Some(GradMask {
                    supports,
                    scale: 1.0,
                }))
            }
            PolicyKind::FreezeTopDown | PolicyKind::FreezeBottomUp => {
                let layers = params.encoder_layers();
                let active = (self.policy.layers_per_epoch * epoch).min(layers);
                let is_active = |layer: usize| -> bool {
                    if self.policy.kind == PolicyKind::FreezeTopDown {
                        layer > layers - active
                    } else {
                        layer <= active
                    }
                };
                Ok(Some(self.layer_set_mask(params, is_active)))
            }
            PolicyKind::FreezeToggleTopDown => {
                let layers = params.encoder_layers();
                let k = self.policy.layers_per_epoch;
                let windows = layers.div_ceil(k);
                // Sweep the windows top-down; restart from the top once every
                // layer has had its turn.
                let w = (epoch - 1) % windows;
                let hi = layers - k * w;
                let lo = hi.saturating_sub(k) + 1;
                Ok(Some(self.layer_set_mask(params, |layer| {
                    (lo..=hi).contains(&layer)
                })))
            }
        }
    }

    fn layer_set_mask(&self, params: &ParamSet, active: impl Fn(usize) -> bool) -> GradMask {
        let supports = params
            .iter()
            .map(|p| {
                if !p.maskable || active(p.layer) {
                    Support::Full
                } else {
                    Support::Zero
                }
            })
            .collect();
        GradMask {
            supports,
            scale: 1.0,
        }
    }

    /// Grow each cumulative set to its epoch quota by drawing uniformly
    /// without replacement from the still-frozen entries. The quota for a
    /// parameter with `len` entries at epoch `e` is
    /// `floor((len*e + extra) / T)` with `extra` drawn once per parameter in
    /// `0..T`, so counts stay within one entry of `len*e/T`, grow
    /// monotonically, and reach `len` exactly at epoch `T`. Returns the
    /// newly activated entries per parameter.
    fn grow_cumulative(&mut self, params: &ParamSet) -> Result<Vec<Option<Vec<bool>>>> {
        let epoch = self.epoch;
        let total = self.policy.epochs;
        let mut newly: Vec<Option<Vec<bool>>> = Vec::with_capacity(params.len());
        for (i, p) in params.iter().enumerate() {
            let Some(cum) = self.cumulative[i].as_mut() else {
                newly.push(None);
                continue;
            };
            let len = cum.len();
            let target = ((len * epoch + self.round_extra[i]) / total).min(len);
            let have = cum.iter().filter(|&&b| b).count();
            let mut fresh = vec![false; len];
            if target > have {
                let mut frozen: Vec<usize> =
                    (0..len).filter(|&j| !cum[j]).collect();
                let mut stream = Stream::keyed(self.seed, epoch as u64, 0, &p.name);
                for j in stream.choose_k(&mut frozen, target - have) {
                    cum[j] = true;
                    fresh[j] = true;
                }
            }
            newly.push(Some(fresh));
        }
        Ok(newly)
    }

    /// Draw one per-batch mask. Only valid for the per-batch policy kinds,
    /// after `advance_epoch` has opened an epoch.
    pub fn sample_batch_mask(&mut self, params: &ParamSet) -> Result<GradMask> {
        if !self.policy.kind.is_per_batch() {
            return Err(Error::Contract(format!(
                "sample_batch_mask called for epoch-wise policy {}",
                self.policy.kind
            )));
        }
        if self.epoch == 0 {
            return Err(Error::Contract(
                "sample_batch_mask before the first advance_epoch".into(),
            ));
        }
        self.batch_in_epoch += 1;
        let batch = self.batch_in_epoch;
        let p = self.p_current;
        let epoch = self.epoch as u64;

        let supports = if self.policy.kind.is_layer_wise_batch() {
            // One Bernoulli draw per encoder layer, broadcast to the layer.
            let layers = params.encoder_layers();
            let keep: Vec<bool> = (1..=layers)
                .map(|layer| {
                    Stream::keyed(self.seed, epoch, batch, &format!("layer.{layer}")).keep(p)
                })
                .collect();
            params
                .iter()
                .map(|pa| {
                    if !pa.maskable || keep[pa.layer - 1] {
                        Support::Full
                    } else {
                        Support::Zero
                    }
                })
                .collect()
        } else {
            params
                .iter()
                .map(|pa| {
                    if !pa.maskable {
                        return Support::Full;
                    }
                    let mut stream = Stream::keyed(self.seed, epoch, batch, &pa.name);
                    Support::Entries((0..pa.tensor.len()).map(|_| stream.keep(p)).collect())
                })
                .collect()
        };
        Ok(GradMask {
            supports,
            scale: self.batch_scale(),
        })
    }
}
