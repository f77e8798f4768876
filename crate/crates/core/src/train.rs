//! The training engine: weighted real/synthetic batch sampling, Adam with a
//! warm-up/hold/exponential-decay schedule, encoder freezing, an elastic
//! penalty tying parameters to a previous stage's snapshot, and the
//! sequential multi-stage recipe runner.
//!
//! Every step's randomness is derived from (stage seed, step index), so a
//! run checkpointed at any step and resumed reproduces the uninterrupted
//! trajectory bit-exactly.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use ndarray::Array3;
use rand::Rng;

use crate::augment::{corrupt, spec_augment, CorruptionPolicy, SpecAugmentConfig};
use crate::augment::AcousticImpulseResponse;
use crate::audio::Waveform;
use crate::corpus::{Source, Utterance};
use crate::error::{Error, Result};
use crate::features::{log_mel, stack_downsample, FeatureConfig};
use crate::loss::forward_backward;
use crate::model::RnntModel;
use crate::params::{Component, ParameterSnapshot, ParameterStore};
use crate::rng::{stream, stream_rng};

/// Percentages of batch slots drawn from the real and synthetic corpora.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixWeights {
    pub real_pct: f64,
    pub synth_pct: f64,
}

impl MixWeights {
    pub fn new(real_pct: f64, synth_pct: f64) -> Result<Self> {
        if real_pct < 0.0 || synth_pct < 0.0 || (real_pct + synth_pct - 100.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "mix weights must be nonnegative and sum to 100, got ({real_pct}, {synth_pct})"
            )));
        }
        Ok(MixWeights { real_pct, synth_pct })
    }

    pub fn real_only() -> Self {
        MixWeights { real_pct: 100.0, synth_pct: 0.0 }
    }
}

/// Linear warm-up, hold, then exponential decay from peak to final.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub warmup_steps: u64,
    pub hold_steps: u64,
    pub decay_steps: u64,
    pub peak_lr: f64,
    pub final_lr: f64,
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.peak_lr <= 0.0 || self.final_lr <= 0.0 {
            return Err(Error::config("learning rates must be positive"));
        }
        if self.final_lr > self.peak_lr {
            return Err(Error::config("final_lr must not exceed peak_lr"));
        }
        Ok(())
    }

    /// Constant learning rate (degenerate schedule).
    pub fn constant(lr: f64) -> Self {
        LrSchedule { warmup_steps: 0, hold_steps: 0, decay_steps: 0, peak_lr: lr, final_lr: lr }
    }
}

/// Learning rate at a zero-based step index.
pub fn lr_at(step: u64, s: &LrSchedule) -> f64 {
    let (w, h, d) = (s.warmup_steps, s.hold_steps, s.decay_steps);
    if step < w {
        return s.peak_lr * (step + 1) as f64 / w as f64;
    }
    if step < w + h {
        return s.peak_lr;
    }
    if d == 0 {
        return s.final_lr;
    }
    let frac = ((step - w - h) as f64 / d as f64).min(1.0);
    s.peak_lr * (s.final_lr / s.peak_lr).powf(frac)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers aligned with the store's parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub slots: Vec<AdamSlot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamSlot {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(store: &ParameterStore) -> Self {
        let slots = store
            .iter()
            .map(|p| AdamSlot {
                name: p.name.clone(),
                m: vec![0.0; p.value.len()],
                v: vec![0.0; p.value.len()],
            })
            .collect();
        AdamState { step: 0, slots }
    }

    fn check(&self, store: &ParameterStore) -> Result<()> {
        if self.slots.len() != store.len() {
            return Err(Error::config(format!(
                "optimizer state has {} slots for {} parameters",
                self.slots.len(),
                store.len()
            )));
        }
        for (slot, p) in self.slots.iter().zip(store.iter()) {
            if slot.name != p.name || slot.m.len() != p.value.len() {
                return Err(Error::config(format!(
                    "optimizer slot {:?} does not match parameter {:?}",
                    slot.name, p.name
                )));
            }
        }
        Ok(())
    }
}

/// One bias-corrected Adam update over all non-frozen parameters. Frozen
/// parameters keep both their values and their moments untouched.
pub fn adam_step(
    store: &mut ParameterStore,
    lr: f64,
    hyper: &AdamHyper,
    state: &mut AdamState,
) -> Result<()> {
    state.check(store)?;
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - hyper.beta1.powi(t);
    let bias2 = 1.0 - hyper.beta2.powi(t);
    let frozen = store.frozen_components().clone();
    for (p, slot) in store.iter_mut().zip(state.slots.iter_mut()) {
        if frozen.contains(&p.component) {
            continue;
        }
        let grads = p.grad.as_slice().to_vec();
        let values = p.value.as_mut_slice();
        for (j, &g) in grads.iter().enumerate() {
            slot.m[j] = hyper.beta1 * slot.m[j] + (1.0 - hyper.beta1) * g;
            slot.v[j] = hyper.beta2 * slot.v[j] + (1.0 - hyper.beta2) * g * g;
            let m_hat = slot.m[j] / bias1;
            let v_hat = slot.v[j] / bias2;
            values[j] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
    Ok(())
}

/// Config-time elastic penalty: strength and component scope. The snapshot
/// is attached when the penalized stage starts.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticSpec {
    pub lambda: f64,
    pub scope: BTreeSet<Component>,
}

impl ElasticSpec {
    pub fn decoder_only(lambda: f64) -> Self {
        ElasticSpec { lambda, scope: [Component::Decoder].into_iter().collect() }
    }
}

/// Runtime elastic penalty with the reference snapshot bound.
#[derive(Debug, Clone)]
pub struct ElasticPenaltyConfig {
    pub lambda: f64,
    pub scope: BTreeSet<Component>,
    pub snapshot: ParameterSnapshot,
}

impl ElasticPenaltyConfig {
    pub fn bind(spec: &ElasticSpec, store: &ParameterStore) -> Self {
        ElasticPenaltyConfig {
            lambda: spec.lambda,
            scope: spec.scope.clone(),
            snapshot: store.snapshot(&spec.scope),
        }
    }
}

/// Quadratic distance penalty J = lambda * sum_i (pre_i - cur_i)^2 over the
/// scoped components; adds dJ/d theta = 2 lambda (cur - pre) to gradients
/// and returns J. A lambda of zero is a strict no-op.
pub fn elastic_penalty(store: &mut ParameterStore, cfg: &ElasticPenaltyConfig) -> Result<f64> {
    if cfg.lambda == 0.0 {
        return Ok(0.0);
    }
    check_snapshot(store, cfg)?;
    let mut value = 0.0;
    let scope = cfg.scope.clone();
    for p in store.iter_mut() {
        if !scope.contains(&p.component) {
            continue;
        }
        let pre = cfg.snapshot.get(&p.name).expect("checked above");
        let cur = p.value.as_slice().to_vec();
        let grad = p.grad.as_mut_slice();
        for j in 0..cur.len() {
            let diff = cur[j] - pre[j];
            value += diff * diff;
            grad[j] += 2.0 * cfg.lambda * diff;
        }
    }
    Ok(cfg.lambda * value)
}

/// Penalty value without touching gradients.
pub fn elastic_penalty_value(store: &ParameterStore, cfg: &ElasticPenaltyConfig) -> Result<f64> {
    if cfg.lambda == 0.0 {
        return Ok(0.0);
    }
    check_snapshot(store, cfg)?;
    let mut value = 0.0;
    for p in store.iter() {
        if !cfg.scope.contains(&p.component) {
            continue;
        }
        let pre = cfg.snapshot.get(&p.name).expect("checked above");
        for (c, s) in p.value.as_slice().iter().zip(pre) {
            let diff = c - s;
            value += diff * diff;
        }
    }
    Ok(cfg.lambda * value)
}

fn check_snapshot(store: &ParameterStore, cfg: &ElasticPenaltyConfig) -> Result<()> {
    let scoped: Vec<&crate::params::Param> =
        store.iter().filter(|p| cfg.scope.contains(&p.component)).collect();
    if scoped.len() != cfg.snapshot.len() {
        return Err(Error::config(format!(
            "snapshot has {} entries for {} scoped parameters",
            cfg.snapshot.len(),
            scoped.len()
        )));
    }
    for p in scoped {
        match cfg.snapshot.get(&p.name) {
            Some(s) if s.len() == p.value.len() => {}
            _ => {
                return Err(Error::config(format!(
                    "snapshot does not cover parameter {:?}",
                    p.name
                )))
            }
        }
    }
    Ok(())
}

/// Excludes (or re-includes) encoder parameters from optimizer updates.
pub fn set_freeze(store: &mut ParameterStore, freeze_encoder: bool) {
    store.set_freeze_encoder(freeze_encoder);
}

/// One training stage: data mix, freeze flag, optional penalty, schedule,
/// and step budget.
#[derive(Debug, Clone)]
pub struct StageConfig {
    pub name: String,
    pub mix: MixWeights,
    pub freeze_encoder: bool,
    pub elastic: Option<ElasticSpec>,
    pub schedule: LrSchedule,
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::config(format!("stage {:?}: steps must be at least 1", self.name)));
        }
        if self.batch_size < 1 {
            return Err(Error::config(format!(
                "stage {:?}: batch_size must be at least 1",
                self.name
            )));
        }
        if let Some(e) = &self.elastic {
            if e.lambda < 0.0 {
                return Err(Error::config(format!(
                    "stage {:?}: elastic lambda must be nonnegative",
                    self.name
                )));
            }
            if e.scope.is_empty() {
                return Err(Error::config(format!(
                    "stage {:?}: elastic scope must not be empty",
                    self.name
                )));
            }
        }
        self.schedule.validate()
    }
}

/// Draws a batch: each slot independently picks the real corpus with
/// probability real_pct/100 and an utterance uniformly with replacement.
pub fn sample_batch<'a>(
    real: &'a [Utterance],
    synth: &'a [Utterance],
    mix: &MixWeights,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<&'a Utterance>> {
    if mix.real_pct > 0.0 && real.is_empty() {
        return Err(Error::config("real weight > 0 but the real corpus is empty"));
    }
    if mix.synth_pct > 0.0 && synth.is_empty() {
        return Err(Error::config("synthetic weight > 0 but the synthetic corpus is empty"));
    }
    let p_real = mix.real_pct / 100.0;
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let take_real = rng.random::<f64>() < p_real;
        let pool = if take_real { real } else { synth };
        let idx = rng.random_range(0..pool.len());
        batch.push(&pool[idx]);
    }
    Ok(batch)
}

/// Everything a stage needs besides the model and the stage config.
pub struct TrainEnv<'a> {
    pub real: &'a [Utterance],
    pub synth: &'a [Utterance],
    pub air_pool: &'a [AcousticImpulseResponse],
    pub noise_pool: &'a [Waveform],
    pub policy: CorruptionPolicy,
    pub spec_augment: SpecAugmentConfig,
    pub features: FeatureConfig,
    pub adam: AdamHyper,
    /// Global L2 gradient clip applied before the optimizer step.
    pub grad_clip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub penalty: f64,
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub name: String,
    pub records: Vec<StepRecord>,
}

impl StageReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    pub fn mean_loss(&self, last_n: usize) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let tail = &self.records[self.records.len().saturating_sub(last_n)..];
        Some(tail.iter().map(|r| r.loss).sum::<f64>() / tail.len() as f64)
    }
}

/// Forward + backward for one utterance; gradient contributions are scaled
/// by `grad_scale` (1/batch for batch-mean loss). Returns the utterance loss.
fn train_utterance(
    model: &mut RnntModel,
    utt: &Utterance,
    env: &TrainEnv,
    corrupt_seed: u64,
    augment_seed: u64,
    grad_scale: f64,
) -> Result<f64> {
    // synthetic audio is corrupted on every draw; real audio is not
    let wave = match utt.source {
        Source::Synthetic => {
            corrupt(&utt.waveform, &env.policy, env.air_pool, env.noise_pool, corrupt_seed)?.0
        }
        Source::Real => utt.waveform.clone(),
    };
    let feats = log_mel(&wave, &env.features)?;
    let feats = spec_augment(&feats, &env.spec_augment, augment_seed);
    let stacked = stack_downsample(&feats, &env.features);

    let (enc_states, enc_cache) = model.encode(&stacked)?;
    let (dec_states, dec_cache) = model.predict(&utt.tokens)?;
    let (logits, joint_cache) = model.joint(&enc_states, &dec_states)?;
    let log_probs = log_softmax(&logits);
    let result = forward_backward(&log_probs, &utt.tokens);

    let mut d_logits = logit_grads(&log_probs, &result.grad_log_probs);
    d_logits.mapv_inplace(|v| v * grad_scale);
    let (d_enc, d_dec) = model.joint_backward(&joint_cache, &d_logits);
    if !model.store.is_frozen(Component::Encoder) {
        model.encode_backward(&enc_cache, &d_enc);
    }
    model.predict_backward(&dec_cache, &d_dec);
    Ok(result.loss)
}

/// Row-wise log-softmax over the vocabulary axis.
pub fn log_softmax(logits: &Array3<f64>) -> Array3<f64> {
    let mut out = logits.clone();
    let (t_len, u_len, v) = out.dim();
    for t in 0..t_len {
        for u in 0..u_len {
            let mut m = f64::NEG_INFINITY;
            for k in 0..v {
                m = m.max(out[[t, u, k]]);
            }
            let mut sum = 0.0;
            for k in 0..v {
                sum += (out[[t, u, k]] - m).exp();
            }
            let lse = m + sum.ln();
            for k in 0..v {
                out[[t, u, k]] -= lse;
            }
        }
    }
    out
}

/// Chain rule through log-softmax: given dL/d log_probs, returns dL/d logits.
pub fn logit_grads(log_probs: &Array3<f64>, d_log_probs: &Array3<f64>) -> Array3<f64> {
    let (t_len, u_len, v) = log_probs.dim();
    let mut out = Array3::zeros(log_probs.raw_dim());
    for t in 0..t_len {
        for u in 0..u_len {
            let mut row_sum = 0.0;
            for k in 0..v {
                row_sum += d_log_probs[[t, u, k]];
            }
            for k in 0..v {
                let p = log_probs[[t, u, k]].exp();
                out[[t, u, k]] = d_log_probs[[t, u, k]] - p * row_sum;
            }
        }
    }
    out
}

/// Runs one training stage. `start_step` supports resuming; each completed
/// step invokes `on_step` (for periodic checkpoints) after logging
/// `step <n> lr <v> loss <v> penalty <v>`.
pub fn run_stage(
    model: &mut RnntModel,
    adam: &mut AdamState,
    env: &TrainEnv,
    stage: &StageConfig,
    penalty: Option<&ElasticPenaltyConfig>,
    start_step: u64,
    log: &mut dyn Write,
    mut on_step: impl FnMut(u64, &RnntModel, &AdamState) -> Result<()>,
) -> Result<StageReport> {
    stage.validate()?;
    if stage.mix.real_pct > 0.0 && env.real.is_empty() {
        return Err(Error::config(format!(
            "stage {:?} mixes real data but the real corpus is empty",
            stage.name
        )));
    }
    if stage.mix.synth_pct > 0.0 && env.synth.is_empty() {
        return Err(Error::config(format!(
            "stage {:?} mixes synthetic data but the synthetic corpus is empty",
            stage.name
        )));
    }
    set_freeze(&mut model.store, stage.freeze_encoder);
    writeln!(
        log,
        "stage {} steps {} batch {} freeze_encoder {} grad_clip {} lambda {}",
        stage.name,
        stage.steps,
        stage.batch_size,
        stage.freeze_encoder,
        env.grad_clip,
        penalty.map(|p| p.lambda).unwrap_or(0.0),
    )?;

    let mut report = StageReport { name: stage.name.clone(), records: Vec::new() };
    for step in start_step..stage.steps {
        let mut rng = stream_rng(stage.seed, &[stream::STAGE_STEP, step]);
        let batch = sample_batch(env.real, env.synth, &stage.mix, stage.batch_size, &mut rng)?;
        let seeds: Vec<(u64, u64)> =
            batch.iter().map(|_| (rng.random::<u64>(), rng.random::<u64>())).collect();

        model.store.zero_grads();
        let scale = 1.0 / stage.batch_size as f64;
        let mut batch_loss = 0.0;
        for (utt, &(corrupt_seed, augment_seed)) in batch.iter().zip(&seeds) {
            batch_loss += train_utterance(model, utt, env, corrupt_seed, augment_seed, scale)?;
        }
        batch_loss *= scale;
        if !batch_loss.is_finite() {
            return Err(Error::Divergence(format!(
                "stage {:?} step {step}: loss is not finite",
                stage.name
            )));
        }

        let penalty_value = match penalty {
            Some(cfg) => elastic_penalty(&mut model.store, cfg)?,
            None => 0.0,
        };

        let norm = model.store.active_grad_norm();
        if norm > env.grad_clip {
            model.store.scale_active_grads(env.grad_clip / norm);
        }

        let lr = lr_at(step, &stage.schedule);
        adam_step(&mut model.store, lr, &env.adam, adam)?;

        writeln!(log, "step {} lr {:.6e} loss {:.6e} penalty {:.6e}", step, lr, batch_loss, penalty_value)?;
        report.records.push(StepRecord { step, lr, loss: batch_loss, penalty: penalty_value });
        on_step(step, model, adam)?;
    }
    Ok(report)
}

/// Where a resumed run picks up.
#[derive(Debug, Clone)]
pub struct ResumePoint {
    pub stage_index: usize,
    pub step: u64,
    /// Snapshot for a penalized stage resumed mid-way.
    pub snapshot: Option<ParameterSnapshot>,
}

pub struct RecipeOptions<'a> {
    /// Directory for stage-boundary (and optional periodic) checkpoints.
    pub checkpoint_dir: Option<&'a Path>,
    /// Write a checkpoint every N steps inside a stage; 0 disables.
    pub checkpoint_every: u64,
    pub resume: Option<ResumePoint>,
}

impl Default for RecipeOptions<'_> {
    fn default() -> Self {
        RecipeOptions { checkpoint_dir: None, checkpoint_every: 0, resume: None }
    }
}

#[derive(Debug, Clone)]
pub struct RecipeReport {
    pub stages: Vec<StageReport>,
}

/// Runs stages sequentially. A stage with an elastic penalty snapshots the
/// parameters at its entry (the previous stage's result). Checkpoints are
/// written after every stage, and optionally every `checkpoint_every` steps.
pub fn run_recipe(
    model: &mut RnntModel,
    adam: &mut AdamState,
    env: &TrainEnv,
    stages: &[StageConfig],
    opts: &RecipeOptions,
    log: &mut dyn Write,
) -> Result<RecipeReport> {
    if stages.is_empty() {
        return Err(Error::config("recipe needs at least one stage"));
    }
    for s in stages {
        s.validate()?;
    }
    let (resume_stage, resume_step, resume_snapshot) = match &opts.resume {
        Some(r) => (r.stage_index, r.step, r.snapshot.clone()),
        None => (0, 0, None),
    };
    if resume_stage >= stages.len() {
        return Err(Error::config(format!(
            "resume stage index {} out of range ({} stages)",
            resume_stage,
            stages.len()
        )));
    }

    let mut report = RecipeReport { stages: Vec::new() };
    for (idx, stage) in stages.iter().enumerate() {
        if idx < resume_stage {
            continue;
        }
        let start_step = if idx == resume_stage { resume_step } else { 0 };
        if start_step >= stage.steps {
            continue;
        }
        let penalty = match &stage.elastic {
            Some(spec) => {
                let snapshot = if idx == resume_stage && start_step > 0 {
                    resume_snapshot.clone().ok_or_else(|| {
                        Error::config("resuming a penalized stage requires its snapshot")
                    })?
                } else {
                    model.store.snapshot(&spec.scope)
                };
                Some(ElasticPenaltyConfig {
                    lambda: spec.lambda,
                    scope: spec.scope.clone(),
                    snapshot,
                })
            }
            None => None,
        };

        let every = opts.checkpoint_every;
        let dir = opts.checkpoint_dir;
        let stage_report = run_stage(
            model,
            adam,
            env,
            stage,
            penalty.as_ref(),
            start_step,
            log,
            |step, m, a| {
                if let (Some(dir), true) = (dir, every > 0 && (step + 1) % every == 0 && step + 1 < stage.steps) {
                    let path = dir.join(format!("stage{}-step{}.ckpt", idx + 1, step + 1));
                    crate::checkpoint::save(
                        &path,
                        &crate::checkpoint::Checkpoint {
                            config: m.config.clone(),
                            store: m.store.clone(),
                            adam: Some(a.clone()),
                            position: Some(crate::checkpoint::RecipePosition {
                                stage_index: idx as u32,
                                step: step + 1,
                            }),
                            snapshot: penalty.as_ref().map(|p| p.snapshot.clone()),
                        },
                    )?;
                }
                Ok(())
            },
        )?;
        report.stages.push(stage_report);

        if let Some(dir) = opts.checkpoint_dir {
            let path = dir.join(format!("stage{}.ckpt", idx + 1));
            crate::checkpoint::save(
                &path,
                &crate::checkpoint::Checkpoint {
                    config: model.config.clone(),
                    store: model.store.clone(),
                    adam: Some(adam.clone()),
                    position: Some(crate::checkpoint::RecipePosition {
                        stage_index: (idx + 1) as u32,
                        step: 0,
                    }),
                    snapshot: None,
                },
            )?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn schedule_shape_and_boundaries() {
        let s = LrSchedule {
            warmup_steps: 10,
            hold_steps: 5,
            decay_steps: 20,
            peak_lr: 5e-5,
            final_lr: 1e-5,
        };
        // warm-up is linear and ends at peak
        assert!((lr_at(0, &s) - 5e-6).abs() < 1e-18);
        assert!((lr_at(9, &s) - 5e-5).abs() < 1e-18);
        // hold
        assert_eq!(lr_at(10, &s), 5e-5);
        assert_eq!(lr_at(14, &s), 5e-5);
        // decay start is exactly peak
        assert_eq!(lr_at(15, &s), 5e-5);
        // decay end is exactly final, and clamps beyond
        assert!((lr_at(35, &s) - 1e-5).abs() < 1e-18);
        assert!((lr_at(100, &s) - 1e-5).abs() < 1e-18);
        // halfway through decay: peak * (final/peak)^0.5
        let expect = 5e-5 * 0.2f64.sqrt();
        assert!((lr_at(25, &s) - expect).abs() < 1e-12);
        assert!((expect - 2.2361e-5).abs() < 1e-9);
    }

    #[test]
    fn schedule_is_monotone_after_warmup() {
        let s = LrSchedule {
            warmup_steps: 3,
            hold_steps: 4,
            decay_steps: 17,
            peak_lr: 1e-3,
            final_lr: 1e-5,
        };
        let mut prev = lr_at(3, &s);
        for step in 4..40 {
            let cur = lr_at(step, &s);
            assert!(cur <= prev + 1e-18, "step {step}");
            prev = cur;
        }
    }

    fn tiny_store() -> ParameterStore {
        let mut store = ParameterStore::new();
        store.insert(
            "d.w",
            Component::Decoder,
            crate::params::Value::Vector(ndarray::Array1::zeros(2)),
        );
        store
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        let mut store = tiny_store();
        store.get_mut("d.w").grad.as_mut_slice().copy_from_slice(&[1.0, 1.0]);
        let mut state = AdamState::new(&store);
        adam_step(&mut store, 0.1, &AdamHyper::default(), &mut state).unwrap();
        let got = store.get("d.w").value.as_slice()[0];
        // m_hat = 1, v_hat = 1 -> update = -lr / (1 + eps)
        assert!((got - (-0.0999999990)).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn adam_zero_gradient_keeps_values_but_decays_moments() {
        let mut store = tiny_store();
        store.get_mut("d.w").grad.as_mut_slice().copy_from_slice(&[1.0, -1.0]);
        let mut state = AdamState::new(&store);
        adam_step(&mut store, 0.01, &AdamHyper::default(), &mut state).unwrap();
        let after_first = store.get("d.w").value.as_slice().to_vec();
        let m_before = state.slots[0].m.clone();
        store.zero_grads();
        // fresh state on a zero gradient: values must not move at all
        let mut fresh_store = tiny_store();
        let mut fresh = AdamState::new(&fresh_store);
        adam_step(&mut fresh_store, 0.01, &AdamHyper::default(), &mut fresh).unwrap();
        assert_eq!(fresh_store.get("d.w").value.as_slice(), &[0.0, 0.0]);
        // decayed moments on an existing state
        adam_step(&mut store, 0.01, &AdamHyper::default(), &mut state).unwrap();
        assert!(state.slots[0].m[0].abs() < m_before[0].abs());
        assert_ne!(store.get("d.w").value.as_slice(), after_first.as_slice());
    }

    #[test]
    fn adam_respects_freeze() {
        let mut store = tiny_store();
        store.insert(
            "e.w",
            Component::Encoder,
            crate::params::Value::Vector(ndarray::Array1::zeros(2)),
        );
        store.get_mut("d.w").grad.as_mut_slice().copy_from_slice(&[1.0, 1.0]);
        store.get_mut("e.w").grad.as_mut_slice().copy_from_slice(&[1.0, 1.0]);
        store.set_freeze_encoder(true);
        let mut state = AdamState::new(&store);
        adam_step(&mut store, 0.1, &AdamHyper::default(), &mut state).unwrap();
        assert_eq!(store.get("e.w").value.as_slice(), &[0.0, 0.0]);
        assert!(store.get("d.w").value.as_slice()[0] < 0.0);
        assert_eq!(state.slots[1].m, vec![0.0, 0.0]);
        // unfreeze: encoder resumes updating
        store.set_freeze_encoder(false);
        adam_step(&mut store, 0.1, &AdamHyper::default(), &mut state).unwrap();
        assert!(store.get("e.w").value.as_slice()[0] < 0.0);
    }

    #[test]
    fn elastic_penalty_value_and_gradient() {
        let mut store = ParameterStore::new();
        store.insert(
            "d.w",
            Component::Decoder,
            crate::params::Value::Vector(ndarray::arr1(&[1.0, 2.0])),
        );
        let scope: BTreeSet<Component> = [Component::Decoder].into_iter().collect();
        let snapshot = store.snapshot(&scope);
        // at the snapshot: zero penalty, zero gradient
        let cfg = ElasticPenaltyConfig { lambda: 0.5, scope: scope.clone(), snapshot };
        let j = elastic_penalty(&mut store, &cfg).unwrap();
        assert_eq!(j, 0.0);
        assert_eq!(store.get("d.w").grad.as_slice(), &[0.0, 0.0]);
        // diffs (0.5, -1.0) with lambda 0.5 -> J = 0.625
        store.get_mut("d.w").value.as_mut_slice().copy_from_slice(&[1.5, 1.0]);
        store.zero_grads();
        let j = elastic_penalty(&mut store, &cfg).unwrap();
        assert!((j - 0.625).abs() < 1e-15);
        let g = store.get("d.w").grad.as_slice();
        assert!((g[0] - 0.5).abs() < 1e-15); // 2 * 0.5 * 0.5
        assert!((g[1] + 1.0).abs() < 1e-15); // 2 * 0.5 * -1.0
    }

    #[test]
    fn elastic_penalty_gradient_matches_finite_differences() {
        let mut store = ParameterStore::new();
        store.insert(
            "d.w",
            Component::Decoder,
            crate::params::Value::Vector(ndarray::arr1(&[0.3, -0.7, 1.2])),
        );
        let scope: BTreeSet<Component> = [Component::Decoder].into_iter().collect();
        let snapshot = store.snapshot(&scope);
        store
            .get_mut("d.w")
            .value
            .as_mut_slice()
            .copy_from_slice(&[0.45, -0.9, 1.1]);
        let cfg = ElasticPenaltyConfig { lambda: 0.8, scope, snapshot };
        store.zero_grads();
        elastic_penalty(&mut store, &cfg).unwrap();
        let analytic = store.get("d.w").grad.as_slice().to_vec();
        let h = 1e-6;
        for j in 0..3 {
            let base = store.get("d.w").value.as_slice()[j];
            store.get_mut("d.w").value.as_mut_slice()[j] = base + h;
            let plus = elastic_penalty_value(&store, &cfg).unwrap();
            store.get_mut("d.w").value.as_mut_slice()[j] = base - h;
            let minus = elastic_penalty_value(&store, &cfg).unwrap();
            store.get_mut("d.w").value.as_mut_slice()[j] = base;
            let numeric = (plus - minus) / (2.0 * h);
            assert!((numeric - analytic[j]).abs() < 1e-8, "{j}: {numeric} vs {}", analytic[j]);
        }
    }

    #[test]
    fn snapshot_mismatch_is_a_config_error() {
        let mut store = ParameterStore::new();
        store.insert(
            "d.w",
            Component::Decoder,
            crate::params::Value::Vector(ndarray::Array1::zeros(2)),
        );
        let cfg = ElasticPenaltyConfig {
            lambda: 1.0,
            scope: [Component::Decoder].into_iter().collect(),
            snapshot: ParameterSnapshot::from_entries(vec![("other".into(), vec![0.0])]),
        };
        assert!(matches!(elastic_penalty(&mut store, &cfg), Err(Error::Config(_))));
    }

    fn constant_utterance(id: &str, tokens: Vec<u32>, source: Source, seed: u64) -> Utterance {
        use crate::synth::{sample_profiles, synthesize};
        use crate::vocab::Vocabulary;
        let vocab = Vocabulary::from_words((0..6).map(|i| format!("w{i}"))).unwrap();
        let profile = &sample_profiles(3, 4).unwrap()[(seed % 4) as usize];
        let waveform = synthesize(&tokens, profile, seed, &vocab).unwrap();
        let transcript = vocab.detokenize(&tokens).unwrap();
        Utterance { id: id.to_string(), tokens, transcript, source, waveform }
    }

    fn micro_env<'a>(real: &'a [Utterance], synth: &'a [Utterance]) -> TrainEnv<'a> {
        TrainEnv {
            real,
            synth,
            air_pool: &[],
            noise_pool: &[],
            policy: CorruptionPolicy { p_reverb: 0.0, p_noise: 0.0, ..Default::default() },
            spec_augment: SpecAugmentConfig::default(),
            features: FeatureConfig::default(),
            adam: AdamHyper::default(),
            grad_clip: 5.0,
        }
    }

    fn micro_model(seed: u64) -> RnntModel {
        RnntModel::init(
            ModelConfig {
                enc_layers: 1,
                enc_units: 8,
                dec_layers: 1,
                dec_units: 8,
                proj_dim: 6,
                joint_units: 8,
                vocab_size: 7,
                input_dim: 192,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn mixture_fractions_converge() {
        let real: Vec<Utterance> =
            (0..4).map(|i| constant_utterance(&format!("r{i}"), vec![1], Source::Real, i)).collect();
        let synth: Vec<Utterance> = (0..4)
            .map(|i| constant_utterance(&format!("s{i}"), vec![2], Source::Synthetic, i))
            .collect();
        let mut rng = stream_rng(5, &[1]);
        for (real_pct, synth_pct, tol) in [(95.0, 5.0, 0.005), (98.0, 2.0, 0.005)] {
            let mix = MixWeights::new(real_pct, synth_pct).unwrap();
            let mut synth_count = 0usize;
            let total = 100_000;
            let batch = sample_batch(&real, &synth, &mix, total, &mut rng).unwrap();
            for u in batch {
                if u.source == Source::Synthetic {
                    synth_count += 1;
                }
            }
            let frac = synth_count as f64 / total as f64;
            assert!(
                (frac - synth_pct / 100.0).abs() < tol,
                "({real_pct},{synth_pct}): fraction {frac}"
            );
        }
    }

    #[test]
    fn all_real_mix_never_draws_synthetic() {
        let real: Vec<Utterance> =
            (0..2).map(|i| constant_utterance(&format!("r{i}"), vec![1], Source::Real, i)).collect();
        let mut rng = stream_rng(6, &[1]);
        let batch = sample_batch(&real, &[], &MixWeights::real_only(), 500, &mut rng).unwrap();
        assert!(batch.iter().all(|u| u.source == Source::Real));
    }

    #[test]
    fn empty_weighted_corpus_is_a_config_error() {
        let real: Vec<Utterance> = vec![];
        let mut rng = stream_rng(6, &[1]);
        assert!(matches!(
            sample_batch(&real, &[], &MixWeights::real_only(), 4, &mut rng),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn run_stage_executes_exactly_steps_optimizer_steps() {
        let real: Vec<Utterance> =
            (0..3).map(|i| constant_utterance(&format!("r{i}"), vec![1, 2], Source::Real, i)).collect();
        let env = micro_env(&real, &[]);
        let mut model = micro_model(1);
        let mut adam = AdamState::new(&model.store);
        let stage = StageConfig {
            name: "one".into(),
            mix: MixWeights::real_only(),
            freeze_encoder: false,
            elastic: None,
            schedule: LrSchedule::constant(1e-3),
            steps: 1,
            batch_size: 2,
            seed: 9,
        };
        let mut log = Vec::new();
        let report =
            run_stage(&mut model, &mut adam, &env, &stage, None, 0, &mut log, |_, _, _| Ok(()))
                .unwrap();
        assert_eq!(report.records.len(), 1);
        assert_eq!(adam.step, 1);
        let text = String::from_utf8(log).unwrap();
        assert!(text.contains("step 0 lr"), "log was {text:?}");

        let bad = StageConfig { steps: 0, ..stage };
        assert!(matches!(
            run_stage(&mut model, &mut adam, &env, &bad, None, 0, &mut Vec::new(), |_, _, _| Ok(())),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn freeze_keeps_encoder_bits_while_others_move() {
        let real: Vec<Utterance> =
            (0..3).map(|i| constant_utterance(&format!("r{i}"), vec![1, 3], Source::Real, i)).collect();
        let env = micro_env(&real, &[]);
        let mut model = micro_model(2);
        let mut adam = AdamState::new(&model.store);
        let before: Vec<(String, Vec<f64>)> = model
            .store
            .iter()
            .map(|p| (p.name.clone(), p.value.as_slice().to_vec()))
            .collect();
        let stage = StageConfig {
            name: "frozen".into(),
            mix: MixWeights::real_only(),
            freeze_encoder: true,
            elastic: None,
            schedule: LrSchedule::constant(1e-3),
            steps: 40,
            batch_size: 2,
            seed: 10,
        };
        run_stage(&mut model, &mut adam, &env, &stage, None, 0, &mut std::io::sink(), |_, _, _| Ok(()))
            .unwrap();
        for (p, (name, values)) in model.store.iter().zip(&before) {
            assert_eq!(&p.name, name);
            if p.component == Component::Encoder {
                assert_eq!(p.value.as_slice(), values.as_slice(), "{name} must not move");
            } else {
                assert_ne!(p.value.as_slice(), values.as_slice(), "{name} should move");
            }
        }
    }

    #[test]
    fn stage_runs_are_bit_deterministic() {
        let real: Vec<Utterance> =
            (0..3).map(|i| constant_utterance(&format!("r{i}"), vec![2, 4], Source::Real, i)).collect();
        let synth: Vec<Utterance> = (0..3)
            .map(|i| constant_utterance(&format!("s{i}"), vec![5], Source::Synthetic, 10 + i))
            .collect();
        let airs = vec![AcousticImpulseResponse::new(vec![1.0, 0.35, 0.1], 16000).unwrap()];
        let noises = vec![Waveform::new(
            (0..4000).map(|i| 0.05 * ((i as f64) * 0.91).sin()).collect(),
        )];
        let mut env = micro_env(&real, &synth);
        env.air_pool = &airs;
        env.noise_pool = &noises;
        env.policy = CorruptionPolicy::default();
        let stage = StageConfig {
            name: "mix".into(),
            mix: MixWeights::new(60.0, 40.0).unwrap(),
            freeze_encoder: false,
            elastic: None,
            schedule: LrSchedule::constant(1e-3),
            steps: 6,
            batch_size: 3,
            seed: 123,
        };
        let mut run = || {
            let mut model = micro_model(3);
            let mut adam = AdamState::new(&model.store);
            run_stage(
                &mut model,
                &mut adam,
                &env,
                &stage,
                None,
                0,
                &mut std::io::sink(),
                |_, _, _| Ok(()),
            )
            .unwrap();
            model
                .store
                .iter()
                .flat_map(|p| p.value.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn zero_lambda_matches_no_penalty_bit_exactly() {
        let real: Vec<Utterance> =
            (0..3).map(|i| constant_utterance(&format!("r{i}"), vec![1, 2], Source::Real, i)).collect();
        let env = micro_env(&real, &[]);
        let run = |elastic: Option<ElasticSpec>| {
            let mut model = micro_model(4);
            let mut adam = AdamState::new(&model.store);
            let stage = StageConfig {
                name: "s".into(),
                mix: MixWeights::real_only(),
                freeze_encoder: false,
                elastic,
                schedule: LrSchedule::constant(1e-3),
                steps: 8,
                batch_size: 2,
                seed: 77,
            };
            run_recipe(
                &mut model,
                &mut adam,
                &env,
                &[stage],
                &RecipeOptions::default(),
                &mut std::io::sink(),
            )
            .unwrap();
            model
                .store
                .iter()
                .flat_map(|p| p.value.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<u64>>())
                .collect::<Vec<u64>>()
        };
        assert_eq!(run(None), run(Some(ElasticSpec::decoder_only(0.0))));
    }

    #[test]
    fn huge_lambda_pins_scoped_parameters() {
        let real: Vec<Utterance> =
            (0..3).map(|i| constant_utterance(&format!("r{i}"), vec![1, 2], Source::Real, i)).collect();
        let env = micro_env(&real, &[]);
        let mut model = micro_model(5);
        let mut adam = AdamState::new(&model.store);
        let scope: BTreeSet<Component> = [Component::Decoder].into_iter().collect();
        let snapshot = model.store.snapshot(&scope);
        let stage = StageConfig {
            name: "pin".into(),
            mix: MixWeights::real_only(),
            freeze_encoder: false,
            elastic: Some(ElasticSpec::decoder_only(1e6)),
            schedule: LrSchedule::constant(5e-5),
            steps: 100,
            batch_size: 2,
            seed: 31,
        };
        run_recipe(
            &mut model,
            &mut adam,
            &env,
            &[stage],
            &RecipeOptions::default(),
            &mut std::io::sink(),
        )
        .unwrap();
        let mut max_move = 0.0f64;
        for p in model.store.iter() {
            if p.component == Component::Decoder {
                let pre = snapshot.get(&p.name).unwrap();
                for (c, s) in p.value.as_slice().iter().zip(pre) {
                    max_move = max_move.max((c - s).abs());
                }
            }
        }
        assert!(max_move < 1e-3, "decoder moved {max_move}");
    }

    #[test]
    fn recipe_snapshot_comes_from_previous_stage() {
        let real: Vec<Utterance> =
            (0..3).map(|i| constant_utterance(&format!("r{i}"), vec![2, 3], Source::Real, i)).collect();
        let env = micro_env(&real, &[]);
        let mut model = micro_model(6);
        let mut adam = AdamState::new(&model.store);
        let stage1 = StageConfig {
            name: "a".into(),
            mix: MixWeights::real_only(),
            freeze_encoder: false,
            elastic: None,
            schedule: LrSchedule::constant(1e-3),
            steps: 5,
            batch_size: 2,
            seed: 1,
        };
        // a lambda so large stage 2 cannot move the decoder: its parameters
        // must stay at stage 1's result, proving the snapshot source
        let stage2 = StageConfig {
            name: "b".into(),
            mix: MixWeights::real_only(),
            freeze_encoder: false,
            elastic: Some(ElasticSpec::decoder_only(1e9)),
            schedule: LrSchedule::constant(1e-5),
            steps: 5,
            batch_size: 2,
            seed: 2,
        };
        // run stage 1 alone to know its final decoder parameters
        let mut probe_model = micro_model(6);
        let mut probe_adam = AdamState::new(&probe_model.store);
        run_recipe(
            &mut probe_model,
            &mut probe_adam,
            &env,
            std::slice::from_ref(&stage1),
            &RecipeOptions::default(),
            &mut std::io::sink(),
        )
        .unwrap();
        run_recipe(
            &mut model,
            &mut adam,
            &env,
            &[stage1, stage2],
            &RecipeOptions::default(),
            &mut std::io::sink(),
        )
        .unwrap();
        for (p, q) in model.store.iter().zip(probe_model.store.iter()) {
            if p.component == Component::Decoder {
                for (a, b) in p.value.as_slice().iter().zip(q.value.as_slice()) {
                    assert!((a - b).abs() < 1e-4, "{}: {a} vs {b}", p.name);
                }
            }
        }
    }
}
