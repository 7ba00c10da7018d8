//! Adam with per-group learning rates, the epoch loop and early stopping.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ChunkSet;
use crate::error::{Error, Result};
use crate::mtmodel::{current_alphas, forward, joint_loss, Model, ModelConfig, ParamGroup};
use crate::numcore::{Graph, Tensor};
use crate::taskcond::TaskSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_encoder: f64,
    pub lr_heads: f64,
    /// Weight hypernetwork. Adam moves the task logits by about one learning
    /// rate per step whatever the gradient size, and the weighted loss always
    /// pulls mass toward the easiest task, so this group needs a much smaller
    /// rate than the heads to keep every task in play.
    pub lr_weighting: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Train on the admission-type task as a fourth task.
    pub with_admission_type: bool,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_encoder: 1e-3,
            lr_heads: 1e-3,
            lr_weighting: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            with_admission_type: false,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_encoder > 0.0 && self.lr_heads > 0.0 && self.lr_weighting > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} = {b} must be in (0, 1)")));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::Config("eps must be positive".into()));
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "patience, batch_size and max_epochs must be at least 1".into(),
            ));
        }
        self.model.validate()
    }

    fn lr(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.lr_encoder,
            ParamGroup::Heads => self.lr_heads,
            ParamGroup::Weighting => self.lr_weighting,
        }
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

/// One bias-corrected Adam update. Rejects the whole step if any gradient
/// is non-finite.
pub fn adam_step(
    params: Vec<(ParamGroup, &mut Tensor)>,
    grads: &[Vec<f64>],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for (i, ((_, p), g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::InvalidArgument(format!("gradient {i} has the wrong length")));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite gradient at parameter {i}, component {j}"
            )));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|(_, p)| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((group, p), g), (m, v)) in params
        .into_iter()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let lr = config.lr(group);
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without a new best loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
    stalled: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            stalled: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if loss >= best => {
                self.stalled += 1;
                if self.stalled >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, loss));
                self.stalled = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub task_names: Vec<String>,
    /// Loss coefficients used at each optimizer step; empty when the weight
    /// hypernetwork is disabled.
    pub alphas: Vec<Vec<f64>>,
    pub step_loss: Vec<f64>,
    pub epoch_train_loss: Vec<f64>,
    pub epoch_val_loss: Vec<f64>,
    /// 1-based epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Validation objective: the joint loss with coefficients fixed at their
/// current values.
pub fn validation_loss(model: &Model, set: &ChunkSet, tasks: &[TaskSpec]) -> Result<f64> {
    const BATCH: usize = 512;
    if set.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }
    let alphas = current_alphas(model, tasks)?;
    let mut sums = vec![0.0; tasks.len()];
    let order: Vec<usize> = (0..set.len()).collect();
    for batch in order.chunks(BATCH) {
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let chunks: Vec<&[usize]> = batch.iter().map(|&i| set.chunks[i].as_slice()).collect();
        let out = forward(&mut g, model, &bound, &chunks, tasks)?;
        for (t, &logits) in out.logits.iter().enumerate() {
            let gold: Vec<usize> = batch.iter().map(|&i| set.gold[t][i]).collect();
            let ce = g.cross_entropy(logits, &gold)?;
            sums[t] += g.value(ce).item() * batch.len() as f64;
        }
    }
    Ok(alphas.iter().zip(&sums).map(|(a, s)| a * s / set.len() as f64).sum())
}

fn divergence(e: Error) -> Error {
    match e {
        Error::NonFinite { op } => Error::Diverged(format!("non-finite value in {op}")),
        other => other,
    }
}

/// One optimizer step on the chunks `batch` of `set`. Returns the loss and
/// the coefficients used.
pub fn train_step(
    model: &mut Model,
    set: &ChunkSet,
    batch: &[usize],
    tasks: &[TaskSpec],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g, true);
    let chunks: Vec<&[usize]> = batch.iter().map(|&i| set.chunks[i].as_slice()).collect();
    let gold: Vec<Vec<usize>> = set
        .gold
        .iter()
        .map(|col| batch.iter().map(|&i| col[i]).collect())
        .collect();
    let out = forward(&mut g, model, &bound, &chunks, tasks).map_err(divergence)?;
    let loss = joint_loss(&mut g, &out, &gold).map_err(divergence)?;
    let alphas = out.alphas.values(&g);
    g.backward(loss)?;
    let grads: Vec<Vec<f64>> = bound.vars().into_iter().map(|v| g.grad(v)).collect();
    adam_step(model.params.tensors_mut(), &grads, state, config)?;
    Ok((g.value(loss).item(), alphas))
}

/// Trains with shuffled mini-batches and early stopping on validation loss.
/// Returns the best-validation parameters and the run trace.
pub fn train(
    mut model: Model,
    train_set: &ChunkSet,
    val_set: &ChunkSet,
    tasks: &[TaskSpec],
    config: &TrainConfig,
) -> Result<(Model, TrainingTrace)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Data("training and validation splits must be non-empty".into()));
    }
    if train_set.gold.len() != tasks.len() || val_set.gold.len() != tasks.len() {
        return Err(Error::Data("gold labels do not match the task list".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9));
    let mut state = AdamState::default();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut trace = TrainingTrace {
        task_names: tasks.iter().map(|t| t.name.clone()).collect(),
        alphas: Vec::new(),
        step_loss: Vec::new(),
        epoch_train_loss: Vec::new(),
        epoch_val_loss: Vec::new(),
        best_epoch: 0,
        stopped_early: false,
    };
    let record_alphas = model.config.use_weight_hypernet;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut steps = 0;
        for batch in order.chunks(config.batch_size) {
            let (loss, alphas) = train_step(&mut model, train_set, batch, tasks, &mut state, config)?;
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("loss {loss} at epoch {epoch}")));
            }
            if record_alphas {
                trace.alphas.push(alphas);
            }
            trace.step_loss.push(loss);
            total += loss;
            steps += 1;
        }
        trace.epoch_train_loss.push(total / steps as f64);
        let val = validation_loss(&model, val_set, tasks).map_err(divergence)?;
        trace.epoch_val_loss.push(val);
        match stopper.observe(epoch, val) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                trace.stopped_early = true;
                break;
            }
        }
    }
    trace.best_epoch = stopper.best_epoch().unwrap_or(0);
    Ok((best, trace))
}

/// Per-step coefficient table. Fails for runs without the weight
/// hypernetwork, which record no coefficients.
pub fn trace_weights(trace: &TrainingTrace) -> Result<Vec<(usize, Vec<f64>)>> {
    if trace.alphas.is_empty() {
        return Err(Error::Data(
            "trace has no loss coefficients (weight hypernetwork disabled)".into(),
        ));
    }
    Ok(trace.alphas.iter().cloned().enumerate().collect())
}

/// `step,alpha_<task>,...` CSV of the coefficient table.
pub fn alpha_csv(trace: &TrainingTrace) -> Result<String> {
    let rows = trace_weights(trace)?;
    let mut out = String::from("step");
    for name in &trace.task_names {
        write!(out, ",alpha_{name}").unwrap();
    }
    out.push('\n');
    for (step, alphas) in rows {
        write!(out, "{step}").unwrap();
        for a in alphas {
            write!(out, ",{a}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_alpha_csv(trace: &TrainingTrace, path: &Path) -> Result<()> {
    fs::write(path, alpha_csv(trace)?).map_err(|e| Error::io(path, e))
}

/// `epoch,train_loss,val_loss` CSV.
pub fn history_csv(trace: &TrainingTrace) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for (i, (t, v)) in trace.epoch_train_loss.iter().zip(&trace.epoch_val_loss).enumerate() {
        writeln!(out, "{},{t},{v}", i + 1).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64) -> TrainConfig {
        TrainConfig {
            lr_encoder: lr,
            lr_heads: lr,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut x = Tensor::vector(vec![1.0, -2.0]).unwrap();
        let before = x.clone();
        let mut state = AdamState::default();
        for _ in 0..3 {
            adam_step(
                vec![(ParamGroup::Heads, &mut x)],
                &[vec![0.0, 0.0]],
                &mut state,
                &cfg(0.1),
            )
            .unwrap();
        }
        assert_eq!(x, before);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut x = Tensor::vector(vec![0.0, 0.0]).unwrap();
        let mut state = AdamState::default();
        adam_step(
            vec![(ParamGroup::Heads, &mut x)],
            &[vec![3.0, -0.02]],
            &mut state,
            &cfg(0.01),
        )
        .unwrap();
        assert!((x.data()[0] + 0.01).abs() < 1e-8);
        assert!((x.data()[1] - 0.01).abs() < 1e-6);
    }

    #[test]
    fn groups_use_their_learning_rates() {
        let mut a = Tensor::scalar(0.0);
        let mut b = Tensor::scalar(0.0);
        let config = TrainConfig {
            lr_encoder: 0.1,
            lr_heads: 0.001,
            ..TrainConfig::default()
        };
        let mut state = AdamState::default();
        adam_step(
            vec![(ParamGroup::Encoder, &mut a), (ParamGroup::Heads, &mut b)],
            &[vec![1.0], vec![1.0]],
            &mut state,
            &config,
        )
        .unwrap();
        assert!((a.item() + 0.1).abs() < 1e-6);
        assert!((b.item() + 0.001).abs() < 1e-6);
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x) = x^2, gradient 2x; simulated for 200 steps from x = 1.
        let mut x = Tensor::scalar(1.0);
        let mut state = AdamState::default();
        for _ in 0..200 {
            let g = vec![2.0 * x.item()];
            adam_step(vec![(ParamGroup::Heads, &mut x)], &[g], &mut state, &cfg(0.05)).unwrap();
        }
        assert!(x.item().abs() < 1e-2, "{}", x.item());
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let mut x = Tensor::scalar(1.0);
        let mut state = AdamState::default();
        let err = adam_step(
            vec![(ParamGroup::Heads, &mut x)],
            &[vec![f64::NAN]],
            &mut state,
            &cfg(0.1),
        );
        assert!(matches!(err, Err(Error::Diverged(_))));
        assert_eq!(x.item(), 1.0);
        assert_eq!(state.step, 0);
    }

    #[test]
    fn early_stopping_mechanism() {
        let mut s = EarlyStopping::new(1);
        assert_eq!(s.observe(1, 1.0), StopDecision::Improved);
        assert_eq!(s.observe(2, 1.5), StopDecision::Stop);
        assert_eq!(s.best_epoch(), Some(1));

        let mut s = EarlyStopping::new(3);
        for (e, l) in [(1, 2.0), (2, 1.0), (3, 1.1), (4, 1.2), (5, 0.9), (6, 1.0), (7, 1.0)] {
            assert_ne!(s.observe(e, l), StopDecision::Stop);
        }
        assert_eq!(s.observe(8, 5.0), StopDecision::Stop);
        assert_eq!(s.best_epoch(), Some(5));
    }

    #[test]
    fn config_parsing() {
        let cfg = TrainConfig::from_toml("lr_heads = 0.01\npatience = 2\n[model]\nd_h = 8\nd_b = 4\n").unwrap();
        assert_eq!(cfg.lr_heads, 0.01);
        assert_eq!(cfg.model.d_h, 8);
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert!(TrainConfig::from_toml("patience = 0").is_err());
        assert!(TrainConfig::from_toml("beta1 = 1.0").is_err());
        assert!(TrainConfig::from_toml("lr_encoder = -1.0").is_err());
        assert!(TrainConfig::from_toml("unknown = 1").is_err());
    }

    #[test]
    fn ablation_trace_has_no_weight_table() {
        let trace = TrainingTrace {
            task_names: vec!["a".into(), "b".into()],
            alphas: vec![],
            step_loss: vec![1.0],
            epoch_train_loss: vec![1.0],
            epoch_val_loss: vec![1.0],
            best_epoch: 1,
            stopped_early: false,
        };
        assert!(trace_weights(&trace).is_err());
        let with = TrainingTrace {
            alphas: vec![vec![0.25, 0.75], vec![0.5, 0.5]],
            ..trace
        };
        assert_eq!(
            alpha_csv(&with).unwrap(),
            "step,alpha_a,alpha_b\n0,0.25,0.75\n1,0.5,0.5\n"
        );
    }
}
