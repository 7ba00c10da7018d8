//! Task conditioning: bottleneck task embeddings, the adapter hypernetwork
//! that generates classification heads, and the weight hypernetwork that
//! produces per-task loss coefficients.
//!
//! The adapter hypernetwork maps each class embedding row independently to
//! one head column and one bias entry, so a task can gain classes at
//! evaluation time without changing the columns of the classes it already
//! has.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Graph, Tensor, Var};

/// A prediction task: its name and ordered class-label texts. The label
/// order defines the class indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub labels: Vec<String>,
}

impl TaskSpec {
    pub fn new(name: impl Into<String>, labels: Vec<String>) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            labels,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Config("task name is empty".into()));
        }
        if self.labels.len() < 2 {
            return Err(Error::Config(format!(
                "task {} needs at least 2 classes, has {}",
                self.name,
                self.labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &self.labels {
            if label.trim().is_empty() {
                return Err(Error::Config(format!("task {} has an empty label", self.name)));
            }
            if !seen.insert(label) {
                return Err(Error::Config(format!("task {} repeats label {label:?}", self.name)));
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TaskSpecFile {
    tasks: Vec<TaskSpec>,
}

/// Reads a JSON task-spec file: `{"tasks": [{"name": .., "labels": [..]}, ..]}`.
pub fn read_task_specs(path: &Path) -> Result<Vec<TaskSpec>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: TaskSpecFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut names = HashSet::new();
    for task in &file.tasks {
        task.validate()?;
        if !names.insert(task.name.clone()) {
            return Err(Error::Config(format!("task {} listed twice", task.name)));
        }
    }
    Ok(file.tasks)
}

pub fn write_task_specs(path: &Path, tasks: &[TaskSpec]) -> Result<()> {
    let file = TaskSpecFile { tasks: tasks.to_vec() };
    let text = serde_json::to_string_pretty(&file).expect("task specs serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn leaf(g: &mut Graph, t: &Tensor, trainable: bool) -> Var {
    if trainable {
        g.param(t)
    } else {
        g.constant(t.clone())
    }
}

fn glorot_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Two-layer map `Z = ReLU(T W1 + b1) W2 + b2`, with `d_b < d_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BottleneckParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct BottleneckVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl BottleneckParams {
    pub fn init<R: Rng + ?Sized>(d_t: usize, d_b: usize, rng: &mut R) -> Result<Self> {
        if d_b == 0 || d_b >= d_t {
            return Err(Error::Config(format!("bottleneck width {d_b} must be in [1, {d_t})")));
        }
        Ok(Self {
            w1: Tensor::uniform(&[d_t, d_b], glorot_bound(d_t), rng),
            b1: Tensor::zeros(&[d_b]),
            w2: Tensor::uniform(&[d_b, d_t], glorot_bound(d_b), rng),
            b2: Tensor::zeros(&[d_t]),
        })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BottleneckVars {
        BottleneckVars {
            w1: leaf(g, &self.w1, trainable),
            b1: leaf(g, &self.b1, trainable),
            w2: leaf(g, &self.w2, trainable),
            b2: leaf(g, &self.b2, trainable),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

impl BottleneckVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.w1, self.b1, self.w2, self.b2]
    }
}

/// `Z_t` from the label embeddings `T_t[m_t, d_t]`; same shape as the input.
pub fn bottleneck(g: &mut Graph, task_embeddings: Var, p: &BottleneckVars) -> Result<Var> {
    let d_t = g.shape(p.w1)[0];
    if g.shape(task_embeddings).get(1) != Some(&d_t) {
        return Err(Error::dim(
            "bottleneck",
            format!("task embeddings {:?} for width {d_t}", g.shape(task_embeddings)),
        ));
    }
    let hidden = g.matmul(task_embeddings, p.w1)?;
    let hidden = g.add_row(hidden, p.b1)?;
    let hidden = g.relu(hidden)?;
    let out = g.matmul(hidden, p.w2)?;
    g.add_row(out, p.b2)
}

/// Adapter hypernetwork: each class row `z` maps through a ReLU hidden layer
/// to one head column (length `d_h`) and one bias scalar.
///
/// The output layers carry no bias: a term shared by every class shifts all
/// logits equally, cancels in the softmax and could never be trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterHyperNetParams {
    pub w_hidden: Tensor,
    pub b_hidden: Tensor,
    pub w_weight: Tensor,
    pub w_bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct AdapterVars {
    pub w_hidden: Var,
    pub b_hidden: Var,
    pub w_weight: Var,
    pub w_bias: Var,
}

impl AdapterHyperNetParams {
    /// Output projections start at a tenth of the usual scale so generated
    /// heads begin close to zero.
    pub fn init<R: Rng + ?Sized>(d_t: usize, d_hyp: usize, d_h: usize, rng: &mut R) -> Self {
        let out_bound = 0.1 * glorot_bound(d_hyp);
        Self {
            w_hidden: Tensor::uniform(&[d_t, d_hyp], glorot_bound(d_t), rng),
            b_hidden: Tensor::zeros(&[d_hyp]),
            w_weight: Tensor::uniform(&[d_hyp, d_h], out_bound, rng),
            w_bias: Tensor::uniform(&[d_hyp, 1], out_bound, rng),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> AdapterVars {
        AdapterVars {
            w_hidden: leaf(g, &self.w_hidden, trainable),
            b_hidden: leaf(g, &self.b_hidden, trainable),
            w_weight: leaf(g, &self.w_weight, trainable),
            w_bias: leaf(g, &self.w_bias, trainable),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_hidden, &self.b_hidden, &self.w_weight, &self.w_bias]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.w_hidden,
            &mut self.b_hidden,
            &mut self.w_weight,
            &mut self.w_bias,
        ]
    }
}

impl AdapterVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.w_hidden, self.b_hidden, self.w_weight, self.w_bias]
    }
}

/// Head parameters for one task: `weight[d_h, m_t]`, `bias[m_t]`.
#[derive(Debug, Clone, Copy)]
pub struct GeneratedHead {
    pub weight: Var,
    pub bias: Var,
}

pub fn generate_head(g: &mut Graph, task_embeddings: Var, p: &AdapterVars) -> Result<GeneratedHead> {
    let d_t = g.shape(p.w_hidden)[0];
    let m = match g.shape(task_embeddings) {
        [m, d] if *d == d_t => *m,
        s => {
            return Err(Error::dim(
                "generate_head",
                format!("task embeddings {s:?} for width {d_t}"),
            ))
        }
    };
    let hidden = g.matmul(task_embeddings, p.w_hidden)?;
    let hidden = g.add_row(hidden, p.b_hidden)?;
    let hidden = g.relu(hidden)?;
    let columns = g.matmul(hidden, p.w_weight)?;
    let weight = g.transpose(columns)?;
    let bias = g.matmul(hidden, p.w_bias)?;
    let bias = g.reshape(bias, &[m])?;
    Ok(GeneratedHead { weight, bias })
}

/// Weight hypernetwork: mean-pooled task embedding through a ReLU hidden
/// layer to a single scalar.
///
/// There is no output bias: a bias shared by all tasks cancels in the softmax
/// over tasks and would never receive gradient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHyperNetParams {
    pub w_hidden: Tensor,
    pub b_hidden: Tensor,
    pub w_out: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct WeightVars {
    pub w_hidden: Var,
    pub b_hidden: Var,
    pub w_out: Var,
}

impl WeightHyperNetParams {
    pub fn init<R: Rng + ?Sized>(d_t: usize, d_w: usize, rng: &mut R) -> Self {
        Self {
            w_hidden: Tensor::uniform(&[d_t, d_w], glorot_bound(d_t), rng),
            b_hidden: Tensor::zeros(&[d_w]),
            w_out: Tensor::uniform(&[d_w, 1], glorot_bound(d_w), rng),
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> WeightVars {
        WeightVars {
            w_hidden: leaf(g, &self.w_hidden, trainable),
            b_hidden: leaf(g, &self.b_hidden, trainable),
            w_out: leaf(g, &self.w_out, trainable),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        vec![&self.w_hidden, &self.b_hidden, &self.w_out]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.w_hidden, &mut self.b_hidden, &mut self.w_out]
    }
}

impl WeightVars {
    pub fn vars(&self) -> Vec<Var> {
        vec![self.w_hidden, self.b_hidden, self.w_out]
    }
}

/// Unnormalized task weight `beta_t`, shape `[1]`.
pub fn task_weight(g: &mut Graph, task_embeddings: Var, p: &WeightVars) -> Result<Var> {
    let d_t = g.shape(p.w_hidden)[0];
    if g.shape(task_embeddings).get(1) != Some(&d_t) {
        return Err(Error::dim(
            "task_weight",
            format!("task embeddings {:?} for width {d_t}", g.shape(task_embeddings)),
        ));
    }
    let pooled = g.mean_rows(task_embeddings)?;
    let pooled = g.reshape(pooled, &[1, d_t])?;
    let hidden = g.matmul(pooled, p.w_hidden)?;
    let hidden = g.add_row(hidden, p.b_hidden)?;
    let hidden = g.relu(hidden)?;
    let beta = g.matmul(hidden, p.w_out)?;
    g.reshape(beta, &[1])
}

/// Softmax over the task weights, giving `alpha[k]`.
pub fn normalize_weights(g: &mut Graph, betas: &[Var]) -> Result<Var> {
    if betas.is_empty() {
        return Err(Error::dim("normalize_weights", "no tasks"));
    }
    let joined = g.concat_rows(betas)?;
    g.softmax(joined)
}
