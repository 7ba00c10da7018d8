//! The multitask model: shared encoder, task conditioning, per-task heads and
//! the weighted joint objective.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{softmax_slice, Graph, Tensor, Var};
use crate::taskcond::{
    bottleneck, generate_head, normalize_weights, task_weight, AdapterHyperNetParams, AdapterVars, BottleneckParams,
    BottleneckVars, TaskSpec, WeightHyperNetParams, WeightVars,
};
use crate::textenc::{encode_chunks, encode_labels, EncoderParams, Vocab};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden (and label-embedding) dimension.
    pub d_h: usize,
    /// Tokens per chunk.
    pub chunk_len: usize,
    /// Bottleneck width; must be below `d_h`.
    pub d_b: usize,
    /// Adapter hypernetwork hidden width; defaults to `d_h`.
    pub d_hyp: Option<usize>,
    /// Weight hypernetwork hidden width.
    pub d_w: usize,
    pub use_weight_hypernet: bool,
    pub use_hypernet_heads: bool,
    /// Feed the weight hypernetwork a detached copy of the task embeddings.
    /// The weighted loss is always lowered by shifting mass to the easiest
    /// task; left connected, that pressure reshapes the shared embeddings
    /// themselves instead of only the coefficients.
    pub detach_weight_input: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_h: 64,
            chunk_len: 32,
            d_b: 32,
            d_hyp: None,
            d_w: 16,
            use_weight_hypernet: true,
            use_hypernet_heads: true,
            detach_weight_input: true,
        }
    }
}

impl ModelConfig {
    pub fn d_hyp(&self) -> usize {
        self.d_hyp.unwrap_or(self.d_h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_h < 2 {
            return Err(Error::Config(format!("d_h = {} must be at least 2", self.d_h)));
        }
        if self.chunk_len == 0 {
            return Err(Error::Config("chunk_len must be at least 1".into()));
        }
        if self.d_b == 0 || self.d_b >= self.d_h {
            return Err(Error::Config(format!(
                "d_b = {} must be in [1, d_h = {})",
                self.d_b, self.d_h
            )));
        }
        if self.d_hyp() == 0 || self.d_w == 0 {
            return Err(Error::Config("hypernetwork widths must be positive".into()));
        }
        Ok(())
    }
}

/// Trainable per-task head used when heads are not generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlainHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Optimizer group a parameter tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Encoder,
    /// Bottleneck, adapter hypernetwork and plain heads.
    Heads,
    /// Weight hypernetwork.
    Weighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub bottleneck: BottleneckParams,
    pub adapter: AdapterHyperNetParams,
    pub weighting: WeightHyperNetParams,
    pub plain_heads: Vec<PlainHead>,
}

impl ModelParams {
    /// Every tensor with its optimizer group, in a fixed order.
    pub fn tensors(&self) -> Vec<(ParamGroup, &Tensor)> {
        let mut out = vec![(ParamGroup::Encoder, &self.encoder.embedding)];
        let heads = self.bottleneck.tensors().into_iter().chain(self.adapter.tensors());
        out.extend(heads.map(|t| (ParamGroup::Heads, t)));
        out.extend(self.weighting.tensors().into_iter().map(|t| (ParamGroup::Weighting, t)));
        out.extend(
            self.plain_heads
                .iter()
                .flat_map(|h| [(ParamGroup::Heads, &h.weight), (ParamGroup::Heads, &h.bias)]),
        );
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &mut Tensor)> {
        let mut out = vec![(ParamGroup::Encoder, &mut self.encoder.embedding)];
        let heads = self
            .bottleneck
            .tensors_mut()
            .into_iter()
            .chain(self.adapter.tensors_mut());
        out.extend(heads.map(|t| (ParamGroup::Heads, t)));
        out.extend(
            self.weighting
                .tensors_mut()
                .into_iter()
                .map(|t| (ParamGroup::Weighting, t)),
        );
        out.extend(
            self.plain_heads
                .iter_mut()
                .flat_map(|h| [(ParamGroup::Heads, &mut h.weight), (ParamGroup::Heads, &mut h.bias)]),
        );
        out
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundParams {
        let encoder = if trainable {
            g.param(&self.encoder.embedding)
        } else {
            g.constant(self.encoder.embedding.clone())
        };
        let bottleneck = self.bottleneck.bind(g, trainable);
        let adapter = self.adapter.bind(g, trainable);
        let weighting = self.weighting.bind(g, trainable);
        let plain_heads = self
            .plain_heads
            .iter()
            .map(|h| {
                if trainable {
                    (g.param(&h.weight), g.param(&h.bias))
                } else {
                    (g.constant(h.weight.clone()), g.constant(h.bias.clone()))
                }
            })
            .collect();
        BoundParams {
            encoder,
            bottleneck,
            adapter,
            weighting,
            plain_heads,
        }
    }
}

/// Graph handles for every parameter, in the order of [`ModelParams::tensors`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub encoder: Var,
    pub bottleneck: BottleneckVars,
    pub adapter: AdapterVars,
    pub weighting: WeightVars,
    pub plain_heads: Vec<(Var, Var)>,
}

impl BoundParams {
    pub fn vars(&self) -> Vec<Var> {
        let mut out = vec![self.encoder];
        out.extend(self.bottleneck.vars());
        out.extend(self.adapter.vars());
        out.extend(self.weighting.vars());
        out.extend(self.plain_heads.iter().flat_map(|&(w, b)| [w, b]));
        out
    }

    /// Inverse of [`BoundParams::vars`] for a model with `plain_heads` plain heads.
    pub fn from_vars(vars: &[Var], plain_heads: usize) -> Result<Self> {
        let expected = 1 + 4 + 4 + 3 + 2 * plain_heads;
        if vars.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "{} parameter handles, expected {expected}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        Ok(BoundParams {
            encoder: next(),
            bottleneck: BottleneckVars {
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            },
            adapter: AdapterVars {
                w_hidden: next(),
                b_hidden: next(),
                w_weight: next(),
                w_bias: next(),
            },
            weighting: WeightVars {
                w_hidden: next(),
                b_hidden: next(),
                w_out: next(),
            },
            plain_heads: (0..plain_heads).map(|_| (next(), next())).collect(),
        })
    }
}

/// A complete model: configuration, vocabulary, registered tasks and weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub tasks: Vec<TaskSpec>,
    pub params: ModelParams,
    pub seed: u64,
}

impl Model {
    pub fn init(config: ModelConfig, vocab: Vocab, tasks: Vec<TaskSpec>, seed: u64) -> Result<Self> {
        config.validate()?;
        if tasks.is_empty() {
            return Err(Error::Config("at least one task is required".into()));
        }
        for t in &tasks {
            t.validate()?;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d_h = config.d_h;
        // Label embeddings come from the shared encoder, so d_t = d_h.
        let d_t = d_h;
        let encoder = EncoderParams::init(vocab.len(), d_h, &mut rng)?;
        let bottleneck = BottleneckParams::init(d_t, config.d_b, &mut rng)?;
        let adapter = AdapterHyperNetParams::init(d_t, config.d_hyp(), d_h, &mut rng);
        let weighting = WeightHyperNetParams::init(d_t, config.d_w, &mut rng);
        let plain_heads = if config.use_hypernet_heads {
            Vec::new()
        } else {
            let bound = 1.0 / (d_h as f64).sqrt();
            tasks
                .iter()
                .map(|t| PlainHead {
                    weight: Tensor::uniform(&[d_h, t.num_classes()], bound, &mut rng),
                    bias: Tensor::zeros(&[t.num_classes()]),
                })
                .collect()
        };
        Ok(Self {
            config,
            vocab,
            tasks,
            params: ModelParams {
                encoder,
                bottleneck,
                adapter,
                weighting,
                plain_heads,
            },
            seed,
        })
    }

    pub fn task_index(&self, name: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| Error::Data(format!("unknown task {name:?}")))
    }

    /// Copy of the model with `extra_labels` appended to task `name`.
    ///
    /// Generated heads simply gain columns. Plain heads get freshly drawn,
    /// untrained columns.
    pub fn with_extra_classes(&self, name: &str, extra_labels: &[String]) -> Result<Self> {
        let ti = self.task_index(name)?;
        let mut out = self.clone();
        out.tasks[ti].labels.extend(extra_labels.iter().cloned());
        out.tasks[ti].validate()?;
        if !self.config.use_hypernet_heads {
            let d_h = self.config.d_h;
            let u = extra_labels.len();
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x0005_eed0_fc01_u64);
            let extra = Tensor::uniform(&[d_h, u], 1.0 / (d_h as f64).sqrt(), &mut rng);
            let head = &self.params.plain_heads[ti];
            let m = head.bias.len();
            let mut w = Vec::with_capacity(d_h * (m + u));
            for r in 0..d_h {
                w.extend_from_slice(head.weight.row(r));
                w.extend_from_slice(extra.row(r));
            }
            let mut b = head.bias.data().to_vec();
            b.extend(std::iter::repeat_n(0.0, u));
            out.params.plain_heads[ti] = PlainHead {
                weight: Tensor::matrix(d_h, m + u, w)?,
                bias: Tensor::vector(b)?,
            };
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ckpt = CheckpointRef {
            format_version: CHECKPOINT_VERSION,
            model: self,
        };
        let text = serde_json::to_string(&ckpt).expect("model serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if ckpt.format_version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ckpt.format_version
            )));
        }
        let model = ckpt.model;
        model.config.validate()?;
        if model.params.tensors().iter().any(|(_, t)| !t.is_finite()) {
            return Err(Error::Data("checkpoint holds non-finite values".into()));
        }
        Ok(model)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format_version: u32,
    model: &'a Model,
}

#[derive(Deserialize)]
struct Checkpoint {
    format_version: u32,
    model: Model,
}

/// Task loss coefficients for one forward pass.
#[derive(Debug, Clone)]
pub enum Alphas {
    /// Softmax of the weight hypernetwork outputs, `[k]`.
    Generated(Var),
    /// Fixed `1/k`.
    Uniform(usize),
}

impl Alphas {
    pub fn values(&self, g: &Graph) -> Vec<f64> {
        match self {
            Alphas::Generated(v) => g.value(*v).data().to_vec(),
            Alphas::Uniform(k) => vec![1.0 / *k as f64; *k],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[batch, m_t]` per task.
    pub logits: Vec<Var>,
    pub alphas: Alphas,
    /// `Z_t` per task, when the configuration needed it.
    pub task_embeddings: Vec<Option<Var>>,
}

/// `Z_t` for one task from its label texts.
pub fn task_embedding(g: &mut Graph, model: &Model, bound: &BoundParams, task: &TaskSpec) -> Result<Var> {
    let t = encode_labels(g, bound.encoder, &model.vocab, &task.labels)?;
    bottleneck(g, t, &bound.bottleneck)
}

/// Runs a batch of chunks (token-id lists) through every task in `tasks`.
pub fn forward(
    g: &mut Graph,
    model: &Model,
    bound: &BoundParams,
    chunks: &[&[usize]],
    tasks: &[TaskSpec],
) -> Result<ForwardOutput> {
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("forward needs at least one task".into()));
    }
    let cfg = &model.config;
    let h = encode_chunks(g, bound.encoder, chunks)?;
    let need_z = cfg.use_hypernet_heads || cfg.use_weight_hypernet;
    let mut logits = Vec::with_capacity(tasks.len());
    let mut zs = Vec::with_capacity(tasks.len());
    let mut betas = Vec::new();
    for task in tasks {
        let ti = model.task_index(&task.name)?;
        let z = if need_z {
            Some(task_embedding(g, model, bound, task)?)
        } else {
            None
        };
        let (weight, bias) = match z {
            Some(z) if cfg.use_hypernet_heads => {
                let head = generate_head(g, z, &bound.adapter)?;
                (head.weight, head.bias)
            }
            _ => {
                let (w, b) = bound.plain_heads[ti];
                if g.shape(b)[0] != task.num_classes() {
                    return Err(Error::Data(format!(
                        "task {} has {} classes but its head has {}",
                        task.name,
                        task.num_classes(),
                        g.shape(b)[0]
                    )));
                }
                (w, b)
            }
        };
        let out = g.matmul(h, weight)?;
        logits.push(g.add_row(out, bias)?);
        if cfg.use_weight_hypernet {
            let z = z.expect("computed above");
            let input = if cfg.detach_weight_input {
                let value = g.value(z).clone();
                g.constant(value)
            } else {
                z
            };
            betas.push(task_weight(g, input, &bound.weighting)?);
        }
        zs.push(z);
    }
    let alphas = if cfg.use_weight_hypernet {
        Alphas::Generated(normalize_weights(g, &betas)?)
    } else {
        Alphas::Uniform(tasks.len())
    };
    Ok(ForwardOutput {
        logits,
        alphas,
        task_embeddings: zs,
    })
}

/// Per-task mean cross-entropy over the batch, `[k]`.
pub fn task_losses(g: &mut Graph, output: &ForwardOutput, gold: &[Vec<usize>]) -> Result<Var> {
    if gold.len() != output.logits.len() {
        return Err(Error::Data(format!(
            "{} gold label columns for {} tasks",
            gold.len(),
            output.logits.len()
        )));
    }
    let losses = output
        .logits
        .iter()
        .zip(gold)
        .map(|(&l, y)| g.cross_entropy(l, y))
        .collect::<Result<Vec<_>>>()?;
    g.concat_rows(&losses)
}

/// `sum_t alpha_t * L_t`; `gold[t][i]` is the class of batch row `i` in task `t`.
pub fn joint_loss(g: &mut Graph, output: &ForwardOutput, gold: &[Vec<usize>]) -> Result<Var> {
    let losses = task_losses(g, output, gold)?;
    let weights = match &output.alphas {
        Alphas::Generated(a) => *a,
        Alphas::Uniform(k) => g.constant(Tensor::vector(vec![1.0 / *k as f64; *k])?),
    };
    let weighted = g.mul(weights, losses)?;
    g.sum(weighted)
}

/// Class probabilities per task, per chunk: `out[t][chunk][class]`.
pub fn predict_proba(model: &Model, chunks: &[&[usize]], tasks: &[TaskSpec]) -> Result<Vec<Vec<Vec<f64>>>> {
    const BATCH: usize = 512;
    let mut out: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(chunks.len()); tasks.len()];
    for batch in chunks.chunks(BATCH) {
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, false);
        let fwd = forward(&mut g, model, &bound, batch, tasks)?;
        for (t, &l) in fwd.logits.iter().enumerate() {
            let v = g.value(l);
            for r in 0..v.rows() {
                out[t].push(softmax_slice(v.row(r)));
            }
        }
    }
    Ok(out)
}

/// Current loss coefficients, without building a training graph.
pub fn current_alphas(model: &Model, tasks: &[TaskSpec]) -> Result<Vec<f64>> {
    if !model.config.use_weight_hypernet {
        return Ok(vec![1.0 / tasks.len() as f64; tasks.len()]);
    }
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g, false);
    let mut betas = Vec::with_capacity(tasks.len());
    for task in tasks {
        let z = task_embedding(&mut g, model, &bound, task)?;
        betas.push(task_weight(&mut g, z, &bound.weighting)?);
    }
    let a = normalize_weights(&mut g, &betas)?;
    Ok(g.value(a).data().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;

    fn tiny_vocab() -> Vocab {
        Vocab::from_texts(["fever cough renal failure sepsis short long stay readmitted home"])
    }

    fn tasks() -> Vec<TaskSpec> {
        vec![
            TaskSpec::new("readmission", vec!["home".into(), "readmitted".into()]).unwrap(),
            TaskSpec::new(
                "diagnosis",
                vec!["renal failure".into(), "sepsis".into(), "fever cough".into()],
            )
            .unwrap(),
        ]
    }

    fn config(wh: bool, heads: bool) -> ModelConfig {
        ModelConfig {
            d_h: 4,
            chunk_len: 4,
            d_b: 2,
            d_hyp: None,
            d_w: 3,
            use_weight_hypernet: wh,
            use_hypernet_heads: heads,
            detach_weight_input: false,
        }
    }

    fn model(wh: bool, heads: bool) -> Model {
        Model::init(config(wh, heads), tiny_vocab(), tasks(), 7).unwrap()
    }

    fn chunks(v: &Vocab) -> Vec<Vec<usize>> {
        vec![v.encode("fever cough sepsis"), v.encode("renal failure stay long")]
    }

    #[test]
    fn config_validation() {
        assert!(ModelConfig {
            d_b: 64,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig {
            d_h: 1,
            d_b: 0,
            ..ModelConfig::default()
        }
        .validate()
        .is_err());
        assert!(ModelConfig::default().validate().is_ok());
    }

    #[test]
    fn zero_adapter_output_gives_uniform_predictions() {
        let mut m = model(true, true);
        m.params.adapter.w_weight = Tensor::zeros(m.params.adapter.w_weight.shape());
        m.params.adapter.w_bias = Tensor::zeros(m.params.adapter.w_bias.shape());
        let c = chunks(&m.vocab);
        let refs: Vec<&[usize]> = c.iter().map(Vec::as_slice).collect();
        let probs = predict_proba(&m, &refs, &m.tasks).unwrap();
        assert!(probs[0].iter().flatten().all(|&p| p == 0.5));
        assert!(probs[1].iter().flatten().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn logits_have_one_column_per_class() {
        let m = model(true, true);
        let c = chunks(&m.vocab);
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let out = forward(&mut g, &m, &b, &[&c[0]], &m.tasks[..1]).unwrap();
        assert_eq!(g.shape(out.logits[0]), &[1, 2]);
        let out = forward(&mut g, &m, &b, &[&c[0], &c[1]], &m.tasks).unwrap();
        assert_eq!(g.shape(out.logits[1]), &[2, 3]);
        for (z, t) in out.task_embeddings.iter().zip(&m.tasks) {
            assert_eq!(g.shape(z.unwrap()), &[t.num_classes(), 4]);
        }
    }

    #[test]
    fn logits_match_hand_chain() {
        // d_h = 2 with hand-set weights: h = mean(embedding rows), W = relu(B(T)) chain.
        let vocab = Vocab::from_texts(["a b"]);
        let tasks = vec![
            TaskSpec::new("x", vec!["a".into(), "b".into()]).unwrap(),
            TaskSpec::new("y", vec!["b".into(), "a b".into()]).unwrap(),
        ];
        let cfg = ModelConfig {
            d_h: 2,
            chunk_len: 4,
            d_b: 1,
            d_hyp: Some(2),
            d_w: 1,
            use_weight_hypernet: false,
            use_hypernet_heads: true,
            detach_weight_input: true,
        };
        let mut m = Model::init(cfg, vocab, tasks, 0).unwrap();
        let p = &mut m.params;
        p.encoder.embedding =
            Tensor::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0], vec![1.0, 2.0], vec![3.0, -1.0]]).unwrap();
        p.bottleneck.w1 = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        p.bottleneck.b1 = Tensor::vector(vec![0.0]).unwrap();
        p.bottleneck.w2 = Tensor::from_rows(&[vec![1.0, -1.0]]).unwrap();
        p.bottleneck.b2 = Tensor::vector(vec![0.5, 0.0]).unwrap();
        p.adapter.w_hidden = Tensor::identity(2);
        p.adapter.b_hidden = Tensor::zeros(&[2]);
        p.adapter.w_weight = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        p.adapter.w_bias = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();

        // Hand chain. Label embeddings: a=[1,2], b=[3,-1], "a b"=[2,0.5].
        // Bottleneck: s = relu(x0+x1); z = [s + 0.5, -s].
        //   a: s=3 -> z=[3.5,-3]; b: s=2 -> [2.5,-2]; ab: s=2.5 -> [3,-2.5]
        // Adapter: hidden = relu(z) -> [z0, 0]; column = [z0, 0]; bias = z0.
        // Chunk "a b": h = [2, 0.5]; logit = 2*z0 + 0 + z0 = 3*z0.
        let expected_x = [3.0 * 3.5, 3.0 * 2.5];
        let expected_y = [3.0 * 2.5, 3.0 * 3.0];
        let ids = m.vocab.encode("a b");
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let out = forward(&mut g, &m, &b, &[&ids], &m.tasks).unwrap();
        for (got, want) in g.value(out.logits[0]).data().iter().zip(expected_x) {
            assert!((got - want).abs() < 1e-12);
        }
        for (got, want) in g.value(out.logits[1]).data().iter().zip(expected_y) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn unknown_task_is_rejected() {
        let m = model(true, true);
        let c = chunks(&m.vocab);
        let other = TaskSpec::new("mortality", vec!["a".into(), "b".into()]).unwrap();
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        assert!(forward(&mut g, &m, &b, &[&c[0]], &[other]).is_err());
    }

    #[test]
    fn joint_loss_examples() {
        // k = 1: plain cross-entropy.
        let m = model(true, true);
        let c = chunks(&m.vocab);
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let out = forward(&mut g, &m, &b, &[&c[0]], &m.tasks[..1]).unwrap();
        let loss = joint_loss(&mut g, &out, &[vec![1]]).unwrap();
        let ce = g.cross_entropy(out.logits[0], &[1]).unwrap();
        assert_eq!(g.value(loss).item(), g.value(ce).item());

        // Uniform alphas over two tasks: (La + Lb) / 2.
        let m = model(false, true);
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let out = forward(&mut g, &m, &b, &[&c[0], &c[1]], &m.tasks).unwrap();
        let gold = vec![vec![0, 1], vec![2, 0]];
        let loss = joint_loss(&mut g, &out, &gold).unwrap();
        let la = g.cross_entropy(out.logits[0], &gold[0]).unwrap();
        let lb = g.cross_entropy(out.logits[1], &gold[1]).unwrap();
        let (la, lb) = (g.value(la).item(), g.value(lb).item());
        assert!((g.value(loss).item() - (la + lb) / 2.0).abs() < 1e-15);
        assert_eq!(g.value(loss).item(), 0.5 * la + 0.5 * lb);
        assert_eq!(out.alphas.values(&g), vec![0.5, 0.5]);

        assert!(joint_loss(&mut g, &out, &[vec![0, 1]]).is_err());
        assert!(joint_loss(&mut g, &out, &[vec![0, 1], vec![3, 0]]).is_err());
    }

    #[test]
    fn joint_loss_at_zero_logits() {
        let vocab = Vocab::from_texts(["a b c d e f g h i j k l"]);
        let ten: Vec<String> = "a b c d e f g h i j".split(' ').map(String::from).collect();
        let tasks = vec![
            TaskSpec::new("two", vec!["k".into(), "l".into()]).unwrap(),
            TaskSpec::new("ten", ten).unwrap(),
        ];
        let cfg = ModelConfig {
            use_weight_hypernet: false,
            ..config(false, true)
        };
        let mut m = Model::init(cfg, vocab, tasks, 1).unwrap();
        m.params.adapter.w_weight = Tensor::zeros(m.params.adapter.w_weight.shape());
        m.params.adapter.w_bias = Tensor::zeros(m.params.adapter.w_bias.shape());
        let ids = m.vocab.encode("a b c");
        let mut g = Graph::new();
        let b = m.params.bind(&mut g, false);
        let out = forward(&mut g, &m, &b, &[&ids], &m.tasks).unwrap();
        let loss = joint_loss(&mut g, &out, &[vec![0], vec![7]]).unwrap();
        let expected = (2f64.ln() + 10f64.ln()) / 2.0;
        assert!((g.value(loss).item() - expected).abs() < 1e-12);

        let probs = predict_proba(&m, &[&ids], &m.tasks).unwrap();
        assert!(probs[1][0].iter().all(|&p| (p - 0.1).abs() < 1e-15));
    }

    #[test]
    fn weight_hypernet_alphas_form_a_distribution() {
        let m = model(true, true);
        let alphas = current_alphas(&m, &m.tasks).unwrap();
        assert!(alphas.iter().all(|&a| a > 0.0));
        assert!((alphas.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let ablated = model(false, true);
        assert_eq!(current_alphas(&ablated, &ablated.tasks).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn baseline_logits_ignore_label_text() {
        let m = model(false, false);
        let c = chunks(&m.vocab);
        let refs: Vec<&[usize]> = c.iter().map(Vec::as_slice).collect();
        let before = predict_proba(&m, &refs, &m.tasks).unwrap();
        let mut permuted = m.tasks.clone();
        permuted[1].labels.reverse();
        let after = predict_proba(&m, &refs, &permuted).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn hypernet_logits_follow_label_permutation() {
        let m = model(true, true);
        let c = chunks(&m.vocab);
        let refs: Vec<&[usize]> = c.iter().map(Vec::as_slice).collect();
        let before = predict_proba(&m, &refs, &m.tasks).unwrap();
        let mut permuted = m.tasks.clone();
        permuted[1].labels.reverse();
        let after = predict_proba(&m, &refs, &permuted).unwrap();
        for (b, a) in before[1].iter().zip(&after[1]) {
            let reversed: Vec<f64> = a.iter().rev().copied().collect();
            for (x, y) in b.iter().zip(&reversed) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!(b != a);
        }
    }

    #[test]
    fn extra_classes_keep_trained_columns() {
        for heads in [true, false] {
            let m = model(false, heads);
            let ext = m
                .with_extra_classes("diagnosis", &["long stay".into(), "renal".into()])
                .unwrap();
            assert_eq!(ext.tasks[1].num_classes(), 5);
            let c = chunks(&m.vocab);
            let mut g = Graph::new();
            let b1 = m.params.bind(&mut g, false);
            let small = forward(&mut g, &m, &b1, &[&c[0]], &m.tasks).unwrap();
            let b2 = ext.params.bind(&mut g, false);
            let large = forward(&mut g, &ext, &b2, &[&c[0]], &ext.tasks).unwrap();
            assert_eq!(g.value(small.logits[1]).data(), &g.value(large.logits[1]).data()[..3]);
        }
        let m = model(true, true);
        assert!(m.with_extra_classes("diagnosis", &["sepsis".into()]).is_err());
        assert!(m.with_extra_classes("nope", &["x".into()]).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut m = model(true, false);
        m.params.encoder.embedding.data_mut()[3] = 0.1 + 0.2;
        m.params.encoder.embedding.data_mut()[4] = f64::MIN_POSITIVE;
        m.params.encoder.embedding.data_mut()[5] = -1.0 / 3.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = Model::load(&path).unwrap();
        assert_eq!(back, m);
        for ((_, a), (_, b)) in m.params.tensors().iter().zip(back.params.tensors()) {
            let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    fn full_model_grad_check(wh: bool, heads: bool) -> f64 {
        let m = model(wh, heads);
        let c = chunks(&m.vocab);
        let gold = vec![vec![1, 0], vec![2, 1]];
        let params: Vec<Tensor> = m.params.tensors().into_iter().map(|(_, t)| t.clone()).collect();
        let template = m.clone();
        let report = grad_check(&params, 1e-5, |g, vars| {
            let bound = BoundParams::from_vars(vars, template.params.plain_heads.len())?;
            let out = forward(g, &template, &bound, &[&c[0], &c[1]], &template.tasks)?;
            joint_loss(g, &out, &gold)
        })
        .unwrap();
        report.max_relative_error
    }

    #[test]
    fn detached_weight_input_blocks_only_the_weighting_path() {
        let mut m = model(true, true);
        m.config.detach_weight_input = true;
        let c = chunks(&m.vocab);
        let gold = vec![vec![1, 0], vec![2, 1]];
        let batch: [&[usize]; 2] = [&c[0], &c[1]];

        let mut g = Graph::new();
        let b = m.params.bind(&mut g, true);
        let out = forward(&mut g, &m, &b, &batch, &m.tasks).unwrap();
        let alphas = out.alphas.values(&g);
        let loss = joint_loss(&mut g, &out, &gold).unwrap();
        g.backward(loss).unwrap();

        // Reference: the same loss with the coefficients frozen as constants.
        let mut r = Graph::new();
        let rb = m.params.bind(&mut r, true);
        let plain = ModelConfig {
            use_weight_hypernet: false,
            ..m.config.clone()
        };
        let frozen = Model {
            config: plain,
            ..m.clone()
        };
        let out = forward(&mut r, &frozen, &rb, &batch, &m.tasks).unwrap();
        let losses = task_losses(&mut r, &out, &gold).unwrap();
        let a = r.constant(Tensor::vector(alphas).unwrap());
        let weighted = r.mul(a, losses).unwrap();
        let ref_loss = r.sum(weighted).unwrap();
        r.backward(ref_loss).unwrap();

        assert_eq!(g.value(loss).item(), r.value(ref_loss).item());
        let heads_only = |v: &BoundParams| {
            let mut out = vec![v.encoder];
            out.extend(v.bottleneck.vars());
            out.extend(v.adapter.vars());
            out
        };
        for (x, y) in heads_only(&b).into_iter().zip(heads_only(&rb)) {
            for (p, q) in g.grad(x).iter().zip(r.grad(y)) {
                assert!((p - q).abs() < 1e-12);
            }
        }
        assert!(b.weighting.vars().iter().any(|&v| g.grad(v).iter().any(|x| *x != 0.0)));
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        for (wh, heads) in [(true, true), (false, true), (true, false), (false, false)] {
            let err = full_model_grad_check(wh, heads);
            assert!(err < 1e-4, "wh={wh} heads={heads}: {err}");
        }
    }
}
