use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use taskhyper::mtmodel::{forward, joint_loss, BoundParams, Model, ModelConfig};
use taskhyper::numcore::{grad_check_with, Graph, Tensor};
use taskhyper::taskcond::{bottleneck, TaskSpec};
use taskhyper::textenc::{encode_labels, Vocab};
use taskhyper::{Error, Result as CoreResult};

use crate::manifest::{write_text, RunManifest};
use crate::{CliError, GradcheckArgs, Result};

pub const GRADCHECK_FILE: &str = "gradcheck.csv";
const JITTER: f64 = 1.0;
const KINK_MARGIN: f64 = 1e-3;
const MAX_DRAWS: usize = 10_000;

const NOTES: [&str; 3] = [
    "fever cough chest pain admitted emergency",
    "renal failure sepsis long stay elective",
    "home discharge short stay readmitted urgent",
];

fn tiny_tasks(k: usize) -> Vec<TaskSpec> {
    let specs: [(&str, &[&str]); 4] = [
        ("readmission", &["home discharge", "readmitted"]),
        ("diagnosis", &["renal failure", "sepsis", "chest pain"]),
        ("los", &["short stay", "long stay", "stay"]),
        ("admtype", &["emergency", "elective", "urgent"]),
    ];
    specs[..k]
        .iter()
        .map(|(name, labels)| TaskSpec::new(*name, labels.iter().map(|l| l.to_string()).collect()).expect("valid task"))
        .collect()
}

/// Which model components a variant's loss depends on.
fn components(config: &ModelConfig) -> Vec<&'static str> {
    let mut out = vec!["encoder"];
    if config.use_hypernet_heads || config.use_weight_hypernet {
        out.push("bottleneck");
    }
    if config.use_hypernet_heads {
        out.push("adapter");
    } else {
        out.push("heads");
    }
    if config.use_weight_hypernet {
        out.push("weighting");
    }
    out
}

/// Component name of each tensor in `ModelParams::tensors` order.
fn tensor_components(model: &Model) -> Vec<&'static str> {
    let p = &model.params;
    let mut out = vec!["encoder"];
    out.extend(p.bottleneck.tensors().iter().map(|_| "bottleneck"));
    out.extend(p.adapter.tensors().iter().map(|_| "adapter"));
    out.extend(p.weighting.tensors().iter().map(|_| "weighting"));
    out.extend(p.plain_heads.iter().flat_map(|_| ["heads", "heads"]));
    out
}

/// Pre-activations of every ReLU for one task: bottleneck `[m, d_b]`,
/// adapter `[m, d_hyp]` and weight hypernetwork `[1, d_w]`.
fn pre_activations(g: &mut Graph, model: &Model, bound: &BoundParams, task: &TaskSpec) -> CoreResult<[Tensor; 3]> {
    let t = encode_labels(g, bound.encoder, &model.vocab, &task.labels)?;
    let b = g.matmul(t, bound.bottleneck.w1)?;
    let b = g.add_row(b, bound.bottleneck.b1)?;
    let z = bottleneck(g, t, &bound.bottleneck)?;
    let a = g.matmul(z, bound.adapter.w_hidden)?;
    let a = g.add_row(a, bound.adapter.b_hidden)?;
    let pooled = g.mean_rows(z)?;
    let d_t = g.shape(pooled)[0];
    let pooled = g.reshape(pooled, &[1, d_t])?;
    let w = g.matmul(pooled, bound.weighting.w_hidden)?;
    let w = g.add_row(w, bound.weighting.b_hidden)?;
    Ok([g.value(b).clone(), g.value(a).clone(), g.value(w).clone()])
}

/// Every hidden unit is either inactive everywhere or active on some but not
/// all rows of at least one group.
fn no_shared_units(groups: &[&Tensor]) -> bool {
    let units = groups[0].cols();
    (0..units).all(|j| {
        let active = |t: &Tensor, r: usize| t.row(r)[j] > 0.0;
        let any = groups.iter().any(|t| (0..t.rows()).any(|r| active(t, r)));
        let mixed = groups.iter().any(|t| {
            let n = (0..t.rows()).filter(|&r| active(t, r)).count();
            n > 0 && n < t.rows()
        });
        !any || mixed
    })
}

/// Whether central differences can resolve every gradient component at
/// `model`'s parameters.
///
/// Away from it, two things defeat them: ReLU inputs within a step of the
/// kink, and hidden units active on every class row of a task (or on every
/// task), whose bias then shifts all logits (or all task weights) equally.
/// Such a gradient is exactly zero, but its finite difference is one ulp of
/// the loss over `2 eps`, ~1e-11, a 1e-3 relative error under the 1e-8 floor.
fn is_generic(model: &Model) -> CoreResult<bool> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g, false);
    let mut pre = Vec::with_capacity(model.tasks.len());
    for task in &model.tasks {
        pre.push(pre_activations(&mut g, model, &bound, task)?);
    }
    let cfg = &model.config;
    let layers = [
        cfg.use_hypernet_heads || cfg.use_weight_hypernet,
        cfg.use_hypernet_heads,
        cfg.use_weight_hypernet,
    ];
    let clear_of_kinks = pre.iter().all(|p| {
        p.iter()
            .zip(layers)
            .all(|(t, used)| !used || t.data().iter().all(|x| x.abs() > KINK_MARGIN))
    });
    let adapter: Vec<&Tensor> = pre.iter().map(|p| &p[1]).collect();
    let weighting = Tensor::from_rows(&pre.iter().map(|p| p[2].row(0).to_vec()).collect::<Vec<_>>())?;
    Ok(clear_of_kinks
        && (!cfg.use_hypernet_heads || no_shared_units(&adapter))
        && (!cfg.use_weight_hypernet || no_shared_units(&[&weighting])))
}

/// `base` with unit-scale noise added to every parameter, redrawn until the
/// point is generic. Zero-initialized biases would otherwise put whole rows
/// exactly on ReLU kinks, and the small initial head scale leaves upstream
/// gradients near the finite-difference noise floor.
fn generic_point(base: &Model, seed: u64) -> CoreResult<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667);
    for _ in 0..MAX_DRAWS {
        let mut model = base.clone();
        for (_, t) in model.params.tensors_mut() {
            let noise = Tensor::uniform(t.shape(), JITTER, &mut rng);
            for (x, n) in t.data_mut().iter_mut().zip(noise.data()) {
                *x += n;
            }
        }
        if is_generic(&model)? {
            return Ok(model);
        }
    }
    Err(Error::InvalidArgument(format!(
        "no generic evaluation point in {MAX_DRAWS} draws; try another seed"
    )))
}

/// Worst relative error per component for one model variant.
fn check_variant(args: &GradcheckArgs, wh: bool, heads: bool) -> Result<Vec<(&'static str, f64)>> {
    let config = ModelConfig {
        d_h: args.d_h,
        chunk_len: 3,
        d_b: args.d_b,
        d_hyp: None,
        d_w: 3,
        use_weight_hypernet: wh,
        use_hypernet_heads: heads,
        // The check covers the fully connected graph.
        detach_weight_input: false,
    };
    let tasks = tiny_tasks(args.tasks as usize);
    let labels = tasks.iter().flat_map(|t| t.labels.iter().map(String::as_str));
    let vocab = Vocab::from_texts(NOTES.iter().copied().chain(labels));
    let base = Model::init(config, vocab, tasks, args.seed)?;
    let model = generic_point(&base, args.seed)?;
    let chunks: Vec<Vec<usize>> = NOTES.iter().map(|n| model.vocab.encode(n)[..3].to_vec()).collect();
    let refs: Vec<&[usize]> = chunks.iter().map(Vec::as_slice).collect();
    let gold: Vec<Vec<usize>> = model
        .tasks
        .iter()
        .map(|t| (0..refs.len()).map(|i| i % t.num_classes()).collect())
        .collect();
    let params: Vec<Tensor> = model.params.tensors().into_iter().map(|(_, t)| t.clone()).collect();
    let plain = model.params.plain_heads.len();
    let fault = args.inject_fault;
    let report = grad_check_with(
        &params,
        args.eps,
        |g, vars| {
            let bound = BoundParams::from_vars(vars, plain)?;
            let out = forward(g, &model, &bound, &refs, &model.tasks)?;
            joint_loss(g, &out, &gold)
        },
        |g| {
            if fault {
                g.corrupt_matmul_backward();
            }
        },
    )?;
    let names = tensor_components(&model);
    Ok(components(&model.config)
        .into_iter()
        .map(|c| {
            let worst = names
                .iter()
                .zip(&report.per_param)
                .filter(|(n, _)| **n == c)
                .map(|(_, e)| *e)
                .fold(0.0, f64::max);
            (c, worst)
        })
        .collect())
}

pub fn run(args: &GradcheckArgs, out: &Path) -> Result<()> {
    let manifest = RunManifest::new(
        "gradcheck",
        out,
        Vec::new(),
        vec![args.seed],
        json!({
            "tasks": args.tasks,
            "d_h": args.d_h,
            "d_b": args.d_b,
            "eps": args.eps,
            "tolerance": args.tolerance,
            "inject_fault": args.inject_fault,
        }),
        &[],
    )?;
    manifest.write()?;

    let mut csv = String::from("variant,component,max_relative_error\n");
    let mut worst = 0.0f64;
    for (variant, wh, heads) in [
        ("hypernet", true, true),
        ("hypernet-no-wh", false, true),
        ("baseline", false, false),
    ] {
        for (component, err) in check_variant(args, wh, heads)? {
            writeln!(csv, "{variant},{component},{err:e}").unwrap();
            eprintln!("gradcheck: {variant:<15} {component:<10} {err:.3e}");
            worst = worst.max(err);
        }
    }
    write_text(out, GRADCHECK_FILE, &csv)?;
    if worst > args.tolerance || !worst.is_finite() {
        return Err(CliError::GradCheck {
            worst,
            tolerance: args.tolerance,
        });
    }
    eprintln!("gradcheck: max relative error {worst:.3e} <= {:e}", args.tolerance);
    Ok(())
}
