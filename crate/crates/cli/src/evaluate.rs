use std::path::{Path, PathBuf};

use serde_json::json;
use taskhyper::corpus::ChunkSet;
use taskhyper::evalkit::{evaluate, summarize, summarize_zero_shot, summary_csv, zero_shot_eval, Aggregation};
use taskhyper::mtmodel::Model;
use taskhyper::synthdata::Split;
use taskhyper::Error;

use crate::data::DataDir;
use crate::manifest::{write_text, RunManifest};
use crate::train::method_name;
use crate::{EvalArgs, Result, ZeroshotArgs};

pub const METRICS_FILE: &str = "metrics.csv";
pub const ZEROSHOT_FILE: &str = "zeroshot.csv";

fn load_all(paths: &[PathBuf]) -> Result<Vec<Model>> {
    let models = paths
        .iter()
        .map(|p| Model::load(p))
        .collect::<taskhyper::Result<Vec<_>>>()?;
    let method = method_name(&models[0].config);
    if models.iter().any(|m| method_name(&m.config) != method) {
        return Err(Error::Config("checkpoints mix model variants; evaluate them separately".into()).into());
    }
    Ok(models)
}

pub fn run_eval(args: &EvalArgs, out: &Path) -> Result<()> {
    let data = DataDir::open(&args.data)?;
    let mut inputs = args.checkpoint.clone();
    inputs.extend(data.inputs(&[Split::Test]));
    let modes = args.mode.modes();
    let how = Aggregation::from(args.aggregation);
    let manifest = RunManifest::new(
        "eval",
        out,
        Vec::new(),
        Vec::new(),
        json!({
            "checkpoints": args.checkpoint,
            "modes": modes.iter().map(|m| m.name()).collect::<Vec<_>>(),
            "aggregation": format!("{how:?}").to_lowercase(),
        }),
        &inputs,
    )?;
    manifest.write()?;

    let models = load_all(&args.checkpoint)?;
    let records = data.records(Split::Test)?;
    let mut reports = Vec::with_capacity(models.len());
    for (model, path) in models.iter().zip(&args.checkpoint) {
        let names: Vec<&str> = model.tasks.iter().map(|t| t.name.as_str()).collect();
        let (tasks, maps) = data.training_tasks(&names)?;
        if tasks != model.tasks {
            return Err(Error::Data(format!(
                "{}: checkpoint task labels differ from the data directory's task specs",
                path.display()
            ))
            .into());
        }
        let set = ChunkSet::build(&records, &model.vocab, &tasks, &maps, model.config.chunk_len)?;
        if set.is_empty() {
            return Err(Error::Data("test split has no scorable admissions".into()).into());
        }
        reports.push(evaluate(model, &set, &tasks, &modes, how)?);
        eprintln!(
            "eval: {} ({} admissions, {} chunks)",
            path.display(),
            set.num_admissions(),
            set.len()
        );
    }
    let rows = summarize(method_name(&models[0].config), &reports)?;
    write_text(out, METRICS_FILE, &summary_csv(&rows))?;
    eprintln!("eval: wrote {}", out.join(METRICS_FILE).display());
    Ok(())
}

pub fn run_zeroshot(args: &ZeroshotArgs, out: &Path) -> Result<()> {
    let data = DataDir::open(&args.data)?;
    let mut inputs = args.checkpoint.clone();
    inputs.extend(data.inputs(&[Split::Test]));
    let how = Aggregation::from(args.aggregation);
    let manifest = RunManifest::new(
        "zeroshot",
        out,
        Vec::new(),
        Vec::new(),
        json!({
            "checkpoints": args.checkpoint,
            "aggregation": format!("{how:?}").to_lowercase(),
            "holdout": data.holdout,
        }),
        &inputs,
    )?;
    manifest.write()?;

    if data.holdout.classes.is_empty() {
        return Err(Error::Data("holdout list is empty; nothing to evaluate zero-shot".into()).into());
    }
    let models = load_all(&args.checkpoint)?;
    let full_task = data.task(&data.holdout.task)?;
    let records = data.records(Split::Test)?;
    let mut reports = Vec::with_capacity(models.len());
    for (model, path) in models.iter().zip(&args.checkpoint) {
        let r = zero_shot_eval(model, full_task, &data.holdout, &records, how)?;
        eprintln!(
            "zeroshot: {}: unseen AUC {:.4} (chunks) / {:.4} (admissions), {} admissions",
            path.display(),
            r.progressive_auc,
            r.ultimate_auc,
            r.admissions
        );
        reports.push(r);
    }
    let rows = summarize_zero_shot(&full_task.name, method_name(&models[0].config), &reports)?;
    write_text(out, ZEROSHOT_FILE, &summary_csv(&rows))?;
    Ok(())
}
