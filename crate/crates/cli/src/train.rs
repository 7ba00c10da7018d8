use std::fs;
use std::path::Path;
use std::time::Instant;

use serde_json::json;
use taskhyper::corpus::{build_vocab, ChunkSet};
use taskhyper::evalkit::{evaluate, summarize, summary_csv, Aggregation, Mode};
use taskhyper::mtmodel::{Model, ModelConfig};
use taskhyper::synthdata::Split;
use taskhyper::trainer::{alpha_csv, history_csv, train, TrainConfig};
use taskhyper::Error;

use crate::data::{task_names, DataDir};
use crate::manifest::{write_text, RunManifest};
use crate::{Result, TrainArgs};

pub const MODEL_FILE: &str = "model.json";
pub const ALPHA_FILE: &str = "alphas.csv";
pub const HISTORY_FILE: &str = "history.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

/// Name used in the `method` column of metric CSVs.
pub fn method_name(config: &ModelConfig) -> &'static str {
    match (config.use_hypernet_heads, config.use_weight_hypernet) {
        (true, true) => "hypernet",
        (true, false) => "hypernet-no-wh",
        (false, _) => "baseline",
    }
}

fn effective_config(args: &TrainArgs) -> Result<TrainConfig> {
    if args.no_weight_hypernet && args.baseline_heads {
        return Err(Error::Config(
            "--baseline-heads already fixes uniform task weights; drop --no-weight-hypernet".into(),
        )
        .into());
    }
    let mut config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    config.with_admission_type |= args.with_admission_type;
    if args.no_weight_hypernet {
        config.model.use_weight_hypernet = false;
    }
    if args.baseline_heads {
        config.model.use_hypernet_heads = false;
        config.model.use_weight_hypernet = false;
    }
    if args.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()).into());
    }
    config.validate()?;
    Ok(config)
}

pub fn run(args: &TrainArgs, out: &Path) -> Result<()> {
    let config = effective_config(args)?;
    let data = DataDir::open(&args.data)?;
    let mut inputs = data.inputs(&[Split::Train, Split::Val, Split::Test]);
    inputs.extend(args.config.iter().cloned());
    let method = method_name(&config.model);
    let manifest = RunManifest::new(
        "train",
        out,
        args.config.iter().cloned().collect(),
        args.seeds.clone(),
        json!({ "method": method, "train": config }),
        &inputs,
    )?;
    manifest.write()?;

    let names = task_names(config.with_admission_type);
    let (tasks, maps) = data.training_tasks(&names)?;
    let train_records = data.records(Split::Train)?;
    let vocab = build_vocab(&train_records, &data.tasks);
    let chunk_len = config.model.chunk_len;
    let train_set = ChunkSet::build(&train_records, &vocab, &tasks, &maps, chunk_len)?;
    let val_set = ChunkSet::build(&data.records(Split::Val)?, &vocab, &tasks, &maps, chunk_len)?;
    let test_set = ChunkSet::build(&data.records(Split::Test)?, &vocab, &tasks, &maps, chunk_len)?;
    eprintln!(
        "train: {method}, {} tasks, {} train / {} val / {} test chunks, vocab {}",
        tasks.len(),
        train_set.len(),
        val_set.len(),
        test_set.len(),
        vocab.len()
    );

    let mut reports = Vec::with_capacity(args.seeds.len());
    for &seed in &args.seeds {
        let started = Instant::now();
        let dir = out.join(format!("seed{seed}"));
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let cfg = TrainConfig { seed, ..config.clone() };
        let model = Model::init(cfg.model.clone(), vocab.clone(), tasks.clone(), seed)?;
        let (best, trace) = train(model, &train_set, &val_set, &tasks, &cfg)?;
        best.save(&dir.join(MODEL_FILE))?;
        if cfg.model.use_weight_hypernet {
            write_text(&dir, ALPHA_FILE, &alpha_csv(&trace)?)?;
        }
        write_text(&dir, HISTORY_FILE, &history_csv(&trace))?;
        let report = evaluate(
            &best,
            &test_set,
            &tasks,
            &[Mode::Progressive, Mode::Ultimate],
            Aggregation::Mean,
        )?;
        write_text(
            &dir,
            SUMMARY_FILE,
            &summary_csv(&summarize(method, std::slice::from_ref(&report))?),
        )?;
        eprintln!(
            "train: seed {seed}: {} epochs (best {}{}), {:.1}s",
            trace.epoch_val_loss.len(),
            trace.best_epoch,
            if trace.stopped_early { ", stopped early" } else { "" },
            started.elapsed().as_secs_f64()
        );
        reports.push(report);
    }
    write_text(out, SUMMARY_FILE, &summary_csv(&summarize(method, &reports)?))?;
    eprintln!("train: wrote {}", out.display());
    Ok(())
}
