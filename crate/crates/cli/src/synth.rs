use std::fs;
use std::path::Path;

use serde_json::json;
use taskhyper::synthdata::{generate_corpus, write_jsonl, GeneratorConfig, Split};
use taskhyper::taskcond::write_task_specs;
use taskhyper::Error;

use crate::data::{HOLDOUT_FILE, TASKSPEC_FILE};
use crate::manifest::{write_text, RunManifest};
use crate::{Result, SynthArgs};

pub const GENERATOR_FILE: &str = "generator.toml";

pub fn run(args: &SynthArgs, out: &Path) -> Result<()> {
    let config = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            GeneratorConfig::from_toml(&text)?
        }
        None => GeneratorConfig::default(),
    };
    let inputs: Vec<_> = args.config.iter().cloned().collect();
    let manifest = RunManifest::new(
        "synth",
        out,
        inputs.clone(),
        vec![config.seed],
        json!({ "generator": config }),
        &inputs,
    )?;
    manifest.write()?;

    let corpus = generate_corpus(&config)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        write_jsonl(&corpus.split(split), &out.join(split.file_name()))?;
    }
    write_task_specs(&out.join(TASKSPEC_FILE), &corpus.tasks)?;
    corpus.holdout.write(&out.join(HOLDOUT_FILE))?;
    write_text(
        out,
        GENERATOR_FILE,
        &toml::to_string(&config).expect("config serializes"),
    )?;
    eprintln!(
        "synth: {} admissions, {} held-out {} classes -> {}",
        corpus.records.len(),
        corpus.holdout.classes.len(),
        corpus.holdout.task,
        out.display()
    );
    Ok(())
}
