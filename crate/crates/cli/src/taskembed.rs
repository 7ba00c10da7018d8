use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;
use taskhyper::evalkit::{cosine_similarity, nearest_neighbors, pca2, pca_csv, task_vectors};
use taskhyper::mtmodel::{task_embedding, Model};
use taskhyper::numcore::Graph;
use taskhyper::Result as CoreResult;

use crate::manifest::{write_text, RunManifest};
use crate::{Result, TaskembedArgs};

pub const TASKEMBED_FILE: &str = "taskembed.csv";
pub const CLASSES_FILE: &str = "classes.csv";
pub const NEIGHBORS_FILE: &str = "neighbors.csv";

/// Rows of `Z_t` for every class of every task, named `task/label`.
fn class_vectors(model: &Model) -> CoreResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut g = Graph::new();
    let bound = model.params.bind(&mut g, false);
    let mut names = Vec::new();
    let mut rows = Vec::new();
    for task in &model.tasks {
        let z = task_embedding(&mut g, model, &bound, task)?;
        for (c, label) in task.labels.iter().enumerate() {
            names.push(format!("{}/{label}", task.name));
            rows.push(g.value(z).row(c).to_vec());
        }
    }
    Ok((names, rows))
}

pub fn run(args: &TaskembedArgs, out: &Path) -> Result<()> {
    let manifest = RunManifest::new(
        "taskembed",
        out,
        Vec::new(),
        Vec::new(),
        json!({ "checkpoint": args.checkpoint, "classes": args.classes }),
        std::slice::from_ref(&args.checkpoint),
    )?;
    manifest.write()?;

    let model = Model::load(&args.checkpoint)?;
    let names: Vec<String> = model.tasks.iter().map(|t| t.name.clone()).collect();
    let vectors = task_vectors(&model, &model.tasks)?;
    write_text(out, TASKEMBED_FILE, &pca_csv(&names, &pca2(&vectors)?))?;

    let mut csv = String::from("task,nearest,cosine\n");
    for (i, &j) in nearest_neighbors(&vectors)?.iter().enumerate() {
        let cos = cosine_similarity(&vectors[i], &vectors[j])?;
        writeln!(csv, "{},{},{cos}", names[i], names[j]).unwrap();
        eprintln!("taskembed: {:<12} nearest {:<12} cos {cos:.4}", names[i], names[j]);
    }
    write_text(out, NEIGHBORS_FILE, &csv)?;

    if args.classes {
        let (labels, rows) = class_vectors(&model)?;
        write_text(out, CLASSES_FILE, &pca_csv(&labels, &pca2(&rows)?))?;
    }
    Ok(())
}
