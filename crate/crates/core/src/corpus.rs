//! Turning admission records into chunked, labelled training examples.

use crate::error::{Error, Result};
use crate::synthdata::{AdmissionRecord, Holdout};
use crate::taskcond::TaskSpec;
use crate::textenc::{chunk_document, Vocab};

/// Maps a class index in the full task spec to the model's class index;
/// `None` for classes the model was not trained on.
pub type ClassMap = Vec<Option<usize>>;

/// Selects `names` from the full task list and removes held-out classes from
/// the holdout task. Remaining classes keep their relative order.
pub fn training_tasks(full: &[TaskSpec], names: &[&str], holdout: &Holdout) -> Result<(Vec<TaskSpec>, Vec<ClassMap>)> {
    let mut tasks = Vec::with_capacity(names.len());
    let mut maps = Vec::with_capacity(names.len());
    for &name in names {
        let spec = full
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Data(format!("task spec file has no task {name:?}")))?;
        let held: &[usize] = if spec.name == holdout.task {
            &holdout.classes
        } else {
            &[]
        };
        if let Some(&c) = held.iter().find(|&&c| c >= spec.num_classes()) {
            return Err(Error::Data(format!("held-out class {c} not in task {name}")));
        }
        let mut map = vec![None; spec.num_classes()];
        let mut labels = Vec::new();
        for (c, label) in spec.labels.iter().enumerate() {
            if !held.contains(&c) {
                map[c] = Some(labels.len());
                labels.push(label.clone());
            }
        }
        tasks.push(TaskSpec::new(name, labels)?);
        maps.push(map);
    }
    Ok((tasks, maps))
}

/// Labels of the held-out classes, in holdout order, and the class map onto
/// the trained classes followed by those extra classes.
pub fn extended_class_map(full: &TaskSpec, holdout: &Holdout) -> Result<(Vec<String>, ClassMap)> {
    let (_, maps) = training_tasks(std::slice::from_ref(full), &[&full.name], holdout)?;
    let mut map = maps.into_iter().next().expect("one task");
    let seen = map.iter().flatten().count();
    let mut extra = Vec::with_capacity(holdout.classes.len());
    for (i, &c) in holdout.classes.iter().enumerate() {
        map[c] = Some(seen + i);
        extra.push(full.labels[c].clone());
    }
    Ok((extra, map))
}

/// Vocabulary over the training notes followed by every label text, in
/// first-appearance order.
pub fn build_vocab(train: &[AdmissionRecord], tasks: &[TaskSpec]) -> Vocab {
    let labels = tasks.iter().flat_map(|t| t.labels.iter().map(String::as_str));
    Vocab::from_texts(train.iter().map(|r| r.text.as_str()).chain(labels))
}

/// Chunked examples with per-task gold labels.
#[derive(Debug, Clone, Default)]
pub struct ChunkSet {
    pub chunks: Vec<Vec<usize>>,
    /// Admission (index into `admission_ids`) each chunk came from.
    pub admission: Vec<usize>,
    /// `gold[task][chunk]`.
    pub gold: Vec<Vec<usize>>,
    pub admission_ids: Vec<String>,
    /// `admission_gold[task][admission]`.
    pub admission_gold: Vec<Vec<usize>>,
    /// Records dropped because a gold class is outside the model's classes.
    pub skipped: usize,
}

impl ChunkSet {
    pub fn build(
        records: &[AdmissionRecord],
        vocab: &Vocab,
        tasks: &[TaskSpec],
        maps: &[ClassMap],
        chunk_len: usize,
    ) -> Result<Self> {
        if tasks.len() != maps.len() {
            return Err(Error::InvalidArgument("one class map per task required".into()));
        }
        let mut set = ChunkSet {
            gold: vec![Vec::new(); tasks.len()],
            admission_gold: vec![Vec::new(); tasks.len()],
            ..Default::default()
        };
        'records: for r in records {
            let mut gold = Vec::with_capacity(tasks.len());
            for (task, map) in tasks.iter().zip(maps) {
                let raw = r.gold(&task.name)?;
                match map.get(raw) {
                    Some(Some(c)) => gold.push(*c),
                    Some(None) => {
                        set.skipped += 1;
                        continue 'records;
                    }
                    None => {
                        return Err(Error::Data(format!(
                            "admission {}: {} class {raw} outside the {} classes of the task spec",
                            r.id,
                            task.name,
                            map.len()
                        )))
                    }
                }
            }
            let adm = set.admission_ids.len();
            let ids = vocab.encode(&r.text);
            for chunk in chunk_document(&ids, chunk_len, adm)? {
                set.chunks.push(chunk.token_ids);
                set.admission.push(adm);
                for (t, &c) in gold.iter().enumerate() {
                    set.gold[t].push(c);
                }
            }
            for (t, &c) in gold.iter().enumerate() {
                set.admission_gold[t].push(c);
            }
            set.admission_ids.push(r.id.clone());
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn num_admissions(&self) -> usize {
        self.admission_ids.len()
    }

    pub fn chunk_refs(&self) -> Vec<&[usize]> {
        self.chunks.iter().map(Vec::as_slice).collect()
    }

    /// Subset holding the first `n` admissions.
    pub fn first_admissions(&self, n: usize) -> Self {
        let n = n.min(self.num_admissions());
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.admission[i] < n).collect();
        ChunkSet {
            chunks: keep.iter().map(|&i| self.chunks[i].clone()).collect(),
            admission: keep.iter().map(|&i| self.admission[i]).collect(),
            gold: self.gold.iter().map(|g| keep.iter().map(|&i| g[i]).collect()).collect(),
            admission_ids: self.admission_ids[..n].to_vec(),
            admission_gold: self.admission_gold.iter().map(|g| g[..n].to_vec()).collect(),
            skipped: 0,
        }
    }
}
