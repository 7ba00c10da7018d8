use std::path::{Path, PathBuf};

use taskhyper::corpus::{training_tasks, ClassMap};
use taskhyper::synthdata::{read_jsonl, AdmissionRecord, Holdout, Split, ADMISSION_TYPE, DIAGNOSIS, LOS, READMISSION};
use taskhyper::taskcond::{read_task_specs, TaskSpec};
use taskhyper::{Error, Result};

pub const TASKSPEC_FILE: &str = "taskspec.json";
pub const HOLDOUT_FILE: &str = "holdout.json";

/// A corpus directory: split JSONL files, task specs and the holdout list.
#[derive(Debug, Clone)]
pub struct DataDir {
    pub root: PathBuf,
    pub tasks: Vec<TaskSpec>,
    pub holdout: Holdout,
}

impl DataDir {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Data(format!("data directory {} not found", root.display())));
        }
        let tasks = read_task_specs(&root.join(TASKSPEC_FILE))?;
        let holdout_path = root.join(HOLDOUT_FILE);
        let holdout = if holdout_path.exists() {
            Holdout::read(&holdout_path)?
        } else {
            Holdout::none()
        };
        Ok(Self {
            root: root.to_path_buf(),
            tasks,
            holdout,
        })
    }

    pub fn split_path(&self, split: Split) -> PathBuf {
        self.root.join(split.file_name())
    }

    pub fn records(&self, split: Split) -> Result<Vec<AdmissionRecord>> {
        read_jsonl(&self.split_path(split))
    }

    /// Files whose content determines a run's outputs.
    pub fn inputs(&self, splits: &[Split]) -> Vec<PathBuf> {
        let mut out = vec![self.root.join(TASKSPEC_FILE)];
        let holdout = self.root.join(HOLDOUT_FILE);
        if holdout.exists() {
            out.push(holdout);
        }
        out.extend(splits.iter().map(|&s| self.split_path(s)));
        out
    }

    pub fn training_tasks(&self, names: &[&str]) -> Result<(Vec<TaskSpec>, Vec<ClassMap>)> {
        training_tasks(&self.tasks, names, &self.holdout)
    }

    pub fn task(&self, name: &str) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Data(format!("task spec file has no task {name:?}")))
    }
}

pub fn task_names(with_admission_type: bool) -> Vec<&'static str> {
    let mut names = vec![READMISSION, DIAGNOSIS, LOS];
    if with_admission_type {
        names.push(ADMISSION_TYPE);
    }
    names
}
