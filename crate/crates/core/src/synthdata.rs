//! Synthetic admission corpus with planted label signal, and the JSONL
//! record format shared with real ingested data.
//!
//! Each diagnosis label is a unique combination of concept words drawn from a
//! shared concept vocabulary, and every note repeats its diagnosis's concept
//! words. Held-out diagnoses are recombinations of concepts that also occur in
//! trained labels, which is what lets a label-text-conditioned model score
//! them.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taskcond::TaskSpec;
use crate::textenc::tokenize;

pub const READMISSION: &str = "readmission";
pub const DIAGNOSIS: &str = "diagnosis";
pub const LOS: &str = "los";
pub const ADMISSION_TYPE: &str = "admtype";

pub const LOS_BUCKETS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdmissionType {
    Emergency,
    Elective,
    Urgent,
}

impl AdmissionType {
    pub const ALL: [AdmissionType; 3] = [Self::Emergency, Self::Elective, Self::Urgent];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn word(self) -> &'static str {
        match self {
            Self::Emergency => "emergency",
            Self::Elective => "elective",
            Self::Urgent => "urgent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.jsonl",
            Split::Val => "val.jsonl",
            Split::Test => "test.jsonl",
        }
    }
}

/// One admission: a note plus a gold label for every task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmissionRecord {
    pub id: String,
    pub text: String,
    pub readmission: u8,
    pub admission_type: AdmissionType,
    pub diagnosis: usize,
    pub los_bucket: usize,
    pub split: Split,
}

impl AdmissionRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.readmission > 1 {
            return Err(format!("readmission must be 0 or 1, got {}", self.readmission));
        }
        if self.los_bucket >= LOS_BUCKETS {
            return Err(format!("los_bucket {} outside [0, {LOS_BUCKETS})", self.los_bucket));
        }
        Ok(())
    }

    /// Gold class for a task, by task name.
    pub fn gold(&self, task: &str) -> Result<usize> {
        match task {
            READMISSION => Ok(self.readmission as usize),
            DIAGNOSIS => Ok(self.diagnosis),
            LOS => Ok(self.los_bucket),
            ADMISSION_TYPE => Ok(self.admission_type.index()),
            other => Err(Error::Data(format!("records carry no label for task {other:?}"))),
        }
    }
}

/// Ten length-of-stay buckets: under a day, one per day for days 1-7,
/// 8 to 14 days, and two weeks or more.
pub fn bucket_los(stay_days: f64) -> Result<usize> {
    if !stay_days.is_finite() || stay_days < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "length of stay must be a non-negative number of days, got {stay_days}"
        )));
    }
    Ok(match stay_days {
        d if d < 1.0 => 0,
        d if d < 8.0 => d.floor() as usize,
        d if d < 14.0 => 8,
        _ => 9,
    })
}

pub fn write_jsonl(records: &[AdmissionRecord], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<AdmissionRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.into(),
            line: i + 1,
            message,
        };
        let record: AdmissionRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        record.validate().map_err(parse_err)?;
        records.push(record);
    }
    Ok(records)
}

/// Diagnosis classes withheld from training gold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Holdout {
    pub task: String,
    pub classes: Vec<usize>,
}

impl Holdout {
    pub fn none() -> Self {
        Self {
            task: DIAGNOSIS.into(),
            classes: Vec::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.into(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("holdout serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub seed: u64,
    pub num_diagnoses: usize,
    pub concepts_per_label: usize,
    pub concept_vocab: usize,
    pub noise_vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub noise_fraction: f64,
    pub holdout_fraction: f64,
    pub num_admissions: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub readmission_rate: f64,
    /// Copies of each readmission / admission-type marker per note.
    pub marker_repeats: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_diagnoses: 50,
            concepts_per_label: 3,
            concept_vocab: 30,
            noise_vocab: 400,
            min_len: 40,
            max_len: 120,
            noise_fraction: 0.3,
            holdout_fraction: 0.2,
            num_admissions: 2600,
            val_fraction: 0.1154,
            test_fraction: 0.1154,
            readmission_rate: 0.4,
            marker_repeats: 2,
        }
    }
}

impl GeneratorConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} must be in [0, 1)")))
            }
        };
        frac("noise_fraction", self.noise_fraction)?;
        frac("holdout_fraction", self.holdout_fraction)?;
        frac("val_fraction", self.val_fraction)?;
        frac("test_fraction", self.test_fraction)?;
        if !(self.readmission_rate > 0.0 && self.readmission_rate < 1.0) {
            return Err(Error::Config("readmission_rate must be in (0, 1)".into()));
        }
        if self.val_fraction + self.test_fraction >= 1.0 {
            return Err(Error::Config("val + test fractions leave no training data".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config("need 0 < min_len <= max_len".into()));
        }
        if self.concepts_per_label == 0 || self.concept_vocab < self.concepts_per_label {
            return Err(Error::Config("concept vocabulary smaller than a label".into()));
        }
        if self.noise_fraction > 0.0 && self.noise_vocab == 0 {
            return Err(Error::Config("noise requested with an empty noise vocabulary".into()));
        }
        if self.num_diagnoses < 2 {
            return Err(Error::Config("need at least 2 diagnoses".into()));
        }
        if self.marker_repeats == 0 {
            return Err(Error::Config("marker_repeats must be at least 1".into()));
        }
        let combos = binomial(self.concept_vocab, self.concepts_per_label);
        if combos < self.num_diagnoses as f64 {
            return Err(Error::Config(format!(
                "{} diagnoses requested but only {combos} concept combinations exist",
                self.num_diagnoses
            )));
        }
        let seen = self.num_diagnoses - self.num_holdout();
        if seen < 2 {
            return Err(Error::Config("holdout leaves fewer than 2 trainable diagnoses".into()));
        }
        if self.num_train() < seen {
            return Err(Error::Config(format!(
                "{} training admissions cannot cover {seen} diagnoses",
                self.num_train()
            )));
        }
        Ok(())
    }

    pub fn num_holdout(&self) -> usize {
        (self.holdout_fraction * self.num_diagnoses as f64).round() as usize
    }

    fn num_val(&self) -> usize {
        (self.val_fraction * self.num_admissions as f64).round() as usize
    }

    fn num_test(&self) -> usize {
        (self.test_fraction * self.num_admissions as f64).round() as usize
    }

    fn num_train(&self) -> usize {
        self.num_admissions.saturating_sub(self.num_val() + self.num_test())
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

const CONCEPT_WORDS: [&str; 40] = [
    "acute",
    "chronic",
    "renal",
    "cardiac",
    "pulmonary",
    "hepatic",
    "failure",
    "infection",
    "sepsis",
    "pneumonia",
    "embolism",
    "hemorrhage",
    "stroke",
    "diabetes",
    "hypertension",
    "fracture",
    "obstruction",
    "anemia",
    "arrhythmia",
    "ischemia",
    "edema",
    "insufficiency",
    "syndrome",
    "neoplasm",
    "ulcer",
    "abscess",
    "cirrhosis",
    "pancreatitis",
    "respiratory",
    "coronary",
    "artery",
    "disease",
    "valve",
    "bowel",
    "urinary",
    "tract",
    "thrombosis",
    "shock",
    "lesion",
    "trauma",
];

const SYLLABLES: [&str; 10] = ["ka", "lo", "mi", "ru", "se", "ta", "vo", "ne", "pi", "du"];

pub const READMISSION_MARKER: &str = "readmission";
pub const SEVERITY_MARKER: &str = "inpatient";

fn concept_word(i: usize) -> String {
    CONCEPT_WORDS
        .get(i)
        .map_or_else(|| format!("concept{i}"), |w| w.to_string())
}

/// Pronounceable filler word for index `i`; never collides with concept or
/// marker words.
fn noise_word(i: usize) -> String {
    let mut word = String::from("x");
    let mut n = i;
    for _ in 0..4 {
        word.push_str(SYLLABLES[n % 10]);
        n /= 10;
    }
    if n > 0 {
        word.push_str(&n.to_string());
    }
    word
}

/// Label texts for the four tasks, in class-index order.
pub fn standard_tasks(diagnosis_labels: Vec<String>) -> Result<Vec<TaskSpec>> {
    let los = [
        "stay under one day",
        "stay of one day",
        "stay of two days",
        "stay of three days",
        "stay of four days",
        "stay of five days",
        "stay of six days",
        "stay of seven days",
        "stay of one to two weeks",
        "stay over two weeks",
    ];
    Ok(vec![
        TaskSpec::new(
            READMISSION,
            vec![
                "no readmission after hospital admission".into(),
                "readmission after hospital admission".into(),
            ],
        )?,
        TaskSpec::new(DIAGNOSIS, diagnosis_labels)?,
        TaskSpec::new(LOS, los.iter().map(|s| s.to_string()).collect())?,
        TaskSpec::new(
            ADMISSION_TYPE,
            AdmissionType::ALL
                .iter()
                .map(|a| format!("{} hospital admission", a.word()))
                .collect(),
        )?,
    ])
}

#[derive(Debug, Clone)]
pub struct GeneratedCorpus {
    pub records: Vec<AdmissionRecord>,
    /// readmission, diagnosis, los, admtype.
    pub tasks: Vec<TaskSpec>,
    pub holdout: Holdout,
}

impl GeneratedCorpus {
    pub fn split(&self, split: Split) -> Vec<AdmissionRecord> {
        self.records.iter().filter(|r| r.split == split).cloned().collect()
    }
}

pub fn generate_corpus(config: &GeneratorConfig) -> Result<GeneratedCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let label_concepts = draw_label_concepts(config, &mut rng);
    let holdout = draw_holdout(config, &label_concepts, &mut rng)?;
    let holdout_set: HashSet<usize> = holdout.iter().copied().collect();
    let seen: Vec<usize> = (0..config.num_diagnoses).filter(|c| !holdout_set.contains(c)).collect();

    let diagnosis_labels: Vec<String> = label_concepts
        .iter()
        .map(|cs| cs.iter().map(|&c| concept_word(c)).collect::<Vec<_>>().join(" "))
        .collect();
    let tasks = standard_tasks(diagnosis_labels)?;

    let plan = [
        (Split::Train, config.num_train()),
        (Split::Val, config.num_val()),
        (Split::Test, config.num_test()),
    ];
    let mut records = Vec::with_capacity(config.num_admissions);
    for (split, count) in plan {
        for i in 0..count {
            let diagnosis = match split {
                Split::Train if i < seen.len() => seen[i],
                Split::Train => *seen.choose(&mut rng).expect("seen classes"),
                _ => rng.gen_range(0..config.num_diagnoses),
            };
            let id = format!("adm{:05}", records.len());
            records.push(make_record(
                config,
                &mut rng,
                id,
                split,
                diagnosis,
                &label_concepts[diagnosis],
            ));
        }
    }

    check_label_linkage(&records, &tasks[1])?;
    Ok(GeneratedCorpus {
        records,
        tasks,
        holdout: Holdout {
            task: DIAGNOSIS.into(),
            classes: holdout,
        },
    })
}

fn draw_label_concepts(config: &GeneratorConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut used = HashSet::new();
    let mut labels = Vec::with_capacity(config.num_diagnoses);
    let pool: Vec<usize> = (0..config.concept_vocab).collect();
    while labels.len() < config.num_diagnoses {
        let combo: BTreeSet<usize> = pool.choose_multiple(rng, config.concepts_per_label).copied().collect();
        if used.insert(combo.clone()) {
            labels.push(combo.into_iter().collect());
        }
    }
    labels
}

/// Held-out classes whose every concept also appears in some trained label.
fn draw_holdout(config: &GeneratorConfig, label_concepts: &[Vec<usize>], rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    let u = config.num_holdout();
    if u == 0 {
        return Ok(Vec::new());
    }
    let classes: Vec<usize> = (0..config.num_diagnoses).collect();
    for _ in 0..1000 {
        let mut pick: Vec<usize> = classes.choose_multiple(rng, u).copied().collect();
        pick.sort_unstable();
        let trained: HashSet<usize> = classes
            .iter()
            .filter(|c| !pick.contains(c))
            .flat_map(|&c| label_concepts[c].iter().copied())
            .collect();
        if pick
            .iter()
            .all(|&c| label_concepts[c].iter().all(|k| trained.contains(k)))
        {
            return Ok(pick);
        }
    }
    Err(Error::Config(
        "could not find held-out diagnoses covered by trained concepts".into(),
    ))
}

fn make_record(
    config: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
    id: String,
    split: Split,
    diagnosis: usize,
    concepts: &[usize],
) -> AdmissionRecord {
    let readmission = u8::from(rng.gen_bool(config.readmission_rate));
    let admission_type = *AdmissionType::ALL.choose(rng).expect("non-empty");
    let bucket = rng.gen_range(0..LOS_BUCKETS);
    let (lo, hi) = match bucket {
        0 => (0.0, 1.0),
        b if b < 8 => (b as f64, b as f64 + 1.0),
        8 => (8.0, 14.0),
        _ => (14.0, 30.0),
    };
    let stay = rng.gen_range(lo..hi);
    let los_bucket = bucket_los(stay).expect("stay is non-negative");
    let severity = los_bucket + 1;

    let markers = config.marker_repeats * (1 + readmission as usize);
    let min_content = 2 * concepts.len();
    let mut len = rng.gen_range(config.min_len..=config.max_len);
    let mut noise = (config.noise_fraction * len as f64).round() as usize;
    if len < noise + severity + markers + min_content {
        len = noise + severity + markers + min_content;
        noise = (config.noise_fraction * len as f64).round() as usize;
        len = len.max(noise + severity + markers + min_content);
    }
    let content = len - noise - severity - markers;

    let mut tokens: Vec<String> = Vec::with_capacity(len);
    tokens.extend((0..content).map(|i| concept_word(concepts[i % concepts.len()])));
    tokens.extend((0..severity).map(|_| SEVERITY_MARKER.to_string()));
    for _ in 0..config.marker_repeats {
        tokens.push(admission_type.word().to_string());
        if readmission == 1 {
            tokens.push(READMISSION_MARKER.to_string());
        }
    }
    tokens.extend((0..noise).map(|_| noise_word(rng.gen_range(0..config.noise_vocab))));
    tokens.shuffle(rng);

    AdmissionRecord {
        id,
        text: tokens.join(" "),
        readmission,
        admission_type,
        diagnosis,
        los_bucket,
        split,
    }
}

/// Each class's label must share more concept tokens with its own notes than
/// with other classes' notes, on average.
fn check_label_linkage(records: &[AdmissionRecord], diagnosis: &TaskSpec) -> Result<()> {
    let label_tokens: Vec<HashSet<String>> = diagnosis
        .labels
        .iter()
        .map(|l| tokenize(l).into_iter().collect())
        .collect();
    let doc_tokens: Vec<HashSet<String>> = records
        .iter()
        .map(|r| tokenize(&r.text).into_iter().collect())
        .collect();
    for (c, label) in label_tokens.iter().enumerate() {
        let (mut own, mut own_n, mut other, mut other_n) = (0usize, 0usize, 0usize, 0usize);
        for (r, doc) in records.iter().zip(&doc_tokens) {
            let overlap = label.intersection(doc).count();
            if r.diagnosis == c {
                own += overlap;
                own_n += 1;
            } else {
                other += overlap;
                other_n += 1;
            }
        }
        if own_n == 0 || other_n == 0 {
            continue;
        }
        if own as f64 / own_n as f64 <= other as f64 / other_n as f64 {
            return Err(Error::Data(format!(
                "diagnosis {c} label is not linked to its own notes"
            )));
        }
    }
    Ok(())
}
