use taskhyper::corpus::{build_vocab, training_tasks, ChunkSet};
use taskhyper::mtmodel::{Model, ModelConfig};
use taskhyper::synthdata::{generate_corpus, GeneratorConfig, Split, DIAGNOSIS, LOS, READMISSION};
use taskhyper::taskcond::TaskSpec;
use taskhyper::trainer::{train, train_step, validation_loss, AdamState, TrainConfig};

struct Fixture {
    model: Model,
    tasks: Vec<TaskSpec>,
    train: ChunkSet,
    val: ChunkSet,
}

fn fixture(model: ModelConfig, seed: u64) -> Fixture {
    let gen = GeneratorConfig {
        num_diagnoses: 8,
        num_admissions: 240,
        min_len: 20,
        max_len: 50,
        ..Default::default()
    };
    let corpus = generate_corpus(&gen).unwrap();
    let (tasks, maps) = training_tasks(&corpus.tasks, &[READMISSION, DIAGNOSIS, LOS], &corpus.holdout).unwrap();
    let train_records = corpus.split(Split::Train);
    let vocab = build_vocab(&train_records, &corpus.tasks);
    let build = |split| ChunkSet::build(&corpus.split(split), &vocab, &tasks, &maps, model.chunk_len).unwrap();
    let (train, val) = (build(Split::Train), build(Split::Val));
    let model = Model::init(model, vocab.clone(), tasks.clone(), seed).unwrap();
    Fixture {
        model,
        tasks,
        train,
        val,
    }
}

fn small_model() -> ModelConfig {
    ModelConfig {
        d_h: 16,
        d_b: 8,
        d_w: 8,
        chunk_len: 16,
        ..Default::default()
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    let config = TrainConfig {
        max_epochs: 3,
        seed: 3,
        model: small_model(),
        ..Default::default()
    };
    let run = || {
        let f = fixture(small_model(), 3);
        train(f.model, &f.train, &f.val, &f.tasks, &config).unwrap()
    };
    let (m1, t1) = run();
    let (m2, t2) = run();
    assert_eq!(m1, m2);
    assert_eq!(t1.step_loss, t2.step_loss);
    assert_eq!(t1.alphas, t2.alphas);
}

#[test]
fn training_reduces_loss() {
    let f = fixture(small_model(), 0);
    let config = TrainConfig {
        max_epochs: 4,
        model: small_model(),
        ..Default::default()
    };
    let (_, trace) = train(f.model, &f.train, &f.val, &f.tasks, &config).unwrap();
    assert!(
        trace.epoch_train_loss[3] < trace.epoch_train_loss[0],
        "{:?}",
        trace.epoch_train_loss
    );
    assert!(
        trace.epoch_val_loss[3] < trace.epoch_val_loss[0],
        "{:?}",
        trace.epoch_val_loss
    );
}

#[test]
fn adversarial_validation_set_triggers_early_stopping() {
    let mut f = fixture(small_model(), 1);
    // Validate on the training chunks with every label shifted to another
    // class: fitting the training data raises validation loss.
    let mut val = f.train.clone();
    for (t, gold) in val.gold.iter_mut().enumerate() {
        let m = f.tasks[t].num_classes();
        gold.iter_mut().for_each(|c| *c = (*c + 1) % m);
    }
    f.val = val;
    let config = TrainConfig {
        max_epochs: 30,
        patience: 2,
        model: small_model(),
        ..Default::default()
    };
    let (best, trace) = train(f.model, &f.train, &f.val, &f.tasks, &config).unwrap();
    assert!(trace.stopped_early);
    assert_eq!(trace.epoch_val_loss.len(), trace.best_epoch + 2);
    assert!(trace.best_epoch < 10, "best epoch {}", trace.best_epoch);
    let restored = validation_loss(&best, &f.val, &f.tasks).unwrap();
    assert_eq!(restored, trace.epoch_val_loss[trace.best_epoch - 1]);
}

#[test]
fn generated_task_weights_form_a_distribution_at_every_step() {
    let f = fixture(small_model(), 2);
    let config = TrainConfig {
        max_epochs: 2,
        model: small_model(),
        ..Default::default()
    };
    let (_, trace) = train(f.model, &f.train, &f.val, &f.tasks, &config).unwrap();
    assert_eq!(trace.alphas.len(), trace.step_loss.len());
    for a in &trace.alphas {
        assert!(a.iter().all(|&x| x > 0.0));
        assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

#[test]
fn ablated_weights_are_exactly_uniform() {
    let cfg = ModelConfig {
        use_weight_hypernet: false,
        ..small_model()
    };
    let mut f = fixture(cfg.clone(), 0);
    let config = TrainConfig {
        model: cfg,
        ..Default::default()
    };
    let mut state = AdamState::default();
    let k = f.tasks.len();
    for start in (0..64).step_by(16) {
        let batch: Vec<usize> = (start..start + 16).collect();
        let (_, alphas) = train_step(&mut f.model, &f.train, &batch, &f.tasks, &mut state, &config).unwrap();
        assert_eq!(alphas, vec![1.0 / k as f64; k]);
    }
}
