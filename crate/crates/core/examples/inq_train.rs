//! Incremental quantization of a small classifier, step by step.

use inqkit::harness::{generate_dataset, evaluate_model, train_float, ExperimentConfig, Task};
use inqkit::inq::{inq_train, PartitionStrategy};

fn main() -> inqkit::Result<()> {
    let mut cfg = ExperimentConfig::for_task(Task::Cls);
    let d = cfg.dataset_mut();
    d.train = 600;
    d.test = 200;
    cfg.train_mut().optimizer.learning_rate = 0.01;
    cfg.inq.epochs_per_step = 1;
    let data = generate_dataset(Task::Cls, cfg.dataset(), 1)?;

    let (mut model, _) = train_float(&cfg, cfg.model_size, &data.train, 1, 6)?;
    println!("float: {:.2}% accuracy", evaluate_model(Task::Cls, &model, &data.test)?[0]);

    let mut inq = cfg.inq_config(5, 1)?;
    inq.strategy = PartitionStrategy::Magnitude;
    let (state, log) = inq_train(&mut model, &data.train, &inq, None)?;
    for s in &log {
        println!("step {}: {:.1}% quantized, loss {:.4}", s.step, 100.0 * s.quantized_fraction, s.train_loss.unwrap_or(f64::NAN));
    }
    state.verify(&model)?;
    println!("5-bit: {:.2}% accuracy", evaluate_model(Task::Cls, &model, &data.test)?[0]);
    Ok(())
}
