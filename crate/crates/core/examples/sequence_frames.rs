//! Frame classification of synthetic feature sequences with a bidirectional RNN.

use inqkit::harness::{evaluate_model, generate_dataset, quantize_model, train_float, ExperimentConfig, ModelSize, Task};

fn main() -> inqkit::Result<()> {
    let mut cfg = ExperimentConfig::for_task(Task::Asr);
    cfg.train_mut().optimizer.learning_rate = 0.01;
    cfg.inq.epochs_per_step = 1;
    let data = generate_dataset(Task::Asr, cfg.dataset(), 3)?;
    for size in [ModelSize::Full, ModelSize::Small] {
        let (model, _) = train_float(&cfg, size, &data.train, 1, 6)?;
        let (q, _, _) = quantize_model(&cfg, &model, &data.train, 4, 1)?;
        println!(
            "{size:?}: {} params, frame error {:.2}% float, {:.2}% at 4 bits",
            model.param_count(),
            evaluate_model(Task::Asr, &model, &data.test)?[1],
            evaluate_model(Task::Asr, &q, &data.test)?[1]
        );
    }
    Ok(())
}
