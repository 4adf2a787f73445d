//! Averaging three independently trained classifiers.

use inqkit::ensemble::Ensemble;
use inqkit::harness::{evaluate_model, evaluate_probs, generate_dataset, train_float, ExperimentConfig, Task};

fn main() -> inqkit::Result<()> {
    let mut cfg = ExperimentConfig::for_task(Task::Cls);
    cfg.dataset_mut().train = 800;
    cfg.train_mut().optimizer.learning_rate = 0.01;
    let data = generate_dataset(Task::Cls, cfg.dataset(), 2)?;
    let mut members = Vec::new();
    for m in 0..3 {
        let (model, _) = train_float(&cfg, cfg.model_size, &data.train, 1000 + m, 5)?;
        println!("member {m}: {:.2}%", evaluate_model(Task::Cls, &model, &data.test)?[0]);
        members.push(model);
    }
    let ens = Ensemble::new(members)?;
    let probs = ens.predict(&data.test.inputs, 128)?;
    println!("ensemble: {:.2}%", evaluate_probs(Task::Cls, &probs, &data.test)?[0]);
    let u = ens.uncertainty_scores(&data.test.inputs, 128)?;
    let top = u.iter().cloned().fold(0.0, f64::max);
    println!("largest member disagreement on a test image: {top:.4}");
    Ok(())
}
