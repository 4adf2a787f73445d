//! Suggestive annotation on gland images: which samples to label next.

use inqkit::harness::{generate_dataset, select_training_sets, ExperimentConfig, Task};

fn main() -> inqkit::Result<()> {
    let mut cfg = ExperimentConfig::for_task(Task::Seg);
    let d = cfg.dataset_mut();
    d.train = 120;
    d.test = 10;
    cfg.train_mut().optimizer.learning_rate = 0.02;
    cfg.suggestion.iterations = 3;
    cfg.suggestion.suggestor_epochs = 5;
    let data = generate_dataset(Task::Seg, cfg.dataset(), 1)?;
    let run = select_training_sets(&cfg, &data.train, 1)?;
    println!("seed set: {:?}", run.seed_labeled);
    for s in &run.steps {
        println!("round {}: shortlist uncertainty {:.5}, chose {:?}", s.iteration, s.shortlist_mean_uncertainty, s.chosen);
    }
    println!("random baseline of the same size: {:?}", run.random);
    Ok(())
}
