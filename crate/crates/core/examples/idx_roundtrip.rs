//! Writing a dataset as IDX files and loading it back, as for MNIST-style data.

use inqkit::harness::idx::{load_classification, write_classification};
use inqkit::harness::{generate_dataset, ExperimentConfig, Task};

fn main() -> inqkit::Result<()> {
    let cfg = ExperimentConfig::for_task(Task::Cls);
    let data = generate_dataset(Task::Cls, cfg.dataset(), 4)?;
    let dir = std::env::temp_dir();
    let (img, lbl) = (dir.join("inqkit-images.idx"), dir.join("inqkit-labels.idx"));
    write_classification(&data.test, &img, &lbl)?;
    let back = load_classification(&img, &lbl)?;
    println!("{} images of shape {:?}, labels equal: {}", back.len(), back.sample_shape(), back.targets == data.test.targets);
    Ok(())
}
