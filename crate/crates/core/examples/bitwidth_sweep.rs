//! A full recipe run from a TOML config, shrunk to finish in seconds.

use inqkit::harness::{run_experiment, ExperimentConfig};

const CONFIG: &str = r#"
version = 1
name = "tiny-sweep"
task = "cls"
recipe = "bitwidth_sweep"
bit_widths = [2, 3, 5]
seeds = [1, 2]

[dataset]
train = 300
test = 100

[train]
epochs = 3
[train.optimizer]
learning_rate = 0.01

[inq]
epochs_per_step = 1
"#;

fn main() -> inqkit::Result<()> {
    let mut cfg = ExperimentConfig::from_toml(CONFIG)?;
    cfg.output_dir = std::env::temp_dir().join("inqkit-tiny-sweep");
    let report = run_experiment(&cfg)?;
    for t in &report.tables {
        println!("{}.csv\n{}", t.name, t.to_csv()?);
    }
    println!("{} files under {}", report.files.len(), cfg.output_dir.display());
    Ok(())
}
