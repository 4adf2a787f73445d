//! Quantize every weight at once, write an SQW file and read it back.

use inqkit::inq::PartitionState;
use inqkit::nncore::{LayerSpec, ModelGraph};
use inqkit::packstore::{memory_report, pack_model, PackedModel};

fn main() -> inqkit::Result<()> {
    let specs = [LayerSpec::Dense { units: 256 }, LayerSpec::Relu, LayerSpec::Dense { units: 10 }];
    let mut model = ModelGraph::new(&[784], &specs, 7)?;
    let mut state = PartitionState::new(&model, 4, None)?;
    for t in 0..state.tensors.len() {
        let all: Vec<usize> = (0..state.tensors[t].len()).collect();
        state.quantize_group(&mut model, t, &all)?;
    }
    let packed = pack_model(&model, Some(&state))?;
    let path = std::env::temp_dir().join("inqkit-example.sqw");
    packed.write(&path)?;
    println!("{} bytes in {}", std::fs::metadata(&path)?.len(), path.display());
    println!("{}", memory_report(&packed));

    let back = PackedModel::read(&path)?;
    let mut restored = ModelGraph::new(&[784], &specs, 0)?;
    back.load_into(&mut restored)?;
    assert_eq!(back, packed);
    println!("restored {} parameters", restored.param_count());
    Ok(())
}
