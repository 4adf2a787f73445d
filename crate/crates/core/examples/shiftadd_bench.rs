//! Shift-add inference against float multiply on a quantized conv net.

use inqkit::inq::PartitionState;
use inqkit::nncore::{LayerSpec, ModelGraph, Tensor};
use inqkit::packstore::{bench, pack_model, ShiftAddModel};

fn main() -> inqkit::Result<()> {
    let specs = [
        LayerSpec::Pad2d { pad: 1 },
        LayerSpec::Conv2d { filters: 16, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::MaxPool2x2,
        LayerSpec::Flatten,
        LayerSpec::Dense { units: 10 },
    ];
    let mut model = ModelGraph::new(&[1, 16, 16], &specs, 3)?;
    let mut state = PartitionState::new(&model, 3, None)?;
    for t in 0..state.tensors.len() {
        let all: Vec<usize> = (0..state.tensors[t].len()).collect();
        state.quantize_group(&mut model, t, &all)?;
    }
    let packed = pack_model(&model, Some(&state))?;
    let x = Tensor::new(vec![32, 1, 16, 16], (0..32 * 256).map(|i| (i % 17) as f32 / 17.0).collect())?;

    let shift = ShiftAddModel::from_template(&model, &packed)?;
    let same = model.forward(&x)?.data().iter().zip(shift.forward(&x)?.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    println!("bit-identical outputs: {same}");
    println!("{}", bench(&model, &packed, &x, 10)?);
    Ok(())
}
