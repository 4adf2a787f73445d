//! Reference architectures for each task in full and small sizes.

use super::config::{DatasetParams, ModelSize, Task};
use crate::error::Result;
use crate::nncore::{LayerSpec, ModelGraph};

use LayerSpec::*;

fn conv(filters: usize) -> [LayerSpec; 3] {
    [Pad2d { pad: 1 }, Conv2d { filters, kernel: 3 }, Relu]
}

/// Input shape (without batch axis) and layer stack.
pub fn architecture(task: Task, size: ModelSize, data: &DatasetParams) -> (Vec<usize>, Vec<LayerSpec>) {
    let half = |c: usize| match size {
        ModelSize::Full => c,
        ModelSize::Small => c / 2,
    };
    let mut specs = Vec::new();
    match task {
        Task::Cls => {
            specs.extend(conv(half(8)));
            specs.push(MaxPool2x2);
            specs.extend(conv(half(16)));
            specs.push(MaxPool2x2);
            specs.push(Flatten);
            if size == ModelSize::Full {
                specs.extend([Dense { units: 128 }, Relu]);
            }
            specs.extend([Dense { units: 64 }, Relu, Dense { units: data.classes }, SoftmaxOutput]);
            (vec![1, data.image_size, data.image_size], specs)
        }
        Task::Seg => {
            specs.extend(conv(half(8)));
            if size == ModelSize::Full {
                specs.extend(conv(8));
            }
            specs.push(MaxPool2x2);
            specs.extend(conv(half(16)));
            if size == ModelSize::Full {
                specs.extend(conv(16));
            }
            specs.push(Upsample2x);
            specs.extend(conv(half(8)));
            specs.extend([Conv2d { filters: 2, kernel: 1 }, SoftmaxOutput]);
            (vec![1, data.image_size, data.image_size], specs)
        }
        Task::Asr => {
            specs.push(BiRnn { hidden: half(24) });
            if size == ModelSize::Full {
                specs.extend([Dense { units: 48 }, Relu]);
            }
            specs.extend([Dense { units: data.classes }, SoftmaxOutput]);
            (vec![data.seq_len, data.features], specs)
        }
    }
}

pub fn build_model(task: Task, size: ModelSize, data: &DatasetParams, seed: u64) -> Result<ModelGraph<f32>> {
    let (input, specs) = architecture(task, size, data);
    ModelGraph::new(&input, &specs, seed)
}
