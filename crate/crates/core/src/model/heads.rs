use ndarray::{Array2, Array4};

use super::encoder::ConvUnit;
use crate::nn::{global_avg_pool, global_avg_pool_backward, parameters, BatchNorm, Linear, Relu};

/// Pool, flatten, Linear, (BN), ReLU, Linear.
#[derive(Debug, Clone)]
pub struct ProjectionHead {
    fc1: Linear,
    bn: Option<BatchNorm>,
    relu: Relu,
    fc2: Linear,
    pooled_from: (usize, usize),
}

parameters!(ProjectionHead { fc1 => "fc1", bn => "bn", fc2 => "fc2" });

impl ProjectionHead {
    pub fn new(inputs: usize, hidden: usize, outputs: usize, batch_norm: bool, seed: u64, name: &str) -> Self {
        Self {
            fc1: Linear::new(inputs, hidden, seed, &format!("{name}.fc1")),
            bn: batch_norm.then(|| BatchNorm::new(hidden)),
            relu: Relu::default(),
            fc2: Linear::new(hidden, outputs, seed, &format!("{name}.fc2")),
            pooled_from: (0, 0),
        }
    }

    pub fn forward(&mut self, r: &Array4<f32>, train: bool) -> Array2<f32> {
        let (_, _, h, w) = r.dim();
        self.pooled_from = (h, w);
        let p = global_avg_pool(r);
        let mut y = self.fc1.forward(&p);
        if let Some(bn) = &mut self.bn {
            y = bn.forward2(&y, train);
        }
        let y = self.relu.forward(y);
        self.fc2.forward(&y)
    }

    pub fn backward(&mut self, grad: &Array2<f32>) -> Array4<f32> {
        let g = self.fc2.backward(grad);
        let mut g = self.relu.backward(g);
        if let Some(bn) = &mut self.bn {
            g = bn.backward2(&g);
        }
        let g = self.fc1.backward(&g);
        global_avg_pool_backward(&g, self.pooled_from.0, self.pooled_from.1)
    }
}

/// Stride-2 convolutions that bring an intermediate tap down to the final
/// stage's size, followed by a projection head.
#[derive(Debug, Clone)]
pub struct IntermediateHead {
    convs: Vec<ConvUnit>,
    head: ProjectionHead,
}

parameters!(IntermediateHead { convs => "convs", head => "head" });

impl IntermediateHead {
    pub fn new(tap: usize, widths: &[usize], hidden: usize, outputs: usize, batch_norm: bool, seed: u64, name: &str) -> Self {
        let mut cin = tap;
        let convs = widths
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let unit = ConvUnit::new(cin, c, 3, 2, true, seed, &format!("{name}.convs.{i}"));
                cin = c;
                unit
            })
            .collect();
        Self {
            convs,
            head: ProjectionHead::new(cin, hidden, outputs, batch_norm, seed, &format!("{name}.head")),
        }
    }

    pub fn conv_count(&self) -> usize {
        self.convs.len()
    }

    pub fn forward(&mut self, r: &Array4<f32>, train: bool) -> Array2<f32> {
        let mut h = self.convs[0].forward(r, train);
        for c in &mut self.convs[1..] {
            h = c.forward(&h, train);
        }
        self.head.forward(&h, train)
    }

    pub fn backward(&mut self, grad: &Array2<f32>) -> Array4<f32> {
        let mut g = self.head.backward(grad);
        for c in self.convs.iter_mut().rev() {
            g = c.backward(g).expect("head conv input grad");
        }
        g
    }
}
