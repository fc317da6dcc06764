use ndarray::Array4;

use super::config::{EncoderConfig, StageKind};
use crate::nn::{parameters, BatchNorm, Conv2d, Relu};
use crate::{Error, Result};

/// Conv (no bias) + batch norm, optionally followed by ReLU.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    relu: Option<Relu>,
}

parameters!(ConvUnit { conv => "conv", bn => "bn" });

impl ConvUnit {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, relu: bool, seed: u64, name: &str) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, k, stride, false, seed, &format!("{name}.conv")),
            bn: BatchNorm::new(cout),
            relu: relu.then(Relu::default),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let y = self.conv.forward(x);
        let y = self.bn.forward4(&y, train);
        match &mut self.relu {
            Some(r) => r.forward(y),
            None => y,
        }
    }

    pub fn backward(&mut self, grad: Array4<f32>) -> Option<Array4<f32>> {
        let g = match &mut self.relu {
            Some(r) => r.backward(grad),
            None => grad,
        };
        let g = self.bn.backward4(&g);
        self.conv.backward(&g)
    }
}

/// 1x1 reduce, 3x3 (strided), 1x1 expand, with a projected shortcut when the
/// shape changes.
#[derive(Debug, Clone)]
pub struct Bottleneck {
    reduce: ConvUnit,
    spatial: ConvUnit,
    expand: ConvUnit,
    shortcut: Option<ConvUnit>,
    out_relu: Relu,
}

parameters!(Bottleneck {
    reduce => "reduce",
    spatial => "spatial",
    expand => "expand",
    shortcut => "shortcut",
});

impl Bottleneck {
    fn new(cin: usize, cout: usize, stride: usize, seed: u64, name: &str) -> Self {
        let mid = cout / 4;
        let shortcut =
            (cin != cout || stride != 1).then(|| ConvUnit::new(cin, cout, 1, stride, false, seed, &format!("{name}.shortcut")));
        Self {
            reduce: ConvUnit::new(cin, mid, 1, 1, true, seed, &format!("{name}.reduce")),
            spatial: ConvUnit::new(mid, mid, 3, stride, true, seed, &format!("{name}.spatial")),
            expand: ConvUnit::new(mid, cout, 1, 1, false, seed, &format!("{name}.expand")),
            shortcut,
            out_relu: Relu::default(),
        }
    }

    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        let h = self.reduce.forward(x, train);
        let h = self.spatial.forward(&h, train);
        let mut h = self.expand.forward(&h, train);
        match &mut self.shortcut {
            Some(s) => h += &s.forward(x, train),
            None => h += x,
        }
        self.out_relu.forward(h)
    }

    fn backward(&mut self, grad: Array4<f32>) -> Array4<f32> {
        let g = self.out_relu.backward(grad);
        let gm = self.expand.backward(g.clone()).expect("inner conv input grad");
        let gm = self.spatial.backward(gm).expect("inner conv input grad");
        let mut gx = self.reduce.backward(gm).expect("inner conv input grad");
        match &mut self.shortcut {
            Some(s) => gx += &s.backward(g).expect("inner conv input grad"),
            None => gx += &g,
        }
        gx
    }
}

#[derive(Debug, Clone)]
pub enum Stage {
    Unit(ConvUnit),
    /// Stride-1 convs followed by one stride-2 conv.
    Chain(Vec<ConvUnit>),
    Residual(Vec<Bottleneck>),
}

impl crate::nn::Parameters for Stage {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a crate::nn::Param)>) {
        match self {
            Stage::Unit(u) => u.params(prefix, out),
            Stage::Chain(c) => c.params(prefix, out),
            Stage::Residual(b) => b.params(prefix, out),
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut crate::nn::Param)>) {
        match self {
            Stage::Unit(u) => u.params_mut(prefix, out),
            Stage::Chain(c) => c.params_mut(prefix, out),
            Stage::Residual(b) => b.params_mut(prefix, out),
        }
    }
}

impl Stage {
    fn forward(&mut self, x: &Array4<f32>, train: bool) -> Array4<f32> {
        match self {
            Stage::Unit(u) => u.forward(x, train),
            Stage::Chain(units) => {
                let mut h = units[0].forward(x, train);
                for u in &mut units[1..] {
                    h = u.forward(&h, train);
                }
                h
            }
            Stage::Residual(blocks) => {
                let mut h = blocks[0].forward(x, train);
                for b in &mut blocks[1..] {
                    h = b.forward(&h, train);
                }
                h
            }
        }
    }

    fn backward(&mut self, grad: Array4<f32>) -> Option<Array4<f32>> {
        match self {
            Stage::Unit(u) => u.backward(grad),
            Stage::Chain(units) => {
                let mut g = Some(grad);
                for u in units.iter_mut().rev() {
                    g = u.backward(g.expect("chained conv input grad"));
                }
                g
            }
            Stage::Residual(blocks) => {
                let mut g = grad;
                for b in blocks.iter_mut().rev() {
                    g = b.backward(g);
                }
                Some(g)
            }
        }
    }
}

/// Feature maps at the two intermediate taps and the final stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTaps {
    /// Block 3 output.
    pub r_b: Array4<f32>,
    /// Block 4 output.
    pub r_a: Array4<f32>,
    /// Block 5 output.
    pub r_f: Array4<f32>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub stages: Vec<Stage>,
}

impl crate::nn::Parameters for Encoder {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a crate::nn::Param)>) {
        for (i, s) in self.stages.iter().enumerate() {
            s.params(&crate::nn::join(prefix, &format!("stage{}", i + 1)), out);
        }
    }

    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut crate::nn::Param)>) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.params_mut(&crate::nn::join(prefix, &format!("stage{}", i + 1)), out);
        }
    }
}

impl Encoder {
    pub fn new(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let ch = &config.stage_channels;
        let mut stages = Vec::with_capacity(5);
        for i in 0..5 {
            let name = format!("encoder.stage{}", i + 1);
            let cin = if i == 0 { config.input_channels } else { ch[i - 1] };
            let stage = match (config.stage_kind, i) {
                (StageKind::Plain, _) => Stage::Chain(
                    (0..config.plain_convs_per_stage)
                        .map(|j| {
                            let last = j + 1 == config.plain_convs_per_stage;
                            let c_in = if j == 0 { cin } else { ch[i] };
                            ConvUnit::new(c_in, ch[i], 3, if last { 2 } else { 1 }, true, seed, &format!("{name}.{j}"))
                        })
                        .collect(),
                ),
                (StageKind::Bottleneck, 0) => Stage::Unit(ConvUnit::new(cin, ch[0], 7, 2, true, seed, &name)),
                (StageKind::Bottleneck, _) => Stage::Residual(
                    (0..config.bottleneck_blocks[i - 1])
                        .map(|b| {
                            let (c_in, stride) = if b == 0 { (cin, 2) } else { (ch[i], 1) };
                            Bottleneck::new(c_in, ch[i], stride, seed, &format!("{name}.{b}"))
                        })
                        .collect(),
                ),
            };
            stages.push(stage);
        }
        match &mut stages[0] {
            Stage::Unit(u) => u.conv.input_grad = false,
            Stage::Chain(units) => units[0].conv.input_grad = false,
            Stage::Residual(_) => {}
        }
        Ok(Self {
            config: config.clone(),
            stages,
        })
    }

    pub fn check_input(&self, x: &Array4<f32>) -> Result<()> {
        let (c, n, h, w) = x.dim();
        let cfg = &self.config;
        if c != cfg.input_channels || h != cfg.input_size || w != cfg.input_size || n == 0 {
            return Err(Error::invalid(format!(
                "encoder expects input {}x{}x{} (channels x height x width) per image, got {c}x{h}x{w} for {n} images",
                cfg.input_channels, cfg.input_size, cfg.input_size
            )));
        }
        Ok(())
    }

    pub fn encode(&mut self, x: &Array4<f32>, train: bool) -> Result<ForwardTaps> {
        self.check_input(x)?;
        let h1 = self.stages[0].forward(x, train);
        let h2 = self.stages[1].forward(&h1, train);
        let r_b = self.stages[2].forward(&h2, train);
        let r_a = self.stages[3].forward(&r_b, train);
        let r_f = self.stages[4].forward(&r_a, train);
        Ok(ForwardTaps { r_b, r_a, r_f })
    }

    /// Backpropagates tap gradients through all stages into the parameters.
    pub fn backward(&mut self, d_r_b: Option<Array4<f32>>, d_r_a: Option<Array4<f32>>, d_r_f: Array4<f32>) {
        let mut g = self.stages[4].backward(d_r_f).expect("stage input grad");
        if let Some(d) = d_r_a {
            g += &d;
        }
        let mut g = self.stages[3].backward(g).expect("stage input grad");
        if let Some(d) = d_r_b {
            g += &d;
        }
        let g = self.stages[2].backward(g).expect("stage input grad");
        let g = self.stages[1].backward(g).expect("stage input grad");
        let _ = self.stages[0].backward(g);
    }
}
