use ndarray::{Array2, Array4};

use super::checkpoint::Checkpoint;
use super::config::EncoderConfig;
use super::encoder::{Encoder, ForwardTaps};
use super::heads::{IntermediateHead, ProjectionHead};
use crate::nn::{parameters, Linear, Parameters};
use crate::{Error, Result};

/// Projections of one forward pass, each `(dim, batch)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub z: Array2<f32>,
    /// From the Block 4 tap (one conv).
    pub w_a: Array2<f32>,
    /// From the Block 3 tap (two convs).
    pub w_b: Array2<f32>,
}

/// Encoder plus the final and two intermediate projection heads.
#[derive(Debug, Clone)]
pub struct PretrainNet {
    pub encoder: Encoder,
    pub head_final: ProjectionHead,
    pub head_inter1: IntermediateHead,
    pub head_inter2: IntermediateHead,
}

parameters!(PretrainNet {
    encoder => "encoder",
    head_final => "head_final",
    head_inter1 => "head_inter1",
    head_inter2 => "head_inter2",
});

impl PretrainNet {
    pub fn new(config: &EncoderConfig, seed: u64) -> Result<Self> {
        let encoder = Encoder::new(config, seed)?;
        let ch = &config.stage_channels;
        let (hid, bn) = (config.projection_hidden_dim, config.batch_norm_in_heads);
        let wdim = config.intermediate_embed_dim;
        Ok(Self {
            head_final: ProjectionHead::new(config.final_width(), hid, config.final_embed_dim, bn, seed, "head_final"),
            head_inter1: IntermediateHead::new(ch[3], &config.intermediate_widths(ch[3], 1), hid, wdim, bn, seed, "head_inter1"),
            head_inter2: IntermediateHead::new(ch[2], &config.intermediate_widths(ch[2], 2), hid, wdim, bn, seed, "head_inter2"),
            encoder,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.encoder.config
    }

    pub fn encode(&mut self, x: &Array4<f32>, train: bool) -> Result<ForwardTaps> {
        self.encoder.encode(x, train)
    }

    pub fn project_final(&mut self, r_f: &Array4<f32>, train: bool) -> Result<Array2<f32>> {
        let t = self.config().shape_trace().r_f;
        check_tap("final", r_f, t)?;
        Ok(self.head_final.forward(r_f, train))
    }

    /// `which = 1` takes the Block 4 tap, `which = 2` the Block 3 tap.
    pub fn project_intermediate(&mut self, r: &Array4<f32>, which: u8, train: bool) -> Result<Array2<f32>> {
        let trace = self.config().shape_trace();
        match which {
            1 => {
                check_tap("intermediate 1 (Block 4)", r, trace.r_a)?;
                Ok(self.head_inter1.forward(r, train))
            }
            2 => {
                check_tap("intermediate 2 (Block 3)", r, trace.r_b)?;
                Ok(self.head_inter2.forward(r, train))
            }
            _ => Err(Error::invalid(format!("intermediate head index must be 1 or 2, got {which}"))),
        }
    }

    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Result<Projections> {
        let taps = self.encode(x, train)?;
        Ok(Projections {
            z: self.head_final.forward(&taps.r_f, train),
            w_a: self.head_inter1.forward(&taps.r_a, train),
            w_b: self.head_inter2.forward(&taps.r_b, train),
        })
    }

    /// Accumulates parameter gradients. Absent intermediate gradients skip
    /// the corresponding head entirely.
    pub fn backward(&mut self, dz: &Array2<f32>, dw_a: Option<&Array2<f32>>, dw_b: Option<&Array2<f32>>) {
        let d_r_f = self.head_final.backward(dz);
        let d_r_a = dw_a.map(|g| self.head_inter1.backward(g));
        let d_r_b = dw_b.map(|g| self.head_inter2.backward(g));
        self.encoder.backward(d_r_b, d_r_a, d_r_f);
    }
}

fn check_tap(which: &str, r: &Array4<f32>, expected: [usize; 3]) -> Result<()> {
    let (c, _, h, w) = r.dim();
    if [c, h, w] != expected {
        return Err(Error::invalid(format!(
            "{which} head expects a {}x{}x{} tap, got {c}x{h}x{w}",
            expected[0], expected[1], expected[2]
        )));
    }
    Ok(())
}

/// Encoder with a single affine layer on pooled final features.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub encoder: Encoder,
    pub fc: Linear,
    pub num_classes: usize,
    pooled_from: (usize, usize),
}

parameters!(Classifier { encoder => "encoder", fc => "classifier" });

impl Classifier {
    pub fn new(config: &EncoderConfig, num_classes: usize, seed: u64) -> Result<Self> {
        let encoder = Encoder::new(config, seed)?;
        Ok(Self::with_encoder(encoder, num_classes, seed))
    }

    fn with_encoder(encoder: Encoder, num_classes: usize, seed: u64) -> Self {
        Self {
            fc: Linear::new(encoder.config.final_width(), num_classes, seed, "classifier"),
            encoder,
            num_classes,
            pooled_from: (0, 0),
        }
    }

    /// Logits `(num_classes, batch)`.
    pub fn forward(&mut self, x: &Array4<f32>, train: bool) -> Result<Array2<f32>> {
        let taps = self.encoder.encode(x, train)?;
        let (_, _, h, w) = taps.r_f.dim();
        self.pooled_from = (h, w);
        Ok(self.fc.forward(&crate::nn::global_avg_pool(&taps.r_f)))
    }

    /// With `through_encoder` false only the classifier layer receives
    /// gradients (linear probe).
    pub fn backward(&mut self, dlogits: &Array2<f32>, through_encoder: bool) {
        let g = self.fc.backward(dlogits);
        if through_encoder {
            let d = crate::nn::global_avg_pool_backward(&g, self.pooled_from.0, self.pooled_from.1);
            self.encoder.backward(None, None, d);
        }
    }
}

/// Drops the projection heads of a pretrained network and attaches a freshly
/// initialized classification layer; encoder tensors are copied verbatim.
pub fn build_finetune_model(pretrained: &Checkpoint, config: &EncoderConfig, num_classes: usize, seed: u64) -> Result<Classifier> {
    let stored: EncoderConfig = serde_json::from_value(pretrained.config.get("encoder").cloned().unwrap_or_default())
        .map_err(|e| Error::Checkpoint(format!("checkpoint carries no readable encoder config: {e}")))?;
    if &stored != config {
        return Err(Error::Checkpoint(
            "checkpoint encoder config differs from the requested encoder config".into(),
        ));
    }
    if num_classes < 2 {
        return Err(Error::invalid("classifier needs at least 2 classes"));
    }
    let mut encoder = Encoder::new(config, seed)?;
    pretrained.restore(&mut encoder, "encoder")?;
    Ok(Classifier::with_encoder(encoder, num_classes, seed))
}

/// Total trainable parameter count of the encoder alone.
pub fn encoder_param_count(net: &impl Parameters) -> usize {
    net.named_params()
        .iter()
        .filter(|(n, p)| p.trainable && n.starts_with("encoder."))
        .map(|(_, p)| p.len())
        .sum()
}
