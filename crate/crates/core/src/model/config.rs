use serde::{Deserialize, Serialize};

use crate::nn::conv_output_size;
use crate::{Error, Result};

/// Internal structure of encoder stages 2 to 5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    /// One 3x3 stride-2 conv + BN + ReLU per stage.
    Plain,
    /// Residual bottleneck blocks after a 7x7 stride-2 stem.
    Bottleneck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub stage_channels: Vec<usize>,
    pub input_size: usize,
    pub input_channels: usize,
    pub tap_stages: (usize, usize),
    pub final_embed_dim: usize,
    pub intermediate_embed_dim: usize,
    pub projection_hidden_dim: usize,
    pub batch_norm_in_heads: bool,
    pub stage_kind: StageKind,
    /// Convs per plain stage; all but the last keep resolution.
    pub plain_convs_per_stage: usize,
    /// Residual blocks per stage 2..5; only read for bottleneck stages.
    pub bottleneck_blocks: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    pub fn desk() -> Self {
        Self {
            stage_channels: vec![16, 32, 64, 128, 256],
            input_size: 32,
            input_channels: 1,
            tap_stages: (3, 4),
            final_embed_dim: 128,
            intermediate_embed_dim: 256,
            projection_hidden_dim: 512,
            batch_norm_in_heads: true,
            stage_kind: StageKind::Plain,
            plain_convs_per_stage: 1,
            bottleneck_blocks: vec![3, 4, 6, 3],
        }
    }

    /// ResNet-50-sized bottleneck encoder on 224x224 RGB input.
    pub fn full_scale() -> Self {
        Self {
            stage_channels: vec![64, 256, 512, 1024, 2048],
            input_size: 224,
            input_channels: 3,
            stage_kind: StageKind::Bottleneck,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.len() != 5 || self.stage_channels.contains(&0) {
            return Err(Error::invalid(format!(
                "stage_channels must be 5 positive widths, got {:?}",
                self.stage_channels
            )));
        }
        if self.tap_stages != (3, 4) {
            return Err(Error::invalid(format!(
                "tap_stages is fixed to (3, 4), got {:?}",
                self.tap_stages
            )));
        }
        for (name, v) in [
            ("input_size", self.input_size),
            ("input_channels", self.input_channels),
            ("plain_convs_per_stage", self.plain_convs_per_stage),
            ("final_embed_dim", self.final_embed_dim),
            ("intermediate_embed_dim", self.intermediate_embed_dim),
            ("projection_hidden_dim", self.projection_hidden_dim),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if self.stage_kind == StageKind::Bottleneck {
            if self.bottleneck_blocks.len() != 4 || self.bottleneck_blocks.contains(&0) {
                return Err(Error::invalid(format!(
                    "bottleneck_blocks must be 4 positive counts, got {:?}",
                    self.bottleneck_blocks
                )));
            }
            if self.stage_channels[1..].iter().any(|c| c % 4 != 0) {
                return Err(Error::invalid("bottleneck stage widths must be divisible by 4"));
            }
        }
        let trace = self.shape_trace();
        if trace.int_proj1.last() != Some(&trace.r_f) || trace.int_proj2.last() != Some(&trace.r_f) {
            return Err(Error::invalid(format!(
                "input_size {} does not let intermediate projections reach the final tap size",
                self.input_size
            )));
        }
        Ok(())
    }

    pub fn final_width(&self) -> usize {
        self.stage_channels[4]
    }

    /// Channel widths of the stride-2 convolutions in an intermediate head fed
    /// by a tap of width `tap`: doubling per conv, ending at the final width.
    pub fn intermediate_widths(&self, tap: usize, convs: usize) -> Vec<usize> {
        let mut widths = Vec::with_capacity(convs);
        let mut c = tap;
        for i in 0..convs {
            c = if i + 1 == convs { self.final_width() } else { c * 2 };
            widths.push(c);
        }
        widths
    }

    /// Symbolic forward shapes, computed without allocating parameters.
    pub fn shape_trace(&self) -> ShapeTrace {
        let mut side = self.input_size;
        let mut stages = Vec::with_capacity(5);
        for (i, &c) in self.stage_channels.iter().enumerate() {
            side = match (self.stage_kind, i) {
                (StageKind::Bottleneck, 0) => conv_output_size(side, 7, 2, 3),
                _ => conv_output_size(side, 3, 2, 1),
            };
            stages.push([c, side, side]);
        }
        let head = |tap: [usize; 3], convs: usize| {
            let mut side = tap[1];
            self.intermediate_widths(tap[0], convs)
                .into_iter()
                .map(|c| {
                    side = conv_output_size(side, 3, 2, 1);
                    [c, side, side]
                })
                .collect::<Vec<_>>()
        };
        ShapeTrace {
            r_b: stages[2],
            r_a: stages[3],
            r_f: stages[4],
            int_proj1: head(stages[3], 1),
            int_proj2: head(stages[2], 2),
            stages,
            z_dim: self.final_embed_dim,
            w_dim: self.intermediate_embed_dim,
        }
    }
}

/// `[channels, height, width]` at each point of the forward pass.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ShapeTrace {
    pub stages: Vec<[usize; 3]>,
    pub r_b: [usize; 3],
    pub r_a: [usize; 3],
    pub r_f: [usize; 3],
    pub int_proj1: Vec<[usize; 3]>,
    pub int_proj2: Vec<[usize; 3]>,
    pub z_dim: usize,
    pub w_dim: usize,
}
