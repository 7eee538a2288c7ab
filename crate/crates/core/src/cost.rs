//! Visual-token and FLOP accounting for whole encoding strategies.
//!
//! Every transformer stack is charged `8 t d^2 + 4 t^2 d + 4 t d f` FLOPs per
//! layer for `t` tokens, hidden size `d` and feed-forward size `f`
//! (projections, attention scores and mixing, feed-forward; norms and
//! softmax ignored).

use serde::{Deserialize, Serialize};

use crate::encoding::{fit_patch_grid, overview_grid};
use crate::error::{Error, Result};
use crate::partition::{select_partition, ImageSize, PartitionPlan, VitSpec};

/// Dense transformer stack dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StackDims {
    pub layers: u64,
    pub hidden_dim: u64,
    pub ffn_dim: u64,
}

impl StackDims {
    /// FLOPs for one forward pass over `tokens` tokens.
    pub fn forward_flops(&self, tokens: u64) -> f64 {
        let (t, d, f) = (tokens as f64, self.hidden_dim as f64, self.ffn_dim as f64);
        self.layers as f64 * (8.0 * t * d * d + 4.0 * t * t * d + 4.0 * t * d * f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub layers: u64,
    pub hidden_dim: u64,
    pub ffn_dim: u64,
    pub patch_px: u32,
    /// Pretraining resolution (square side) of the encoder.
    pub image_px: u32,
}

impl EncoderDims {
    pub fn stack(&self) -> StackDims {
        StackDims {
            layers: self.layers,
            hidden_dim: self.hidden_dim,
            ffn_dim: self.ffn_dim,
        }
    }

    pub fn vit(&self) -> Result<VitSpec> {
        VitSpec::new(self.image_px, self.image_px, self.patch_px)
    }
}

/// Bridge between encoder and language model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Projector {
    /// Cross-attention with `queries` learned queries per encoder pass.
    Resampler { queries: u64 },
    /// Two-layer MLP keeping every encoder token.
    Mlp { hidden: u64 },
}

/// Architecture constants for one strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelDims {
    pub encoder: EncoderDims,
    pub projector: Projector,
    pub llm: StackDims,
}

/// Checked-in architecture facts; the projector kind is picked per strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderDims,
    pub llm: StackDims,
    pub resampler_queries: u64,
    pub mlp_hidden: u64,
}

impl ModelConfig {
    /// CLIP ViT-L/14 (336 px) with a Vicuna-13B language model.
    pub fn clip_l14_vicuna13b() -> Self {
        Self {
            encoder: EncoderDims {
                layers: 24,
                hidden_dim: 1024,
                ffn_dim: 4096,
                patch_px: 14,
                image_px: 336,
            },
            llm: StackDims {
                layers: 40,
                hidden_dim: 5120,
                ffn_dim: 13824,
            },
            resampler_queries: 64,
            mlp_hidden: 5120,
        }
    }

    pub fn with_projector(&self, projector: Projector) -> ModelDims {
        ModelDims {
            encoder: self.encoder,
            projector,
            llm: self.llm,
        }
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::clip_l14_vicuna13b()
    }
}

/// FLOP breakdown of one image (plus optional text) through the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub encoder_flops: f64,
    pub projector_flops: f64,
    pub llm_prefill_flops: f64,
    pub total_flops: f64,
    pub visual_tokens_to_llm: u64,
}

/// `(w / patch) * (h / patch)`; sides must already be patch multiples.
pub fn vit_token_count(width_px: u32, height_px: u32, patch_px: u32) -> Result<u64> {
    if patch_px == 0 || width_px % patch_px != 0 || height_px % patch_px != 0 {
        return Err(Error::InvalidDimensions(format!(
            "{width_px}x{height_px} is not a multiple of patch {patch_px}"
        )));
    }
    Ok(u64::from(width_px / patch_px) * u64::from(height_px / patch_px))
}

fn projector_flops(dims: &ModelDims, tokens: u64) -> f64 {
    let t = tokens as f64;
    let d_in = dims.encoder.hidden_dim as f64;
    let d_out = dims.llm.hidden_dim as f64;
    match dims.projector {
        Projector::Resampler { queries } => {
            let k = queries as f64;
            // key/value projections, query and output projections, scores and mixing
            4.0 * t * d_in * d_out + 4.0 * k * d_out * d_out + 4.0 * k * t * d_out
        }
        Projector::Mlp { hidden } => {
            let h = hidden as f64;
            2.0 * t * (d_in * h + h * d_out)
        }
    }
}

/// Cost of running the encoder once per entry of `encoder_passes` (token
/// counts), projecting, and prefilling the language model.
pub fn estimate_workload(dims: &ModelDims, encoder_passes: &[u64], text_tokens: u64) -> CostReport {
    let encoder = dims.encoder.stack();
    let encoder_flops = encoder_passes.iter().map(|&t| encoder.forward_flops(t)).sum();
    let projector_flops = encoder_passes.iter().map(|&t| projector_flops(dims, t)).sum();
    let visual_tokens_to_llm = match dims.projector {
        Projector::Resampler { queries } => queries * encoder_passes.len() as u64,
        Projector::Mlp { .. } => encoder_passes.iter().sum(),
    };
    let llm_prefill_flops = dims.llm.forward_flops(visual_tokens_to_llm + text_tokens);
    CostReport {
        encoder_flops,
        projector_flops,
        llm_prefill_flops,
        total_flops: encoder_flops + projector_flops + llm_prefill_flops,
        visual_tokens_to_llm,
    }
}

/// Encoder token counts for an adaptive plan: one pass per slice plus the overview.
pub fn adaptive_passes(plan: &PartitionPlan) -> Result<Vec<u64>> {
    let mut passes = plan
        .slice_rects
        .iter()
        .map(|r| fit_patch_grid(r.w, r.h, plan.vit).map(|g| u64::from(g.tokens())))
        .collect::<Result<Vec<_>>>()?;
    passes.push(u64::from(overview_grid(plan.image, plan.vit)?.tokens()));
    Ok(passes)
}

/// Cost of the adaptive-slicing pipeline for `plan`.
pub fn estimate_flops(dims: &ModelDims, plan: &PartitionPlan, text_tokens: u64) -> Result<CostReport> {
    Ok(estimate_workload(dims, &adaptive_passes(plan)?, text_tokens))
}

/// Encoding strategies compared in the cost reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Adaptive slices + overview, resampler projector.
    Uhd,
    /// One square-padded image at encoder resolution, MLP projector.
    Llava15,
    /// Adaptive slices + overview, MLP projector.
    UhdMlp,
    /// Fixed 2x2 grid of encoder-sized slices plus a global view, MLP projector.
    #[serde(rename = "fixed2x2-mlp")]
    Fixed2x2Mlp,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uhd" => Ok(Self::Uhd),
            "llava15" => Ok(Self::Llava15),
            "uhd-mlp" => Ok(Self::UhdMlp),
            "fixed2x2-mlp" => Ok(Self::Fixed2x2Mlp),
            other => Err(Error::InvalidArgument(format!("unknown strategy {other:?}"))),
        }
    }
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [Self::Uhd, Self::Llava15, Self::UhdMlp, Self::Fixed2x2Mlp];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Uhd => "uhd",
            Self::Llava15 => "llava15",
            Self::UhdMlp => "uhd-mlp",
            Self::Fixed2x2Mlp => "fixed2x2-mlp",
        }
    }

    pub fn dims(&self, config: &ModelConfig) -> ModelDims {
        let projector = match self {
            Self::Uhd => Projector::Resampler {
                queries: config.resampler_queries,
            },
            _ => Projector::Mlp {
                hidden: config.mlp_hidden,
            },
        };
        config.with_projector(projector)
    }

    /// Encoder passes (token counts) for `image`.
    pub fn passes(&self, config: &ModelConfig, image: ImageSize) -> Result<Vec<u64>> {
        let vit = config.encoder.vit()?;
        let full = u64::from(vit.budget());
        match self {
            Self::Uhd | Self::UhdMlp => adaptive_passes(&select_partition(image, vit)),
            Self::Llava15 => Ok(vec![full]),
            Self::Fixed2x2Mlp => Ok(vec![full; 5]),
        }
    }

    pub fn estimate(&self, config: &ModelConfig, image: ImageSize, text_tokens: u64) -> Result<CostReport> {
        Ok(estimate_workload(
            &self.dims(config),
            &self.passes(config, image)?,
            text_tokens,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub image: String,
    pub strategy_a: Strategy,
    pub strategy_b: Strategy,
    pub report_a: CostReport,
    pub report_b: CostReport,
    /// `total_a / total_b`.
    pub ratio: f64,
}

/// Visual-side comparison of two strategies on one image (no text tokens).
pub fn compare_strategies(
    config: &ModelConfig,
    a: Strategy,
    b: Strategy,
    image: ImageSize,
) -> Result<Comparison> {
    let report_a = a.estimate(config, image, 0)?;
    let report_b = b.estimate(config, image, 0)?;
    Ok(Comparison {
        image: image.to_string(),
        strategy_a: a,
        strategy_b: b,
        ratio: report_a.total_flops / report_b.total_flops,
        report_a,
        report_b,
    })
}
