use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DType;

/// Network hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Frames on each side of the target; the network reads `2R+1` frames.
    pub radius: usize,
    pub window_size: usize,
    pub depths: [usize; 3],
    pub heads: [usize; 3],
    pub embed_dim: usize,
    pub mlp_ratio: f64,
    pub num_restormers: usize,
    pub patch: usize,
    pub mdta_heads: usize,
    pub gdfn_expansion: usize,
    pub dtype: DType,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            radius: 3,
            window_size: 8,
            depths: [2, 2, 2],
            heads: [2, 2, 2],
            embed_dim: 48,
            mlp_ratio: 1.0,
            num_restormers: 4,
            patch: 2,
            mdta_heads: 1,
            gdfn_expansion: 2,
            dtype: DType::F32,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks and quick experiments.
    pub fn toy() -> Self {
        ModelConfig {
            radius: 1,
            window_size: 4,
            depths: [1, 1, 1],
            heads: [2, 2, 2],
            embed_dim: 16,
            ..ModelConfig::default()
        }
    }

    pub fn frames(&self) -> usize {
        2 * self.radius + 1
    }

    /// Channel width of encoder stage `k` (0-based).
    pub fn stage_dim(&self, k: usize) -> usize {
        self.embed_dim << k
    }

    /// Spatial extents are padded to a multiple of this.
    pub fn pad_multiple(&self) -> usize {
        self.window_size * self.patch * 4
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.window_size == 0 || self.patch == 0 || self.embed_dim == 0 {
            return bad("window_size, patch and embed_dim must be positive".into());
        }
        if !self.window_size.is_multiple_of(2) && self.window_size > 1 {
            return bad(format!("window_size {} must be even", self.window_size));
        }
        if self.depths.contains(&0) {
            return bad(format!("depths {:?} must be positive", self.depths));
        }
        for k in 0..3 {
            let h = self.heads[k];
            if h == 0 || !self.stage_dim(k).is_multiple_of(h) {
                return bad(format!(
                    "stage {k} width {} not divisible by {h} heads",
                    self.stage_dim(k)
                ));
            }
        }
        if self.mdta_heads == 0 || !self.embed_dim.is_multiple_of(self.mdta_heads) {
            return bad(format!(
                "embed_dim {} not divisible by {} channel-attention heads",
                self.embed_dim, self.mdta_heads
            ));
        }
        if self.gdfn_expansion == 0 {
            return bad("gdfn_expansion must be positive".into());
        }
        if !(self.mlp_ratio > 0.0 && self.mlp_ratio.is_finite()) {
            return bad(format!("mlp_ratio {} must be positive", self.mlp_ratio));
        }
        Ok(())
    }
}
