use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Activation, PoolKind};
use crate::error::{Error, Result};
use crate::volume::Dims;

/// Depths of the architecture family.
pub const DEPTHS: [usize; 5] = [4, 6, 8, 10, 12];
/// Number of conv+pool blocks.
pub const BLOCKS: usize = 4;

pub const PAPER_INPUT: Dims = Dims::new(96, 96, 73);
pub const PAPER_POOLING: [usize; BLOCKS] = [4, 3, 2, 2];

/// Declarative description of one member of the CNN family.
///
/// Block `i` (1-based) has `base_filters * i` filters; its conv layer is
/// repeated `insertion_counts()[i-1]` extra times before the block's pooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureSpec {
    pub depth: usize,
    pub input_dims: Dims,
    #[serde(default = "one")]
    pub in_channels: usize,
    #[serde(default = "eight")]
    pub base_filters: usize,
    #[serde(default = "paper_pooling")]
    pub pooling_sizes: [usize; BLOCKS],
    #[serde(default)]
    pub dropout_p: f64,
    #[serde(default = "two")]
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub pool_kind: PoolKind,
    #[serde(default = "bn_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "bn_epsilon")]
    pub bn_epsilon: f64,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn eight() -> usize {
    8
}
fn paper_pooling() -> [usize; BLOCKS] {
    PAPER_POOLING
}
fn bn_momentum() -> f64 {
    super::batchnorm::DEFAULT_MOMENTUM
}
fn bn_epsilon() -> f64 {
    super::batchnorm::DEFAULT_EPSILON
}

impl ArchitectureSpec {
    /// The family member of the given depth on the full-resolution input.
    pub fn paper(depth: usize) -> Self {
        Self::with_input(depth, PAPER_INPUT)
    }

    pub fn with_input(depth: usize, input_dims: Dims) -> Self {
        Self {
            depth,
            input_dims,
            in_channels: 1,
            base_filters: 8,
            pooling_sizes: PAPER_POOLING,
            dropout_p: 0.0,
            num_classes: 2,
            activation: Activation::Relu,
            pool_kind: PoolKind::Max,
            bn_momentum: bn_momentum(),
            bn_epsilon: bn_epsilon(),
        }
    }

    /// Extra conv layers per block, dealt round-robin from block 1.
    pub fn insertion_counts(&self) -> [usize; BLOCKS] {
        let mut counts = [0; BLOCKS];
        for k in 0..self.depth.saturating_sub(BLOCKS) {
            counts[k % BLOCKS] += 1;
        }
        counts
    }

    pub fn block_filters(&self, block: usize) -> usize {
        self.base_filters * (block + 1)
    }

    /// `(in_channels, out_channels)` of every conv layer in order.
    pub fn conv_layers(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.depth);
        let mut c = self.in_channels;
        for (block, extra) in self.insertion_counts().into_iter().enumerate() {
            let f = self.block_filters(block);
            for _ in 0..=extra {
                out.push((c, f));
                c = f;
            }
        }
        out
    }

    /// Spatial dims after each block's pooling.
    pub fn pooled_dims(&self) -> Vec<Dims> {
        let mut d = self.input_dims;
        self.pooling_sizes
            .iter()
            .map(|&k| {
                d = Dims::new(d.nx / k.max(1), d.ny / k.max(1), d.nz / k.max(1));
                d
            })
            .collect()
    }

    pub fn fc_input_len(&self) -> usize {
        self.pooled_dims().last().map_or(0, |d| d.len()) * self.block_filters(BLOCKS - 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidSpec(msg));
        if !DEPTHS.contains(&self.depth) {
            return bad(format!("depth {} not in {DEPTHS:?}", self.depth));
        }
        if self.input_dims.is_empty() || self.in_channels == 0 || self.base_filters == 0 {
            return bad(format!("empty input {} or zero channels", self.input_dims));
        }
        if self.pooling_sizes.contains(&0) {
            return bad(format!("pooling sizes {:?} must be positive", self.pooling_sizes));
        }
        if !(0.0..=0.5).contains(&self.dropout_p) {
            return bad(format!("dropout {} outside [0, 0.5]", self.dropout_p));
        }
        if self.num_classes < 2 {
            return bad(format!("{} classes", self.num_classes));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) || !(self.bn_epsilon > 0.0) {
            return bad(format!("batch norm momentum {} / epsilon {}", self.bn_momentum, self.bn_epsilon));
        }
        if let Activation::LeakyRelu { slope } = self.activation {
            if !slope.is_finite() {
                return bad(format!("leaky slope {slope}"));
            }
        }
        let mut d = self.input_dims;
        for (i, pd) in self.pooled_dims().into_iter().enumerate() {
            if pd.is_empty() {
                return bad(format!(
                    "pooling {} after block {} collapses {d} to {pd}",
                    self.pooling_sizes[i],
                    i + 1
                ));
            }
            d = pd;
        }
        Ok(())
    }
}
