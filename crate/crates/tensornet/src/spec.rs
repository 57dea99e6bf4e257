use serde::{Deserialize, Serialize};

use crate::{NetError, Result};

/// One entry of a sequential network description.
///
/// `Concat { skip }` concatenates (along channels) the running activation
/// with the *output* of layer `skip`, placing the running activation first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_ch: usize,
        k: usize,
        pad: usize,
        bias: bool,
    },
    BatchNorm {
        ch: usize,
    },
    Relu,
    MaxPool2,
    UpsampleNearest2,
    Concat {
        skip: usize,
    },
    Sigmoid,
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2 => "max_pool2",
            LayerSpec::UpsampleNearest2 => "upsample_nearest2",
            LayerSpec::Concat { .. } => "concat",
            LayerSpec::Sigmoid => "sigmoid",
        }
    }
}

/// Architecture plus the seed used to initialize its parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub in_ch: usize,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

/// Symbolic per-layer output description used for validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Symbolic {
    pub channels: usize,
    /// Net number of 2× downsamplings applied so far.
    pub level: i32,
    /// Spatial change from convolutions without "same" padding, per level.
    pub shrink: i64,
}

impl NetworkSpec {
    /// Checks channel compatibility and skip references; returns the
    /// symbolic output of every layer.
    pub(crate) fn validate(&self) -> Result<Vec<Symbolic>> {
        if self.in_ch == 0 {
            return Err(NetError::Structural {
                layer: 0,
                op: "input",
                reason: "input channel count must be >= 1".into(),
            });
        }
        let mut out: Vec<Symbolic> = Vec::with_capacity(self.layers.len());
        let mut cur = Symbolic {
            channels: self.in_ch,
            level: 0,
            shrink: 0,
        };
        for (i, layer) in self.layers.iter().enumerate() {
            let err = |reason: String| NetError::Structural {
                layer: i,
                op: layer.name(),
                reason,
            };
            cur = match *layer {
                LayerSpec::Conv2d { out_ch, k, pad, .. } => {
                    if out_ch == 0 || k == 0 {
                        return Err(err("out_ch and k must be >= 1".into()));
                    }
                    if 2 * pad > k {
                        return Err(err(format!("padding {pad} too large for kernel {k}")));
                    }
                    Symbolic {
                        channels: out_ch,
                        shrink: cur.shrink + (k as i64 - 1 - 2 * pad as i64),
                        ..cur
                    }
                }
                LayerSpec::BatchNorm { ch } => {
                    if ch != cur.channels {
                        return Err(err(format!(
                            "declared {ch} channels but input has {}",
                            cur.channels
                        )));
                    }
                    cur
                }
                LayerSpec::Relu | LayerSpec::Sigmoid => cur,
                LayerSpec::MaxPool2 => Symbolic {
                    level: cur.level + 1,
                    ..cur
                },
                LayerSpec::UpsampleNearest2 => {
                    if cur.level == 0 {
                        return Err(err("upsampling above input resolution".into()));
                    }
                    Symbolic {
                        level: cur.level - 1,
                        ..cur
                    }
                }
                LayerSpec::Concat { skip } => {
                    if skip >= i {
                        return Err(err(format!("skip {skip} does not refer to an earlier layer")));
                    }
                    let s = out[skip];
                    if s.level != cur.level || s.shrink != cur.shrink {
                        return Err(err(format!(
                            "skip {skip} has different spatial resolution"
                        )));
                    }
                    Symbolic {
                        channels: cur.channels + s.channels,
                        ..cur
                    }
                }
            };
            out.push(cur);
        }
        Ok(out)
    }

    pub fn out_channels(&self) -> Result<usize> {
        Ok(self
            .validate()?
            .last()
            .map(|s| s.channels)
            .unwrap_or(self.in_ch))
    }

    /// Number of pooling levels the input must be divisible by.
    pub fn pool_depth(&self) -> u32 {
        let mut level = 0i32;
        let mut max = 0i32;
        for l in &self.layers {
            match l {
                LayerSpec::MaxPool2 => {
                    level += 1;
                    max = max.max(level);
                }
                LayerSpec::UpsampleNearest2 => level -= 1,
                _ => {}
            }
        }
        max as u32
    }
}
