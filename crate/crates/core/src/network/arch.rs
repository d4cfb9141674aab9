use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::conv_out_len;

/// One feature-extractor stage. Convolutions are always followed by ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
}

/// Ordered feature stages; the head (global average pooling, then a dense
/// layer) is implicit and always present.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub stages: Vec<Stage>,
}

impl Architecture {
    /// Three 3x3 convolutions with 16, 32 and 100 filters. The first two use
    /// stride 2, which equals a stride-1 convolution followed by stride-2
    /// subsampling.
    pub fn small() -> Self {
        Architecture {
            stages: vec![
                Stage::Conv { filters: 16, kernel: 3, stride: 2, pad: 1 },
                Stage::Conv { filters: 32, kernel: 3, stride: 2, pad: 1 },
                Stage::Conv { filters: 100, kernel: 3, stride: 1, pad: 1 },
            ],
        }
    }

    /// Two 3x3 convolutions (32, 64 filters), each followed by 2x2 max-pooling.
    pub fn pool() -> Self {
        Architecture {
            stages: vec![
                Stage::Conv { filters: 32, kernel: 3, stride: 1, pad: 1 },
                Stage::MaxPool { size: 2, stride: 2 },
                Stage::Conv { filters: 64, kernel: 3, stride: 1, pad: 1 },
                Stage::MaxPool { size: 2, stride: 2 },
            ],
        }
    }

    /// Shape `[K, h, w]` of the penultimate feature maps for `input = [C, H, W]`.
    pub fn feature_shape(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let [mut c, mut h, mut w] = input;
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!("input shape {input:?} has a zero extent")));
        }
        for (i, stage) in self.stages.iter().enumerate() {
            let (k, s, p, out_c) = match *stage {
                Stage::Conv { filters, kernel, stride, pad } => (kernel, stride, pad, filters),
                Stage::MaxPool { size, stride } => (size, stride, 0, c),
            };
            let bad = || {
                Error::invalid(format!(
                    "input shape {input:?} incompatible with stage {i} ({stage})"
                ))
            };
            h = conv_out_len(h, k, s, p).ok_or_else(bad)?;
            w = conv_out_len(w, k, s, p).ok_or_else(bad)?;
            if out_c == 0 {
                return Err(bad());
            }
            c = out_c;
        }
        Ok([c, h, w])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Stage::Conv { filters, kernel, stride, pad } => {
                write!(f, "conv{filters}k{kernel}s{stride}p{pad}")
            }
            Stage::MaxPool { size, stride } => write!(f, "maxpool{size}s{stride}"),
        }
    }
}

impl fmt::Display for Architecture {
    /// `small`, `pool`, or a `-`-joined stage list (`linear` when empty).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == Architecture::small() {
            return f.write_str("small");
        }
        if *self == Architecture::pool() {
            return f.write_str("pool");
        }
        if self.stages.is_empty() {
            return f.write_str("linear");
        }
        let parts: Vec<String> = self.stages.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

fn split_num(s: &str) -> Option<(usize, &str)> {
    let end = s.find(|c: char| !c.is_ascii_digit()).unwrap_or(s.len());
    Some((s[..end].parse().ok()?, &s[end..]))
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unrecognized stage `{s}`"));
        if let Some(rest) = s.strip_prefix("conv") {
            let (filters, rest) = split_num(rest).ok_or_else(bad)?;
            let (kernel, rest) = split_num(rest.strip_prefix('k').ok_or_else(bad)?).ok_or_else(bad)?;
            let (stride, rest) = split_num(rest.strip_prefix('s').ok_or_else(bad)?).ok_or_else(bad)?;
            let (pad, rest) = split_num(rest.strip_prefix('p').ok_or_else(bad)?).ok_or_else(bad)?;
            if !rest.is_empty() || kernel == 0 || stride == 0 {
                return Err(bad());
            }
            Ok(Stage::Conv { filters, kernel, stride, pad })
        } else if let Some(rest) = s.strip_prefix("maxpool") {
            let (size, rest) = split_num(rest).ok_or_else(bad)?;
            let (stride, rest) = split_num(rest.strip_prefix('s').ok_or_else(bad)?).ok_or_else(bad)?;
            if !rest.is_empty() || size == 0 || stride == 0 {
                return Err(bad());
            }
            Ok(Stage::MaxPool { size, stride })
        } else {
            Err(bad())
        }
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "small" => Ok(Architecture::small()),
            "pool" => Ok(Architecture::pool()),
            "linear" => Ok(Architecture { stages: vec![] }),
            other => Ok(Architecture {
                stages: other.split('-').map(str::parse).collect::<Result<_>>()?,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_feature_shapes() {
        assert_eq!(Architecture::small().feature_shape([1, 28, 28]).unwrap(), [100, 7, 7]);
        assert_eq!(Architecture::pool().feature_shape([1, 28, 28]).unwrap(), [64, 7, 7]);
    }

    #[test]
    fn tags_round_trip() {
        for tag in ["small", "pool", "linear", "conv8k3s1p1-maxpool2s2", "conv4k5s2p0"] {
            let arch: Architecture = tag.parse().unwrap();
            assert_eq!(arch.to_string(), tag);
        }
        assert!("conv8k3".parse::<Architecture>().is_err());
    }

    #[test]
    fn incompatible_input_rejected() {
        let arch: Architecture = "conv4k5s1p0".parse().unwrap();
        assert!(arch.feature_shape([1, 3, 3]).is_err());
    }
}
