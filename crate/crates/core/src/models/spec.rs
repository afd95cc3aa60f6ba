use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Baseconv,
    LinearAttention,
    Transformer,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionalEncoding {
    #[default]
    None,
    Learned,
    OneHot,
}

fn default_heads() -> usize {
    1
}

fn default_mlp_mult() -> usize {
    4
}

/// Architecture description shared by trained and constructed models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    pub layers: usize,
    pub emb: usize,
    #[serde(default = "default_heads")]
    pub heads: usize,
    #[serde(default)]
    pub use_mlp: bool,
    #[serde(default = "default_mlp_mult")]
    pub mlp_mult: usize,
    #[serde(default)]
    pub use_layernorm: bool,
    pub causal: bool,
    pub seq_len: usize,
    pub in_dim: usize,
    pub out_dim: usize,
    #[serde(default)]
    pub positional_encoding: PositionalEncoding,
}

impl ModelSpec {
    /// Defaults for each architecture family at a given width and depth.
    pub fn new(arch: Arch, layers: usize, emb: usize, seq_len: usize, in_dim: usize, out_dim: usize) -> Self {
        let transformer = arch == Arch::Transformer;
        Self {
            arch,
            layers,
            emb,
            heads: 1,
            use_mlp: transformer,
            mlp_mult: 4,
            use_layernorm: transformer,
            causal: arch != Arch::LinearAttention,
            seq_len,
            in_dim,
            out_dim,
            positional_encoding: PositionalEncoding::None,
        }
    }

    /// Channels taken by one-hot positions (appended on the right).
    pub fn pos_width(&self) -> usize {
        match self.positional_encoding {
            PositionalEncoding::OneHot => self.seq_len,
            _ => 0,
        }
    }

    /// Rows of each BaseConv filter: `N` causal, `2N-1` two-sided.
    pub fn filter_len(&self) -> usize {
        if self.causal {
            self.seq_len
        } else {
            2 * self.seq_len - 1
        }
    }

    pub fn head_dim(&self) -> usize {
        self.emb / self.heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        if self.emb == 0 || self.seq_len == 0 || self.in_dim == 0 || self.out_dim == 0 {
            return bad("emb, seq_len, in_dim and out_dim must be positive".into());
        }
        if self.arch == Arch::Transformer && !self.causal {
            return bad("transformer models are causal".into());
        }
        if self.arch != Arch::Baseconv && (self.heads == 0 || self.emb % self.heads != 0) {
            return bad(format!("emb {} not divisible by heads {}", self.emb, self.heads));
        }
        if self.use_mlp && self.mlp_mult == 0 {
            return bad("mlp_mult must be positive".into());
        }
        let need = self.in_dim + self.pos_width();
        if need > self.emb {
            return Err(Error::Capacity {
                required: need,
                available: self.emb,
            });
        }
        if self.out_dim > self.emb {
            return Err(Error::Capacity {
                required: self.out_dim,
                available: self.emb,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_roundtrip_and_unknown_keys() {
        let s = ModelSpec::new(Arch::Transformer, 2, 16, 8, 4, 3);
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&text).unwrap(), s);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["dropout"] = serde_json::json!(0.1);
        assert!(serde_json::from_value::<ModelSpec>(v).is_err());
    }

    #[test]
    fn validation_rules() {
        let mut s = ModelSpec::new(Arch::Transformer, 2, 16, 8, 4, 3);
        s.heads = 3;
        assert!(s.validate().is_err());
        s.heads = 4;
        s.causal = false;
        assert!(s.validate().is_err());
        let mut b = ModelSpec::new(Arch::Baseconv, 1, 10, 8, 4, 3);
        b.positional_encoding = PositionalEncoding::OneHot;
        assert!(matches!(
            b.validate(),
            Err(Error::Capacity {
                required: 12,
                available: 10
            })
        ));
    }
}
