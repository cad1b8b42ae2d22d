use serde::{Deserialize, Serialize};

use crate::diffcore::{LayerKind, LayerSpec};
use crate::error::{Error, Result};

/// The four networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Weibull head; trained by pre-training on RUL then censored NLL.
    Dw,
    /// Shared trunk with failure-prediction and RUL heads.
    Mtl,
    /// Failure-prediction baseline.
    FpRnn,
    /// RUL regression baseline.
    RulRnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dw => "dw",
            Self::Mtl => "mtl",
            Self::FpRnn => "fp_rnn",
            Self::RulRnn => "rul_rnn",
        }
    }

    /// Heads the kind requires and their final output width.
    pub fn heads(self) -> &'static [(&'static str, usize)] {
        match self {
            Self::Dw => &[(HEAD_WEIBULL, 2)],
            Self::Mtl => &[(HEAD_FP, 2), (HEAD_RUL, 1)],
            Self::FpRnn => &[(HEAD_FP, 2)],
            Self::RulRnn => &[(HEAD_RUL, 1)],
        }
    }

    pub fn has_rul(self) -> bool {
        self != Self::FpRnn
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dw" => Ok(Self::Dw),
            "mtl" => Ok(Self::Mtl),
            "fp_rnn" => Ok(Self::FpRnn),
            "rul_rnn" => Ok(Self::RulRnn),
            other => Err(Error::config(format!("unknown model kind {other:?}"))),
        }
    }
}

pub const HEAD_FP: &str = "fp";
pub const HEAD_RUL: &str = "rul";
pub const HEAD_WEIBULL: &str = "weibull";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub name: String,
    pub layers: Vec<LayerSpec>,
}

/// Trunk (recurrent stack then FC layers) and task heads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub trunk: Vec<LayerSpec>,
    pub heads: Vec<HeadSpec>,
}

fn head(name: &str, layers: Vec<LayerSpec>) -> HeadSpec {
    HeadSpec {
        name: name.to_string(),
        layers,
    }
}

fn trunk(lstm: usize, fc: &[usize], dropout: f64) -> Vec<LayerSpec> {
    std::iter::once(LayerSpec::lstm(lstm))
        .chain(fc.iter().map(|&w| LayerSpec::elu(w, dropout)))
        .collect()
}

impl ArchitectureSpec {
    /// Architectures for C-MAPSS.
    pub fn cmapss(kind: ModelKind) -> Self {
        let p = DEFAULT_DROPOUT;
        match kind {
            ModelKind::FpRnn => Self {
                trunk: trunk(128, &[32, 16], p),
                heads: vec![head(HEAD_FP, vec![LayerSpec::linear(2)])],
            },
            ModelKind::RulRnn => Self {
                trunk: trunk(128, &[64, 32], p),
                heads: vec![head(HEAD_RUL, vec![LayerSpec::linear(1)])],
            },
            ModelKind::Dw => Self {
                trunk: trunk(128, &[32, 16], p),
                heads: vec![head(HEAD_WEIBULL, vec![LayerSpec::linear(2)])],
            },
            ModelKind::Mtl => Self {
                trunk: trunk(200, &[100, 64], p),
                heads: vec![
                    head(HEAD_FP, vec![LayerSpec::linear(2)]),
                    head(HEAD_RUL, vec![LayerSpec::elu(32, p), LayerSpec::linear(1)]),
                ],
            },
        }
    }

    /// Architectures for Backblaze.
    pub fn backblaze(kind: ModelKind) -> Self {
        let p = DEFAULT_DROPOUT;
        match kind {
            ModelKind::FpRnn => Self {
                trunk: trunk(64, &[16], p),
                heads: vec![head(HEAD_FP, vec![LayerSpec::linear(2)])],
            },
            ModelKind::RulRnn => Self {
                trunk: trunk(64, &[32], p),
                heads: vec![head(HEAD_RUL, vec![LayerSpec::linear(1)])],
            },
            ModelKind::Dw => Self {
                trunk: trunk(64, &[32, 16], p),
                heads: vec![head(HEAD_WEIBULL, vec![LayerSpec::linear(2)])],
            },
            ModelKind::Mtl => Self {
                trunk: trunk(100, &[64, 16], p),
                heads: vec![
                    head(HEAD_FP, vec![LayerSpec::linear(2)]),
                    head(HEAD_RUL, vec![LayerSpec::elu(16, p), LayerSpec::linear(1)]),
                ],
            },
        }
    }

    /// A small network for tests and gradient checks.
    pub fn tiny(kind: ModelKind, lstm: usize, fc: usize) -> Self {
        let heads = kind
            .heads()
            .iter()
            .map(|&(name, width)| {
                let mut layers = Vec::new();
                if kind == ModelKind::Mtl && name == HEAD_RUL {
                    layers.push(LayerSpec::elu(fc, 0.0));
                }
                layers.push(LayerSpec::linear(width));
                head(name, layers)
            })
            .collect();
        Self {
            trunk: trunk(lstm, &[fc], 0.0),
            heads,
        }
    }

    pub fn head(&self, name: &str) -> Option<&HeadSpec> {
        self.heads.iter().find(|h| h.name == name)
    }

    pub fn validate(&self, kind: ModelKind) -> Result<()> {
        for l in self.trunk.iter().chain(self.heads.iter().flat_map(|h| &h.layers)) {
            l.validate()?;
        }
        if self.trunk.first().map(|l| l.kind) != Some(LayerKind::Recurrent) {
            return Err(Error::config("trunk must start with a recurrent layer"));
        }
        let stack = self.trunk.iter().take_while(|l| l.kind == LayerKind::Recurrent).count();
        if self.trunk[stack..].iter().any(|l| l.kind == LayerKind::Recurrent) {
            return Err(Error::config("recurrent layers must form one stack at the start of the trunk"));
        }
        if self.heads.iter().flat_map(|h| &h.layers).any(|l| l.kind == LayerKind::Recurrent) {
            return Err(Error::config("heads cannot contain recurrent layers"));
        }
        let expected = kind.heads();
        if self.heads.len() != expected.len() {
            return Err(Error::config(format!(
                "{} needs heads {:?}, found {:?}",
                kind.name(),
                expected.iter().map(|h| h.0).collect::<Vec<_>>(),
                self.heads.iter().map(|h| &h.name).collect::<Vec<_>>()
            )));
        }
        for &(name, width) in expected {
            let h = self
                .head(name)
                .ok_or_else(|| Error::config(format!("{} needs a {name} head", kind.name())))?;
            match h.layers.iter().rev().find(|l| l.kind != LayerKind::Dropout) {
                Some(last) if last.kind == LayerKind::FcLinear && last.width == width => {}
                _ => {
                    return Err(Error::config(format!(
                        "{name} head must end with a linear layer of width {width}"
                    )))
                }
            }
        }
        Ok(())
    }
}

pub const DEFAULT_DROPOUT: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for kind in [ModelKind::Dw, ModelKind::Mtl, ModelKind::FpRnn, ModelKind::RulRnn] {
            ArchitectureSpec::cmapss(kind).validate(kind).unwrap();
            ArchitectureSpec::backblaze(kind).validate(kind).unwrap();
            ArchitectureSpec::tiny(kind, 3, 2).validate(kind).unwrap();
            assert_eq!(kind.name().parse::<ModelKind>().unwrap(), kind);
        }
    }

    #[test]
    fn mtl_cmapss_layer_widths() {
        let a = ArchitectureSpec::cmapss(ModelKind::Mtl);
        let widths: Vec<_> = a.trunk.iter().map(|l| l.width).collect();
        assert_eq!(widths, vec![200, 100, 64]);
        assert_eq!(a.head(HEAD_RUL).unwrap().layers[0].width, 32);
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        let mut a = ArchitectureSpec::cmapss(ModelKind::Dw);
        assert!(a.validate(ModelKind::Mtl).is_err());
        a.heads[0].layers[0].width = 3;
        assert!(a.validate(ModelKind::Dw).is_err());
        let mut b = ArchitectureSpec::cmapss(ModelKind::FpRnn);
        b.trunk.swap(0, 1);
        assert!(b.validate(ModelKind::FpRnn).is_err());
        let mut c = ArchitectureSpec::cmapss(ModelKind::FpRnn);
        c.trunk.push(LayerSpec::lstm(4));
        assert!(c.validate(ModelKind::FpRnn).is_err());
    }
}
