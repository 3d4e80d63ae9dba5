//! Declarative network description and shape validation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{batchnorm, pooled_extent, DEFAULT_LEAKY_SLOPE};

/// One row of the network table.
///
/// Text form (used in config files): `conv 32 bn`, `pool dropout=0.25`,
/// `dense 256 bn dropout=0.5`, `softmax 24`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum LayerSpec {
    /// 3x3 same-padded convolution, optionally batch-normalized, then leaky ReLU.
    Conv { filters: usize, batch_norm: bool },
    /// 3x3 stride-2 max pooling, optionally followed by dropout.
    MaxPool { dropout: Option<f64> },
    /// Fully connected layer, optional batch norm, leaky ReLU, optional dropout.
    Dense {
        units: usize,
        batch_norm: bool,
        dropout: Option<f64>,
    },
    /// Final linear classifier producing logits.
    Softmax { classes: usize },
}

impl LayerSpec {
    pub fn conv(filters: usize) -> Self {
        LayerSpec::Conv {
            filters,
            batch_norm: true,
        }
    }

    pub fn pool() -> Self {
        LayerSpec::MaxPool { dropout: None }
    }

    pub fn dense(units: usize, dropout: Option<f64>) -> Self {
        LayerSpec::Dense {
            units,
            batch_norm: true,
            dropout,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Conv { .. } => "conv",
            LayerSpec::MaxPool { .. } => "pool",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Softmax { .. } => "softmax",
        }
    }

    pub fn has_batch_norm(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv { batch_norm: true, .. } | LayerSpec::Dense { batch_norm: true, .. }
        )
    }

    pub fn dropout(&self) -> Option<f64> {
        match self {
            LayerSpec::MaxPool { dropout } | LayerSpec::Dense { dropout, .. } => *dropout,
            _ => None,
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { filters, batch_norm } => {
                write!(f, "conv {filters}")?;
                if *batch_norm {
                    f.write_str(" bn")?;
                }
            }
            LayerSpec::MaxPool { .. } => f.write_str("pool")?,
            LayerSpec::Dense { units, batch_norm, .. } => {
                write!(f, "dense {units}")?;
                if *batch_norm {
                    f.write_str(" bn")?;
                }
            }
            LayerSpec::Softmax { classes } => write!(f, "softmax {classes}")?,
        }
        if let Some(p) = self.dropout() {
            write!(f, " dropout={p}")?;
        }
        Ok(())
    }
}

impl FromStr for LayerSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut words = s.split_whitespace();
        let kind = words.next().ok_or_else(|| "empty layer description".to_string())?;
        let mut size = None;
        let mut batch_norm = false;
        let mut dropout = None;
        for word in words {
            if word == "bn" {
                batch_norm = true;
            } else if let Some(p) = word.strip_prefix("dropout=") {
                let p: f64 = p.parse().map_err(|_| format!("bad dropout value in {s:?}"))?;
                dropout = Some(p);
            } else if size.is_none() {
                size = Some(
                    word.parse::<usize>()
                        .map_err(|_| format!("bad size {word:?} in {s:?}"))?,
                );
            } else {
                return Err(format!("unexpected token {word:?} in {s:?}"));
            }
        }
        let need_size = || size.ok_or_else(|| format!("{kind} layer needs a size: {s:?}"));
        let layer = match kind {
            "conv" => LayerSpec::Conv {
                filters: need_size()?,
                batch_norm,
            },
            "pool" => {
                if size.is_some() || batch_norm {
                    return Err(format!("pool takes only an optional dropout: {s:?}"));
                }
                LayerSpec::MaxPool { dropout }
            }
            "dense" => LayerSpec::Dense {
                units: need_size()?,
                batch_norm,
                dropout,
            },
            "softmax" => LayerSpec::Softmax { classes: need_size()? },
            other => return Err(format!("unknown layer kind {other:?}")),
        };
        if matches!(layer, LayerSpec::Conv { .. } | LayerSpec::Softmax { .. }) && dropout.is_some() {
            return Err(format!("{kind} does not take dropout: {s:?}"));
        }
        if matches!(layer, LayerSpec::Softmax { .. }) && batch_norm {
            return Err(format!("softmax does not take bn: {s:?}"));
        }
        Ok(layer)
    }
}

impl TryFrom<String> for LayerSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<LayerSpec> for String {
    fn from(l: LayerSpec) -> String {
        l.to_string()
    }
}

/// Activation shape between layers (batch axis omitted).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Spatial {
        channels: usize,
        height: usize,
        width: usize,
    },
    Flat(usize),
}

impl ActShape {
    pub fn elements(&self) -> usize {
        match *self {
            ActShape::Spatial {
                channels,
                height,
                width,
            } => channels * height * width,
            ActShape::Flat(d) => d,
        }
    }
}

impl fmt::Display for ActShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActShape::Spatial {
                channels,
                height,
                width,
            } => write!(f, "{channels}x{height}x{width}"),
            ActShape::Flat(d) => write!(f, "{d}"),
        }
    }
}

/// Output shape of every layer, plus the flattened width entering the first dense layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeTrace {
    pub input: ActShape,
    pub outputs: Vec<ActShape>,
    pub flatten_width: Option<usize>,
}

impl ShapeTrace {
    /// Spatial extent after every pooling layer, starting from the input height.
    pub fn pooling_chain(&self) -> Vec<usize> {
        let mut chain = vec![match self.input {
            ActShape::Spatial { height, .. } => height,
            ActShape::Flat(_) => return Vec::new(),
        }];
        for shape in &self.outputs {
            if let ActShape::Spatial { height, .. } = *shape {
                if height != *chain.last().unwrap() {
                    chain.push(height);
                }
            }
        }
        chain
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `[channels, height, width]`
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default = "default_momentum")]
    pub bn_momentum: f64,
    #[serde(default = "default_eps")]
    pub bn_eps: f64,
    pub layers: Vec<LayerSpec>,
}

fn default_slope() -> f64 {
    DEFAULT_LEAKY_SLOPE
}
fn default_momentum() -> f64 {
    batchnorm::DEFAULT_MOMENTUM
}
fn default_eps() -> f64 {
    batchnorm::DEFAULT_EPS
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::annex(24)
    }
}

impl ModelSpec {
    /// The 17-row reference architecture for single-channel 128x128 inputs.
    pub fn annex(num_classes: usize) -> Self {
        use LayerSpec as L;
        let layers = vec![
            L::conv(32),
            L::conv(16),
            L::pool(),
            L::conv(64),
            L::conv(32),
            L::pool(),
            L::conv(128),
            L::conv(128),
            L::conv(64),
            L::pool(),
            L::conv(256),
            L::conv(256),
            L::conv(128),
            L::MaxPool { dropout: Some(0.25) },
            L::dense(256, Some(0.5)),
            L::dense(256, Some(0.5)),
            L::Softmax { classes: num_classes },
        ];
        ModelSpec {
            input_shape: [1, 128, 128],
            num_classes,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            bn_momentum: batchnorm::DEFAULT_MOMENTUM,
            bn_eps: batchnorm::DEFAULT_EPS,
            layers,
        }
    }

    pub fn bn_config(&self) -> batchnorm::BnConfig {
        batchnorm::BnConfig {
            momentum: self.bn_momentum,
            eps: self.bn_eps,
        }
    }

    /// Check that consecutive layers compose and return the shape chain.
    pub fn validate(&self) -> Result<ShapeTrace> {
        let global = |detail: String| Error::Config(format!("model: {detail}"));
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(global(format!("leaky_slope {} outside [0,1)", self.leaky_slope)));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(global(format!("bn_momentum {} outside (0,1)", self.bn_momentum)));
        }
        if self.bn_eps.is_nan() || self.bn_eps <= 0.0 {
            return Err(global(format!("bn_eps {} must be positive", self.bn_eps)));
        }
        if self.num_classes < 2 {
            return Err(global(format!("num_classes {} must be at least 2", self.num_classes)));
        }
        let [c, h, w] = self.input_shape;
        if c == 0 || h == 0 || w == 0 {
            return Err(global(format!("input_shape {:?} has a zero extent", self.input_shape)));
        }
        let input = ActShape::Spatial {
            channels: c,
            height: h,
            width: w,
        };
        let mut shape = input;
        let mut outputs = Vec::with_capacity(self.layers.len());
        let mut flatten_width = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |detail: String| Error::Spec {
                layer: i + 1,
                name: layer.to_string(),
                detail,
            };
            if let Some(p) = layer.dropout() {
                if !(0.0..1.0).contains(&p) {
                    return Err(bad(format!("dropout {p} outside [0,1)")));
                }
            }
            shape = match (layer, shape) {
                (LayerSpec::Conv { filters, .. }, ActShape::Spatial { height, width, .. }) => {
                    if *filters == 0 {
                        return Err(bad("zero filters".into()));
                    }
                    ActShape::Spatial {
                        channels: *filters,
                        height,
                        width,
                    }
                }
                (
                    LayerSpec::MaxPool { .. },
                    ActShape::Spatial {
                        channels,
                        height,
                        width,
                    },
                ) => {
                    let (Some(oh), Some(ow)) = (pooled_extent(height), pooled_extent(width)) else {
                        return Err(bad(format!("input {height}x{width} is smaller than the 3x3 window")));
                    };
                    ActShape::Spatial {
                        channels,
                        height: oh,
                        width: ow,
                    }
                }
                (LayerSpec::Conv { .. } | LayerSpec::MaxPool { .. }, ActShape::Flat(_)) => {
                    return Err(bad("needs a spatial input but follows a dense layer".into()))
                }
                (LayerSpec::Dense { units, .. }, prev) => {
                    if *units == 0 {
                        return Err(bad("zero units".into()));
                    }
                    if flatten_width.is_none() {
                        flatten_width = Some(prev.elements());
                    }
                    ActShape::Flat(*units)
                }
                (LayerSpec::Softmax { classes }, prev) => {
                    if i + 1 != self.layers.len() {
                        return Err(bad("softmax must be the last layer".into()));
                    }
                    if *classes != self.num_classes {
                        return Err(bad(format!(
                            "{classes} outputs but num_classes is {}",
                            self.num_classes
                        )));
                    }
                    if flatten_width.is_none() {
                        flatten_width = Some(prev.elements());
                    }
                    ActShape::Flat(*classes)
                }
            };
            outputs.push(shape);
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Softmax { .. })) {
            return Err(global("the last layer must be softmax".into()));
        }
        Ok(ShapeTrace {
            input,
            outputs,
            flatten_width,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model spec serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("model spec: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annex_has_seventeen_rows_in_order() {
        let spec = ModelSpec::annex(24);
        let kinds: Vec<_> = spec.layers.iter().map(|l| l.to_string()).collect();
        assert_eq!(
            kinds,
            [
                "conv 32 bn",
                "conv 16 bn",
                "pool",
                "conv 64 bn",
                "conv 32 bn",
                "pool",
                "conv 128 bn",
                "conv 128 bn",
                "conv 64 bn",
                "pool",
                "conv 256 bn",
                "conv 256 bn",
                "conv 128 bn",
                "pool dropout=0.25",
                "dense 256 bn dropout=0.5",
                "dense 256 bn dropout=0.5",
                "softmax 24",
            ]
        );
    }

    #[test]
    fn annex_shape_chain() {
        let trace = ModelSpec::annex(24).validate().unwrap();
        assert_eq!(trace.pooling_chain(), [128, 63, 31, 15, 7]);
        assert_eq!(trace.flatten_width, Some(7 * 7 * 128));
        assert_eq!(trace.outputs.last(), Some(&ActShape::Flat(24)));
    }

    #[test]
    fn layer_text_round_trips() {
        for s in [
            "conv 8",
            "conv 8 bn",
            "pool",
            "pool dropout=0.25",
            "dense 4 bn dropout=0.5",
            "softmax 3",
        ] {
            let l: LayerSpec = s.parse().unwrap();
            assert_eq!(l.to_string(), s);
        }
        assert!("conv".parse::<LayerSpec>().is_err());
        assert!("pool 3".parse::<LayerSpec>().is_err());
        assert!("softmax 3 dropout=0.1".parse::<LayerSpec>().is_err());
        assert!("lstm 3".parse::<LayerSpec>().is_err());
    }

    #[test]
    fn spec_toml_round_trips() {
        let spec = ModelSpec::annex(24);
        assert_eq!(ModelSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    }

    #[test]
    fn first_bad_layer_is_named() {
        let mut spec = ModelSpec::annex(24);
        spec.input_shape = [1, 16, 16];
        // 16 -> 7 -> 3 -> 1, the fourth pool (row 14) cannot fit a window
        match spec.validate().unwrap_err() {
            Error::Spec { layer, .. } => assert_eq!(layer, 14),
            other => panic!("unexpected {other}"),
        }

        let mut spec = ModelSpec::annex(24);
        spec.layers.insert(15, LayerSpec::conv(4));
        match spec.validate().unwrap_err() {
            Error::Spec { layer, detail, .. } => {
                assert_eq!(layer, 16);
                assert!(detail.contains("dense"));
            }
            other => panic!("unexpected {other}"),
        }

        let mut spec = ModelSpec::annex(24);
        spec.num_classes = 10;
        assert!(matches!(spec.validate(), Err(Error::Spec { layer: 17, .. })));
    }
}
