use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Fully connected; flattens any per-sample input shape.
    Linear { inputs: usize, outputs: usize },
    /// 3x3 convolution with padding 1 and no bias.
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        stride: usize,
    },
    Relu,
    BatchNorm { channels: usize },
    GlobalAvgPool,
    /// Marks the logits output; the loss is applied outside the layer stack.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    /// Whether the weight tensor is sparsely reparameterized.
    #[serde(default)]
    pub sparse: bool,
}

impl LayerSpec {
    pub fn new(kind: LayerKind) -> Self {
        Self {
            kind,
            sparse: false,
        }
    }

    pub fn sparse(kind: LayerKind) -> Self {
        Self { kind, sparse: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRole {
    Weight,
    Bias,
    BnScale,
    BnShift,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub layer: usize,
    pub role: ParamRole,
    pub shape: Vec<usize>,
    pub sparse: bool,
    /// Glorot fan sizes for weights.
    pub fan_in: usize,
    pub fan_out: usize,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub name: String,
    /// Per-sample input shape, e.g. `[784]` or `[3, 32, 32]`.
    pub input: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Fully connected ReLU network; every linear layer shares `sparse`.
    pub fn mlp(name: &str, inputs: usize, hidden: &[usize], classes: usize, sparse: bool) -> Self {
        let mut layers = Vec::new();
        let mut prev = inputs;
        for &h in hidden {
            layers.push(LayerSpec {
                kind: LayerKind::Linear {
                    inputs: prev,
                    outputs: h,
                },
                sparse,
            });
            layers.push(LayerSpec::new(LayerKind::Relu));
            prev = h;
        }
        layers.push(LayerSpec {
            kind: LayerKind::Linear {
                inputs: prev,
                outputs: classes,
            },
            sparse,
        });
        layers.push(LayerSpec::new(LayerKind::SoftmaxCrossEntropy));
        Self {
            name: name.to_string(),
            input: vec![inputs],
            layers,
        }
    }

    /// LeNet-300-100 for 28x28 inputs with all three linear layers sparse.
    pub fn lenet_300_100() -> Self {
        Self::mlp("lenet300_100", 784, &[300, 100], 10, true)
    }

    /// Small pre-activation CNN. The first convolution, the strided
    /// (downsampling) convolutions and the classifier stay dense.
    pub fn small_cnn(in_channels: usize, side: usize, width: usize, classes: usize) -> Self {
        use LayerKind::*;
        let w = width;
        let layers = vec![
            LayerSpec::new(Conv3x3 {
                in_channels,
                out_channels: w,
                stride: 1,
            }),
            LayerSpec::new(BatchNorm { channels: w }),
            LayerSpec::new(Relu),
            LayerSpec::sparse(Conv3x3 {
                in_channels: w,
                out_channels: w,
                stride: 1,
            }),
            LayerSpec::new(BatchNorm { channels: w }),
            LayerSpec::new(Relu),
            LayerSpec::new(Conv3x3 {
                in_channels: w,
                out_channels: 2 * w,
                stride: 2,
            }),
            LayerSpec::new(BatchNorm { channels: 2 * w }),
            LayerSpec::new(Relu),
            LayerSpec::sparse(Conv3x3 {
                in_channels: 2 * w,
                out_channels: 2 * w,
                stride: 1,
            }),
            LayerSpec::new(BatchNorm { channels: 2 * w }),
            LayerSpec::new(Relu),
            LayerSpec::new(GlobalAvgPool),
            LayerSpec::new(Linear {
                inputs: 2 * w,
                outputs: classes,
            }),
            LayerSpec::new(SoftmaxCrossEntropy),
        ];
        Self {
            name: format!("cnn{w}"),
            input: vec![in_channels, side, side],
            layers,
        }
    }

    /// Looks up a built-in architecture by name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "lenet300_100" | "lenet-300-100" => Ok(Self::lenet_300_100()),
            "cnn_mnist" => Ok(Self::small_cnn(1, 28, 8, 10)),
            "cnn_cifar" => Ok(Self::small_cnn(3, 32, 16, 10)),
            other => {
                if let Some(rest) = other.strip_prefix("mlp:") {
                    // mlp:IN-H1-H2-...-CLASSES
                    let dims: std::result::Result<Vec<usize>, _> =
                        rest.split('-').map(str::parse).collect();
                    let dims = dims
                        .map_err(|e| Error::Config(format!("bad mlp spec {other:?}: {e}")))?;
                    if dims.len() < 2 {
                        return Err(Error::Config(format!("bad mlp spec {other:?}")));
                    }
                    let hidden = &dims[1..dims.len() - 1];
                    return Ok(Self::mlp(other, dims[0], hidden, dims[dims.len() - 1], true));
                }
                Err(Error::Config(format!("unknown network {other:?}")))
            }
        }
    }

    /// Validates the layer chain and returns the per-sample output shape of
    /// every layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut cur = self.input.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let err = |msg: String| Error::Shape(format!("layer {li} ({:?}): {msg}", layer.kind));
            if layer.sparse && !matches!(layer.kind, LayerKind::Linear { .. } | LayerKind::Conv3x3 { .. }) {
                return Err(err("only linear and conv weights can be sparse".into()));
            }
            cur = match layer.kind {
                LayerKind::Linear { inputs, outputs } => {
                    let flat: usize = cur.iter().product();
                    if flat != inputs {
                        return Err(err(format!("expects {inputs} inputs, got {cur:?}")));
                    }
                    vec![outputs]
                }
                LayerKind::Conv3x3 {
                    in_channels,
                    out_channels,
                    stride,
                } => {
                    if cur.len() != 3 || cur[0] != in_channels {
                        return Err(err(format!("expects [{in_channels}, H, W], got {cur:?}")));
                    }
                    if stride == 0 {
                        return Err(err("stride must be positive".into()));
                    }
                    let h = (cur[1] - 1) / stride + 1;
                    let w = (cur[2] - 1) / stride + 1;
                    vec![out_channels, h, w]
                }
                LayerKind::BatchNorm { channels } => {
                    if cur[0] != channels {
                        return Err(err(format!("expects {channels} channels, got {cur:?}")));
                    }
                    cur
                }
                LayerKind::GlobalAvgPool => {
                    if cur.len() != 3 {
                        return Err(err(format!("expects [C, H, W], got {cur:?}")));
                    }
                    vec![cur[0]]
                }
                LayerKind::Relu => cur,
                LayerKind::SoftmaxCrossEntropy => {
                    if li + 1 != self.layers.len() || cur.len() != 1 {
                        return Err(err("must be the last layer and follow a flat output".into()));
                    }
                    cur
                }
            };
            out.push(cur.clone());
        }
        match self.layers.last() {
            Some(l) if l.kind == LayerKind::SoftmaxCrossEntropy => Ok(out),
            _ => Err(Error::Shape("network must end with SoftmaxCrossEntropy".into())),
        }
    }

    pub fn num_classes(&self) -> Result<usize> {
        let shapes = self.shapes()?;
        Ok(shapes.last().map(|s| s[0]).unwrap_or(0))
    }

    /// Trainable tensors in forward order.
    pub fn param_infos(&self) -> Vec<ParamInfo> {
        let mut out = Vec::new();
        for (li, layer) in self.layers.iter().enumerate() {
            match layer.kind {
                LayerKind::Linear { inputs, outputs } => {
                    out.push(ParamInfo {
                        name: format!("l{li}.weight"),
                        layer: li,
                        role: ParamRole::Weight,
                        shape: vec![outputs, inputs],
                        sparse: layer.sparse,
                        fan_in: inputs,
                        fan_out: outputs,
                    });
                    out.push(ParamInfo {
                        name: format!("l{li}.bias"),
                        layer: li,
                        role: ParamRole::Bias,
                        shape: vec![outputs],
                        sparse: false,
                        fan_in: 0,
                        fan_out: 0,
                    });
                }
                LayerKind::Conv3x3 {
                    in_channels,
                    out_channels,
                    ..
                } => out.push(ParamInfo {
                    name: format!("l{li}.weight"),
                    layer: li,
                    role: ParamRole::Weight,
                    shape: vec![out_channels, in_channels, 3, 3],
                    sparse: layer.sparse,
                    fan_in: in_channels * 9,
                    fan_out: out_channels * 9,
                }),
                LayerKind::BatchNorm { channels } => {
                    for (role, suffix) in [(ParamRole::BnScale, "gamma"), (ParamRole::BnShift, "beta")] {
                        out.push(ParamInfo {
                            name: format!("l{li}.{suffix}"),
                            layer: li,
                            role,
                            shape: vec![channels],
                            sparse: false,
                            fan_in: 0,
                            fan_out: 0,
                        });
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Number of BatchNorm layers, i.e. running-statistics buffers.
    pub fn batchnorm_channels(&self) -> Vec<usize> {
        self.layers
            .iter()
            .filter_map(|l| match l.kind {
                LayerKind::BatchNorm { channels } => Some(channels),
                _ => None,
            })
            .collect()
    }

    pub fn sparse_weight_count(&self) -> usize {
        self.param_infos()
            .iter()
            .filter(|p| p.sparse)
            .map(ParamInfo::len)
            .sum()
    }

    pub fn total_param_count(&self) -> usize {
        self.param_infos().iter().map(ParamInfo::len).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenet_counts() {
        let net = NetworkSpec::lenet_300_100();
        net.shapes().unwrap();
        assert_eq!(net.sparse_weight_count(), 784 * 300 + 300 * 100 + 100 * 10);
        assert_eq!(net.sparse_weight_count(), 266_200);
        assert_eq!(net.total_param_count(), 266_610);
    }

    #[test]
    fn cnn_shapes_chain() {
        let net = NetworkSpec::small_cnn(3, 32, 8, 10);
        let shapes = net.shapes().unwrap();
        assert_eq!(shapes[6], vec![16, 16, 16]);
        assert_eq!(shapes.last().unwrap(), &vec![10]);
        let sparse: Vec<_> = net.param_infos().into_iter().filter(|p| p.sparse).collect();
        assert_eq!(sparse.len(), 2);
        assert!(sparse.iter().all(|p| p.shape.len() == 4));
    }

    #[test]
    fn chain_mismatch_is_rejected() {
        let mut net = NetworkSpec::lenet_300_100();
        net.layers[2].kind = LayerKind::Linear {
            inputs: 299,
            outputs: 100,
        };
        assert!(net.shapes().is_err());
    }

    #[test]
    fn sparse_flag_on_batchnorm_is_rejected() {
        let mut net = NetworkSpec::small_cnn(1, 8, 4, 2);
        net.layers[1].sparse = true;
        assert!(net.shapes().is_err());
    }

    #[test]
    fn mlp_by_name() {
        let net = NetworkSpec::by_name("mlp:20-16-3").unwrap();
        assert_eq!(net.param_infos().len(), 4);
        assert_eq!(net.num_classes().unwrap(), 3);
    }
}
