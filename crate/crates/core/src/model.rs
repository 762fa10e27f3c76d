//! LeNet-5 variants for the kernel/arrangement/activation ablations, and the
//! binary checkpoint format.

use std::fmt;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use crate::config::parse_key_values;
use crate::data::Normalization;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::layers::{AvgPool2d, Dense, Flatten, Kerv2d, Kerv2dConfig, Layer, MaxPool2d, Param, Relu};
use crate::patch::PatchGeometry;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotKind {
    Conv,
    Kerv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Arrangement(pub SlotKind, pub SlotKind);

impl Arrangement {
    pub const CONV_CONV: Self = Arrangement(SlotKind::Conv, SlotKind::Conv);
    pub const KERV_CONV: Self = Arrangement(SlotKind::Kerv, SlotKind::Conv);
    pub const CONV_KERV: Self = Arrangement(SlotKind::Conv, SlotKind::Kerv);
    pub const KERV_KERV: Self = Arrangement(SlotKind::Kerv, SlotKind::Kerv);
    pub const ALL: [Self; 4] = [Self::CONV_CONV, Self::KERV_CONV, Self::CONV_KERV, Self::KERV_KERV];
}

impl fmt::Display for Arrangement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = |s: SlotKind| match s {
            SlotKind::Conv => "conv",
            SlotKind::Kerv => "kerv",
        };
        write!(f, "{}-{}", name(self.0), name(self.1))
    }
}

impl FromStr for Arrangement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let slot = |t: &str| match t {
            "conv" => Ok(SlotKind::Conv),
            "kerv" => Ok(SlotKind::Kerv),
            other => Err(Error::Config(format!(
                "unknown layer kind `{other}` in arrangement `{s}`"
            ))),
        };
        let (a, b) = s
            .split_once('-')
            .ok_or_else(|| Error::Config(format!("arrangement `{s}` must look like `kerv-conv`")))?;
        Ok(Arrangement(slot(a.trim())?, slot(b.trim())?))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Pooling {
    #[default]
    Max,
    Avg,
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Max => "max",
            Pooling::Avg => "avg",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(Pooling::Max),
            "avg" => Ok(Pooling::Avg),
            other => Err(Error::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub arrangement: Arrangement,
    pub kernel1: KernelSpec,
    pub kernel2: KernelSpec,
    pub use_relu: bool,
    pub pooling: Pooling,
    pub use_bias: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            arrangement: Arrangement::CONV_CONV,
            kernel1: KernelSpec::Linear,
            kernel2: KernelSpec::Linear,
            use_relu: true,
            pooling: Pooling::Max,
            use_bias: true,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Both layers kervolutional with the same kernel.
    pub fn kerv_kerv(spec: KernelSpec) -> Self {
        Self {
            arrangement: Arrangement::KERV_KERV,
            kernel1: spec,
            kernel2: spec,
            ..Self::default()
        }
    }

    /// Kervolution on the input layer only; the second layer stays a
    /// convolution.
    pub fn kerv_conv(spec: KernelSpec) -> Self {
        Self {
            arrangement: Arrangement::KERV_CONV,
            kernel1: spec,
            ..Self::default()
        }
    }

    /// Activation-free variant with average pooling.
    pub fn without_relu(mut self) -> Self {
        self.use_relu = false;
        self.pooling = Pooling::Avg;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Kernel actually used by slot 0 or 1; conv slots are always linear.
    pub fn effective_kernel(&self, slot: usize) -> KernelSpec {
        let (kind, spec) = match slot {
            0 => (self.arrangement.0, self.kernel1),
            _ => (self.arrangement.1, self.kernel2),
        };
        match kind {
            SlotKind::Conv => KernelSpec::Linear,
            SlotKind::Kerv => spec,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "arrangement={}\nkernel1={}\nkernel2={}\nrelu={}\npooling={}\nbias={}\nseed={}\n",
            self.arrangement, self.kernel1, self.kernel2, self.use_relu, self.pooling, self.use_bias, self.seed
        )
    }

    /// Applies a single `key=value` setting; returns `false` for keys that
    /// do not belong to the model.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<bool> {
        let bool_value = |v: &str| {
            v.parse::<bool>()
                .map_err(|_| Error::Config(format!("`{key}` expects true/false, got `{v}`")))
        };
        match key {
            "arrangement" => self.arrangement = value.parse()?,
            "kernel1" => self.kernel1 = value.parse()?,
            "kernel2" => self.kernel2 = value.parse()?,
            "relu" => self.use_relu = bool_value(value)?,
            "pooling" => self.pooling = value.parse()?,
            "bias" => self.use_bias = bool_value(value)?,
            "seed" => self.seed = value.parse().map_err(|e| Error::Config(format!("`seed`: {e}")))?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_key_values(text)? {
            if !cfg.apply(&key, &value)? {
                return Err(Error::Config(format!("unknown model key `{key}`")));
            }
        }
        Ok(cfg)
    }
}

fn layer_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
}

/// An ordered stack of layers.
pub struct Model {
    config: ModelConfig,
    layers: Vec<Box<dyn Layer>>,
}

/// Builds LeNet-5 for 1×28×28 inputs:
/// `L1(1→6, 5×5, pad 2) → [relu] → pool → L2(6→16, 5×5) → [relu] → pool →
/// flatten(400) → 120 → [relu] → 84 → [relu] → 10`.
pub fn build_lenet5(config: &ModelConfig) -> Result<Model> {
    config.kernel1.validate()?;
    config.kernel2.validate()?;
    let mut layers: Vec<Box<dyn Layer>> = Vec::new();
    let relu = |layers: &mut Vec<Box<dyn Layer>>| {
        if config.use_relu {
            layers.push(Box::new(Relu::new()));
        }
    };
    let pool = |layers: &mut Vec<Box<dyn Layer>>| {
        layers.push(match config.pooling {
            Pooling::Max => Box::new(MaxPool2d::new(2, 2)),
            Pooling::Avg => Box::new(AvgPool2d::new(2, 2)),
        });
    };

    let geom1 = PatchGeometry::new(5, 5).with_pad(2, 2);
    let l1 = Kerv2dConfig::new(1, 6, geom1, config.effective_kernel(0)).with_bias(config.use_bias);
    layers.push(Box::new(Kerv2d::new(l1, layer_seed(config.seed, 0))?));
    relu(&mut layers);
    pool(&mut layers);

    let l2 = Kerv2dConfig::new(6, 16, PatchGeometry::new(5, 5), config.effective_kernel(1)).with_bias(config.use_bias);
    layers.push(Box::new(Kerv2d::new(l2, layer_seed(config.seed, 1))?));
    relu(&mut layers);
    pool(&mut layers);

    layers.push(Box::new(Flatten::new()));
    layers.push(Box::new(Dense::new(400, 120, layer_seed(config.seed, 2))));
    relu(&mut layers);
    layers.push(Box::new(Dense::new(120, 84, layer_seed(config.seed, 3))));
    relu(&mut layers);
    layers.push(Box::new(Dense::new(84, 10, layer_seed(config.seed, 4))));

    Ok(Model {
        config: *config,
        layers,
    })
}

impl Model {
    pub fn from_layers(config: ModelConfig, layers: Vec<Box<dyn Layer>>) -> Self {
        Self { config, layers }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    pub fn forward(&mut self, input: &Tensor, train: bool) -> Result<Tensor> {
        let mut iter = self.layers.iter_mut();
        let Some(first) = iter.next() else {
            return Ok(input.clone());
        };
        let mut x = first.forward(input, train)?;
        for layer in iter {
            x = layer.forward(&x, train)?;
        }
        Ok(x)
    }

    /// Propagates `grad_out` back through every layer, accumulating parameter
    /// gradients, and returns the gradient w.r.t. the model input.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Concatenated [`Layer::branch_pattern`] of the last forward pass.
    pub fn branch_pattern(&self) -> Vec<usize> {
        self.layers.iter().flat_map(|l| l.branch_pattern()).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.grads()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<Param<'_>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        self.layers.iter_mut().for_each(|l| l.zero_grad());
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Current `(layer index, kernel)` for every layer with a learnable
    /// hyperparameter.
    pub fn learnable_kernels(&self) -> Vec<(usize, KernelSpec)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.kernel_spec().filter(|s| s.hyper_is_learnable()).map(|s| (i, s)))
            .collect()
    }

    /// Predicted class per row of the logits.
    pub fn predict(&mut self, input: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(input, false)?;
        Ok(argmax_rows(&logits))
    }

    pub fn load_params(&mut self, params: &[Tensor]) -> Result<()> {
        let mut slots = self.params_mut();
        if slots.len() != params.len() {
            return Err(Error::Dimension(format!(
                "model has {} parameter tensors, checkpoint has {}",
                slots.len(),
                params.len()
            )));
        }
        for (slot, value) in slots.iter_mut().zip(params) {
            value.expect_shape(slot.value.shape(), "checkpoint parameter")?;
            *slot.value = value.clone();
        }
        Ok(())
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let classes = logits.shape()[logits.rank() - 1];
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0
        })
        .collect()
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"KERVCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Saved model: text header (config + input normalization) followed by the
/// parameter tensors in declaration order.
///
/// Layout (little-endian): magic `KERVCKPT`, `u32` version, `u32` header
/// length, UTF-8 header, `u32` tensor count, then per tensor `u32` rank,
/// `rank × u32` extents and the `f64` data.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub normalization: Normalization,
    pub params: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, normalization: Normalization) -> Self {
        Self {
            config: *model.config(),
            normalization,
            params: model.params().into_iter().cloned().collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = format!(
            "{}norm_mean={}\nnorm_std={}\n",
            self.config.to_text(),
            self.normalization.mean,
            self.normalization.std
        );
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for t in &self.params {
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        read_exact(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                what: "checkpoint".into(),
                expected: "magic KERVCKPT".into(),
                found: format!("{magic:02x?}"),
            });
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format {
                what: "checkpoint".into(),
                expected: format!("version {CHECKPOINT_VERSION}"),
                found: format!("version {version}"),
            });
        }
        let header_len = read_u32(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        read_exact(&mut r, &mut header)?;
        let header = String::from_utf8(header).map_err(|e| Error::Data(format!("checkpoint header: {e}")))?;

        let mut config = ModelConfig::default();
        let (mut mean, mut std) = (None, None);
        for (key, value) in parse_key_values(&header)? {
            let number = |v: &str| {
                v.parse::<f64>()
                    .map_err(|e| Error::Data(format!("checkpoint `{key}`: {e}")))
            };
            match key.as_str() {
                "norm_mean" => mean = Some(number(&value)?),
                "norm_std" => std = Some(number(&value)?),
                _ => {
                    if !config.apply(&key, &value)? {
                        return Err(Error::Data(format!("unknown checkpoint header key `{key}`")));
                    }
                }
            }
        }
        let normalization = Normalization {
            mean: mean.ok_or_else(|| Error::Data("checkpoint header lacks norm_mean".into()))?,
            std: std.ok_or_else(|| Error::Data("checkpoint header lacks norm_std".into()))?,
        };

        let count = read_u32(&mut r)? as usize;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let rank = read_u32(&mut r)? as usize;
            let shape = (0..rank)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * 8];
            read_exact(&mut r, &mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.push(Tensor::new(&shape, data)?);
        }
        if !r.is_empty() {
            return Err(Error::Length(format!("{} trailing bytes after checkpoint", r.len())));
        }
        Ok(Self {
            config,
            normalization,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Rebuilds the model and loads the stored parameters.
    pub fn into_model(self) -> Result<Model> {
        let mut model = build_lenet5(&self.config)?;
        model.load_params(&self.params)?;
        Ok(model)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Length("checkpoint is truncated".into()))
}

fn read_u32(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classic_lenet_parameter_count() {
        let model = build_lenet5(&ModelConfig::default()).unwrap();
        assert_eq!(model.param_count(), 61_706);
    }

    #[test]
    fn kerv_variants_add_only_learnable_hyperparameters() {
        let base = build_lenet5(&ModelConfig::default()).unwrap().param_count();
        let frozen = build_lenet5(&ModelConfig::kerv_kerv(KernelSpec::polynomial(3, 1.0))).unwrap();
        assert_eq!(frozen.param_count(), base);
        let learn = build_lenet5(&ModelConfig::kerv_kerv(KernelSpec::polynomial(3, 1.0).learnable())).unwrap();
        assert_eq!(learn.param_count(), base + 2);
    }

    #[test]
    fn conv_slot_forces_linear() {
        let cfg = ModelConfig {
            arrangement: Arrangement::CONV_KERV,
            kernel1: KernelSpec::gaussian(1.0),
            kernel2: KernelSpec::gaussian(1.0),
            ..ModelConfig::default()
        };
        assert_eq!(cfg.effective_kernel(0), KernelSpec::Linear);
        assert_eq!(cfg.effective_kernel(1), KernelSpec::gaussian(1.0));
    }

    #[test]
    fn forward_shape() {
        let mut model = build_lenet5(&ModelConfig::default()).unwrap();
        let x = Tensor::randn(&[50, 1, 28, 28], 0).unwrap();
        assert_eq!(model.forward(&x, true).unwrap().shape(), &[50, 10]);
    }

    #[test]
    fn config_text_round_trips() {
        let cfg = ModelConfig {
            arrangement: Arrangement::KERV_CONV,
            kernel1: KernelSpec::polynomial(2, 0.5).learnable(),
            kernel2: KernelSpec::L2,
            use_relu: false,
            pooling: Pooling::Avg,
            use_bias: false,
            seed: 17,
        };
        assert_eq!(ModelConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert!(ModelConfig::from_text("depth=3\n").is_err());
    }

    #[test]
    fn checkpoint_round_trips() {
        let cfg = ModelConfig::kerv_kerv(KernelSpec::gaussian(1.0).learnable()).with_seed(3);
        let model = build_lenet5(&cfg).unwrap();
        let ckpt = Checkpoint::from_model(&model, Normalization { mean: 0.13, std: 0.31 });
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        let rebuilt = back.into_model().unwrap();
        assert_eq!(rebuilt.params(), model.params());

        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(Error::Length(_))
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = build_lenet5(&ModelConfig::default().with_seed(5)).unwrap();
        let b = build_lenet5(&ModelConfig::default().with_seed(5)).unwrap();
        let c = build_lenet5(&ModelConfig::default().with_seed(6)).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), c.params());
    }
}
