//! Encoder, dual-path extractor and decoder.
//!
//! Channel trajectory: 4 stacked planes (compressed mixture re/im, consistent
//! enrollment re/im) -> `L` encoder channels -> `W` block channels through `N`
//! shape-preserving dual-path blocks -> `L` mask channels -> 2 decoded planes.

use serde::{Deserialize, Serialize};

use crate::dsp::{drc, idrc, istft, stft, ComplexSpectrogram, FramingConfig, Waveform};
use crate::error::{Error, Result};
use crate::interaction::interaction_block;
use crate::model_io::ModelParams;
use crate::netops::{
    blstm_forward, conv2d, mha, relu_in_place, BlstmParams, Conv2d, FeatureTensor, LayerNorm, Linear,
    LstmParams, MhaParams, RealMatrix, LAYER_NORM_EPS,
};

/// Kernel size of the encoder and decoder convolutions.
pub const CODEC_KERNEL: usize = 3;
/// Planes fed to the encoder convolution.
pub const STACKED_PLANES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    /// BLSTM-based dual-path block.
    Mdprnn,
    /// Multi-head-attention dual-path block.
    Mdptnet,
}

impl std::str::FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mdprnn" => Ok(BlockKind::Mdprnn),
            "mdptnet" => Ok(BlockKind::Mdptnet),
            other => Err(Error::Config(format!(
                "unknown block kind {other:?}, expected mdprnn or mdptnet"
            ))),
        }
    }
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BlockKind::Mdprnn => "mdprnn",
            BlockKind::Mdptnet => "mdptnet",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub encoder_channels: usize,
    pub block_channels: usize,
    pub num_blocks: usize,
    /// BLSTM units per direction.
    pub hidden: usize,
    pub heads: usize,
    pub alpha: f64,
    pub block_kind: BlockKind,
    pub framing: FramingConfig,
}

impl HyperParams {
    /// 256 encoder channels, 64 block channels, six blocks, 128 BLSTM units,
    /// four heads, alpha 0.5, 32 ms / 16 ms framing.
    pub fn for_kind(block_kind: BlockKind) -> Self {
        Self {
            encoder_channels: 256,
            block_channels: 64,
            num_blocks: 6,
            hidden: 128,
            heads: 4,
            alpha: 0.5,
            block_kind,
            framing: FramingConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("encoder_channels", self.encoder_channels),
            ("block_channels", self.block_channels),
            ("hidden", self.hidden),
            ("heads", self.heads),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.block_channels % self.heads != 0 {
            return Err(Error::Config(format!(
                "block channels {} not divisible by {} heads",
                self.block_channels, self.heads
            )));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        Ok(())
    }
}

impl Default for HyperParams {
    fn default() -> Self {
        Self::for_kind(BlockKind::Mdprnn)
    }
}

/// Every tensor the network needs, with its shape, in declaration order.
pub fn param_layout(hp: &HyperParams) -> Vec<(String, Vec<usize>)> {
    let (l, w, h) = (hp.encoder_channels, hp.block_channels, hp.hidden);
    let k = CODEC_KERNEL;
    let mut out: Vec<(String, Vec<usize>)> = Vec::new();
    let mut push = |name: String, shape: &[usize]| out.push((name, shape.to_vec()));
    let norm = |push: &mut dyn FnMut(String, &[usize]), prefix: &str, dim: usize| {
        push(format!("{prefix}.gamma"), &[dim]);
        push(format!("{prefix}.beta"), &[dim]);
    };
    let linear = |push: &mut dyn FnMut(String, &[usize]), prefix: &str, o: usize, i: usize| {
        push(format!("{prefix}.weight"), &[o, i]);
        push(format!("{prefix}.bias"), &[o]);
    };

    push("encoder.conv.weight".into(), &[l, STACKED_PLANES, k, k]);
    push("encoder.conv.bias".into(), &[l]);
    norm(&mut push, "extractor.norm", l);
    push("extractor.bottleneck.weight".into(), &[w, l, 1, 1]);
    push("extractor.bottleneck.bias".into(), &[w]);
    for b in 0..hp.num_blocks {
        for axis in ["freq", "time"] {
            let p = format!("extractor.blocks.{b}.{axis}");
            match hp.block_kind {
                BlockKind::Mdprnn => {
                    for dir in ["forward", "backward"] {
                        push(format!("{p}.blstm.{dir}.w_ih"), &[4 * h, w]);
                        push(format!("{p}.blstm.{dir}.w_hh"), &[4 * h, h]);
                        push(format!("{p}.blstm.{dir}.bias"), &[4 * h]);
                    }
                    linear(&mut push, &format!("{p}.fc"), w, 2 * h);
                    norm(&mut push, &format!("{p}.norm"), w);
                }
                BlockKind::Mdptnet => {
                    for proj in ["query", "key", "value", "output"] {
                        linear(&mut push, &format!("{p}.mha.{proj}"), w, w);
                    }
                    norm(&mut push, &format!("{p}.norm1"), w);
                    linear(&mut push, &format!("{p}.ff1"), 4 * w, w);
                    linear(&mut push, &format!("{p}.ff2"), w, 4 * w);
                    norm(&mut push, &format!("{p}.norm2"), w);
                }
            }
        }
    }
    push("extractor.expand.weight".into(), &[l, w, 1, 1]);
    push("extractor.expand.bias".into(), &[l]);
    push("decoder.conv.weight".into(), &[2, l, k, k]);
    push("decoder.conv.bias".into(), &[2]);
    out
}

/// BLSTM -> FC -> skip -> LN, applied along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentAxis {
    pub blstm: BlstmParams,
    pub fc: Linear,
    pub norm: LayerNorm,
}

/// MHA -> skip -> LN -> FC/ReLU/FC -> skip -> LN, applied along one axis.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionAxis {
    pub mha: MhaParams,
    pub norm1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm2: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualPath<M> {
    pub freq: M,
    pub time: M,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockParams {
    Recurrent(DualPath<RecurrentAxis>),
    Attention(DualPath<AttentionAxis>),
}

/// Sequence view used by an axis module: `[steps x channels]`.
trait AxisModule {
    fn forward(&self, seq: &RealMatrix) -> Result<RealMatrix>;
}

fn norm_rows(x: &mut RealMatrix, norm: &LayerNorm) -> Result<()> {
    if x.cols() != norm.dim() {
        return Err(Error::shape(format!(
            "layer norm of width {} applied to {} channels",
            norm.dim(),
            x.cols()
        )));
    }
    for r in 0..x.rows() {
        norm.apply_in_place(x.row_mut(r));
    }
    Ok(())
}

fn add_in_place(x: &mut RealMatrix, y: &RealMatrix) {
    for (a, b) in x.data_mut().iter_mut().zip(y.data()) {
        *a += b;
    }
}

impl AxisModule for RecurrentAxis {
    fn forward(&self, seq: &RealMatrix) -> Result<RealMatrix> {
        let mut out = self.fc.forward_rows(&blstm_forward(seq, &self.blstm)?)?;
        add_in_place(&mut out, seq);
        norm_rows(&mut out, &self.norm)?;
        Ok(out)
    }
}

impl AxisModule for AttentionAxis {
    fn forward(&self, seq: &RealMatrix) -> Result<RealMatrix> {
        let mut x = mha(seq, &self.mha)?;
        add_in_place(&mut x, seq);
        norm_rows(&mut x, &self.norm1)?;
        let mut inner = self.ff1.forward_rows(&x)?;
        relu_in_place(inner.data_mut());
        let mut out = self.ff2.forward_rows(&inner)?;
        add_in_place(&mut out, &x);
        norm_rows(&mut out, &self.norm2)?;
        Ok(out)
    }
}

/// Run `module` over every frame, treating the bins as the sequence.
fn along_freq(u: &FeatureTensor, module: &impl AxisModule) -> Result<FeatureTensor> {
    let (c_len, t_len, f_len) = u.shape();
    let mut out = FeatureTensor::zeros(c_len, t_len, f_len);
    let mut seq = RealMatrix::zeros(f_len, c_len);
    for t in 0..t_len {
        for c in 0..c_len {
            let base = u.index(c, t, 0);
            for (f, v) in u.data()[base..base + f_len].iter().enumerate() {
                seq[(f, c)] = *v;
            }
        }
        let y = module.forward(&seq)?;
        for c in 0..c_len {
            let base = out.index(c, t, 0);
            let dst = &mut out.data_mut()[base..base + f_len];
            for (f, d) in dst.iter_mut().enumerate() {
                *d = y[(f, c)];
            }
        }
    }
    Ok(out)
}

/// Run `module` over every bin, treating the frames as the sequence.
fn along_time(u: &FeatureTensor, module: &impl AxisModule) -> Result<FeatureTensor> {
    let (c_len, t_len, f_len) = u.shape();
    let mut out = FeatureTensor::zeros(c_len, t_len, f_len);
    let mut seq = RealMatrix::zeros(t_len, c_len);
    for f in 0..f_len {
        for c in 0..c_len {
            for t in 0..t_len {
                seq[(t, c)] = u.get(c, t, f);
            }
        }
        let y = module.forward(&seq)?;
        for c in 0..c_len {
            for t in 0..t_len {
                out.set(c, t, f, y[(t, c)]);
            }
        }
    }
    Ok(out)
}

fn dual_path<M: AxisModule>(u: &FeatureTensor, block: &DualPath<M>) -> Result<FeatureTensor> {
    let x = along_freq(u, &block.freq)?;
    along_time(&x, &block.time)
}

pub fn basic_block_mdprnn(u: &FeatureTensor, block: &DualPath<RecurrentAxis>) -> Result<FeatureTensor> {
    dual_path(u, block)
}

pub fn basic_block_mdptnet(u: &FeatureTensor, block: &DualPath<AttentionAxis>) -> Result<FeatureTensor> {
    dual_path(u, block)
}

pub fn basic_block(u: &FeatureTensor, block: &BlockParams) -> Result<FeatureTensor> {
    match block {
        BlockParams::Recurrent(b) => basic_block_mdprnn(u, b),
        BlockParams::Attention(b) => basic_block_mdptnet(u, b),
    }
}

/// Layer normalization across channels at every (frame, bin) position.
pub fn channel_layer_norm(x: &FeatureTensor, norm: &LayerNorm) -> Result<FeatureTensor> {
    let (c_len, t_len, f_len) = x.shape();
    if norm.dim() != c_len {
        return Err(Error::shape(format!(
            "channel norm of width {} over {c_len} channels",
            norm.dim()
        )));
    }
    let plane = t_len * f_len;
    let src = x.data();
    let mut mean = vec![0.0; plane];
    for c in 0..c_len {
        for (m, v) in mean.iter_mut().zip(&src[c * plane..(c + 1) * plane]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c_len as f64);
    let mut var = vec![0.0; plane];
    for c in 0..c_len {
        for ((s, v), m) in var.iter_mut().zip(&src[c * plane..(c + 1) * plane]).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let inv: Vec<f64> = var
        .iter()
        .map(|s| 1.0 / (s / c_len as f64 + norm.eps).sqrt())
        .collect();
    let mut out = FeatureTensor::zeros(c_len, t_len, f_len);
    for c in 0..c_len {
        let (g, b) = (norm.gamma[c], norm.beta[c]);
        let dst = &mut out.data_mut()[c * plane..(c + 1) * plane];
        for (((d, v), m), s) in dst.iter_mut().zip(&src[c * plane..(c + 1) * plane]).zip(&mean).zip(&inv) {
            *d = (v - m) * s * g + b;
        }
    }
    Ok(out)
}

/// The network with its weights unpacked into typed layers.
#[derive(Debug, Clone)]
pub struct Cienet {
    pub hyper: HyperParams,
    pub encoder: Conv2d,
    pub input_norm: LayerNorm,
    pub bottleneck: Conv2d,
    pub blocks: Vec<BlockParams>,
    pub expand: Conv2d,
    pub decoder: Conv2d,
}

struct Unpacker<'a> {
    params: &'a ModelParams,
}

impl Unpacker<'_> {
    fn vec(&self, name: &str) -> Result<Vec<f64>> {
        self.params
            .get(name)
            .map(|t| t.data.clone())
            .ok_or_else(|| Error::shape(format!("missing tensor {name}")))
    }

    fn shape(&self, name: &str) -> Result<&[usize]> {
        self.params
            .get(name)
            .map(|t| t.shape.as_slice())
            .ok_or_else(|| Error::shape(format!("missing tensor {name}")))
    }

    fn matrix(&self, name: &str) -> Result<RealMatrix> {
        match *self.shape(name)? {
            [r, c] => RealMatrix::from_vec(r, c, self.vec(name)?),
            ref s => Err(Error::shape(format!("{name} should be 2-D, has shape {s:?}"))),
        }
    }

    fn conv(&self, prefix: &str) -> Result<Conv2d> {
        let wname = format!("{prefix}.weight");
        match *self.shape(&wname)? {
            [o, i, kh, kw] => Conv2d::new(o, i, kh, kw, self.vec(&wname)?, self.vec(&format!("{prefix}.bias"))?),
            ref s => Err(Error::shape(format!("{wname} should be 4-D, has shape {s:?}"))),
        }
    }

    fn linear(&self, prefix: &str) -> Result<Linear> {
        Linear::new(
            self.matrix(&format!("{prefix}.weight"))?,
            self.vec(&format!("{prefix}.bias"))?,
        )
    }

    fn norm(&self, prefix: &str) -> Result<LayerNorm> {
        Ok(LayerNorm {
            gamma: self.vec(&format!("{prefix}.gamma"))?,
            beta: self.vec(&format!("{prefix}.beta"))?,
            eps: LAYER_NORM_EPS,
        })
    }

    fn lstm(&self, prefix: &str) -> Result<LstmParams> {
        LstmParams::new(
            self.matrix(&format!("{prefix}.w_ih"))?,
            self.matrix(&format!("{prefix}.w_hh"))?,
            self.vec(&format!("{prefix}.bias"))?,
        )
    }

    fn recurrent(&self, prefix: &str) -> Result<RecurrentAxis> {
        Ok(RecurrentAxis {
            blstm: BlstmParams {
                forward: self.lstm(&format!("{prefix}.blstm.forward"))?,
                backward: self.lstm(&format!("{prefix}.blstm.backward"))?,
            },
            fc: self.linear(&format!("{prefix}.fc"))?,
            norm: self.norm(&format!("{prefix}.norm"))?,
        })
    }

    fn attention(&self, prefix: &str, heads: usize) -> Result<AttentionAxis> {
        Ok(AttentionAxis {
            mha: MhaParams {
                heads,
                query: self.linear(&format!("{prefix}.mha.query"))?,
                key: self.linear(&format!("{prefix}.mha.key"))?,
                value: self.linear(&format!("{prefix}.mha.value"))?,
                output: self.linear(&format!("{prefix}.mha.output"))?,
            },
            norm1: self.norm(&format!("{prefix}.norm1"))?,
            ff1: self.linear(&format!("{prefix}.ff1"))?,
            ff2: self.linear(&format!("{prefix}.ff2"))?,
            norm2: self.norm(&format!("{prefix}.norm2"))?,
        })
    }
}

fn check_rates(a: &Waveform, b: &Waveform) -> Result<()> {
    if a.sample_rate_hz != b.sample_rate_hz {
        return Err(Error::SampleRate {
            expected: a.sample_rate_hz,
            actual: b.sample_rate_hz,
        });
    }
    Ok(())
}

impl Cienet {
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        let hp = params.hyper.clone();
        hp.validate()?;
        params.check_layout()?;
        let u = Unpacker { params };
        let blocks = (0..hp.num_blocks)
            .map(|b| {
                let p = |axis: &str| format!("extractor.blocks.{b}.{axis}");
                Ok(match hp.block_kind {
                    BlockKind::Mdprnn => BlockParams::Recurrent(DualPath {
                        freq: u.recurrent(&p("freq"))?,
                        time: u.recurrent(&p("time"))?,
                    }),
                    BlockKind::Mdptnet => BlockParams::Attention(DualPath {
                        freq: u.attention(&p("freq"), hp.heads)?,
                        time: u.attention(&p("time"), hp.heads)?,
                    }),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            encoder: u.conv("encoder.conv")?,
            input_norm: u.norm("extractor.norm")?,
            bottleneck: u.conv("extractor.bottleneck")?,
            blocks,
            expand: u.conv("extractor.expand")?,
            decoder: u.conv("decoder.conv")?,
            hyper: hp,
        })
    }

    pub fn compress(&self, x: &Waveform) -> Result<ComplexSpectrogram> {
        drc(&stft(x, &self.hyper.framing)?, self.hyper.alpha)
    }

    /// Encoder on already compressed spectra.
    pub fn encode_compressed(&self, yc: &ComplexSpectrogram, ec: &ComplexSpectrogram) -> Result<FeatureTensor> {
        let rep = interaction_block(yc, ec)?;
        let stacked = FeatureTensor::stack(&[&yc.real, &yc.imag, &rep.real_part, &rep.imag_part])?;
        let mut h = conv2d(&stacked, &self.encoder)?;
        relu_in_place(h.data_mut());
        Ok(h)
    }

    /// Non-negative `L x T_Y x F` encoder features.
    pub fn encode(&self, y: &Waveform, e: &Waveform) -> Result<FeatureTensor> {
        check_rates(y, e)?;
        self.encode_compressed(&self.compress(y)?, &self.compress(e)?)
    }

    pub fn extract_mask(&self, h: &FeatureTensor) -> Result<FeatureTensor> {
        let normed = channel_layer_norm(h, &self.input_norm)?;
        let mut u = conv2d(&normed, &self.bottleneck)?;
        for block in &self.blocks {
            u = basic_block(&u, block)?;
        }
        let mut mask = conv2d(&u, &self.expand)?;
        relu_in_place(mask.data_mut());
        Ok(mask)
    }

    pub fn decode(&self, h_hat: &FeatureTensor, original_len: usize, sample_rate_hz: u32) -> Result<Waveform> {
        let spec = conv2d(h_hat, &self.decoder)?;
        let compressed = ComplexSpectrogram::new(
            spec.plane(0),
            spec.plane(1),
            self.hyper.framing.clone(),
            original_len,
            Some(self.hyper.alpha),
        )?;
        istft(&idrc(&compressed)?, sample_rate_hz)
    }

    /// Estimate of the target speaker's signal in the mixture `y`, guided by enrollment `e`.
    pub fn extract(&self, y: &Waveform, e: &Waveform) -> Result<Waveform> {
        check_rates(y, e)?;
        self.extract_with_enrollment(y, &self.compress(e)?)
    }

    /// As [`Cienet::extract`], with the enrollment given as a compressed spectrogram.
    pub fn extract_with_enrollment(&self, y: &Waveform, ec: &ComplexSpectrogram) -> Result<Waveform> {
        let h = self.encode_compressed(&self.compress(y)?, ec)?;
        let mask = self.extract_mask(&h)?;
        self.decode(&mask.hadamard(&h)?, y.len(), y.sample_rate_hz)
    }
}

pub fn extract(y: &Waveform, e: &Waveform, params: &ModelParams) -> Result<Waveform> {
    Cienet::from_params(params)?.extract(y, e)
}
