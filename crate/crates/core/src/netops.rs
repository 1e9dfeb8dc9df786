//! Dense building blocks shared by the interaction block and the extractor.
//!
//! Everything here is a forward-only, `f64`, single-threaded kernel. Loops are
//! ordered so the inner dimension is contiguous; reductions use a fixed order
//! so results are bit-reproducible.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct RealMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RealMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for RealMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for RealMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

/// Channel-major 3-D tensor, laid out `[channel][frame][bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    channels: usize,
    frames: usize,
    bins: usize,
    data: Vec<f64>,
}

impl FeatureTensor {
    pub fn zeros(channels: usize, frames: usize, bins: usize) -> Self {
        Self {
            channels,
            frames,
            bins,
            data: vec![0.0; channels * frames * bins],
        }
    }

    pub fn from_vec(channels: usize, frames: usize, bins: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * frames * bins {
            return Err(Error::shape(format!(
                "tensor {channels}x{frames}x{bins} needs {} values, got {}",
                channels * frames * bins,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            frames,
            bins,
            data,
        })
    }

    /// Stack equally shaped `frames x bins` planes along the channel axis.
    pub fn stack(planes: &[&RealMatrix]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero planes"))?;
        let (frames, bins) = (first.rows(), first.cols());
        let mut data = Vec::with_capacity(planes.len() * frames * bins);
        for p in planes {
            if (p.rows(), p.cols()) != (frames, bins) {
                return Err(Error::shape(format!(
                    "plane {}x{} does not match {frames}x{bins}",
                    p.rows(),
                    p.cols()
                )));
            }
            data.extend_from_slice(p.data());
        }
        Self::from_vec(planes.len(), frames, bins, data)
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[inline]
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.frames, self.bins)
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, f: usize) -> usize {
        (c * self.frames + t) * self.bins + f
    }

    #[inline]
    pub fn get(&self, c: usize, t: usize, f: usize) -> f64 {
        self.data[self.index(c, t, f)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, t: usize, f: usize, v: f64) {
        let i = self.index(c, t, f);
        self.data[i] = v;
    }

    /// One channel as a `frames x bins` matrix.
    pub fn plane(&self, c: usize) -> RealMatrix {
        let n = self.frames * self.bins;
        RealMatrix::from_vec(self.frames, self.bins, self.data[c * n..(c + 1) * n].to_vec())
            .expect("plane size is consistent")
    }

    /// Element-wise product with an equally shaped tensor.
    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::shape(format!(
                "hadamard {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Self::from_vec(self.channels, self.frames, self.bins, data)
    }
}

/// Dot product with four independent accumulators.
///
/// The fixed accumulation order keeps results deterministic while letting the
/// compiler vectorize the loop.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn matmul(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    if a.cols != b.rows {
        return Err(Error::shape(format!(
            "matmul {}x{} by {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = RealMatrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for k in 0..a.cols {
            axpy(a[(i, k)], b.row(k), out);
        }
    }
    Ok(c)
}

/// `a * b^T`, i.e. all pairwise row inner products.
pub fn matmul_transposed(a: &RealMatrix, b: &RealMatrix) -> Result<RealMatrix> {
    if a.cols != b.cols {
        return Err(Error::shape(format!(
            "row inner products need equal widths, got {} and {}",
            a.cols, b.cols
        )));
    }
    let mut c = RealMatrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        for j in 0..b.rows {
            c.data[i * b.rows + j] = dot(a.row(i), b.row(j));
        }
    }
    Ok(c)
}

/// Numerically stable softmax of one slice, in place.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax_rows(s: &RealMatrix) -> RealMatrix {
    let mut out = s.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Learned affine layer normalization over one feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    pub(crate) fn apply_in_place(&self, x: &mut [f64]) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + self.eps).sqrt();
        for ((v, g), b) in x.iter_mut().zip(&self.gamma).zip(&self.beta) {
            *v = (*v - mean) * inv * g + b;
        }
    }
}

/// `(x - mean) / sqrt(var + eps) * gamma + beta` with the population variance.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Result<Vec<f64>> {
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(Error::shape(format!(
            "layer norm over {} values with gamma {} and beta {}",
            x.len(),
            gamma.len(),
            beta.len()
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("layer norm eps must be > 0, got {eps}")));
    }
    let ln = LayerNorm {
        gamma: gamma.to_vec(),
        beta: beta.to_vec(),
        eps,
    };
    let mut out = x.to_vec();
    ln.apply_in_place(&mut out);
    Ok(out)
}

/// 2-D convolution weights, `[out][in][kh][kw]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel_h % 2 == 0 || kernel_w % 2 == 0 {
            return Err(Error::Config(format!(
                "same-padded conv needs odd kernels, got {kernel_h}x{kernel_w}"
            )));
        }
        if weight.len() != out_channels * in_channels * kernel_h * kernel_w {
            return Err(Error::shape(format!(
                "conv weight has {} values, expected {out_channels}x{in_channels}x{kernel_h}x{kernel_w}",
                weight.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::shape(format!(
                "conv bias has {} values, expected {out_channels}",
                bias.len()
            )));
        }
        Ok(Self {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weight,
            bias,
        })
    }

    #[inline]
    pub fn weight_at(&self, o: usize, i: usize, y: usize, x: usize) -> f64 {
        self.weight[((o * self.in_channels + i) * self.kernel_h + y) * self.kernel_w + x]
    }
}

/// Zero-padded "same" cross-correlation over the (frame, bin) plane.
pub fn conv2d(x: &FeatureTensor, conv: &Conv2d) -> Result<FeatureTensor> {
    if x.channels != conv.in_channels {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {}",
            conv.in_channels, x.channels
        )));
    }
    let (t_len, f_len) = (x.frames, x.bins);
    let (ph, pw) = ((conv.kernel_h / 2) as isize, (conv.kernel_w / 2) as isize);
    let mut out = FeatureTensor::zeros(conv.out_channels, t_len, f_len);
    let plane = t_len * f_len;
    for o in 0..conv.out_channels {
        let dst = &mut out.data[o * plane..(o + 1) * plane];
        dst.fill(conv.bias[o]);
        for i in 0..conv.in_channels {
            let src = &x.data[i * plane..(i + 1) * plane];
            for ky in 0..conv.kernel_h {
                let dy = ky as isize - ph;
                for kx in 0..conv.kernel_w {
                    let w = conv.weight_at(o, i, ky, kx);
                    if w == 0.0 {
                        continue;
                    }
                    let dx = kx as isize - pw;
                    let f_lo = (-dx).max(0) as usize;
                    let f_hi = (f_len as isize - dx).min(f_len as isize);
                    if f_hi <= f_lo as isize {
                        continue;
                    }
                    let f_hi = f_hi as usize;
                    for t in 0..t_len {
                        let ts = t as isize + dy;
                        if ts < 0 || ts >= t_len as isize {
                            continue;
                        }
                        let s0 = ts as usize * f_len;
                        let d = &mut dst[t * f_len + f_lo..t * f_len + f_hi];
                        let s_lo = (s0 as isize + f_lo as isize + dx) as usize;
                        axpy(w, &src[s_lo..s_lo + (f_hi - f_lo)], d);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn relu(x: &FeatureTensor) -> FeatureTensor {
    let mut out = x.clone();
    relu_in_place(out.data_mut());
    out
}

pub(crate) fn relu_in_place(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// Fully connected layer, `weight` is `[out x in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: RealMatrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(weight: RealMatrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape(format!(
                "linear bias {} for {} outputs",
                bias.len(),
                weight.rows()
            )));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    /// Apply to every row of `x`.
    pub fn forward_rows(&self, x: &RealMatrix) -> Result<RealMatrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "linear expects width {}, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let mut out = RealMatrix::zeros(x.rows(), self.out_dim());
        for r in 0..x.rows() {
            let xr = x.row(r);
            for (o, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = dot(self.weight.row(o), xr) + self.bias[o];
            }
        }
        Ok(out)
    }
}

/// `weights * x + bias`.
pub fn fc(x: &[f64], weights: &RealMatrix, bias: &[f64]) -> Result<Vec<f64>> {
    if weights.cols() != x.len() || weights.rows() != bias.len() {
        return Err(Error::shape(format!(
            "fc with {}x{} weights, {} inputs and {} biases",
            weights.rows(),
            weights.cols(),
            x.len(),
            bias.len()
        )));
    }
    Ok((0..weights.rows())
        .map(|o| dot(weights.row(o), x) + bias[o])
        .collect())
}

/// One LSTM direction. Gate rows are stacked input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// `[4H x Din]`
    pub w_ih: RealMatrix,
    /// `[4H x H]`
    pub w_hh: RealMatrix,
    /// `[4H]`
    pub bias: Vec<f64>,
}

impl LstmParams {
    pub fn new(w_ih: RealMatrix, w_hh: RealMatrix, bias: Vec<f64>) -> Result<Self> {
        let h = w_hh.cols();
        if w_hh.rows() != 4 * h || w_ih.rows() != 4 * h || bias.len() != 4 * h {
            return Err(Error::shape(format!(
                "lstm with hidden {h}: w_ih {}x{}, w_hh {}x{}, bias {}",
                w_ih.rows(),
                w_ih.cols(),
                w_hh.rows(),
                w_hh.cols(),
                bias.len()
            )));
        }
        Ok(Self { w_ih, w_hh, bias })
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w_ih: RealMatrix::zeros(4 * hidden, input),
            w_hh: RealMatrix::zeros(4 * hidden, hidden),
            bias: vec![0.0; 4 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input(&self) -> usize {
        self.w_ih.cols()
    }
}

/// Unidirectional LSTM from zero state. Writes `h_t` into `out[t][offset..offset+H]`.
fn lstm_into(seq: &RealMatrix, p: &LstmParams, reverse: bool, out: &mut RealMatrix, offset: usize) {
    let h_dim = p.hidden();
    let steps = seq.rows();
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut gates = vec![0.0; 4 * h_dim];
    for s in 0..steps {
        let t = if reverse { steps - 1 - s } else { s };
        let x = seq.row(t);
        for (g, gate) in gates.iter_mut().enumerate() {
            *gate = p.bias[g] + dot(p.w_ih.row(g), x) + dot(p.w_hh.row(g), &h);
        }
        for j in 0..h_dim {
            let i_g = sigmoid(gates[j]);
            let f_g = sigmoid(gates[h_dim + j]);
            let g_g = gates[2 * h_dim + j].tanh();
            let o_g = sigmoid(gates[3 * h_dim + j]);
            c[j] = f_g * c[j] + i_g * g_g;
            h[j] = o_g * c[j].tanh();
        }
        out.row_mut(t)[offset..offset + h_dim].copy_from_slice(&h);
    }
}

pub fn lstm_forward(seq: &RealMatrix, p: &LstmParams) -> Result<RealMatrix> {
    if seq.cols() != p.input() {
        return Err(Error::shape(format!(
            "lstm expects input width {}, got {}",
            p.input(),
            seq.cols()
        )));
    }
    let mut out = RealMatrix::zeros(seq.rows(), p.hidden());
    lstm_into(seq, p, false, &mut out, 0);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

impl BlstmParams {
    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }
}

/// Bidirectional LSTM; each output row is `[forward h_t ; backward h_t]`.
pub fn blstm_forward(seq: &RealMatrix, p: &BlstmParams) -> Result<RealMatrix> {
    let h = p.forward.hidden();
    if p.backward.hidden() != h || p.backward.input() != p.forward.input() {
        return Err(Error::shape("blstm directions disagree in shape"));
    }
    if seq.cols() != p.forward.input() {
        return Err(Error::shape(format!(
            "blstm expects input width {}, got {}",
            p.forward.input(),
            seq.cols()
        )));
    }
    let mut out = RealMatrix::zeros(seq.rows(), 2 * h);
    lstm_into(seq, &p.forward, false, &mut out, 0);
    lstm_into(seq, &p.backward, true, &mut out, h);
    Ok(out)
}

/// Multi-head self-attention with full-width Q/K/V/output projections that
/// are split evenly across heads.
#[derive(Debug, Clone, PartialEq)]
pub struct MhaParams {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl MhaParams {
    pub fn dim(&self) -> usize {
        self.query.in_dim()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::Config(format!(
                "model width {d} is not divisible by {} heads",
                self.heads
            )));
        }
        for l in [&self.query, &self.key, &self.value, &self.output] {
            if l.in_dim() != d || l.out_dim() != d {
                return Err(Error::shape(format!(
                    "attention projection {}x{} in a width-{d} block",
                    l.out_dim(),
                    l.in_dim()
                )));
            }
        }
        Ok(())
    }
}

/// Self-attention returning the output sequence and the per-head weight
/// matrices (`S x S`, rows sum to one).
pub fn mha_with_weights(seq: &RealMatrix, p: &MhaParams) -> Result<(RealMatrix, Vec<RealMatrix>)> {
    p.validate()?;
    let d = p.dim();
    if seq.cols() != d {
        return Err(Error::shape(format!("mha expects width {d}, got {}", seq.cols())));
    }
    let s = seq.rows();
    let dh = d / p.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = p.query.forward_rows(seq)?;
    let k = p.key.forward_rows(seq)?;
    let v = p.value.forward_rows(seq)?;
    let mut concat = RealMatrix::zeros(s, d);
    let mut all_weights = Vec::with_capacity(p.heads);
    for head in 0..p.heads {
        let cols = head * dh..(head + 1) * dh;
        let mut w = RealMatrix::zeros(s, s);
        for i in 0..s {
            let qi = &q.row(i)[cols.clone()];
            let row = w.row_mut(i);
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = dot(qi, &k.row(j)[cols.clone()]) * scale;
            }
            softmax_in_place(row);
        }
        for i in 0..s {
            let dst = &mut concat.row_mut(i)[cols.clone()];
            for j in 0..s {
                axpy(w[(i, j)], &v.row(j)[cols.clone()], dst);
            }
        }
        all_weights.push(w);
    }
    Ok((p.output.forward_rows(&concat)?, all_weights))
}

pub fn mha(seq: &RealMatrix, p: &MhaParams) -> Result<RealMatrix> {
    mha_with_weights(seq, p).map(|(out, _)| out)
}
