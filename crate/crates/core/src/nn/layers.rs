use candle_core::{DType, Device, Tensor, D};

use super::conv::conv1d;
use super::params::{Builder, Init};
use crate::error::Result;

/// Index of the reflected sample for position `i` of a signal of length `n`,
/// folding repeatedly when the padding exceeds the signal.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut j = i.rem_euclid(period);
    if j >= n as isize {
        j = period - j;
    }
    j as usize
}

/// Reflect-pads the last dimension of `x`.
pub fn reflect_pad(x: &Tensor, left: usize, right: usize) -> Result<Tensor> {
    if left == 0 && right == 0 {
        return Ok(x.clone());
    }
    let n = x.dim(D::Minus1)?;
    let idx: Vec<u32> = (-(left as isize)..(n + right) as isize)
        .map(|i| reflect_index(i, n) as u32)
        .collect();
    let idx = Tensor::new(idx.as_slice(), x.device())?;
    Ok(x.index_select(&idx, x.rank() - 1)?)
}

/// Selects the given positions of the last dimension.
pub fn select_time(x: &Tensor, indices: &[usize]) -> Result<Tensor> {
    let idx: Vec<u32> = indices.iter().map(|&i| i as u32).collect();
    let idx = Tensor::new(idx.as_slice(), x.device())?;
    Ok(x.index_select(&idx, x.rank() - 1)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    // max(x, slope * x) for 0 < slope < 1
    Ok(x.maximum(&(x * slope)?)?)
}

/// Inserts `stride - 1` zeros between consecutive frames of `(B, C, T)`.
fn zero_stuff(x: &Tensor, stride: usize) -> Result<Tensor> {
    if stride == 1 {
        return Ok(x.clone());
    }
    let (b, c, t) = x.dims3()?;
    let zeros = Tensor::zeros((b, c, t, stride - 1), x.dtype(), x.device())?;
    let stuffed = Tensor::cat(&[&x.unsqueeze(3)?, &zeros], 3)?.reshape((b, c, t * stride))?;
    Ok(stuffed.narrow(2, 0, (t - 1) * stride + 1)?)
}

#[derive(Debug, Clone, Copy)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(kernel: usize) -> Self {
        Self {
            kernel,
            stride: 1,
            padding: 0,
            dilation: 1,
            groups: 1,
        }
    }

    /// Zero padding that keeps the length for stride 1.
    pub fn same(kernel: usize) -> Self {
        Self {
            padding: (kernel - 1) / 2,
            ..Self::new(kernel)
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn padding(mut self, p: usize) -> Self {
        self.padding = p;
        self
    }

    pub fn dilation(mut self, d: usize) -> Self {
        self.dilation = d;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.padding - self.dilation * (self.kernel - 1) - 1) / self.stride + 1
    }
}

/// Weight tensor either stored directly or reparameterized as `g * v / ||v||`.
#[derive(Debug, Clone)]
enum Weight {
    Plain(Tensor),
    Normalized { v: Tensor, g: Tensor, norm_dim0: bool },
}

impl Weight {
    fn new(vb: &Builder, shape: &[usize], fan_in: usize, weight_norm: bool, norm_dim0: bool) -> Result<Self> {
        if !weight_norm {
            return Ok(Weight::Plain(vb.param("weight", shape, Init::FanInUniform { fan_in })?));
        }
        let v = vb.param("weight_v", shape, Init::FanInUniform { fan_in })?;
        let n = if norm_dim0 { shape[0] } else { shape[1] };
        // g starts at ||v|| so the effective weight equals v at initialization.
        let norms = weight_norm_of(&v, norm_dim0)?
            .flatten_all()?
            .to_dtype(DType::F64)?
            .to_vec1::<f64>()?;
        let g = vb.param_values("weight_g", &[n], norms)?;
        Ok(Weight::Normalized { v, g, norm_dim0 })
    }

    fn tensor(&self) -> Result<Tensor> {
        match self {
            Weight::Plain(w) => Ok(w.clone()),
            Weight::Normalized { v, g, norm_dim0 } => {
                let norm = weight_norm_of(v, *norm_dim0)?;
                let g = if *norm_dim0 {
                    g.reshape((g.dim(0)?, 1, 1))?
                } else {
                    g.reshape((1, g.dim(0)?, 1))?
                };
                Ok(v.broadcast_mul(&g.broadcast_div(&norm)?)?)
            }
        }
    }

    fn detached(&self) -> Self {
        match self {
            Weight::Plain(w) => Weight::Plain(w.detach()),
            Weight::Normalized { v, g, norm_dim0 } => Weight::Normalized {
                v: v.detach(),
                g: g.detach(),
                norm_dim0: *norm_dim0,
            },
        }
    }
}

fn weight_norm_of(v: &Tensor, dim0: bool) -> Result<Tensor> {
    let sq = v.sqr()?;
    let s = if dim0 {
        sq.sum_keepdim(2)?.sum_keepdim(1)?
    } else {
        sq.sum_keepdim(2)?.sum_keepdim(0)?
    };
    Ok(s.sqrt()?)
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Weight,
    bias: Option<Tensor>,
    spec: ConvSpec,
}

impl Conv1d {
    pub fn new(vb: Builder, c_in: usize, c_out: usize, spec: ConvSpec) -> Result<Self> {
        Self::build(vb, c_in, c_out, spec, false, true)
    }

    pub fn weight_norm(vb: Builder, c_in: usize, c_out: usize, spec: ConvSpec) -> Result<Self> {
        Self::build(vb, c_in, c_out, spec, true, true)
    }

    pub fn no_bias(vb: Builder, c_in: usize, c_out: usize, spec: ConvSpec) -> Result<Self> {
        Self::build(vb, c_in, c_out, spec, false, false)
    }

    fn build(vb: Builder, c_in: usize, c_out: usize, spec: ConvSpec, wn: bool, bias: bool) -> Result<Self> {
        let per_group = c_in / spec.groups;
        let fan_in = per_group * spec.kernel;
        let weight = Weight::new(&vb, &[c_out, per_group, spec.kernel], fan_in, wn, true)?;
        let bias = if bias {
            Some(vb.param("bias", &[c_out], Init::FanInUniform { fan_in })?)
        } else {
            None
        };
        Ok(Self { weight, bias, spec })
    }

    /// Wraps fixed tensors (weights of shape `(c_out, c_in / groups, k)`).
    pub fn from_tensors(weight: Tensor, bias: Option<Tensor>, spec: ConvSpec) -> Self {
        Self {
            weight: Weight::Plain(weight),
            bias,
            spec,
        }
    }

    pub fn spec(&self) -> ConvSpec {
        self.spec
    }

    pub fn weight(&self) -> Result<Tensor> {
        self.weight.tensor()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.tensor()?;
        let y = conv1d(x, &w, self.spec.padding, self.spec.stride, self.spec.dilation, self.spec.groups)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, b.dim(0)?, 1))?)?),
            None => Ok(y),
        }
    }

    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detached(),
            bias: self.bias.as_ref().map(Tensor::detach),
            spec: self.spec,
        }
    }
}

/// Transposed 1-d convolution, weights laid out `(c_in, c_out, k)`.
///
/// Computed as a stride-1 convolution of the zero-stuffed input with the
/// flipped, transposed kernel; output length is
/// `(T - 1) * stride - 2 * padding + k + output_padding`.
#[derive(Debug, Clone)]
pub struct ConvTranspose1d {
    weight: Weight,
    bias: Tensor,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
}

impl ConvTranspose1d {
    pub fn weight_norm(
        vb: Builder,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        assert!(padding < kernel, "transposed conv padding must be below the kernel size");
        let fan_in = c_out * kernel;
        let weight = Weight::new(&vb, &[c_in, c_out, kernel], fan_in, true, true)?;
        let bias = vb.param("bias", &[c_out], Init::FanInUniform { fan_in })?;
        Ok(Self {
            weight,
            bias,
            kernel,
            stride,
            padding,
            output_padding,
        })
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len - 1) * self.stride + self.kernel + self.output_padding - 2 * self.padding
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let w = self.weight.tensor()?;
        let flip: Vec<u32> = (0..self.kernel as u32).rev().collect();
        let flip = Tensor::new(flip.as_slice(), w.device())?;
        let w = w.index_select(&flip, 2)?.transpose(0, 1)?.contiguous()?;
        let stuffed = zero_stuff(x, self.stride)?;
        let edge = self.kernel - 1 - self.padding;
        let stuffed = stuffed.pad_with_zeros(2, edge, edge + self.output_padding)?;
        let y = conv1d(&stuffed, &w, 0, 1, 1, 1)?;
        Ok(y.broadcast_add(&self.bias.reshape((1, self.bias.dim(0)?, 1))?)?)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(vb: Builder, d_in: usize, d_out: usize) -> Result<Self> {
        let init = Init::FanInUniform { fan_in: d_in };
        Ok(Self {
            weight: vb.param("weight", &[d_out, d_in], init)?,
            bias: Some(vb.param("bias", &[d_out], init)?),
        })
    }

    /// Applies to the last dimension of any-rank input.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(b)?),
            None => Ok(y),
        }
    }

    pub fn detached(&self) -> Self {
        Self {
            weight: self.weight.detach(),
            bias: self.bias.as_ref().map(Tensor::detach),
        }
    }
}

/// Normalizes across channels at every frame of `(B, C, T)`, then applies a
/// per-channel affine map.
#[derive(Debug, Clone)]
pub struct ChannelNorm {
    gamma: Tensor,
    beta: Tensor,
    eps: f64,
}

impl ChannelNorm {
    pub fn new(vb: Builder, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: vb.param("gamma", &[channels], Init::Const(1.0))?,
            beta: vb.param("beta", &[channels], Init::Const(0.0))?,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.dim(1)?;
        let mean = x.mean_keepdim(1)?;
        let centered = x.broadcast_sub(&mean)?;
        let var = centered.sqr()?.mean_keepdim(1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(normed
            .broadcast_mul(&self.gamma.reshape((1, c, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1))?)?)
    }
}

/// Single-layer LSTM with PyTorch gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct Lstm {
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
    hidden: usize,
}

impl Lstm {
    pub fn new(vb: Builder, d_in: usize, hidden: usize) -> Result<Self> {
        let init = Init::FanInUniform { fan_in: hidden };
        Ok(Self {
            w_ih: vb.param("weight_ih", &[4 * hidden, d_in], init)?,
            w_hh: vb.param("weight_hh", &[4 * hidden, hidden], init)?,
            b_ih: vb.param("bias_ih", &[4 * hidden], init)?,
            b_hh: vb.param("bias_hh", &[4 * hidden], init)?,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `x: (B, T, d_in)` → `(B, T, hidden)`; `reverse` scans from the last frame.
    pub fn forward(&self, x: &Tensor, reverse: bool) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let h_dim = self.hidden;
        let xw = x
            .broadcast_matmul(&self.w_ih.t()?)?
            .broadcast_add(&(&self.b_ih + &self.b_hh)?)?;
        let w_hh_t = self.w_hh.t()?;
        let mut h = Tensor::zeros((b, h_dim), x.dtype(), x.device())?;
        let mut c = h.clone();
        let mut outputs: Vec<Tensor> = Vec::with_capacity(t);
        let order: Vec<usize> = if reverse {
            (0..t).rev().collect()
        } else {
            (0..t).collect()
        };
        for step in order {
            let gates = (xw.narrow(1, step, 1)?.squeeze(1)? + h.matmul(&w_hh_t)?)?;
            let i = gates.narrow(1, 0, h_dim)?;
            let f = gates.narrow(1, h_dim, h_dim)?;
            let g = gates.narrow(1, 2 * h_dim, h_dim)?;
            let o = gates.narrow(1, 3 * h_dim, h_dim)?;
            c = ((sigmoid(&f)? * &c)? + (sigmoid(&i)? * g.tanh()?)?)?;
            h = (sigmoid(&o)? * c.tanh()?)?;
            outputs.push(h.clone());
        }
        if reverse {
            outputs.reverse();
        }
        Ok(Tensor::stack(&outputs, 1)?)
    }
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    // 0.5 * (1 + tanh(x / 2)) keeps the op set to ones with gradients.
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Bidirectional LSTM; output concatenates forward then backward states.
#[derive(Debug, Clone)]
pub struct BiLstm {
    fwd: Lstm,
    bwd: Lstm,
}

impl BiLstm {
    pub fn new(vb: Builder, d_in: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            fwd: Lstm::new(vb.pp("fwd"), d_in, hidden)?,
            bwd: Lstm::new(vb.pp("bwd"), d_in, hidden)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let f = self.fwd.forward(x, false)?;
        let b = self.bwd.forward(x, true)?;
        Ok(Tensor::cat(&[&f, &b], 2)?)
    }
}

/// Mean-pooling `(B, C, L)` by `kernel`/`stride` with symmetric zero padding,
/// averaging only over real samples.
pub fn avg_pool1d(x: &Tensor, kernel: usize, stride: usize, padding: usize) -> Result<Tensor> {
    let (_, c, l) = x.dims3()?;
    let w = Tensor::ones((c, 1, kernel), x.dtype(), x.device())?;
    let sums = conv1d(x, &w, padding, stride, 1, c)?;
    let out_len = sums.dim(2)?;
    let counts: Vec<f64> = (0..out_len)
        .map(|o| {
            let start = (o * stride) as isize - padding as isize;
            let lo = start.max(0);
            let hi = (start + kernel as isize).min(l as isize);
            1.0 / (hi - lo).max(1) as f64
        })
        .collect();
    let counts = Tensor::from_vec(counts, (1, 1, out_len), &Device::Cpu)?.to_dtype(x.dtype())?;
    Ok(sums.broadcast_mul(&counts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;

    #[test]
    fn reflect_index_matches_numpy_reflect() {
        // numpy.pad([0,1,2,3], 3, mode="reflect") → [3,2,1,0,1,2,3,2,1,0]
        let got: Vec<usize> = (-3..7).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn transposed_conv_length_and_values() {
        let store = ParamStore::new(DType::F64, 3);
        let layer = ConvTranspose1d::weight_norm(store.root().pp("up"), 2, 3, 4, 2, 1, 0).unwrap();
        let x = Tensor::arange(0f64, 10.0, &Device::Cpu).unwrap().reshape((1, 2, 5)).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.dims(), &[1, 3, layer.out_len(5)]);
        assert_eq!(layer.out_len(5), 10);

        // Direct scatter definition of the transposed convolution.
        let w = layer.weight.tensor().unwrap().to_vec3::<f64>().unwrap();
        let bias = layer.bias.to_vec1::<f64>().unwrap();
        let xv = x.to_vec3::<f64>().unwrap();
        let mut expect = vec![vec![0.0; 10]; 3];
        for (o, row) in expect.iter_mut().enumerate() {
            row.iter_mut().for_each(|v| *v = bias[o]);
        }
        for i in 0..2 {
            for t in 0..5 {
                for k in 0..4 {
                    let pos = (t * 2 + k) as isize - 1;
                    if (0..10).contains(&pos) {
                        for o in 0..3 {
                            expect[o][pos as usize] += xv[0][i][t] * w[i][o][k];
                        }
                    }
                }
            }
        }
        let got = y.to_vec3::<f64>().unwrap();
        for o in 0..3 {
            for p in 0..10 {
                assert!((got[0][o][p] - expect[o][p]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weight_norm_starts_at_v() {
        let store = ParamStore::new(DType::F64, 5);
        let conv = Conv1d::weight_norm(store.root().pp("c"), 3, 4, ConvSpec::same(3)).unwrap();
        let v = store.get("c.weight_v").unwrap();
        let diff = (conv.weight().unwrap() - v.as_tensor()).unwrap().abs().unwrap();
        assert!(diff.max_all().unwrap().to_scalar::<f64>().unwrap() < 1e-12);
    }

    #[test]
    fn avg_pool_excludes_padding() {
        let x = Tensor::new(&[[[1f64, 1.0, 1.0, 1.0, 1.0, 1.0]]], &Device::Cpu).unwrap();
        let y = avg_pool1d(&x, 4, 2, 1).unwrap();
        assert_eq!(y.to_vec3::<f64>().unwrap()[0][0], vec![1.0, 1.0, 1.0]);
    }
}
