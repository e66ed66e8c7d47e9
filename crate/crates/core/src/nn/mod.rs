//! Minimal neural-network toolkit on top of candle tensors: parameter stores,
//! layers and the Adam optimizer.

mod conv;
mod layers;
mod optim;
mod params;

pub use layers::{
    avg_pool1d, leaky_relu, reflect_index, reflect_pad, select_time, sigmoid, BiLstm, ChannelNorm,
    Conv1d, ConvSpec, ConvTranspose1d, Linear, Lstm,
};
pub use conv::conv1d;
pub use optim::{Adam, AdamConfig};
pub use params::{Blob, Builder, Init, ParamStore};

use candle_core::{DType, Tensor};

use crate::error::Result;

/// Mean of squared differences over all elements.
pub fn mse(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok((a - b)?.sqr()?.mean_all()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Row-wise log-softmax over the last dimension of a `(N, C)` tensor.
pub fn log_softmax(logits: &Tensor) -> Result<Tensor> {
    let max = logits.max_keepdim(1)?.detach();
    let shifted = logits.broadcast_sub(&max)?;
    let lse = shifted.exp()?.sum_keepdim(1)?.log()?;
    Ok(shifted.broadcast_sub(&lse)?)
}

/// Mean cross-entropy of `(N, C)` logits against integer labels.
pub fn cross_entropy(logits: &Tensor, labels: &[u32]) -> Result<Tensor> {
    let n = labels.len();
    let lp = log_softmax(logits)?;
    let idx = Tensor::from_vec(labels.to_vec(), (n, 1), logits.device())?;
    Ok((lp.gather(&idx, 1)?.sum_all()? * (-1.0 / n as f64))?)
}
