use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::model::{Autoencoder, AutoencoderOutput};
use crate::nn::{mse, scalar};

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Squared Frobenius distance between two `(B, d, T')` code tensors, summed
/// over code dimensions and frames and averaged over the batch.
pub fn content_loss(codes: &Tensor, codes_hat: &Tensor) -> Result<Tensor> {
    same_shape(codes, codes_hat, "content loss")?;
    let b = codes.dim(0)?;
    Ok(((codes - codes_hat)?.sqr()?.sum_all()? / b.max(1) as f64)?)
}

/// Per-element mean of the same squared difference; the convention used
/// inside the training objectives.
pub fn content_loss_mean(codes: &Tensor, codes_hat: &Tensor) -> Result<Tensor> {
    same_shape(codes, codes_hat, "content loss")?;
    mse(codes, codes_hat)
}

/// Encodes both spectrograms with `speakers` and returns [`content_loss`] of
/// the codes.
pub fn encoder_content_loss(model: &Autoencoder, mel: &Tensor, mel_hat: &Tensor, speakers: &Tensor) -> Result<Tensor> {
    same_shape(mel, mel_hat, "content loss input")?;
    content_loss(&model.encode(mel, speakers)?, &model.encode(mel_hat, speakers)?)
}

/// Reconstruction objective with its parts. Every norm is a per-element mean.
#[derive(Debug, Clone)]
pub struct Stage1Loss {
    pub total: Tensor,
    pub recon_post: Tensor,
    pub recon_pre: Tensor,
    pub content: Tensor,
    pub output: AutoencoderOutput,
}

impl Stage1Loss {
    /// `(name, value)` of each term, total last.
    pub fn terms(&self) -> Result<Vec<(&'static str, f64)>> {
        Ok(vec![
            ("recon_post", scalar(&self.recon_post)?),
            ("recon_pre", scalar(&self.recon_pre)?),
            ("content", scalar(&self.content)?),
            ("total", scalar(&self.total)?),
        ])
    }
}

/// `|X - X_post|^2 + |X - X_pre|^2 + |E(X, s) - E(X_post, s)|^2` in
/// reconstruction mode (source = target = `speakers`).
pub fn stage1_loss(model: &Autoencoder, mel: &Tensor, speakers: &Tensor) -> Result<Stage1Loss> {
    let output = model.forward(mel, speakers, speakers)?;
    let recon_post = mse(mel, &output.post_postnet)?;
    let recon_pre = mse(mel, &output.pre_postnet)?;
    let codes_hat = model.encode(&output.post_postnet, speakers)?;
    let content = content_loss_mean(&output.codes, &codes_hat)?;
    let total = ((&recon_post + &recon_pre)? + &content)?;
    Ok(Stage1Loss {
        total,
        recon_post,
        recon_pre,
        content,
        output,
    })
}
