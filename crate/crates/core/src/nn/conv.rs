use candle_core::{CpuStorage, CustomOp2, DType, Device, Layout, Shape, Tensor};

use crate::error::Result;

/// Grouped 1-d convolution `(B, C_in, L) * (C_out, C_in / groups, K)`.
///
/// Runs candle's kernel on contiguous operands and supplies its own
/// backward pass; the stock one misreads strided kernels and ignores groups.
pub fn conv1d(x: &Tensor, w: &Tensor, padding: usize, stride: usize, dilation: usize, groups: usize) -> Result<Tensor> {
    let op = Conv1dOp {
        padding,
        stride,
        dilation,
        groups,
    };
    Ok(x.contiguous()?.apply_op2(&w.contiguous()?, op)?)
}

#[derive(Debug, Clone, Copy)]
struct Conv1dOp {
    padding: usize,
    stride: usize,
    dilation: usize,
    groups: usize,
}

fn to_tensor(s: &CpuStorage, l: &Layout) -> candle_core::Result<Tensor> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("conv1d operands must be contiguous".into()))?;
    match s {
        CpuStorage::F32(v) => Tensor::from_slice(&v[start..end], l.shape(), &Device::Cpu),
        CpuStorage::F64(v) => Tensor::from_slice(&v[start..end], l.shape(), &Device::Cpu),
        _ => Err(candle_core::Error::Msg("conv1d supports f32 and f64 only".into())),
    }
}

impl CustomOp2 for Conv1dOp {
    fn name(&self) -> &'static str {
        "fastvc-conv1d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let x = to_tensor(s1, l1)?;
        let w = to_tensor(s2, l2)?;
        let y = x.conv1d(&w, self.padding, self.stride, self.dilation, self.groups)?;
        let shape = y.shape().clone();
        let flat = y.flatten_all()?;
        let storage = match flat.dtype() {
            DType::F32 => CpuStorage::F32(flat.to_vec1()?),
            _ => CpuStorage::F64(flat.to_vec1()?),
        };
        Ok((storage, shape))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let g = self.groups;
        let (_, c_in, l_in) = x.dims3()?;
        let (c_out, _, k) = w.dims3()?;
        let l_out = grad.dim(2)?;
        let full = (l_out - 1) * self.stride + self.dilation * (k - 1) + 1;
        let out_padding = (l_in + 2 * self.padding).saturating_sub(full);
        let (ci, co) = (c_in / g, c_out / g);
        let mut gx = Vec::with_capacity(g);
        let mut gw = Vec::with_capacity(g);
        for i in 0..g {
            let xg = x.narrow(1, i * ci, ci)?;
            let wg = w.narrow(0, i * co, co)?.contiguous()?;
            let dg = grad.narrow(1, i * co, co)?;
            gx.push(dg.contiguous()?.conv_transpose1d(&wg, self.padding, out_padding, self.stride, self.dilation, 1)?);
            let kg = xg
                .transpose(0, 1)?
                .contiguous()?
                .conv1d(&dg.transpose(0, 1)?.contiguous()?, self.padding, self.dilation, self.stride, 1)?
                .transpose(0, 1)?;
            gw.push(kg.narrow(2, 0, k)?);
        }
        let gx = Tensor::cat(&gx, 1)?;
        let gx = if gx.dim(2)? < l_in {
            gx.pad_with_zeros(2, 0, l_in - gx.dim(2)?)?
        } else {
            gx.narrow(2, 0, l_in)?
        };
        Ok((Some(gx), Some(Tensor::cat(&gw, 0)?)))
    }
}
