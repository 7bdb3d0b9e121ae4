use super::{NumericError, Tensor};

/// Input kept from a convolution forward pass.
#[derive(Clone, Debug)]
pub struct Conv1dCache {
    input: Tensor,
}

fn check_shapes(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(usize, usize, usize, usize), NumericError> {
    let [in_ch, length] = x.shape() else {
        return Err(NumericError::Shape(format!("conv1d input must be 2-D, got {:?}", x.shape())));
    };
    let [out_ch, k_in, width] = kernels.shape() else {
        return Err(NumericError::Shape(format!(
            "conv1d kernels must be 3-D, got {:?}",
            kernels.shape()
        )));
    };
    if width % 2 == 0 {
        return Err(NumericError::Config(format!("conv1d kernel width must be odd, got {width}")));
    }
    if k_in != in_ch || bias.shape() != [*out_ch] {
        return Err(NumericError::Shape(format!(
            "conv1d: x{:?}, kernels{:?}, bias{:?}",
            x.shape(),
            kernels.shape(),
            bias.shape()
        )));
    }
    Ok((*in_ch, *length, *out_ch, *width))
}

/// Zero-padded ("same") cross-correlation: output length equals input length.
pub fn conv1d_forward(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<(Tensor, Conv1dCache), NumericError> {
    let (in_ch, length, out_ch, width) = check_shapes(x, kernels, bias)?;
    let pad = width / 2;
    let xd = x.data();
    let kd = kernels.data();
    let mut out = vec![0.0; out_ch * length];
    for o in 0..out_ch {
        let row = &mut out[o * length..(o + 1) * length];
        row.iter_mut().for_each(|v| *v = bias.data()[o]);
        for c in 0..in_ch {
            let signal = &xd[c * length..(c + 1) * length];
            let taps = &kd[(o * in_ch + c) * width..(o * in_ch + c + 1) * width];
            for (j, &w) in taps.iter().enumerate() {
                for (t, r) in row.iter_mut().enumerate() {
                    let src = t + j;
                    if src >= pad && src - pad < length {
                        *r += w * signal[src - pad];
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![out_ch, length], out)?,
        Conv1dCache { input: x.clone() },
    ))
}

/// Accumulates kernel and bias gradients and returns the input gradient.
pub fn conv1d_backward(
    cache: &Conv1dCache,
    upstream: &Tensor,
    kernels: &Tensor,
    grad_kernels: &mut Tensor,
    grad_bias: &mut Tensor,
) -> Tensor {
    let x = &cache.input;
    let (in_ch, length) = (x.shape()[0], x.shape()[1]);
    let (out_ch, width) = (kernels.shape()[0], kernels.shape()[2]);
    let pad = width / 2;
    let xd = x.data();
    let kd = kernels.data();
    let up = upstream.data();
    let mut dx = vec![0.0; in_ch * length];
    let gk = grad_kernels.data_mut();
    for o in 0..out_ch {
        let dy = &up[o * length..(o + 1) * length];
        grad_bias.data_mut()[o] += dy.iter().sum::<f64>();
        for c in 0..in_ch {
            let base = (o * in_ch + c) * width;
            for j in 0..width {
                let w = kd[base + j];
                let mut acc = 0.0;
                for (t, &g) in dy.iter().enumerate() {
                    let src = t + j;
                    if src >= pad && src - pad < length {
                        acc += g * xd[c * length + src - pad];
                        dx[c * length + src - pad] += w * g;
                    }
                }
                gk[base + j] += acc;
            }
        }
    }
    Tensor::new(vec![in_ch, length], dx).expect("input gradient shape")
}
