//! Layer kernels on HWC tensors.
//!
//! Convolution weights are laid out `[kh, kw, in_channels, filters]` and dense
//! weights `[inputs, units]`, matching the usual Keras ordering.

use super::{shape_err, CnnError, Real, Tensor};

fn hwc(t: &Tensor<impl Real>, what: &str) -> Result<(usize, usize, usize), CnnError> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        ref s => Err(shape_err(format!("{what} must be HxWxC, got {s:?}"))),
    }
}

fn conv_dims<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<[usize; 6], CnnError> {
    let (h, w, c) = hwc(input, "conv input")?;
    let [kh, kw, wc, f] = *weights.shape() else {
        return Err(shape_err(format!("conv weights must be 4-D, got {:?}", weights.shape())));
    };
    if wc != c {
        return Err(shape_err(format!("conv weights expect {wc} channels, input has {c}")));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(shape_err("same padding needs odd kernel sizes"));
    }
    if bias.shape() != [f] {
        return Err(shape_err(format!("conv bias must be [{f}], got {:?}", bias.shape())));
    }
    Ok([h, w, c, kh, kw, f])
}

/// Stride-1 cross-correlation with zero "same" padding. No activation.
pub fn conv2d_forward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>, CnnError> {
    let [h, w, c, kh, kw, f] = conv_dims(input, weights, bias)?;
    let (ph, pw) = (kh / 2, kw / 2);
    let x = input.data();
    let k = weights.data();
    let mut out = vec![T::ZERO; h * w * f];
    for oy in 0..h {
        for ox in 0..w {
            let acc = &mut out[(oy * w + ox) * f..][..f];
            acc.copy_from_slice(bias.data());
            for ky in 0..kh {
                let Some(iy) = (oy + ky).checked_sub(ph).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = (ox + kx).checked_sub(pw).filter(|&v| v < w) else {
                        continue;
                    };
                    let px = &x[(iy * w + ix) * c..][..c];
                    let kbase = (ky * kw + kx) * c;
                    for (ci, &v) in px.iter().enumerate() {
                        let krow = &k[(kbase + ci) * f..][..f];
                        for (a, &kv) in acc.iter_mut().zip(krow) {
                            *a += v * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![h, w, f], out)
}

/// Gradients of [`conv2d_forward`]: `(d_input, d_weights, d_bias)`.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>), CnnError> {
    let f = *weights.shape().last().unwrap_or(&0);
    let bias = Tensor::zeros(&[f.max(1)]);
    let [h, w, c, kh, kw, f] = conv_dims(input, weights, &bias)?;
    if grad_out.shape() != [h, w, f] {
        return Err(shape_err(format!("conv grad must be [{h}, {w}, {f}], got {:?}", grad_out.shape())));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let x = input.data();
    let k = weights.data();
    let g = grad_out.data();
    let mut dx = vec![T::ZERO; x.len()];
    let mut dk = vec![T::ZERO; k.len()];
    let mut db = vec![T::ZERO; f];
    for oy in 0..h {
        for ox in 0..w {
            let go = &g[(oy * w + ox) * f..][..f];
            for (d, &v) in db.iter_mut().zip(go) {
                *d += v;
            }
            for ky in 0..kh {
                let Some(iy) = (oy + ky).checked_sub(ph).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..kw {
                    let Some(ix) = (ox + kx).checked_sub(pw).filter(|&v| v < w) else {
                        continue;
                    };
                    let pbase = (iy * w + ix) * c;
                    let kbase = (ky * kw + kx) * c;
                    for ci in 0..c {
                        let v = x[pbase + ci];
                        let krow = &k[(kbase + ci) * f..][..f];
                        let dkrow = &mut dk[(kbase + ci) * f..][..f];
                        let mut acc = T::ZERO;
                        for ((dkv, &kv), &gv) in dkrow.iter_mut().zip(krow).zip(go) {
                            *dkv += v * gv;
                            acc += kv * gv;
                        }
                        dx[pbase + ci] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(weights.shape().to_vec(), dk)?,
        Tensor::new(vec![f], db)?,
    ))
}

/// Output length and leading pad of a "same" padded window along one axis.
pub fn same_pool_geometry(len: usize, pool: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let total = ((out - 1) * stride + pool).saturating_sub(len);
    (out, total / 2)
}

/// Max pooling with "same" padding; padded cells never win. Returns the
/// pooled tensor and, per output cell, the flat input index of the maximum.
pub fn maxpool2d_forward<T: Real>(
    input: &Tensor<T>,
    pool: [usize; 2],
    stride: [usize; 2],
) -> Result<(Tensor<T>, Vec<usize>), CnnError> {
    let (h, w, c) = hwc(input, "pool input")?;
    if pool.contains(&0) || stride.contains(&0) {
        return Err(shape_err("pool and stride must be positive"));
    }
    let (oh, top) = same_pool_geometry(h, pool[0], stride[0]);
    let (ow, left) = same_pool_geometry(w, pool[1], stride[1]);
    let x = input.data();
    let mut out = vec![T::NEG_INFINITY; oh * ow * c];
    let mut arg = vec![usize::MAX; oh * ow * c];
    for oy in 0..oh {
        let y0 = (oy * stride[0]).saturating_sub(top);
        let y1 = (oy * stride[0] + pool[0]).saturating_sub(top).min(h);
        for ox in 0..ow {
            let x0 = (ox * stride[1]).saturating_sub(left);
            let x1 = (ox * stride[1] + pool[1]).saturating_sub(left).min(w);
            let obase = (oy * ow + ox) * c;
            for iy in y0..y1 {
                for ix in x0..x1 {
                    let ibase = (iy * w + ix) * c;
                    for ch in 0..c {
                        let v = x[ibase + ch];
                        if arg[obase + ch] == usize::MAX || v > out[obase + ch] {
                            out[obase + ch] = v;
                            arg[obase + ch] = ibase + ch;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![oh, ow, c], out)?, arg))
}

/// Routes each pooled gradient back to its argmax input cell.
pub fn maxpool2d_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>, CnnError> {
    if argmax.len() != grad_out.len() {
        return Err(shape_err("argmax and pooled gradient lengths differ"));
    }
    let mut dx = vec![T::ZERO; input_shape.iter().product()];
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        dx[i] += g;
    }
    Tensor::new(input_shape.to_vec(), dx)
}

/// `y = W^T x + b` (activation applied by the caller).
pub fn dense_forward<T: Real>(
    input: &[T],
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Vec<T>, CnnError> {
    let [n, m] = *weights.shape() else {
        return Err(shape_err(format!("dense weights must be 2-D, got {:?}", weights.shape())));
    };
    if input.len() != n {
        return Err(shape_err(format!("dense expects {n} inputs, got {}", input.len())));
    }
    if bias.shape() != [m] {
        return Err(shape_err(format!("dense bias must be [{m}], got {:?}", bias.shape())));
    }
    let mut y = bias.data().to_vec();
    for (&xi, row) in input.iter().zip(weights.data().chunks_exact(m)) {
        for (yj, &wij) in y.iter_mut().zip(row) {
            *yj += xi * wij;
        }
    }
    Ok(y)
}

/// Gradients of [`dense_forward`]: `(d_input, d_weights, d_bias)`.
pub fn dense_backward<T: Real>(
    input: &[T],
    weights: &Tensor<T>,
    grad_out: &[T],
) -> Result<(Vec<T>, Tensor<T>, Tensor<T>), CnnError> {
    let [n, m] = *weights.shape() else {
        return Err(shape_err("dense weights must be 2-D"));
    };
    if input.len() != n || grad_out.len() != m {
        return Err(shape_err("dense backward operand lengths"));
    }
    let mut dx = vec![T::ZERO; n];
    let mut dw = vec![T::ZERO; n * m];
    for (i, (row, drow)) in weights
        .data()
        .chunks_exact(m)
        .zip(dw.chunks_exact_mut(m))
        .enumerate()
    {
        let xi = input[i];
        let mut acc = T::ZERO;
        for ((d, &w), &g) in drow.iter_mut().zip(row).zip(grad_out) {
            *d = xi * g;
            acc += w * g;
        }
        dx[i] = acc;
    }
    Ok((dx, Tensor::new(vec![n, m], dw)?, Tensor::new(vec![m], grad_out.to_vec())?))
}
