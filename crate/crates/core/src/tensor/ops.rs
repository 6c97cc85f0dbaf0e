use super::{matmul, shape_err, Result, Scalar, Tensor, TensorError};

/// Geometry of a 1-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self { in_channels, out_channels, kernel, stride, padding }
    }

    /// Shape-preserving 1×1 convolution.
    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1, 1, 0)
    }

    pub fn output_len(&self, in_len: usize) -> Result<usize> {
        window_output_len("conv1d", in_len, self.kernel, self.stride, self.padding)
    }

    pub fn weight_shape(&self) -> [usize; 3] {
        [self.out_channels, self.in_channels, self.kernel]
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: "conv1d",
                detail: format!("channels, kernel and stride must be positive: {self:?}"),
            });
        }
        Ok(())
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Geometry of a 1-D pooling window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PoolSpec {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self { kernel, stride, padding }
    }

    pub fn output_len(&self, in_len: usize) -> Result<usize> {
        pool_output_len(in_len, self.kernel, self.stride, self.padding)
    }

    fn validate(&self, op: &'static str) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.padding >= self.kernel {
            return Err(TensorError::InvalidArgument {
                op,
                detail: format!("need kernel, stride > 0 and padding < kernel: {self:?}"),
            });
        }
        Ok(())
    }
}

fn window_output_len(op: &'static str, len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = len + 2 * padding;
    if stride == 0 || padded < kernel {
        return Err(TensorError::DegenerateLength {
            op,
            len_expr: format!("floor(({len} + 2*{padding} - {kernel})/{stride}) + 1"),
        });
    }
    Ok((padded - kernel) / stride + 1)
}

/// `floor((len + 2·padding − kernel)/stride) + 1`, or an error when that is < 1.
pub fn pool_output_len(len: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    window_output_len("pool1d", len, kernel, stride, padding)
}

fn im2col<S: Scalar>(x: &[S], c_in: usize, t_in: usize, spec: &ConvSpec, t_out: usize) -> Vec<S> {
    let k = spec.kernel;
    let mut col = vec![S::zero(); c_in * k * t_out];
    for ci in 0..c_in {
        let row_in = &x[ci * t_in..(ci + 1) * t_in];
        for kk in 0..k {
            let row = &mut col[(ci * k + kk) * t_out..(ci * k + kk + 1) * t_out];
            for (to, dst) in row.iter_mut().enumerate() {
                let pos = (to * spec.stride + kk) as isize - spec.padding as isize;
                if pos >= 0 && (pos as usize) < t_in {
                    *dst = row_in[pos as usize];
                }
            }
        }
    }
    col
}

fn col2im<S: Scalar>(col: &[S], c_in: usize, t_in: usize, spec: &ConvSpec, t_out: usize) -> Vec<S> {
    let k = spec.kernel;
    let mut x = vec![S::zero(); c_in * t_in];
    for ci in 0..c_in {
        let row_out = &mut x[ci * t_in..(ci + 1) * t_in];
        for kk in 0..k {
            let row = &col[(ci * k + kk) * t_out..(ci * k + kk + 1) * t_out];
            for (to, &v) in row.iter().enumerate() {
                let pos = (to * spec.stride + kk) as isize - spec.padding as isize;
                if pos >= 0 && (pos as usize) < t_in {
                    row_out[pos as usize] = row_out[pos as usize] + v;
                }
            }
        }
    }
    x
}

fn check_conv_operands<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    spec: &ConvSpec,
) -> Result<(usize, usize)> {
    spec.validate()?;
    let (c_in, t_in) = input.dims2("conv1d")?;
    if c_in != spec.in_channels {
        return shape_err("conv1d", format!("input has {c_in} channels, layer expects {}", spec.in_channels));
    }
    if weight.shape() != spec.weight_shape() {
        return shape_err("conv1d", format!("weight {:?}, expected {:?}", weight.shape(), spec.weight_shape()));
    }
    let t_out = spec.output_len(t_in)?;
    Ok((t_in, t_out))
}

/// Zero-padded strided 1-D convolution: `C_in×T` → `C_out×T'`.
pub fn conv1d_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let (t_in, t_out) = check_conv_operands(input, weight, spec)?;
    if bias.shape() != [spec.out_channels] {
        return shape_err("conv1d", format!("bias {:?}, expected [{}]", bias.shape(), spec.out_channels));
    }
    let (c_in, c_out) = (spec.in_channels, spec.out_channels);
    let mut out = vec![S::zero(); c_out * t_out];
    for (row, &b) in out.chunks_exact_mut(t_out).zip(bias.data()) {
        row.fill(b);
    }
    let ck = c_in * spec.kernel;
    if spec.is_pointwise() {
        matmul(false, false, c_out, ck, t_out, weight.data(), input.data(), S::one(), &mut out);
    } else {
        let col = im2col(input.data(), c_in, t_in, spec, t_out);
        matmul(false, false, c_out, ck, t_out, weight.data(), &col, S::one(), &mut out);
    }
    Tensor::from_vec(&[c_out, t_out], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<S: Scalar> {
    pub input: Option<Tensor<S>>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Analytic gradients of [`conv1d_forward`] given the upstream gradient of its output.
pub fn conv1d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    spec: &ConvSpec,
    upstream: &Tensor<S>,
) -> Result<ConvGrads<S>> {
    conv1d_backward_opt(input, weight, spec, upstream, true)
}

/// Same as [`conv1d_backward`]; skips the input gradient when `want_input` is false.
pub(crate) fn conv1d_backward_opt<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    spec: &ConvSpec,
    upstream: &Tensor<S>,
    want_input: bool,
) -> Result<ConvGrads<S>> {
    let (t_in, t_out) = check_conv_operands(input, weight, spec)?;
    let (c_in, c_out) = (spec.in_channels, spec.out_channels);
    if upstream.shape() != [c_out, t_out] {
        return shape_err("conv1d_backward", format!("upstream {:?}, expected [{c_out}, {t_out}]", upstream.shape()));
    }
    let ck = c_in * spec.kernel;
    let dy = upstream.data();
    let bias: Vec<S> = dy.chunks_exact(t_out).map(|row| row.iter().copied().sum()).collect();

    let mut gw = vec![S::zero(); c_out * ck];
    let grad_in = if spec.is_pointwise() {
        matmul(false, true, c_out, t_out, ck, dy, input.data(), S::zero(), &mut gw);
        want_input.then(|| {
            let mut gx = vec![S::zero(); c_in * t_in];
            matmul(true, false, ck, c_out, t_out, weight.data(), dy, S::zero(), &mut gx);
            gx
        })
    } else {
        let col = im2col(input.data(), c_in, t_in, spec, t_out);
        matmul(false, true, c_out, t_out, ck, dy, &col, S::zero(), &mut gw);
        want_input.then(|| {
            let mut dcol = vec![S::zero(); ck * t_out];
            matmul(true, false, ck, c_out, t_out, weight.data(), dy, S::zero(), &mut dcol);
            col2im(&dcol, c_in, t_in, spec, t_out)
        })
    };
    Ok(ConvGrads {
        input: grad_in.map(|g| Tensor::from_vec(&[c_in, t_in], g)).transpose()?,
        weight: Tensor::from_vec(&spec.weight_shape(), gw)?,
        bias: Tensor::from_vec(&[c_out], bias)?,
    })
}

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    let mut out = input.clone();
    out.zero_grad();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(S::zero()));
    out
}

/// Passes `upstream` where `input > 0`; the subgradient at exactly zero is zero.
pub fn relu_backward<S: Scalar>(input: &Tensor<S>, upstream: &Tensor<S>) -> Result<Tensor<S>> {
    if input.shape() != upstream.shape() {
        return shape_err("relu_backward", format!("{:?} vs {:?}", input.shape(), upstream.shape()));
    }
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data)
}

/// Windowed max per channel. Padding behaves as −∞; ties go to the lowest index.
/// Also returns, for every output cell, the flat input index it was taken from.
pub fn maxpool1d<S: Scalar>(input: &Tensor<S>, spec: &PoolSpec) -> Result<(Tensor<S>, Vec<usize>)> {
    spec.validate("maxpool1d")?;
    let (c, t_in) = input.dims2("maxpool1d")?;
    let t_out = spec.output_len(t_in)?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * t_out);
    let mut argmax = Vec::with_capacity(c * t_out);
    for ch in 0..c {
        let base = ch * t_in;
        for to in 0..t_out {
            let start = (to * spec.stride) as isize - spec.padding as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + spec.kernel as isize) as usize).min(t_in);
            let mut best = lo;
            for i in lo + 1..hi {
                if x[base + i] > x[base + best] {
                    best = i;
                }
            }
            out.push(x[base + best]);
            argmax.push(base + best);
        }
    }
    Ok((Tensor::from_vec(&[c, t_out], out)?, argmax))
}

pub fn maxpool1d_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    upstream: &Tensor<S>,
) -> Result<Tensor<S>> {
    if argmax.len() != upstream.len() {
        return shape_err("maxpool1d_backward", format!("{} indices for {} cells", argmax.len(), upstream.len()));
    }
    let mut grad = Tensor::zeros(input_shape);
    let g = grad.data_mut();
    for (&idx, &u) in argmax.iter().zip(upstream.data()) {
        if idx >= g.len() {
            return shape_err("maxpool1d_backward", format!("index {idx} outside input"));
        }
        g[idx] = g[idx] + u;
    }
    Ok(grad)
}

fn avg_window(to: usize, spec: &PoolSpec, t_in: usize) -> (usize, usize) {
    let start = (to * spec.stride) as isize - spec.padding as isize;
    let lo = start.max(0) as usize;
    let hi = ((start + spec.kernel as isize) as usize).min(t_in);
    (lo, hi)
}

/// Windowed mean per channel; padding cells are excluded from the divisor.
pub fn avgpool1d<S: Scalar>(input: &Tensor<S>, spec: &PoolSpec) -> Result<Tensor<S>> {
    spec.validate("avgpool1d")?;
    let (c, t_in) = input.dims2("avgpool1d")?;
    let t_out = spec.output_len(t_in)?;
    let x = input.data();
    let mut out = Vec::with_capacity(c * t_out);
    for ch in 0..c {
        let row = &x[ch * t_in..(ch + 1) * t_in];
        for to in 0..t_out {
            let (lo, hi) = avg_window(to, spec, t_in);
            let sum: S = row[lo..hi].iter().copied().sum();
            out.push(sum / S::of_f64((hi - lo) as f64));
        }
    }
    Tensor::from_vec(&[c, t_out], out)
}

pub fn avgpool1d_backward<S: Scalar>(
    input_shape: &[usize],
    spec: &PoolSpec,
    upstream: &Tensor<S>,
) -> Result<Tensor<S>> {
    spec.validate("avgpool1d_backward")?;
    let [c, t_in] = input_shape[..] else {
        return shape_err("avgpool1d_backward", format!("input shape {input_shape:?}"));
    };
    let t_out = spec.output_len(t_in)?;
    if upstream.shape() != [c, t_out] {
        return shape_err("avgpool1d_backward", format!("upstream {:?}, expected [{c}, {t_out}]", upstream.shape()));
    }
    let mut grad = vec![S::zero(); c * t_in];
    for ch in 0..c {
        let row = &mut grad[ch * t_in..(ch + 1) * t_in];
        for to in 0..t_out {
            let (lo, hi) = avg_window(to, spec, t_in);
            let share = upstream.data()[ch * t_out + to] / S::of_f64((hi - lo) as f64);
            row[lo..hi].iter_mut().for_each(|g| *g = *g + share);
        }
    }
    Tensor::from_vec(input_shape, grad)
}

/// Stacks feature maps along the channel axis.
pub fn concat_channels<S: Scalar>(inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let Some(first) = inputs.first() else {
        return shape_err("concat_channels", "no inputs");
    };
    let (_, t) = first.dims2("concat_channels")?;
    let mut channels = 0;
    for x in inputs {
        let (c, tx) = x.dims2("concat_channels")?;
        if tx != t {
            return shape_err("concat_channels", format!("temporal length {tx} vs {t}"));
        }
        channels += c;
    }
    let mut data = Vec::with_capacity(channels * t);
    for x in inputs {
        data.extend_from_slice(x.data());
    }
    Tensor::from_vec(&[channels, t], data)
}

/// Splits the upstream gradient back into per-input slices of the given channel widths.
pub fn concat_channels_backward<S: Scalar>(upstream: &Tensor<S>, widths: &[usize]) -> Result<Vec<Tensor<S>>> {
    let (c, t) = upstream.dims2("concat_channels_backward")?;
    if widths.iter().sum::<usize>() != c {
        return shape_err("concat_channels_backward", format!("widths {widths:?} do not sum to {c}"));
    }
    let mut offset = 0;
    widths
        .iter()
        .map(|&w| {
            let slice = upstream.data()[offset * t..(offset + w) * t].to_vec();
            offset += w;
            Tensor::from_vec(&[w, t], slice)
        })
        .collect()
}

/// Mean over the time axis: `C×T` → `C`.
pub fn global_avg_pool<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let (c, t) = input.dims2("global_avg_pool")?;
    let inv = S::one() / S::of_f64(t as f64);
    let data = input.data().chunks_exact(t).map(|row| row.iter().copied().sum::<S>() * inv).collect();
    Tensor::from_vec(&[c], data)
}

pub fn global_avg_pool_backward<S: Scalar>(input_shape: &[usize], upstream: &Tensor<S>) -> Result<Tensor<S>> {
    let [c, t] = input_shape[..] else {
        return shape_err("global_avg_pool_backward", format!("input shape {input_shape:?}"));
    };
    if upstream.shape() != [c] {
        return shape_err("global_avg_pool_backward", format!("upstream {:?}", upstream.shape()));
    }
    let inv = S::one() / S::of_f64(t as f64);
    let data = upstream.data().iter().flat_map(|&g| std::iter::repeat_n(g * inv, t)).collect();
    Tensor::from_vec(input_shape, data)
}

/// Affine map `W·x + b` with `W` of shape `C×D`.
pub fn linear<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>> {
    let [c, d] = weight.shape()[..] else {
        return shape_err("linear", format!("weight must be rank 2, got {:?}", weight.shape()));
    };
    if input.shape() != [d] || bias.shape() != [c] {
        return shape_err(
            "linear",
            format!("input {:?}, weight {:?}, bias {:?}", input.shape(), weight.shape(), bias.shape()),
        );
    }
    let mut out = bias.data().to_vec();
    matmul(false, false, c, d, 1, weight.data(), input.data(), S::one(), &mut out);
    Tensor::from_vec(&[c], out)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<S: Scalar> {
    pub input: Tensor<S>,
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

pub fn linear_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    upstream: &Tensor<S>,
) -> Result<LinearGrads<S>> {
    let [c, d] = weight.shape()[..] else {
        return shape_err("linear_backward", format!("weight must be rank 2, got {:?}", weight.shape()));
    };
    if input.shape() != [d] || upstream.shape() != [c] {
        return shape_err("linear_backward", format!("input {:?}, upstream {:?}", input.shape(), upstream.shape()));
    }
    let g = upstream.data();
    let x = input.data();
    let gw: Vec<S> = g.iter().flat_map(|&gi| x.iter().map(move |&xj| gi * xj)).collect();
    let mut gx = vec![S::zero(); d];
    matmul(true, false, d, c, 1, weight.data(), g, S::zero(), &mut gx);
    Ok(LinearGrads {
        input: Tensor::from_vec(&[d], gx)?,
        weight: Tensor::from_vec(&[c, d], gw)?,
        bias: upstream.clone(),
    })
}

/// Max-subtracted softmax.
pub fn softmax<S: Scalar>(logits: &[S]) -> Vec<S> {
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Returns `−log softmax(logits)[label]` and its gradient `softmax − one_hot(label)`.
pub fn softmax_cross_entropy<S: Scalar>(logits: &[S], label: usize) -> Result<(S, Vec<S>)> {
    if label >= logits.len() {
        return Err(TensorError::LabelOutOfRange { label, classes: logits.len() });
    }
    let max = logits.iter().copied().fold(S::neg_infinity(), S::max);
    let log_total = logits.iter().map(|&z| (z - max).exp()).sum::<S>().ln();
    let loss = log_total - (logits[label] - max);
    let mut grad = softmax(logits);
    grad[label] = grad[label] - S::one();
    Ok((loss, grad))
}
