//! Forward rules for every primitive. Backward rules live next to the
//! `Op` enum in `tape.rs`.

use crate::conv::{self, ConvGeom, ConvSpec};
use crate::error::{invalid, shape_err, Result};
use crate::pool::{self, PoolGeom, PoolSpec};
use crate::tape::{channel_layout, BatchStats, Op, Tape, Var};
use crate::tensor::Tensor;

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::from_parts(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.binary(a, b, |x, y| x + y);
        let flops = out.numel() as u64;
        Ok(self.push(out, Op::Add(a, b), &[a, b], flops))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.binary(a, b, |x, y| x - y);
        let flops = out.numel() as u64;
        Ok(self.push(out, Op::Sub(a, b), &[a, b], flops))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.binary(a, b, |x, y| x * y);
        let flops = out.numel() as u64;
        Ok(self.push(out, Op::Mul(a, b), &[a, b], flops))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let out = self.value(a).map(|v| v * c);
        Ok(self.push(out, Op::Scale(a, c), &[a], 0))
    }

    /// Adds a per-channel vector along axis 1 of a rank-2 or rank-4 tensor.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.shape(bias) != [shape[1]] {
            return shape_err(
                "add_bias",
                format!("bias {:?} does not match channels of {shape:?}", self.shape(bias)),
            );
        }
        let (outer, c, inner) = channel_layout(&shape);
        let mut data = self.value(x).data().to_vec();
        let b = self.value(bias).data();
        for o in 0..outer {
            for ch in 0..c {
                for v in &mut data[(o * c + ch) * inner..][..inner] {
                    *v += b[ch];
                }
            }
        }
        let flops = data.len() as u64;
        Ok(self.push(Tensor::from_parts(shape, data), Op::AddBias { x, bias }, &[x, bias], flops))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        conv::matmul_into(m, k, n, self.value(a).data(), self.value(b).data(), &mut out, false);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::MatMul(a, b),
            &[a, b],
            (m * k * n) as u64,
        ))
    }

    /// 2-D convolution of an NCHW input with OIHW weights.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let geom = ConvGeom::new(self.shape(x), self.shape(w), spec)?;
        if let Some(b) = bias {
            self.check(b)?;
            if self.shape(b) != [geom.c_out] {
                return shape_err(
                    "conv2d",
                    format!("bias {:?} for {} output channels", self.shape(b), geom.c_out),
                );
            }
        }
        let out = conv::conv_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
        );
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        Ok(self.push(
            Tensor::from_parts(geom.out_shape(), out),
            Op::Conv2d { x, w, bias, geom },
            &inputs,
            geom.macs(),
        ))
    }

    pub fn max_pool2d(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        self.check(x)?;
        let geom = PoolGeom::new("max_pool2d", self.shape(x), spec)?;
        let (out, argmax) = pool::max_forward(&geom, self.value(x).data());
        let shape = vec![self.shape(x)[0], self.shape(x)[1], geom.ho, geom.wo];
        let flops = (out.len() * spec.kernel * spec.kernel) as u64;
        Ok(self.push(Tensor::from_parts(shape, out), Op::MaxPool { x, argmax }, &[x], flops))
    }

    /// Average pooling that excludes padded positions from the divisor.
    pub fn avg_pool2d(&mut self, x: Var, spec: PoolSpec) -> Result<Var> {
        self.check(x)?;
        let geom = PoolGeom::new("avg_pool2d", self.shape(x), spec)?;
        let out = pool::avg_forward(&geom, self.value(x).data());
        let shape = vec![self.shape(x)[0], self.shape(x)[1], geom.ho, geom.wo];
        let flops = (out.len() * spec.kernel * spec.kernel) as u64;
        Ok(self.push(Tensor::from_parts(shape, out), Op::AvgPool { x, geom }, &[x], flops))
    }

    /// Mean over the spatial axes: `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let Some((n, c, h, w)) = self.value(x).dims4() else {
            return shape_err("global_avg_pool", format!("input must be NCHW, got {:?}", self.shape(x)));
        };
        let out = self
            .value(x)
            .data()
            .chunks(h * w)
            .map(|p| p.iter().sum::<f64>() / (h * w) as f64)
            .collect();
        Ok(self.push(Tensor::from_parts(vec![n, c], out), Op::GlobalAvgPool(x), &[x], 0))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).map(|v| v.max(0.0));
        Ok(self.push(out, Op::Relu(x), &[x], 0))
    }

    /// Batch normalization with statistics of the current batch, per channel
    /// (axis 1). `gamma`/`beta` are optional; without them the layer is
    /// normalize-only. Returns the batch mean and unbiased variance too.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return shape_err("batch_norm", format!("need a channel axis, got {shape:?}"));
        }
        let (outer, c, inner) = channel_layout(&shape);
        for p in gamma.iter().chain(beta.iter()) {
            self.check(*p)?;
            if self.shape(*p) != [c] {
                return shape_err(
                    "batch_norm",
                    format!("affine parameter {:?} for {c} channels", self.shape(*p)),
                );
            }
        }
        let m = outer * inner;
        if m < 2 {
            return invalid("batch_norm", "needs at least two values per channel");
        }
        let xv = self.value(x).data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for o in 0..outer {
            for ch in 0..c {
                mean[ch] += xv[(o * c + ch) * inner..][..inner].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        for o in 0..outer {
            for ch in 0..c {
                var[ch] += xv[(o * c + ch) * inner..][..inner]
                    .iter()
                    .map(|v| (v - mean[ch]).powi(2))
                    .sum::<f64>();
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v / m as f64 + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xv.len()];
        for o in 0..outer {
            for ch in 0..c {
                let base = (o * c + ch) * inner;
                for k in base..base + inner {
                    xhat[k] = (xv[k] - mean[ch]) * inv_std[ch];
                }
            }
        }
        let gv = gamma.map(|g| self.value(g).data().to_vec());
        let bv = beta.map(|b| self.value(b).data().to_vec());
        let mut out = xhat.clone();
        if gv.is_some() || bv.is_some() {
            for o in 0..outer {
                for ch in 0..c {
                    let s = gv.as_ref().map_or(1.0, |g| g[ch]);
                    let t = bv.as_ref().map_or(0.0, |b| b[ch]);
                    for v in &mut out[(o * c + ch) * inner..][..inner] {
                        *v = *v * s + t;
                    }
                }
            }
        }
        let stats = BatchStats {
            mean,
            var: var.iter().map(|v| v / (m - 1) as f64).collect(),
        };
        let mut inputs = vec![x];
        inputs.extend(gamma);
        inputs.extend(beta);
        let y = self.push(
            Tensor::from_parts(shape, out),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &inputs,
            0,
        );
        Ok((y, stats))
    }

    /// `y[:, c, ...] = x[:, c, ...] * scale[c] + shift[c]`.
    pub fn channel_affine(&mut self, x: Var, scale: Var, shift: Var) -> Result<Var> {
        self.check(x)?;
        self.check(scale)?;
        self.check(shift)?;
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.shape(scale) != [shape[1]] || self.shape(shift) != [shape[1]] {
            return shape_err(
                "channel_affine",
                format!(
                    "scale {:?} / shift {:?} for input {shape:?}",
                    self.shape(scale),
                    self.shape(shift)
                ),
            );
        }
        let (outer, c, inner) = channel_layout(&shape);
        let (s, t) = (self.value(scale).data(), self.value(shift).data());
        let mut data = self.value(x).data().to_vec();
        for o in 0..outer {
            for ch in 0..c {
                for v in &mut data[(o * c + ch) * inner..][..inner] {
                    *v = *v * s[ch] + t[ch];
                }
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::ChannelAffine { x, scale, shift },
            &[x, scale, shift],
            0,
        ))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let last = *shape.last().unwrap();
        let mut data = self.value(x).data().to_vec();
        for row in data.chunks_mut(last) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        Ok(self.push(Tensor::from_parts(shape, data), Op::Softmax(x), &[x], 0))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        if let Some(bad) = self.value(x).data().iter().find(|v| **v <= 0.0) {
            return invalid("log", format!("non-positive input {bad}"));
        }
        let out = self.value(x).map(f64::ln);
        Ok(self.push(out, Op::Log(x), &[x], 0))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), &[x], 0))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let s = t.sum() / t.numel() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mean(x), &[x], 0))
    }

    /// Concatenation along axis 1.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return invalid("concat", "no inputs");
        };
        for x in xs {
            self.check(*x)?;
        }
        let base = self.shape(first).to_vec();
        if base.len() < 2 {
            return shape_err("concat", format!("need rank >= 2, got {base:?}"));
        }
        let mut c_total = 0;
        for x in xs {
            let s = self.shape(*x);
            if s.len() != base.len() || s[0] != base[0] || s[2..] != base[2..] {
                return shape_err("concat", format!("{s:?} does not line up with {base:?}"));
            }
            c_total += s[1];
        }
        let (outer, _, inner) = channel_layout(&base);
        let mut data = Vec::with_capacity(outer * c_total * inner);
        for o in 0..outer {
            for x in xs {
                let c = self.shape(*x)[1];
                data.extend_from_slice(&self.value(*x).data()[o * c * inner..][..c * inner]);
            }
        }
        let mut shape = base;
        shape[1] = c_total;
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(xs.to_vec()), xs, 0))
    }

    /// Picks channels `idx` (in that order) along axis 1.
    pub fn gather_channels(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        self.check(x)?;
        let mut shape = self.shape(x).to_vec();
        if shape.len() < 2 || idx.is_empty() || idx.iter().any(|&i| i >= shape[1]) {
            return shape_err(
                "gather_channels",
                format!("indices {idx:?} out of range for {shape:?}"),
            );
        }
        let (outer, c, inner) = channel_layout(&shape);
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(outer * idx.len() * inner);
        for o in 0..outer {
            for &i in idx {
                data.extend_from_slice(&xv[(o * c + i) * inner..][..inner]);
            }
        }
        shape[1] = idx.len();
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::GatherChannels { x, idx: idx.to_vec() },
            &[x],
            0,
        ))
    }

    /// Places channel `k` of `x` at channel `idx[k]` of a zero tensor with
    /// `total` channels. Indices must be distinct.
    pub fn scatter_channels(&mut self, x: Var, idx: &[usize], total: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let mut seen = vec![false; total];
        let distinct = idx.iter().all(|&i| i < total && !std::mem::replace(&mut seen[i], true));
        if shape.len() < 2 || shape[1] != idx.len() || !distinct {
            return shape_err(
                "scatter_channels",
                format!("indices {idx:?} into {total} channels from {shape:?}"),
            );
        }
        let (outer, k, inner) = channel_layout(&shape);
        let xv = self.value(x).data();
        let mut data = vec![0.0; outer * total * inner];
        for o in 0..outer {
            for (j, &dst) in idx.iter().enumerate() {
                data[(o * total + dst) * inner..][..inner].copy_from_slice(&xv[(o * k + j) * inner..][..inner]);
            }
        }
        let mut out_shape = shape;
        out_shape[1] = total;
        Ok(self.push(
            Tensor::from_parts(out_shape, data),
            Op::ScatterChannels { x, idx: idx.to_vec() },
            &[x],
            0,
        ))
    }

    /// Spatial window `[top, top+h) × [left, left+w)` of an NCHW tensor.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        self.check(x)?;
        let Some((n, c, hi, wi)) = self.value(x).dims4() else {
            return shape_err("crop", format!("input must be NCHW, got {:?}", self.shape(x)));
        };
        if h == 0 || w == 0 || top + h > hi || left + w > wi {
            return shape_err("crop", format!("window {h}x{w} at ({top},{left}) outside {hi}x{wi}"));
        }
        let xv = self.value(x).data();
        let mut data = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            for y in 0..h {
                data.extend_from_slice(&xv[(p * hi + top + y) * wi + left..][..w]);
            }
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, c, h, w], data),
            Op::Crop { x, top, left },
            &[x],
            0,
        ))
    }

    /// Flat-index gather into a 1-D tensor.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        self.check(x)?;
        let n = self.value(x).numel();
        if idx.is_empty() || idx.iter().any(|&i| i >= n) {
            return shape_err("gather", format!("indices {idx:?} for {n} elements"));
        }
        let xv = self.value(x).data();
        let data = idx.iter().map(|&i| xv[i]).collect();
        Ok(self.push(
            Tensor::from_parts(vec![idx.len()], data),
            Op::Gather { x, idx: idx.to_vec() },
            &[x],
            0,
        ))
    }

    /// `y[i, j] = a[i, j] * b[i]` for `a: [k, p]`, `b: [k]`.
    pub fn scale_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let sa = self.shape(a).to_vec();
        if sa.len() != 2 || self.shape(b) != [sa[0]] {
            return shape_err("scale_rows", format!("{sa:?} rows scaled by {:?}", self.shape(b)));
        }
        let bv = self.value(b).data();
        let data = self
            .value(a)
            .data()
            .chunks(sa[1])
            .zip(bv)
            .flat_map(|(row, &s)| row.iter().map(move |v| v * s))
            .collect();
        Ok(self.push(Tensor::from_parts(sa, data), Op::ScaleRows { a, b }, &[a, b], 0))
    }

    /// `Σ_i w[i] · terms[i]` over same-shaped terms.
    pub fn weighted_sum(&mut self, w: Var, terms: &[Var]) -> Result<Var> {
        self.check(w)?;
        let Some(&first) = terms.first() else {
            return invalid("weighted_sum", "no terms");
        };
        if self.shape(w) != [terms.len()] {
            return shape_err(
                "weighted_sum",
                format!("{} terms but weights {:?}", terms.len(), self.shape(w)),
            );
        }
        for t in terms {
            self.same_shape("weighted_sum", first, *t)?;
        }
        let shape = self.shape(first).to_vec();
        let wv = self.value(w).data().to_vec();
        let mut data = vec![0.0; self.value(first).numel()];
        for (t, wt) in terms.iter().zip(&wv) {
            for (d, v) in data.iter_mut().zip(self.value(*t).data()) {
                *d += wt * v;
            }
        }
        let flops = (data.len() * terms.len()) as u64;
        let mut inputs = vec![w];
        inputs.extend_from_slice(terms);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::WeightedSum {
                w,
                terms: terms.to_vec(),
            },
            &inputs,
            flops,
        ))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return shape_err(
                "cross_entropy",
                format!("logits {shape:?} for {} labels", labels.len()),
            );
        }
        let k = shape[1];
        if let Some(bad) = labels.iter().find(|&&l| l >= k) {
            return invalid("cross_entropy", format!("label {bad} outside {k} classes"));
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &l) in probs.chunks_mut(k).zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[l];
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        loss /= labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            &[logits],
            0,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x], 0))
    }
}
