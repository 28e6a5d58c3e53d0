//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! A forward pass records every op as a node; `backward` walks the tape in
//! reverse and accumulates gradients. Leaves copy their data in from
//! [`Tensor`]s; callers pull gradients back out with [`Tape::grad`].

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Probability clamp for cross-entropy, avoids log(0).
pub const CE_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<F: Scalar> {
    Leaf,
    Add(usize, usize),
    /// `[m×n] + [n]`, bias added to every row.
    AddBiasRow(usize, usize),
    Scale(usize, F),
    Mul(usize, usize),
    Matmul {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    /// `a[m×k] · b[n×k]ᵀ -> [m×n]`.
    MatmulNt {
        a: usize,
        b: usize,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        a: usize,
        m: usize,
        n: usize,
    },
    Conv2d {
        input: usize,
        kernels: usize,
        bias: usize,
        c_in: usize,
        c_out: usize,
        h: usize,
        w: usize,
    },
    Relu(usize),
    Sigmoid(usize),
    SoftmaxRows {
        a: usize,
        m: usize,
        n: usize,
    },
    SumAll(usize),
    /// Mean of `-ln(clamp(probs[row, class]))` over the listed (row, class) targets.
    CrossEntropyRows {
        probs: usize,
        n_cols: usize,
        targets: Vec<(usize, usize)>,
    },
    /// Mean binary cross-entropy with logits over (row, target-mask) pairs.
    BceMasks {
        logits: usize,
        row_len: usize,
        pairs: Vec<(usize, Vec<F>)>,
    },
    /// Mean soft-Dice loss over (row, target-mask) pairs.
    DiceMasks {
        logits: usize,
        row_len: usize,
        pairs: Vec<(usize, Vec<F>)>,
        eps: F,
    },
}

#[derive(Debug)]
struct Node<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
    requires_grad: bool,
    op: Op<F>,
}

#[derive(Debug, Default)]
pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
    grads: Vec<Vec<F>>,
}

fn stable_sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<F>, requires_grad: bool, op: Op<F>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, t: &Tensor<F>) -> Var {
        self.push(t.shape.clone(), t.data.clone(), t.requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<F>) -> Var {
        self.push(shape, data, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn item(&self, v: Var) -> F {
        debug_assert_eq!(self.nodes[v.0].data.len(), 1);
        self.nodes[v.0].data[0]
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Var) -> &[F] {
        &self.grads[v.0]
    }

    /// Relabels the shape of a variable without touching its buffer.
    pub fn reinterpret_shape(&mut self, v: Var, shape: Vec<usize>) {
        assert_eq!(
            shape.iter().product::<usize>(),
            self.nodes[v.0].data.len(),
            "reinterpret_shape must preserve the element count"
        );
        self.nodes[v.0].shape = shape;
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        match self.nodes[v.0].shape[..] {
            [m, n] => Ok((m, n)),
            ref s => Err(Error::Dimension(format!("expected a matrix, got {:?}", s))),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "add: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(self.shape(a).to_vec(), data, rg, Op::Add(a.0, b.0)))
    }

    pub fn add_bias_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        if self.shape(bias) != [n] {
            return Err(Error::Dimension(format!(
                "add_bias_row: matrix {:?} vs bias {:?}",
                self.shape(a),
                self.shape(bias)
            )));
        }
        let mut data = self.nodes[a.0].data.clone();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += self.nodes[bias.0].data[j];
            }
        }
        let rg = self.requires(a) || self.requires(bias);
        Ok(self.push(vec![m, n], data, rg, Op::AddBiasRow(a.0, bias.0)))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Var {
        let data = self.nodes[a.0].data.iter().map(|&x| x * c).collect();
        let rg = self.requires(a);
        self.push(self.shape(a).to_vec(), data, rg, Op::Scale(a.0, c))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Dimension(format!(
                "mul: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(self.shape(a).to_vec(), data, rg, Op::Mul(a.0, b.0)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (k2, n) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul: {:?} · {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = mm(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(
            vec![m, n],
            data,
            rg,
            Op::Matmul {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
        ))
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a)?;
        let (n, k2) = self.dims2(b)?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul_nt: {:?} · {:?}ᵀ",
                self.shape(a),
                self.shape(b)
            )));
        }
        let data = mm_nt(&self.nodes[a.0].data, &self.nodes[b.0].data, m, k, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(
            vec![m, n],
            data,
            rg,
            Op::MatmulNt {
                a: a.0,
                b: b.0,
                m,
                k,
                n,
            },
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let src = &self.nodes[a.0].data;
        let mut data = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let rg = self.requires(a);
        Ok(self.push(vec![n, m], data, rg, Op::Transpose { a: a.0, m, n }))
    }

    /// 3x3 cross-correlation, stride 1, zero padding 1; output spatial size
    /// equals input spatial size.
    pub fn conv2d(&mut self, input: Var, kernels: Var, bias: Var) -> Result<Var> {
        let (c_in, h, w) = match self.nodes[input.0].shape[..] {
            [c, h, w] => (c, h, w),
            ref s => {
                return Err(Error::Dimension(format!(
                    "conv2d input must be C×H×W, got {:?}",
                    s
                )))
            }
        };
        let (c_out, kc_in) = match self.nodes[kernels.0].shape[..] {
            [co, ci, 3, 3] => (co, ci),
            ref s => {
                return Err(Error::Dimension(format!(
                    "conv2d kernels must be C_out×C_in×3×3, got {:?}",
                    s
                )))
            }
        };
        if kc_in != c_in {
            return Err(Error::Dimension(format!(
                "conv2d: input has {} channels, kernels expect {}",
                c_in, kc_in
            )));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::Dimension(format!(
                "conv2d bias {:?}, expected [{}]",
                self.shape(bias),
                c_out
            )));
        }
        let x = &self.nodes[input.0].data;
        let k = &self.nodes[kernels.0].data;
        let b = &self.nodes[bias.0].data;
        let mut out = vec![F::zero(); c_out * h * w];
        conv3x3_forward(x, k, b, c_in, c_out, h, w, &mut out);
        let rg = self.requires(input) || self.requires(kernels) || self.requires(bias);
        Ok(self.push(
            vec![c_out, h, w],
            out,
            rg,
            Op::Conv2d {
                input: input.0,
                kernels: kernels.0,
                bias: bias.0,
                c_in,
                c_out,
                h,
                w,
            },
        ))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect();
        let rg = self.requires(a);
        self.push(self.shape(a).to_vec(), data, rg, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self.nodes[a.0]
            .data
            .iter()
            .map(|&x| stable_sigmoid(x))
            .collect();
        let rg = self.requires(a);
        self.push(self.shape(a).to_vec(), data, rg, Op::Sigmoid(a.0))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a)?;
        let src = &self.nodes[a.0].data;
        let mut data = vec![F::zero(); m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
            let mut sum = F::zero();
            for j in 0..n {
                let e = (row[j] - max).exp();
                data[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                data[i * n + j] /= sum;
            }
        }
        let rg = self.requires(a);
        Ok(self.push(vec![m, n], data, rg, Op::SoftmaxRows { a: a.0, m, n }))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].data.iter().cloned().sum();
        let rg = self.requires(a);
        self.push(vec![1], vec![s], rg, Op::SumAll(a.0))
    }

    /// Mean cross-entropy `-ln p[row, class]` over the given targets, with
    /// probabilities clamped at [`CE_CLAMP`].
    pub fn cross_entropy_rows(&mut self, probs: Var, targets: &[(usize, usize)]) -> Result<Var> {
        let (m, n) = self.dims2(probs)?;
        let clamp = F::real(CE_CLAMP);
        let mut total = F::zero();
        for &(row, class) in targets {
            if row >= m {
                return Err(Error::Contract(format!(
                    "cross_entropy_rows: row {} out of {}",
                    row, m
                )));
            }
            if class >= n {
                return Err(Error::Label(format!(
                    "class id {} out of range [0, {})",
                    class, n
                )));
            }
            let p = self.nodes[probs.0].data[row * n + class].max(clamp);
            total -= p.ln();
        }
        let count = F::count(targets.len().max(1));
        let rg = self.requires(probs);
        Ok(self.push(
            vec![1],
            vec![total / count],
            rg,
            Op::CrossEntropyRows {
                probs: probs.0,
                n_cols: n,
                targets: targets.to_vec(),
            },
        ))
    }

    /// Mean binary cross-entropy with logits over (row, target) pairs; the
    /// mean runs over pairs and pixels.
    pub fn bce_masks(&mut self, logits: Var, pairs: &[(usize, Vec<F>)]) -> Result<Var> {
        let (m, n) = self.dims2(logits)?;
        for (row, t) in pairs {
            if *row >= m || t.len() != n {
                return Err(Error::Dimension(format!(
                    "bce_masks: pair (row {}, len {}) vs logits {}×{}",
                    row,
                    t.len(),
                    m,
                    n
                )));
            }
        }
        let mut total = F::zero();
        for (row, t) in pairs {
            let x = &self.nodes[logits.0].data[row * n..(row + 1) * n];
            for (&xi, &ti) in x.iter().zip(t) {
                // max(x,0) - x·t + ln(1 + e^{-|x|})
                total += xi.max(F::zero()) - xi * ti + (F::one() + (-xi.abs()).exp()).ln();
            }
        }
        let count = F::count(pairs.len().max(1) * n);
        let rg = self.requires(logits);
        Ok(self.push(
            vec![1],
            vec![total / count],
            rg,
            Op::BceMasks {
                logits: logits.0,
                row_len: n,
                pairs: pairs.to_vec(),
            },
        ))
    }

    /// Mean soft-Dice loss `1 - (2·Σpt + ε)/(Σp + Σt + ε)` over pairs, with
    /// `p = sigmoid(logits)`.
    pub fn dice_masks(&mut self, logits: Var, pairs: &[(usize, Vec<F>)]) -> Result<Var> {
        let (m, n) = self.dims2(logits)?;
        for (row, t) in pairs {
            if *row >= m || t.len() != n {
                return Err(Error::Dimension(format!(
                    "dice_masks: pair (row {}, len {}) vs logits {}×{}",
                    row,
                    t.len(),
                    m,
                    n
                )));
            }
        }
        let eps = F::one();
        let mut total = F::zero();
        for (row, t) in pairs {
            let x = &self.nodes[logits.0].data[row * n..(row + 1) * n];
            let mut inter = F::zero();
            let mut denom = F::zero();
            for (&xi, &ti) in x.iter().zip(t) {
                let p = stable_sigmoid(xi);
                inter += p * ti;
                denom += p + ti;
            }
            total += F::one() - (F::real(2.0) * inter + eps) / (denom + eps);
        }
        let count = F::count(pairs.len().max(1));
        let rg = self.requires(logits);
        Ok(self.push(
            vec![1],
            vec![total / count],
            rg,
            Op::DiceMasks {
                logits: logits.0,
                row_len: n,
                pairs: pairs.to_vec(),
                eps,
            },
        ))
    }

    /// Reverse pass from a scalar loss. Gradients for every tape variable are
    /// available from [`Tape::grad`] afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::Contract(format!(
                "backward target must be scalar, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.grads = self
            .nodes
            .iter()
            .map(|n| vec![F::zero(); n.data.len()])
            .collect();
        self.grads[loss.0][0] = F::one();

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = std::mem::take(&mut self.grads[idx]);
            self.backprop_node(idx, &g);
            self.grads[idx] = g;
        }
        Ok(())
    }

    fn backprop_node(&mut self, idx: usize, g: &[F]) {
        // Inputs always precede idx on the tape, so the borrows below are on
        // disjoint grads entries.
        let op = self.nodes[idx].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.nodes[a].requires_grad {
                    for (ga, &gi) in self.grads[a].iter_mut().zip(g) {
                        *ga += gi;
                    }
                }
                if self.nodes[b].requires_grad {
                    for (gb, &gi) in self.grads[b].iter_mut().zip(g) {
                        *gb += gi;
                    }
                }
            }
            Op::AddBiasRow(a, bias) => {
                let n = self.nodes[bias].data.len();
                let m = g.len() / n;
                if self.nodes[a].requires_grad {
                    for (ga, &gi) in self.grads[a].iter_mut().zip(g) {
                        *ga += gi;
                    }
                }
                if self.nodes[bias].requires_grad {
                    for i in 0..m {
                        for j in 0..n {
                            self.grads[bias][j] += g[i * n + j];
                        }
                    }
                }
            }
            Op::Scale(a, c) => {
                if self.nodes[a].requires_grad {
                    for (ga, &gi) in self.grads[a].iter_mut().zip(g) {
                        *ga += gi * c;
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.nodes[a].requires_grad {
                    for i in 0..g.len() {
                        let y = self.nodes[b].data[i];
                        self.grads[a][i] += g[i] * y;
                    }
                }
                if self.nodes[b].requires_grad {
                    for i in 0..g.len() {
                        let x = self.nodes[a].data[i];
                        self.grads[b][i] += g[i] * x;
                    }
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                // dA = g · Bᵀ, dB = Aᵀ · g
                if self.nodes[a].requires_grad {
                    let da = mm_nt(g, &self.nodes[b].data, m, n, k);
                    for (ga, &x) in self.grads[a].iter_mut().zip(&da) {
                        *ga += x;
                    }
                }
                if self.nodes[b].requires_grad {
                    let db = mm_tn(&self.nodes[a].data, g, m, k, n);
                    for (gb, &x) in self.grads[b].iter_mut().zip(&db) {
                        *gb += x;
                    }
                }
            }
            Op::MatmulNt { a, b, m, k, n } => {
                // C = A·Bᵀ: dA = g · B, dB = gᵀ · A
                if self.nodes[a].requires_grad {
                    let da = mm(g, &self.nodes[b].data, m, n, k);
                    for (ga, &x) in self.grads[a].iter_mut().zip(&da) {
                        *ga += x;
                    }
                }
                if self.nodes[b].requires_grad {
                    let db = mm_tn(g, &self.nodes[a].data, m, n, k);
                    for (gb, &x) in self.grads[b].iter_mut().zip(&db) {
                        *gb += x;
                    }
                }
            }
            Op::Transpose { a, m, n } => {
                if self.nodes[a].requires_grad {
                    for i in 0..m {
                        for j in 0..n {
                            self.grads[a][i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Conv2d {
                input,
                kernels,
                bias,
                c_in,
                c_out,
                h,
                w,
            } => {
                let need_in = self.nodes[input].requires_grad;
                let need_k = self.nodes[kernels].requires_grad;
                let need_b = self.nodes[bias].requires_grad;
                let x = self.nodes[input].data.clone();
                let k = self.nodes[kernels].data.clone();
                let mut d_in = vec![F::zero(); if need_in { c_in * h * w } else { 0 }];
                let mut d_k = vec![F::zero(); if need_k { c_out * c_in * 9 } else { 0 }];
                let mut d_b = vec![F::zero(); if need_b { c_out } else { 0 }];
                conv3x3_backward(
                    &x, &k, g, c_in, c_out, h, w, need_in, need_k, need_b, &mut d_in, &mut d_k,
                    &mut d_b,
                );
                if need_in {
                    for (gi, &v) in self.grads[input].iter_mut().zip(&d_in) {
                        *gi += v;
                    }
                }
                if need_k {
                    for (gk, &v) in self.grads[kernels].iter_mut().zip(&d_k) {
                        *gk += v;
                    }
                }
                if need_b {
                    for (gb, &v) in self.grads[bias].iter_mut().zip(&d_b) {
                        *gb += v;
                    }
                }
            }
            Op::Relu(a) => {
                if self.nodes[a].requires_grad {
                    for i in 0..g.len() {
                        if self.nodes[a].data[i] > F::zero() {
                            self.grads[a][i] += g[i];
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.nodes[a].requires_grad {
                    for i in 0..g.len() {
                        let s = self.nodes[idx].data[i];
                        self.grads[a][i] += g[i] * s * (F::one() - s);
                    }
                }
            }
            Op::SoftmaxRows { a, m, n } => {
                if self.nodes[a].requires_grad {
                    for i in 0..m {
                        let y = &self.nodes[idx].data[i * n..(i + 1) * n];
                        let gi = &g[i * n..(i + 1) * n];
                        let dot: F = y.iter().zip(gi).map(|(&yj, &gj)| yj * gj).sum();
                        for j in 0..n {
                            self.grads[a][i * n + j] += y[j] * (gi[j] - dot);
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if self.nodes[a].requires_grad {
                    let gi = g[0];
                    for ga in self.grads[a].iter_mut() {
                        *ga += gi;
                    }
                }
            }
            Op::CrossEntropyRows {
                probs,
                n_cols,
                targets,
            } => {
                if self.nodes[probs].requires_grad {
                    let clamp = F::real(CE_CLAMP);
                    let count = F::count(targets.len().max(1));
                    let gi = g[0];
                    for (row, class) in targets {
                        let p = self.nodes[probs].data[row * n_cols + class].max(clamp);
                        self.grads[probs][row * n_cols + class] -= gi / (p * count);
                    }
                }
            }
            Op::BceMasks {
                logits,
                row_len,
                pairs,
            } => {
                if self.nodes[logits].requires_grad {
                    let count = F::count(pairs.len().max(1) * row_len);
                    let gi = g[0] / count;
                    for (row, t) in pairs {
                        for j in 0..row_len {
                            let x = self.nodes[logits].data[row * row_len + j];
                            self.grads[logits][row * row_len + j] +=
                                gi * (stable_sigmoid(x) - t[j]);
                        }
                    }
                }
            }
            Op::DiceMasks {
                logits,
                row_len,
                pairs,
                eps,
            } => {
                if self.nodes[logits].requires_grad {
                    let count = F::count(pairs.len().max(1));
                    let two = F::real(2.0);
                    let gi = g[0] / count;
                    for (row, t) in pairs {
                        let x = &self.nodes[logits].data[row * row_len..(row + 1) * row_len];
                        let mut inter = F::zero();
                        let mut denom = F::zero();
                        let p: Vec<F> = x.iter().map(|&xi| stable_sigmoid(xi)).collect();
                        for (pi, &ti) in p.iter().zip(&t) {
                            inter += *pi * ti;
                            denom += *pi + ti;
                        }
                        let b = denom + eps;
                        // d/dp_i of 1 - (2A+ε)/B  =  -(2 t_i B - (2A+ε)) / B²
                        for j in 0..row_len {
                            let dldp = -(two * t[j] * b - (two * inter + eps)) / (b * b);
                            let ds = p[j] * (F::one() - p[j]);
                            self.grads[logits][row * row_len + j] += gi * dldp * ds;
                        }
                    }
                }
            }
        }
    }
}

fn mm<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

/// `a[m×k] · b[n×k]ᵀ`.
fn mm_nt<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] = arow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
        }
    }
    c
}

/// `a[m×k]ᵀ · b[m×n] -> [k×n]`.
fn mm_tn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut c = vec![F::zero(); k * n];
    for i in 0..m {
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == F::zero() {
                continue;
            }
            let brow = &b[i * n..(i + 1) * n];
            let crow = &mut c[p * n..(p + 1) * n];
            for j in 0..n {
                crow[j] += aip * brow[j];
            }
        }
    }
    c
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_forward<F: Scalar>(
    x: &[F],
    k: &[F],
    b: &[F],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    out: &mut [F],
) {
    for co in 0..c_out {
        let ob = &mut out[co * h * w..(co + 1) * h * w];
        ob.iter_mut().for_each(|o| *o = b[co]);
        for ci in 0..c_in {
            let xc = &x[ci * h * w..(ci + 1) * h * w];
            let kc = &k[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9];
            for dy in 0..3usize {
                for dx in 0..3usize {
                    let kv = kc[dy * 3 + dx];
                    if kv == F::zero() {
                        continue;
                    }
                    // output (y, x) reads input (y + dy - 1, x + dx - 1)
                    let y0 = 1usize.saturating_sub(dy);
                    let y1 = (h + 1 - dy).min(h);
                    for y in y0..y1 {
                        let iy = y + dy - 1;
                        let x0 = 1usize.saturating_sub(dx);
                        let x1 = (w + 1 - dx).min(w);
                        let orow = &mut ob[y * w + x0..y * w + x1];
                        let irow = &xc[iy * w + x0 + dx - 1..iy * w + x1 + dx - 1];
                        for (o, &v) in orow.iter_mut().zip(irow) {
                            *o += kv * v;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv3x3_backward<F: Scalar>(
    x: &[F],
    k: &[F],
    g: &[F],
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    need_in: bool,
    need_k: bool,
    need_b: bool,
    d_in: &mut [F],
    d_k: &mut [F],
    d_b: &mut [F],
) {
    for co in 0..c_out {
        let gc = &g[co * h * w..(co + 1) * h * w];
        if need_b {
            d_b[co] = gc.iter().cloned().sum();
        }
        for ci in 0..c_in {
            let xc = &x[ci * h * w..(ci + 1) * h * w];
            let kc = &k[(co * c_in + ci) * 9..(co * c_in + ci + 1) * 9];
            for dy in 0..3usize {
                for dx in 0..3usize {
                    let y0 = 1usize.saturating_sub(dy);
                    let y1 = (h + 1 - dy).min(h);
                    let x0 = 1usize.saturating_sub(dx);
                    let x1 = (w + 1 - dx).min(w);
                    let kv = kc[dy * 3 + dx];
                    let mut kacc = F::zero();
                    for y in y0..y1 {
                        let iy = y + dy - 1;
                        let grow = &gc[y * w + x0..y * w + x1];
                        let ioff = iy * w + x0 + dx - 1;
                        if need_in {
                            let drow = &mut d_in[ci * h * w + ioff..ci * h * w + ioff + x1 - x0];
                            for (d, &gv) in drow.iter_mut().zip(grow) {
                                *d += kv * gv;
                            }
                        }
                        if need_k {
                            let irow = &xc[ioff..ioff + x1 - x0];
                            kacc += grow.iter().zip(irow).map(|(&gv, &xv)| gv * xv).sum();
                        }
                    }
                    if need_k {
                        d_k[(co * c_in + ci) * 9 + dy * 3 + dx] += kacc;
                    }
                }
            }
        }
    }
}
