use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use crate::kernels::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, ConvGeom};
use crate::{NnError, Result, Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<S> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        c: S,
    },
    Relu {
        a: Var,
    },
    Softmax {
        a: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        outer: usize,
        n: usize,
        inner: usize,
        xhat: Vec<S>,
        inv_std: Vec<S>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
        dim: usize,
    },
    Dropout {
        a: Var,
        mask: Vec<S>,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        batch: usize,
        out_c: usize,
        geom: ConvGeom,
    },
    MaxPool {
        a: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        a: Var,
        hw: usize,
    },
    Reshape {
        a: Var,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        batch: usize,
        tq: usize,
        tk: usize,
        heads: usize,
        dh: usize,
        probs: Vec<S>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<S>,
        count: usize,
    },
}

struct Node<S> {
    shape: Vec<usize>,
    value: Vec<S>,
    needs_grad: bool,
    op: Op<S>,
}

/// Gradients of a scalar loss, keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Grads<S> {
    map: BTreeMap<String, Vec<S>>,
}

impl<S: Scalar> Grads<S> {
    pub fn get(&self, name: &str) -> Option<&[S]> {
        self.map.get(name).map(Vec::as_slice)
    }

    pub fn insert(&mut self, name: String, grad: Vec<S>) {
        self.map.insert(name, grad);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Vec<S>)> {
        self.map.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Euclidean norm over every gradient entry.
    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .flatten()
            .map(|g| g.to_f64() * g.to_f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescale so the global norm is at most `max_norm`. Returns the norm
    /// before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            let s = S::from_f64(max_norm / norm);
            for g in self.map.values_mut().flatten() {
                *g *= s;
            }
        }
        norm
    }
}

/// Split `shape` around `axis` into `(outer, n, inner)`.
fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(NnError::InvalidAxis {
            axis,
            shape: shape.to_vec(),
        });
    }
    Ok((
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    ))
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NnError {
    NnError::ShapeMismatch {
        op,
        a: a.to_vec(),
        b: b.to_vec(),
    }
}

/// Record of a forward computation, replayed in reverse by
/// [`Tape::backward`].
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order.
pub struct Tape<S: Scalar> {
    nodes: Vec<Node<S>>,
    params: HashMap<String, Var>,
    param_order: Vec<(String, Var)>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            param_order: Vec::new(),
        }
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<S>, needs_grad: bool, op: Op<S>) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            needs_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[S] {
        &self.nodes[v.0].value
    }

    pub fn value_f64(&self, v: Var) -> Vec<f64> {
        self.value(v).iter().map(|x| x.to_f64()).collect()
    }

    /// A value that never receives gradients.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<S>) -> Result<Var> {
        let n = crate::tensor::check_shape(&shape)?;
        if n != data.len() {
            return Err(mismatch("constant", &shape, &[data.len()]));
        }
        Ok(self.push(shape, data, false, Op::Leaf))
    }

    /// Record a named parameter. Recording the same name twice returns the
    /// first handle. Tensors with `requires_grad == false` are recorded as
    /// constants, which also skips their part of the backward pass.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let data = t.data().iter().map(|&x| S::from_f64(x as f64)).collect();
        self.param_raw(name, t.shape().to_vec(), data, t.requires_grad)
            .expect("tensor shapes are valid")
    }

    /// Like [`Tape::param`] with the values given directly at tape precision.
    pub fn param_raw(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        data: Vec<S>,
        requires_grad: bool,
    ) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let n = crate::tensor::check_shape(&shape)?;
        if n != data.len() {
            return Err(mismatch("param", &shape, &[data.len()]));
        }
        let v = self.push(shape, data, requires_grad, Op::Leaf);
        self.params.insert(name.to_string(), v);
        self.param_order.push((name.to_string(), v));
        Ok(v)
    }

    // -- dense ----------------------------------------------------------------

    /// `a[..., m, k] · b[k, n]`; leading dimensions of `a` are flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(mismatch("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = sa[..sa.len() - 1].iter().product();
        let mut out = vec![S::ZERO; m * n];
        gemm_nn(self.value(a), self.value(b), &mut out, m, k, n);
        let mut shape = sa[..sa.len() - 1].to_vec();
        shape.push(n);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(shape, out, ng, Op::MatMul { a, b, m, k, n }))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(mismatch(op, sa, sb));
        }
        Ok(())
    }

    /// Element-wise sum. `b` may have a suffix of `a`'s shape, in which case
    /// it is repeated over the leading dimensions (bias add).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("add", a, b)?;
        let bv = self.value(b);
        let out: Vec<S> = self
            .value(a)
            .chunks(bv.len())
            .flat_map(|ch| ch.iter().zip(bv).map(|(&x, &y)| x + y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, ng, Op::Add { a, b }))
    }

    /// Element-wise product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_check("mul", a, b)?;
        let bv = self.value(b);
        let out: Vec<S> = self
            .value(a)
            .chunks(bv.len())
            .flat_map(|ch| ch.iter().zip(bv).map(|(&x, &y)| x * y))
            .collect();
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(self.shape(a).to_vec(), out, ng, Op::Mul { a, b }))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = S::from_f64(c);
        let out = self.value(a).iter().map(|&x| x * c).collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, ng, Op::Scale { a, c })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .iter()
            .map(|&x| if x > S::ZERO { x } else { S::ZERO })
            .collect();
        let ng = self.ng(a);
        self.push(self.shape(a).to_vec(), out, ng, Op::Relu { a })
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (outer, n, inner) = axis_split(self.shape(a), axis)?;
        let x = self.value(a);
        let mut out = vec![S::ZERO; x.len()];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * n + i) * inner + j;
                let max = (0..n)
                    .map(|i| x[idx(i)].to_f64())
                    .fold(f64::NEG_INFINITY, f64::max);
                let total: f64 = (0..n).map(|i| (x[idx(i)].to_f64() - max).exp()).sum();
                for i in 0..n {
                    out[idx(i)] = S::from_f64((x[idx(i)].to_f64() - max).exp() / total);
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(
            self.shape(a).to_vec(),
            out,
            ng,
            Op::Softmax { a, outer, n, inner },
        ))
    }

    /// Normalize along `axis` to zero mean and unit variance (biased, ε =
    /// 1e-5), then apply the optional per-feature `gamma` and `beta` of shape
    /// `[shape[axis]]`. Statistics accumulate in `f64`.
    pub fn layer_norm(
        &mut self,
        x: Var,
        axis: usize,
        gamma: Option<Var>,
        beta: Option<Var>,
    ) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let (outer, n, inner) = axis_split(self.shape(x), axis)?;
        for p in [gamma, beta].into_iter().flatten() {
            if self.shape(p) != [n] {
                return Err(mismatch("layer_norm", self.shape(x), self.shape(p)));
            }
        }
        let xv = self.value(x);
        let mut xhat = vec![S::ZERO; xv.len()];
        let mut inv_std = vec![S::ZERO; outer * inner];
        for o in 0..outer {
            for j in 0..inner {
                let idx = |i: usize| (o * n + i) * inner + j;
                let mean = (0..n).map(|i| xv[idx(i)].to_f64()).sum::<f64>() / n as f64;
                let var = (0..n)
                    .map(|i| (xv[idx(i)].to_f64() - mean).powi(2))
                    .sum::<f64>()
                    / n as f64;
                let is = 1.0 / (var + EPS).sqrt();
                inv_std[o * inner + j] = S::from_f64(is);
                for i in 0..n {
                    xhat[idx(i)] = S::from_f64((xv[idx(i)].to_f64() - mean) * is);
                }
            }
        }
        let mut out = xhat.clone();
        if gamma.is_some() || beta.is_some() {
            let g = gamma.map(|g| self.value(g));
            let b = beta.map(|b| self.value(b));
            for (pos, y) in out.iter_mut().enumerate() {
                let i = (pos / inner) % n;
                if let Some(g) = g {
                    *y *= g[i];
                }
                if let Some(b) = b {
                    *y += b[i];
                }
            }
        }
        let ng =
            self.ng(x) || gamma.is_some_and(|g| self.ng(g)) || beta.is_some_and(|b| self.ng(b));
        Ok(self.push(
            self.shape(x).to_vec(),
            out,
            ng,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                outer,
                n,
                inner,
                xhat,
                inv_std,
            },
        ))
    }

    /// Rows of `table[V, D]` selected by `ids`, giving shape `prefix ++ [D]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize], prefix: &[usize]) -> Result<Var> {
        let st = self.shape(table).to_vec();
        if st.len() != 2 || prefix.iter().product::<usize>() != ids.len() {
            return Err(mismatch("embedding", &st, prefix));
        }
        let (vocab, dim) = (st[0], st[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= vocab) {
            return Err(NnError::InvalidArgument(format!(
                "embedding id {bad} outside vocabulary of {vocab}"
            )));
        }
        let tv = self.value(table);
        let out: Vec<S> = ids
            .iter()
            .flat_map(|&i| tv[i * dim..(i + 1) * dim].iter().copied())
            .collect();
        let mut shape = prefix.to_vec();
        shape.push(dim);
        let ng = self.ng(table);
        Ok(self.push(
            shape,
            out,
            ng,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
                dim,
            },
        ))
    }

    /// Inverted dropout: in training each element is zeroed with probability
    /// `p` and survivors are scaled by `1 / (1 − p)`; otherwise identity.
    pub fn dropout(&mut self, a: Var, p: f64, train: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(NnError::InvalidArgument(format!(
                "dropout probability {p} outside [0, 1)"
            )));
        }
        if !train || p == 0.0 {
            return Ok(a);
        }
        let keep = S::from_f64(1.0 / (1.0 - p));
        let mask: Vec<S> = (0..self.value(a).len())
            .map(|_| {
                if rng.random::<f64>() < p {
                    S::ZERO
                } else {
                    keep
                }
            })
            .collect();
        let out = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let ng = self.ng(a);
        Ok(self.push(self.shape(a).to_vec(), out, ng, Op::Dropout { a, mask }))
    }

    // -- convolutional --------------------------------------------------------

    /// `x[B, C, H, W] ⋆ w[O, C, kh, kw] (+ b[O])` with zero padding.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(mismatch("conv2d", &sx, &sw));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(mismatch("conv2d bias", &sw, self.shape(b)));
            }
        }
        let geom = ConvGeom::new(sx[1], sx[2], sx[3], sw[2], sw[3], stride, pad)
            .ok_or_else(|| mismatch("conv2d geometry", &sx, &sw))?;
        let (batch, out_c) = (sx[0], sw[0]);
        let (ck, p) = (geom.col_rows(), geom.col_cols());
        let in_sz = geom.c * geom.h * geom.w;
        let mut out = vec![S::ZERO; batch * out_c * p];
        let mut cols = vec![S::ZERO; ck * p];
        let (xv, wv) = (self.value(x), self.value(w));
        for bi in 0..batch {
            im2col(&xv[bi * in_sz..(bi + 1) * in_sz], &geom, &mut cols);
            let o = &mut out[bi * out_c * p..(bi + 1) * out_c * p];
            if let Some(b) = b {
                for (oc, &bv) in self.value(b).iter().enumerate() {
                    o[oc * p..(oc + 1) * p].fill(bv);
                }
            }
            gemm_nn(wv, &cols, o, out_c, ck, p);
        }
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(
            vec![batch, out_c, geom.oh, geom.ow],
            out,
            ng,
            Op::Conv2d {
                x,
                w,
                b,
                batch,
                out_c,
                geom,
            },
        ))
    }

    /// 2×2 max pooling with stride 2 over `[B, C, H, W]`; odd trailing rows
    /// and columns are dropped. Ties go to the first element in raster order.
    pub fn maxpool2x2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(mismatch("maxpool2x2", &s, &[2, 2]));
        }
        let (bc, h, w) = (s[0] * s[1], s[2], s[3]);
        let (oh, ow) = (h / 2, w / 2);
        let av = self.value(a);
        let mut out = Vec::with_capacity(bc * oh * ow);
        let mut argmax = Vec::with_capacity(bc * oh * ow);
        for c in 0..bc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = c * h * w + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let i = c * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                        if av[i] > av[best] {
                            best = i;
                        }
                    }
                    out.push(av[best]);
                    argmax.push(best);
                }
            }
        }
        let ng = self.ng(a);
        Ok(self.push(vec![s[0], s[1], oh, ow], out, ng, Op::MaxPool { a, argmax }))
    }

    /// Mean over the spatial dimensions: `[B, C, H, W] → [B, C]`.
    pub fn global_avg_pool(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(mismatch("global_avg_pool", &s, &[0, 0, 0, 0]));
        }
        let hw = s[2] * s[3];
        let out = self
            .value(a)
            .chunks(hw)
            .map(|ch| S::from_f64(ch.iter().map(|v| v.to_f64()).sum::<f64>() / hw as f64))
            .collect();
        let ng = self.ng(a);
        Ok(self.push(vec![s[0], s[1]], out, ng, Op::GlobalAvgPool { a, hw }))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let n = crate::tensor::check_shape(&shape)?;
        if n != self.value(a).len() {
            return Err(mismatch("reshape", self.shape(a), &shape));
        }
        let out = self.value(a).to_vec();
        let ng = self.ng(a);
        Ok(self.push(shape, out, ng, Op::Reshape { a }))
    }

    /// Sum of all elements, accumulated in `f64`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().map(|v| v.to_f64()).sum();
        let ng = self.ng(a);
        self.push(vec![1], vec![S::from_f64(s)], ng, Op::Sum { a })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().map(|x| x.to_f64()).sum::<f64>() / v.len() as f64;
        let ng = self.ng(a);
        self.push(vec![1], vec![S::from_f64(s)], ng, Op::Mean { a })
    }

    // -- attention ------------------------------------------------------------

    /// Multi-head scaled dot-product attention over already projected
    /// `q[B, Tq, D]`, `k[B, Tk, D]`, `v[B, Tk, D]`, with `D` split evenly into
    /// `heads`. `allowed[B·Tq·Tk]` marks the key positions each query may
    /// attend to; masked scores are −∞ before the softmax. A query with no
    /// allowed key outputs zeros.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        allowed: Option<&[bool]>,
    ) -> Result<Var> {
        let (sq, sk, sv) = (
            self.shape(q).to_vec(),
            self.shape(k).to_vec(),
            self.shape(v).to_vec(),
        );
        if sq.len() != 3 || sk != sv || sk.len() != 3 || sq[0] != sk[0] || sq[2] != sk[2] {
            return Err(mismatch("attention", &sq, &sk));
        }
        let (batch, tq, d) = (sq[0], sq[1], sq[2]);
        let tk = sk[1];
        if heads == 0 || d % heads != 0 {
            return Err(NnError::InvalidArgument(format!(
                "model dimension {d} not divisible into {heads} heads"
            )));
        }
        if let Some(m) = allowed {
            if m.len() != batch * tq * tk {
                return Err(mismatch("attention mask", &[batch, tq, tk], &[m.len()]));
            }
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![S::ZERO; batch * heads * tq * tk];
        let mut out = vec![S::ZERO; batch * tq * d];
        let mut scores = vec![0.0f64; tk];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..tq {
                    let qrow = &qv[(b * tq + i) * d + h * dh..][..dh];
                    let mut max = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate() {
                        let ok = allowed.is_none_or(|m| m[(b * tq + i) * tk + j]);
                        *s = if ok {
                            let krow = &kv[(b * tk + j) * d + h * dh..][..dh];
                            let dot: f64 = qrow
                                .iter()
                                .zip(krow)
                                .map(|(x, y)| x.to_f64() * y.to_f64())
                                .sum();
                            dot * scale
                        } else {
                            f64::NEG_INFINITY
                        };
                        max = max.max(*s);
                    }
                    if max == f64::NEG_INFINITY {
                        continue;
                    }
                    let total: f64 = scores.iter().map(|s| (s - max).exp()).sum();
                    let prow = &mut probs[((b * heads + h) * tq + i) * tk..][..tk];
                    let orow = &mut out[(b * tq + i) * d + h * dh..][..dh];
                    for (j, &s) in scores.iter().enumerate() {
                        let p = S::from_f64((s - max).exp() / total);
                        prow[j] = p;
                        if p == S::ZERO {
                            continue;
                        }
                        let vrow = &vv[(b * tk + j) * d + h * dh..][..dh];
                        for (o, &x) in orow.iter_mut().zip(vrow) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        Ok(self.push(
            vec![batch, tq, d],
            out,
            ng,
            Op::Attention {
                q,
                k,
                v,
                batch,
                tq,
                tk,
                heads,
                dh,
                probs,
            },
        ))
    }

    // -- losses ---------------------------------------------------------------

    /// Mean cross-entropy of `logits[N, C]` against `targets`; `None` rows
    /// (padding) are excluded from both the sum and the count. With no
    /// counted rows the loss is 0.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || s[0] != targets.len() {
            return Err(mismatch("cross_entropy", &s, &[targets.len()]));
        }
        let c = s[1];
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(NnError::InvalidArgument(format!(
                "target class {bad} outside {c} classes"
            )));
        }
        let lv = self.value(logits);
        let mut probs = vec![S::ZERO; lv.len()];
        let mut total = 0.0;
        let mut count = 0;
        for (r, t) in targets.iter().enumerate() {
            let row = &lv[r * c..(r + 1) * c];
            let lp = crate::kernels::log_softmax_row(row);
            for (p, l) in probs[r * c..(r + 1) * c].iter_mut().zip(&lp) {
                *p = S::from_f64(l.exp());
            }
            if let Some(t) = t {
                total -= lp[*t];
                count += 1;
            }
        }
        let loss = if count == 0 {
            0.0
        } else {
            total / count as f64
        };
        let ng = self.ng(logits);
        Ok(self.push(
            vec![1],
            vec![S::from_f64(loss)],
            ng,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        ))
    }

    // -- backward -------------------------------------------------------------

    /// Reverse-mode pass from the scalar `loss`. Every node is visited once,
    /// in reverse recording order; gradients from multiple consumers add up.
    pub fn backward(&self, loss: Var) -> Result<Grads<S>> {
        if self.value(loss).len() != 1 {
            return Err(NnError::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::ONE]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            if !self.nodes[id].needs_grad {
                continue;
            }
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        let mut out = Grads::default();
        for (name, v) in &self.param_order {
            if !self.nodes[v.0].needs_grad {
                continue;
            }
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| vec![S::ZERO; self.nodes[v.0].value.len()]);
            out.map.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn backward_node(&self, id: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[id];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [S])| {
            if self.nodes[v.0].needs_grad {
                let slot =
                    grads[v.0].get_or_insert_with(|| vec![S::ZERO; self.nodes[v.0].value.len()]);
                f(slot);
            }
        };
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                acc(a, &mut |ga| gemm_nt(g, self.value(b), ga, m, n, k));
                acc(b, &mut |gb| gemm_tn(self.value(a), g, gb, k, m, n));
            }
            &Op::Add { a, b } => {
                acc(a, &mut |ga| {
                    for (x, &y) in ga.iter_mut().zip(g) {
                        *x += y;
                    }
                });
                acc(b, &mut |gb| {
                    let n = gb.len();
                    for ch in g.chunks(n) {
                        for (x, &y) in gb.iter_mut().zip(ch) {
                            *x += y;
                        }
                    }
                });
            }
            &Op::Mul { a, b } => {
                let (av, bv) = (self.value(a), self.value(b));
                acc(a, &mut |ga| {
                    let n = bv.len();
                    for (i, x) in ga.iter_mut().enumerate() {
                        *x += g[i] * bv[i % n];
                    }
                });
                acc(b, &mut |gb| {
                    let n = gb.len();
                    for (i, (&gi, &ai)) in g.iter().zip(av).enumerate() {
                        gb[i % n] += gi * ai;
                    }
                });
            }
            &Op::Scale { a, c } => acc(a, &mut |ga| {
                for (x, &y) in ga.iter_mut().zip(g) {
                    *x += y * c;
                }
            }),
            &Op::Relu { a } => {
                let av = self.value(a);
                acc(a, &mut |ga| {
                    for ((x, &y), &v) in ga.iter_mut().zip(g).zip(av) {
                        if v > S::ZERO {
                            *x += y;
                        }
                    }
                });
            }
            &Op::Softmax { a, outer, n, inner } => {
                let y = &node.value;
                acc(a, &mut |ga| {
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |i: usize| (o * n + i) * inner + j;
                            let dot: f64 = (0..n)
                                .map(|i| g[idx(i)].to_f64() * y[idx(i)].to_f64())
                                .sum();
                            let dot = S::from_f64(dot);
                            for i in 0..n {
                                ga[idx(i)] += y[idx(i)] * (g[idx(i)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                outer,
                n,
                inner,
                xhat,
                inv_std,
            } => {
                let (outer, n, inner) = (*outer, *n, *inner);
                let gv = gamma.map(|gm| self.value(gm));
                if let Some(gm) = *gamma {
                    acc(gm, &mut |gg| {
                        for (pos, (&gi, &xh)) in g.iter().zip(xhat.iter()).enumerate() {
                            gg[(pos / inner) % n] += gi * xh;
                        }
                    });
                }
                if let Some(bt) = *beta {
                    acc(bt, &mut |gb| {
                        for (pos, &gi) in g.iter().enumerate() {
                            gb[(pos / inner) % n] += gi;
                        }
                    });
                }
                acc(*x, &mut |gx| {
                    let mut dxhat = vec![0.0f64; n];
                    for o in 0..outer {
                        for j in 0..inner {
                            let idx = |i: usize| (o * n + i) * inner + j;
                            let (mut s1, mut s2) = (0.0, 0.0);
                            for (i, d) in dxhat.iter_mut().enumerate() {
                                let gi = g[idx(i)].to_f64();
                                *d = gv.map_or(gi, |gv| gi * gv[i].to_f64());
                                s1 += *d;
                                s2 += *d * xhat[idx(i)].to_f64();
                            }
                            let is = inv_std[o * inner + j].to_f64();
                            for (i, &d) in dxhat.iter().enumerate() {
                                let v = is / n as f64
                                    * (n as f64 * d - s1 - xhat[idx(i)].to_f64() * s2);
                                gx[idx(i)] += S::from_f64(v);
                            }
                        }
                    }
                });
            }
            Op::Embedding { table, ids, dim } => acc(*table, &mut |gt| {
                for (r, &i) in ids.iter().enumerate() {
                    for (x, &y) in gt[i * dim..(i + 1) * dim]
                        .iter_mut()
                        .zip(&g[r * dim..(r + 1) * dim])
                    {
                        *x += y;
                    }
                }
            }),
            Op::Dropout { a, mask } => acc(*a, &mut |ga| {
                for ((x, &y), &m) in ga.iter_mut().zip(g).zip(mask) {
                    *x += y * m;
                }
            }),
            &Op::Conv2d {
                x,
                w,
                b,
                batch,
                out_c,
                geom,
            } => {
                let (ck, p) = (geom.col_rows(), geom.col_cols());
                let in_sz = geom.c * geom.h * geom.w;
                let (xv, wv) = (self.value(x), self.value(w));
                if let Some(b) = b {
                    acc(b, &mut |gb| {
                        for bi in 0..batch {
                            for (oc, gbv) in gb.iter_mut().enumerate() {
                                let s: f64 = g[(bi * out_c + oc) * p..][..p]
                                    .iter()
                                    .map(|v| v.to_f64())
                                    .sum();
                                *gbv += S::from_f64(s);
                            }
                        }
                    });
                }
                let mut cols = vec![S::ZERO; ck * p];
                acc(w, &mut |gw| {
                    for bi in 0..batch {
                        im2col(&xv[bi * in_sz..(bi + 1) * in_sz], &geom, &mut cols);
                        gemm_nt(&g[bi * out_c * p..][..out_c * p], &cols, gw, out_c, p, ck);
                    }
                });
                acc(x, &mut |gx| {
                    for bi in 0..batch {
                        cols.fill(S::ZERO);
                        gemm_tn(
                            wv,
                            &g[bi * out_c * p..][..out_c * p],
                            &mut cols,
                            ck,
                            out_c,
                            p,
                        );
                        col2im(&cols, &geom, &mut gx[bi * in_sz..(bi + 1) * in_sz]);
                    }
                });
            }
            Op::MaxPool { a, argmax } => acc(*a, &mut |ga| {
                for (&i, &y) in argmax.iter().zip(g) {
                    ga[i] += y;
                }
            }),
            &Op::GlobalAvgPool { a, hw } => {
                let inv = S::from_f64(1.0 / hw as f64);
                acc(a, &mut |ga| {
                    for (ch, &y) in ga.chunks_mut(hw).zip(g) {
                        for x in ch {
                            *x += y * inv;
                        }
                    }
                });
            }
            &Op::Reshape { a } => acc(a, &mut |ga| {
                for (x, &y) in ga.iter_mut().zip(g) {
                    *x += y;
                }
            }),
            &Op::Sum { a } => acc(a, &mut |ga| {
                for x in ga.iter_mut() {
                    *x += g[0];
                }
            }),
            &Op::Mean { a } => {
                let n = self.value(a).len();
                let y = g[0] * S::from_f64(1.0 / n as f64);
                acc(a, &mut |ga| {
                    for x in ga.iter_mut() {
                        *x += y;
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                batch,
                tq,
                tk,
                heads,
                dh,
                probs,
            } => {
                let (batch, tq, tk, heads, dh) = (*batch, *tq, *tk, *heads, *dh);
                let d = heads * dh;
                let scale = 1.0 / (dh as f64).sqrt();
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                // dS for every (b, h, i, j), already multiplied by the scale.
                let mut ds = vec![0.0f64; probs.len()];
                for b in 0..batch {
                    for h in 0..heads {
                        for i in 0..tq {
                            let base = ((b * heads + h) * tq + i) * tk;
                            let prow = &probs[base..base + tk];
                            let grow = &g[(b * tq + i) * d + h * dh..][..dh];
                            let mut dp = vec![0.0f64; tk];
                            let mut dot = 0.0;
                            for j in 0..tk {
                                if prow[j] == S::ZERO {
                                    continue;
                                }
                                let vrow = &vv[(b * tk + j) * d + h * dh..][..dh];
                                dp[j] = grow
                                    .iter()
                                    .zip(vrow)
                                    .map(|(x, y)| x.to_f64() * y.to_f64())
                                    .sum();
                                dot += dp[j] * prow[j].to_f64();
                            }
                            for j in 0..tk {
                                ds[base + j] = prow[j].to_f64() * (dp[j] - dot) * scale;
                            }
                        }
                    }
                }
                acc(*v, &mut |gv| {
                    for b in 0..batch {
                        for h in 0..heads {
                            for i in 0..tq {
                                let base = ((b * heads + h) * tq + i) * tk;
                                let grow = &g[(b * tq + i) * d + h * dh..][..dh];
                                for j in 0..tk {
                                    let p = probs[base + j];
                                    if p == S::ZERO {
                                        continue;
                                    }
                                    let dst = &mut gv[(b * tk + j) * d + h * dh..][..dh];
                                    for (x, &y) in dst.iter_mut().zip(grow) {
                                        *x += p * y;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*q, &mut |gq| {
                    for b in 0..batch {
                        for h in 0..heads {
                            for i in 0..tq {
                                let base = ((b * heads + h) * tq + i) * tk;
                                let dst = &mut gq[(b * tq + i) * d + h * dh..][..dh];
                                for j in 0..tk {
                                    let s = S::from_f64(ds[base + j]);
                                    if s == S::ZERO {
                                        continue;
                                    }
                                    let krow = &kv[(b * tk + j) * d + h * dh..][..dh];
                                    for (x, &y) in dst.iter_mut().zip(krow) {
                                        *x += s * y;
                                    }
                                }
                            }
                        }
                    }
                });
                acc(*k, &mut |gk| {
                    for b in 0..batch {
                        for h in 0..heads {
                            for i in 0..tq {
                                let base = ((b * heads + h) * tq + i) * tk;
                                let qrow = &qv[(b * tq + i) * d + h * dh..][..dh];
                                for j in 0..tk {
                                    let s = S::from_f64(ds[base + j]);
                                    if s == S::ZERO {
                                        continue;
                                    }
                                    let dst = &mut gk[(b * tk + j) * d + h * dh..][..dh];
                                    for (x, &y) in dst.iter_mut().zip(qrow) {
                                        *x += s * y;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                count,
            } => {
                if *count == 0 {
                    return;
                }
                let c = probs.len() / targets.len();
                let scale = g[0] * S::from_f64(1.0 / *count as f64);
                acc(*logits, &mut |gl| {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        for j in 0..c {
                            let onehot = if j == *t { S::ONE } else { S::ZERO };
                            gl[r * c + j] += (probs[r * c + j] - onehot) * scale;
                        }
                    }
                });
            }
        }
    }
}
