//! Tape of tensor operations with a single reverse sweep.
//!
//! Nodes are appended in evaluation order, so the node index is a valid
//! topological order and the backward pass is a plain reverse loop. Shape
//! mismatches are programming errors and panic.

use crate::gemm::gemm;
use crate::{ParamGrads, ParamId, ParamSet, Tensor};

const NORM_EPS: f64 = 1e-5;
/// Variance floor for reference-frame normalization; kept tiny so the op
/// matches the plain affine formula to ~1e-9.
const REF_NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Input,
    Param(usize),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        kernel: usize,
        stride: usize,
        pad: usize,
        cols: Vec<f64>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Affine {
        a: Var,
        scale: f64,
    },
    Silu {
        a: Var,
    },
    Gelu {
        a: Var,
    },
    LayerNorm {
        x: Var,
        g: Var,
        b: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    GroupNorm {
        x: Var,
        g: Var,
        b: Var,
        groups: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
    Film {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Upsample2 {
        a: Var,
    },
    Reshape {
        a: Var,
    },
    Select {
        a: Var,
        index: usize,
    },
    Prepend {
        a: Var,
        token: Var,
    },
    RefNorm {
        a: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Sum {
        a: Var,
    },
    WeightedSqErr {
        pred: Var,
        target: Vec<f64>,
        weights: Vec<f64>,
    },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    needs_grad: bool,
}

/// Computation graph borrowing a parameter store.
pub struct Graph<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(i) => self.params.get(ParamId(i)),
            _ => node.value.as_ref().expect("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Constant input; no gradient flows into it.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Leaf referencing a trainable parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id.0),
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// `x·w + b` over the last axis of `x`; `w` is `[in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.value(x);
        let ws = self.value(w);
        let (din, dout) = (ws.shape()[0], ws.shape()[1]);
        assert_eq!(xs.last_dim(), din, "linear input dim mismatch");
        let m = xs.len() / din;
        let mut out = vec![0.0; m * dout];
        gemm(
            m,
            din,
            dout,
            xs.data(),
            false,
            ws.data(),
            false,
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let bs = self.value(b).data();
            assert_eq!(bs.len(), dout);
            for row in out.chunks_mut(dout) {
                for (o, bb) in row.iter_mut().zip(bs) {
                    *o += bb;
                }
            }
        }
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        self.push(Tensor::new(&shape, out), Op::Linear { x, w, b }, ng)
    }

    /// 1-D convolution over `x: [B, L, Cin]` (channels last) with
    /// `w: [kernel*Cin, Cout]`, zero padding `pad` and the given stride.
    pub fn conv1d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Var {
        let xs = self.value(x);
        let ws = self.value(w);
        assert_eq!(xs.shape().len(), 3, "conv1d expects [B, L, C]");
        let (bsz, len, cin) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
        assert_eq!(ws.shape()[0], kernel * cin, "conv1d weight rows");
        let cout = ws.shape()[1];
        assert!(len + 2 * pad >= kernel);
        let lout = (len + 2 * pad - kernel) / stride + 1;
        let width = kernel * cin;
        let mut cols = vec![0.0; bsz * lout * width];
        let xd = xs.data();
        for bb in 0..bsz {
            for lo in 0..lout {
                let row = &mut cols[(bb * lout + lo) * width..(bb * lout + lo + 1) * width];
                for j in 0..kernel {
                    let li = (lo * stride + j) as isize - pad as isize;
                    if li < 0 || li >= len as isize {
                        continue;
                    }
                    let src =
                        &xd[(bb * len + li as usize) * cin..(bb * len + li as usize + 1) * cin];
                    row[j * cin..(j + 1) * cin].copy_from_slice(src);
                }
            }
        }
        let mut out = vec![0.0; bsz * lout * cout];
        gemm(
            bsz * lout,
            width,
            cout,
            &cols,
            false,
            ws.data(),
            false,
            0.0,
            &mut out,
        );
        if let Some(b) = b {
            let bs = self.value(b).data();
            for row in out.chunks_mut(cout) {
                for (o, bb) in row.iter_mut().zip(bs) {
                    *o += bb;
                }
            }
        }
        let mut deps = vec![x, w];
        deps.extend(b);
        let ng = self.ng(&deps);
        self.push(
            Tensor::new(&[bsz, lout, cout], out),
            Op::Conv1d {
                x,
                w,
                b,
                kernel,
                stride,
                pad,
                cols,
            },
            ng,
        )
    }

    fn broadcast_check(&self, a: Var, b: Var) {
        let sa = self.shape(a);
        let sb = self.shape(b);
        assert!(
            sb.len() <= sa.len() && sa[sa.len() - sb.len()..] == *sb,
            "shape {sb:?} is not a suffix of {sa:?}"
        );
    }

    /// Elementwise sum; `b` may broadcast over leading axes of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.broadcast_check(a, b);
        let av = self.value(a);
        let bv = self.value(b).data();
        let nb = bv.len();
        let data: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv[i % nb])
            .collect();
        let shape = av.shape().to_vec();
        let ng = self.ng(&[a, b]);
        self.push(Tensor::new(&shape, data), Op::Add { a, b }, ng)
    }

    /// Elementwise product; `b` may broadcast over leading axes of `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.broadcast_check(a, b);
        let av = self.value(a);
        let bv = self.value(b).data();
        let nb = bv.len();
        let data: Vec<f64> = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x * bv[i % nb])
            .collect();
        let shape = av.shape().to_vec();
        let ng = self.ng(&[a, b]);
        self.push(Tensor::new(&shape, data), Op::Mul { a, b }, ng)
    }

    /// `scale·a + shift` with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|x| scale * x + shift).collect();
        let shape = av.shape().to_vec();
        let ng = self.ng(&[a]);
        self.push(Tensor::new(&shape, data), Op::Affine { a, scale }, ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| x * sigmoid(x)).collect();
        let shape = av.shape().to_vec();
        let ng = self.ng(&[a]);
        self.push(Tensor::new(&shape, data), Op::Silu { a }, ng)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av.data().iter().map(|&x| gelu(x)).collect();
        let shape = av.shape().to_vec();
        let ng = self.ng(&[a]);
        self.push(Tensor::new(&shape, data), Op::Gelu { a }, ng)
    }

    /// Layer normalization over the last axis with affine `g`, `b`.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Var {
        let xs = self.value(x);
        let d = xs.last_dim();
        let gs = self.value(g).data();
        let bs = self.value(b).data();
        assert_eq!(gs.len(), d);
        assert_eq!(bs.len(), d);
        let rows = xs.len() / d;
        let mut xhat = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xs.len()];
        for r in 0..rows {
            let row = &xs.data()[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + NORM_EPS).sqrt();
            inv_std[r] = is;
            for i in 0..d {
                let h = (row[i] - mean) * is;
                xhat[r * d + i] = h;
                out[r * d + i] = h * gs[i] + bs[i];
            }
        }
        let shape = xs.shape().to_vec();
        let ng = self.ng(&[x, g, b]);
        self.push(
            Tensor::new(&shape, out),
            Op::LayerNorm {
                x,
                g,
                b,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Group normalization over `x: [B, L, C]` with `groups` channel groups.
    pub fn group_norm(&mut self, x: Var, g: Var, b: Var, groups: usize) -> Var {
        let xs = self.value(x);
        assert_eq!(xs.shape().len(), 3, "group_norm expects [B, L, C]");
        let (bsz, len, c) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
        assert_eq!(c % groups, 0, "channels must divide into groups");
        let cg = c / groups;
        let n = (len * cg) as f64;
        let gs = self.value(g).data();
        let bs = self.value(b).data();
        let xd = xs.data();
        let mut xhat = vec![0.0; xs.len()];
        let mut inv_std = vec![0.0; bsz * groups];
        let mut out = vec![0.0; xs.len()];
        for bb in 0..bsz {
            for gi in 0..groups {
                let mut mean = 0.0;
                for l in 0..len {
                    for ch in gi * cg..(gi + 1) * cg {
                        mean += xd[(bb * len + l) * c + ch];
                    }
                }
                mean /= n;
                let mut var = 0.0;
                for l in 0..len {
                    for ch in gi * cg..(gi + 1) * cg {
                        let dv = xd[(bb * len + l) * c + ch] - mean;
                        var += dv * dv;
                    }
                }
                var /= n;
                let is = 1.0 / (var + NORM_EPS).sqrt();
                inv_std[bb * groups + gi] = is;
                for l in 0..len {
                    for ch in gi * cg..(gi + 1) * cg {
                        let idx = (bb * len + l) * c + ch;
                        let h = (xd[idx] - mean) * is;
                        xhat[idx] = h;
                        out[idx] = h * gs[ch] + bs[ch];
                    }
                }
            }
        }
        let shape = xs.shape().to_vec();
        let ng = self.ng(&[x, g, b]);
        self.push(
            Tensor::new(&shape, out),
            Op::GroupNorm {
                x,
                g,
                b,
                groups,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// Multi-head scaled dot-product attention over `[B, T, D]` inputs.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let qs = self.value(q);
        let ks = self.value(k);
        let vs = self.value(v);
        assert_eq!(qs.shape(), ks.shape());
        assert_eq!(qs.shape(), vs.shape());
        let (bsz, t, d) = (qs.shape()[0], qs.shape()[1], qs.shape()[2]);
        assert_eq!(d % heads, 0);
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; bsz * heads * t * t];
        let mut out = vec![0.0; qs.len()];
        let (qd, kd, vd) = (qs.data(), ks.data(), vs.data());
        for bb in 0..bsz {
            for h in 0..heads {
                let off = h * dh;
                for i in 0..t {
                    let qi = &qd[(bb * t + i) * d + off..(bb * t + i) * d + off + dh];
                    let p = &mut probs
                        [((bb * heads + h) * t + i) * t..((bb * heads + h) * t + i + 1) * t];
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..t {
                        let kj = &kd[(bb * t + j) * d + off..(bb * t + j) * d + off + dh];
                        let s: f64 = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() * scale;
                        p[j] = s;
                        max = max.max(s);
                    }
                    let mut z = 0.0;
                    for pj in p.iter_mut() {
                        *pj = (*pj - max).exp();
                        z += *pj;
                    }
                    for pj in p.iter_mut() {
                        *pj /= z;
                    }
                    let o = &mut out[(bb * t + i) * d + off..(bb * t + i) * d + off + dh];
                    for j in 0..t {
                        let vj = &vd[(bb * t + j) * d + off..(bb * t + j) * d + off + dh];
                        for (oo, vv) in o.iter_mut().zip(vj) {
                            *oo += p[j] * vv;
                        }
                    }
                }
            }
        }
        let shape = qs.shape().to_vec();
        let ng = self.ng(&[q, k, v]);
        self.push(
            Tensor::new(&shape, out),
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            ng,
        )
    }

    /// Feature-wise modulation `x·gamma + beta` of `x: [B, ..., C]` by
    /// per-sample `gamma, beta: [B, C]`.
    pub fn film(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xs = self.value(x);
        let gs = self.value(gamma);
        let bs = self.value(beta);
        let bsz = xs.shape()[0];
        let c = xs.last_dim();
        assert_eq!(gs.shape(), [bsz, c], "film gamma shape");
        assert_eq!(bs.shape(), [bsz, c], "film beta shape");
        let per = xs.len() / bsz;
        let mut out = vec![0.0; xs.len()];
        for bb in 0..bsz {
            let g = &gs.data()[bb * c..(bb + 1) * c];
            let be = &bs.data()[bb * c..(bb + 1) * c];
            let src = &xs.data()[bb * per..(bb + 1) * per];
            let dst = &mut out[bb * per..(bb + 1) * per];
            for (row_s, row_d) in src.chunks(c).zip(dst.chunks_mut(c)) {
                for i in 0..c {
                    row_d[i] = row_s[i] * g[i] + be[i];
                }
            }
        }
        let shape = xs.shape().to_vec();
        let ng = self.ng(&[x, gamma, beta]);
        self.push(Tensor::new(&shape, out), Op::Film { x, gamma, beta }, ng)
    }

    /// Concatenate along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let (ca, cb) = (av.last_dim(), bv.last_dim());
        let rows = av.len() / ca;
        assert_eq!(rows, bv.len() / cb, "concat leading dims differ");
        assert_eq!(
            av.shape()[..av.shape().len() - 1],
            bv.shape()[..bv.shape().len() - 1]
        );
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for r in 0..rows {
            out.extend_from_slice(&av.data()[r * ca..(r + 1) * ca]);
            out.extend_from_slice(&bv.data()[r * cb..(r + 1) * cb]);
        }
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = ca + cb;
        let ng = self.ng(&[a, b]);
        self.push(Tensor::new(&shape, out), Op::Concat { a, b }, ng)
    }

    /// Nearest-neighbour ×2 upsampling along axis 1 of `[B, L, C]`.
    pub fn upsample2(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (bsz, len, c) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let mut out = vec![0.0; av.len() * 2];
        for bb in 0..bsz {
            for l in 0..len {
                let src = &av.data()[(bb * len + l) * c..(bb * len + l + 1) * c];
                for r in 0..2 {
                    let dl = 2 * l + r;
                    out[(bb * 2 * len + dl) * c..(bb * 2 * len + dl + 1) * c].copy_from_slice(src);
                }
            }
        }
        let ng = self.ng(&[a]);
        self.push(
            Tensor::new(&[bsz, 2 * len, c], out),
            Op::Upsample2 { a },
            ng,
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshape(shape);
        let ng = self.ng(&[a]);
        self.push(t, Op::Reshape { a }, ng)
    }

    /// Picks index `index` of axis 1: `[B, T, D] -> [B, D]`.
    pub fn select(&mut self, a: Var, index: usize) -> Var {
        let av = self.value(a);
        let (bsz, t, d) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        assert!(index < t);
        let mut out = Vec::with_capacity(bsz * d);
        for bb in 0..bsz {
            out.extend_from_slice(&av.data()[(bb * t + index) * d..(bb * t + index + 1) * d]);
        }
        let ng = self.ng(&[a]);
        self.push(Tensor::new(&[bsz, d], out), Op::Select { a, index }, ng)
    }

    /// Prepends a shared token `[D]` to every sequence of `[B, T, D]`.
    pub fn prepend(&mut self, a: Var, token: Var) -> Var {
        let av = self.value(a);
        let tv = self.value(token).data();
        let (bsz, t, d) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        assert_eq!(tv.len(), d);
        let mut out = Vec::with_capacity(bsz * (t + 1) * d);
        for bb in 0..bsz {
            out.extend_from_slice(tv);
            out.extend_from_slice(&av.data()[bb * t * d..(bb + 1) * t * d]);
        }
        let ng = self.ng(&[a, token]);
        self.push(
            Tensor::new(&[bsz, t + 1, d], out),
            Op::Prepend { a, token },
            ng,
        )
    }

    /// Standardizes every token of `[B, T, D]` with the mean and population
    /// standard deviation of token 0 of the same sequence.
    pub fn ref_normalize(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (bsz, t, d) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        let mut xhat = vec![0.0; av.len()];
        let mut inv_std = vec![0.0; bsz];
        for bb in 0..bsz {
            let seq = &av.data()[bb * t * d..(bb + 1) * t * d];
            let r0 = &seq[..d];
            let mean = r0.iter().sum::<f64>() / d as f64;
            let var = r0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + REF_NORM_EPS).sqrt();
            inv_std[bb] = is;
            for (i, v) in seq.iter().enumerate() {
                xhat[bb * t * d + i] = (v - mean) * is;
            }
        }
        let shape = av.shape().to_vec();
        let ng = self.ng(&[a]);
        self.push(
            Tensor::new(&shape, xhat.clone()),
            Op::RefNorm { a, xhat, inv_std },
            ng,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Sum { a }, ng)
    }

    /// `(1/B) Σ_b Σ_q weights[q] Σ_a (pred − target)²` for `pred: [B, Q, A]`.
    pub fn weighted_sq_err(&mut self, pred: Var, target: &Tensor, weights: &[f64]) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.shape(), target.shape(), "target shape");
        let (bsz, q, a) = (pv.shape()[0], pv.shape()[1], pv.shape()[2]);
        assert_eq!(weights.len(), q);
        let mut loss = 0.0;
        for bb in 0..bsz {
            for j in 0..q {
                let base = (bb * q + j) * a;
                let se: f64 = (0..a)
                    .map(|i| {
                        let e = pv.data()[base + i] - target.data()[base + i];
                        e * e
                    })
                    .sum();
                loss += weights[j] * se;
            }
        }
        loss /= bsz as f64;
        let ng = self.ng(&[pred]);
        self.push(
            Tensor::scalar(loss),
            Op::WeightedSqErr {
                pred,
                target: target.data().to_vec(),
                weights: weights.to_vec(),
            },
            ng,
        )
    }

    /// Reverse sweep from the scalar `loss`, returning parameter gradients.
    pub fn backward(&self, loss: Var) -> ParamGrads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar");
        let mut out = ParamGrads::zeros_like(self.params);
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.backward_node(node, &gy, &mut grads, &mut out);
        }
        out
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[v.0].needs_grad {
            return None;
        }
        let n = self.value(v).len();
        Some(grads[v.0].get_or_insert_with(|| vec![0.0; n]))
    }

    fn backward_node(
        &self,
        node: &Node,
        gy: &[f64],
        grads: &mut [Option<Vec<f64>>],
        out: &mut ParamGrads,
    ) {
        match &node.op {
            Op::Input => {}
            Op::Param(pid) => {
                for (o, g) in out.get_mut(*pid).iter_mut().zip(gy) {
                    *o += g;
                }
            }
            Op::Linear { x, w, b } => {
                let xs = self.value(*x);
                let ws = self.value(*w);
                let (din, dout) = (ws.shape()[0], ws.shape()[1]);
                let m = xs.len() / din;
                if let Some(gx) = self.acc(grads, *x) {
                    gemm(m, dout, din, gy, false, ws.data(), true, 1.0, gx);
                }
                if let Some(gw) = self.acc(grads, *w) {
                    gemm(din, m, dout, xs.data(), true, gy, false, 1.0, gw);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        for row in gy.chunks(dout) {
                            for (g, r) in gb.iter_mut().zip(row) {
                                *g += r;
                            }
                        }
                    }
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                kernel,
                stride,
                pad,
                cols,
            } => {
                let xs = self.value(*x);
                let ws = self.value(*w);
                let (bsz, len, cin) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
                let cout = ws.shape()[1];
                let width = kernel * cin;
                let lout = cols.len() / (bsz * width);
                if let Some(gw) = self.acc(grads, *w) {
                    gemm(width, bsz * lout, cout, cols, true, gy, false, 1.0, gw);
                }
                if let Some(b) = b {
                    if let Some(gb) = self.acc(grads, *b) {
                        for row in gy.chunks(cout) {
                            for (g, r) in gb.iter_mut().zip(row) {
                                *g += r;
                            }
                        }
                    }
                }
                if self.nodes[x.0].needs_grad {
                    let mut dcols = vec![0.0; cols.len()];
                    gemm(
                        bsz * lout,
                        cout,
                        width,
                        gy,
                        false,
                        ws.data(),
                        true,
                        0.0,
                        &mut dcols,
                    );
                    let gx = self.acc(grads, *x).unwrap();
                    for bb in 0..bsz {
                        for lo in 0..lout {
                            let row =
                                &dcols[(bb * lout + lo) * width..(bb * lout + lo + 1) * width];
                            for j in 0..*kernel {
                                let li = (lo * stride + j) as isize - *pad as isize;
                                if li < 0 || li >= len as isize {
                                    continue;
                                }
                                let dst = &mut gx[(bb * len + li as usize) * cin
                                    ..(bb * len + li as usize + 1) * cin];
                                for (d, s) in dst.iter_mut().zip(&row[j * cin..(j + 1) * cin]) {
                                    *d += s;
                                }
                            }
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (g, y) in ga.iter_mut().zip(gy) {
                        *g += y;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    let nb = gb.len();
                    for (i, y) in gy.iter().enumerate() {
                        gb[i % nb] += y;
                    }
                }
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let nb = bv.len();
                if let Some(ga) = self.acc(grads, *a) {
                    for (i, y) in gy.iter().enumerate() {
                        ga[i] += y * bv[i % nb];
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (i, y) in gy.iter().enumerate() {
                        gb[i % nb] += y * av[i];
                    }
                }
            }
            Op::Affine { a, scale } => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (g, y) in ga.iter_mut().zip(gy) {
                        *g += scale * y;
                    }
                }
            }
            Op::Silu { a } => {
                let av = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((g, y), &x) in ga.iter_mut().zip(gy).zip(av) {
                        let s = sigmoid(x);
                        *g += y * s * (1.0 + x * (1.0 - s));
                    }
                }
            }
            Op::Gelu { a } => {
                let av = self.value(*a).data();
                if let Some(ga) = self.acc(grads, *a) {
                    for ((g, y), &x) in ga.iter_mut().zip(gy).zip(av) {
                        *g += y * gelu_grad(x);
                    }
                }
            }
            Op::LayerNorm {
                x,
                g,
                b,
                xhat,
                inv_std,
            } => {
                let d = self.value(*x).last_dim();
                let gs = self.value(*g).data();
                if let Some(gg) = self.acc(grads, *g) {
                    for (row_y, row_h) in gy.chunks(d).zip(xhat.chunks(d)) {
                        for i in 0..d {
                            gg[i] += row_y[i] * row_h[i];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for row_y in gy.chunks(d) {
                        for i in 0..d {
                            gb[i] += row_y[i];
                        }
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let n = d as f64;
                    for (r, is) in inv_std.iter().enumerate() {
                        let ry = &gy[r * d..(r + 1) * d];
                        let rh = &xhat[r * d..(r + 1) * d];
                        let mut s1 = 0.0;
                        let mut s2 = 0.0;
                        for i in 0..d {
                            let dh = ry[i] * gs[i];
                            s1 += dh;
                            s2 += dh * rh[i];
                        }
                        for i in 0..d {
                            let dh = ry[i] * gs[i];
                            gx[r * d + i] += is / n * (n * dh - s1 - rh[i] * s2);
                        }
                    }
                }
            }
            Op::GroupNorm {
                x,
                g,
                b,
                groups,
                xhat,
                inv_std,
            } => {
                let xs = self.value(*x);
                let (bsz, len, c) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
                let cg = c / groups;
                let gs = self.value(*g).data();
                if let Some(gg) = self.acc(grads, *g) {
                    for (i, (y, h)) in gy.iter().zip(xhat).enumerate() {
                        gg[i % c] += y * h;
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for (i, y) in gy.iter().enumerate() {
                        gb[i % c] += y;
                    }
                }
                if let Some(gx) = self.acc(grads, *x) {
                    let n = (len * cg) as f64;
                    for bb in 0..bsz {
                        for gi in 0..*groups {
                            let is = inv_std[bb * groups + gi];
                            let mut s1 = 0.0;
                            let mut s2 = 0.0;
                            for l in 0..len {
                                for ch in gi * cg..(gi + 1) * cg {
                                    let idx = (bb * len + l) * c + ch;
                                    let dh = gy[idx] * gs[ch];
                                    s1 += dh;
                                    s2 += dh * xhat[idx];
                                }
                            }
                            for l in 0..len {
                                for ch in gi * cg..(gi + 1) * cg {
                                    let idx = (bb * len + l) * c + ch;
                                    let dh = gy[idx] * gs[ch];
                                    gx[idx] += is / n * (n * dh - s1 - xhat[idx] * s2);
                                }
                            }
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let qs = self.value(*q);
                let (bsz, t, d) = (qs.shape()[0], qs.shape()[1], qs.shape()[2]);
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let qd = qs.data();
                let kd = self.value(*k).data();
                let vd = self.value(*v).data();
                let mut dq = vec![0.0; qd.len()];
                let mut dk = vec![0.0; qd.len()];
                let mut dv = vec![0.0; qd.len()];
                let mut dp = vec![0.0; t];
                for bb in 0..bsz {
                    for h in 0..*heads {
                        let off = h * dh;
                        for i in 0..t {
                            let p = &probs[((bb * heads + h) * t + i) * t
                                ..((bb * heads + h) * t + i + 1) * t];
                            let go = &gy[(bb * t + i) * d + off..(bb * t + i) * d + off + dh];
                            let mut dot = 0.0;
                            for j in 0..t {
                                let vj = (bb * t + j) * d + off;
                                let mut s = 0.0;
                                for e in 0..dh {
                                    s += go[e] * vd[vj + e];
                                    dv[vj + e] += p[j] * go[e];
                                }
                                dp[j] = s;
                                dot += p[j] * s;
                            }
                            let qi = (bb * t + i) * d + off;
                            for j in 0..t {
                                let ds = p[j] * (dp[j] - dot) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kj = (bb * t + j) * d + off;
                                for e in 0..dh {
                                    dq[qi + e] += ds * kd[kj + e];
                                    dk[kj + e] += ds * qd[qi + e];
                                }
                            }
                        }
                    }
                }
                for (var, g) in [(*q, dq), (*k, dk), (*v, dv)] {
                    if let Some(acc) = self.acc(grads, var) {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                }
            }
            Op::Film { x, gamma, beta } => {
                let xs = self.value(*x);
                let bsz = xs.shape()[0];
                let c = xs.last_dim();
                let per = xs.len() / bsz;
                let gs = self.value(*gamma).data();
                if let Some(gx) = self.acc(grads, *x) {
                    for bb in 0..bsz {
                        for (i, y) in gy[bb * per..(bb + 1) * per].iter().enumerate() {
                            gx[bb * per + i] += y * gs[bb * c + i % c];
                        }
                    }
                }
                if let Some(gg) = self.acc(grads, *gamma) {
                    for bb in 0..bsz {
                        for i in 0..per {
                            gg[bb * c + i % c] += gy[bb * per + i] * xs.data()[bb * per + i];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *beta) {
                    for bb in 0..bsz {
                        for i in 0..per {
                            gb[bb * c + i % c] += gy[bb * per + i];
                        }
                    }
                }
            }
            Op::Concat { a, b } => {
                let ca = self.value(*a).last_dim();
                let cb = self.value(*b).last_dim();
                let rows = gy.len() / (ca + cb);
                if let Some(ga) = self.acc(grads, *a) {
                    for r in 0..rows {
                        for i in 0..ca {
                            ga[r * ca + i] += gy[r * (ca + cb) + i];
                        }
                    }
                }
                if let Some(gb) = self.acc(grads, *b) {
                    for r in 0..rows {
                        for i in 0..cb {
                            gb[r * cb + i] += gy[r * (ca + cb) + ca + i];
                        }
                    }
                }
            }
            Op::Upsample2 { a } => {
                let av = self.value(*a);
                let (bsz, len, c) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                if let Some(ga) = self.acc(grads, *a) {
                    for bb in 0..bsz {
                        for l in 0..len {
                            for r in 0..2 {
                                let src = (bb * 2 * len + 2 * l + r) * c;
                                let dst = (bb * len + l) * c;
                                for i in 0..c {
                                    ga[dst + i] += gy[src + i];
                                }
                            }
                        }
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = self.acc(grads, *a) {
                    for (g, y) in ga.iter_mut().zip(gy) {
                        *g += y;
                    }
                }
            }
            Op::Select { a, index } => {
                let av = self.value(*a);
                let (bsz, t, d) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                if let Some(ga) = self.acc(grads, *a) {
                    for bb in 0..bsz {
                        for i in 0..d {
                            ga[(bb * t + index) * d + i] += gy[bb * d + i];
                        }
                    }
                }
            }
            Op::Prepend { a, token } => {
                let av = self.value(*a);
                let (bsz, t, d) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                if let Some(gt) = self.acc(grads, *token) {
                    for bb in 0..bsz {
                        for i in 0..d {
                            gt[i] += gy[bb * (t + 1) * d + i];
                        }
                    }
                }
                if let Some(ga) = self.acc(grads, *a) {
                    for bb in 0..bsz {
                        let src = &gy[(bb * (t + 1) + 1) * d..(bb + 1) * (t + 1) * d];
                        for (g, y) in ga[bb * t * d..(bb + 1) * t * d].iter_mut().zip(src) {
                            *g += y;
                        }
                    }
                }
            }
            Op::RefNorm { a, xhat, inv_std } => {
                let av = self.value(*a);
                let (bsz, t, d) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                if let Some(ga) = self.acc(grads, *a) {
                    let n = d as f64;
                    for bb in 0..bsz {
                        let is = inv_std[bb];
                        let base = bb * t * d;
                        let mut sum_y = 0.0;
                        let mut sum_yh = 0.0;
                        for i in 0..t * d {
                            ga[base + i] += gy[base + i] * is;
                            sum_y += gy[base + i];
                            sum_yh += gy[base + i] * xhat[base + i];
                        }
                        // mean and std come from token 0 only
                        for i in 0..d {
                            ga[base + i] -= is / n * (sum_y + xhat[base + i] * sum_yh);
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = self.acc(grads, *a) {
                    for g in ga.iter_mut() {
                        *g += gy[0];
                    }
                }
            }
            Op::WeightedSqErr {
                pred,
                target,
                weights,
            } => {
                let pv = self.value(*pred);
                let (bsz, q, a) = (pv.shape()[0], pv.shape()[1], pv.shape()[2]);
                if let Some(gp) = self.acc(grads, *pred) {
                    let s = 2.0 * gy[0] / bsz as f64;
                    for bb in 0..bsz {
                        for j in 0..q {
                            for i in 0..a {
                                let idx = (bb * q + j) * a + i;
                                gp[idx] += s * weights[j] * (pv.data()[idx] - target[idx]);
                            }
                        }
                    }
                }
            }
        }
    }
}
