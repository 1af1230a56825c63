use num_complex::Complex64;

use super::tape::{accumulate, Node, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{cayley_from_generator, contract, matmul_into, numel, strides, Tensor};
use crate::{CTensor, RTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Bin {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Unary {
    Tanh,
    Sin,
    Cos,
}

pub(crate) enum Op {
    Leaf,
    Binary(Bin, usize, usize),
    Scale(usize, f64),
    Offset(usize),
    Unary(Unary, usize),
    MatMul(usize, usize),
    Bmm(usize, usize),
    Contract(usize, usize, Vec<(usize, usize)>),
    SumAll(usize),
    SumLast(usize),
    LayerNorm { x: usize, inv_std: Vec<f64> },
    NormLast { x: usize, floor: f64 },
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Gather(usize, Vec<Option<usize>>),
    ScatterAdd(usize, Vec<usize>),
    Concat(Vec<usize>),
    SliceLast { x: usize, start: usize },
    Index0(usize, usize),
    Cross(usize, usize),
    Cayley { raw: usize, inv: CTensor, shrink: f64 },
}

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let r = a.len().max(b.len());
    let mut out = vec![0; r];
    for i in 0..r {
        let da = if i + a.len() >= r { a[i + a.len() - r] } else { 1 };
        let db = if i + b.len() >= r { b[i + b.len() - r] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// For every element of `out`, the flat offset of the broadcast source in `inp`.
fn bcast_offsets(out: &[usize], inp: &[usize]) -> Vec<usize> {
    let r = out.len();
    let in_strides = strides(inp);
    let mut st = vec![0usize; r];
    for (k, s) in st.iter_mut().enumerate() {
        if k + inp.len() >= r {
            let ax = k + inp.len() - r;
            if inp[ax] != 1 {
                *s = in_strides[ax];
            }
        }
    }
    let n = numel(out);
    let mut offs = Vec::with_capacity(n);
    let mut idx = vec![0usize; r];
    let mut off = 0usize;
    for _ in 0..n {
        offs.push(off);
        for ax in (0..r).rev() {
            idx[ax] += 1;
            off += st[ax];
            if idx[ax] < out[ax] {
                break;
            }
            off -= st[ax] * out[ax];
            idx[ax] = 0;
        }
    }
    offs
}

fn binary_eval(kind: Bin, x: f64, y: f64) -> f64 {
    match kind {
        Bin::Add => x + y,
        Bin::Sub => x - y,
        Bin::Mul => x * y,
        Bin::Div => x / y,
    }
}

fn t(shape: &[usize], data: Vec<f64>) -> RTensor {
    Tensor::new(shape.to_vec(), data).expect("internal shape bookkeeping")
}

fn transpose2(a: &RTensor) -> RTensor {
    a.transpose().expect("rank-2 operand")
}

impl Tape {
    fn binary(&self, kind: Bin, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.id].value, &nodes[b.id].value);
            if av.shape() == bv.shape() {
                let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| binary_eval(kind, x, y)).collect();
                t(av.shape(), data)
            } else {
                let out = broadcast_shape(av.shape(), bv.shape()).unwrap_or_else(|| {
                    panic!("cannot broadcast {:?} with {:?}", av.shape(), bv.shape())
                });
                let oa = bcast_offsets(&out, av.shape());
                let ob = bcast_offsets(&out, bv.shape());
                let (ad, bd) = (av.data(), bv.data());
                let data = oa.iter().zip(&ob).map(|(&i, &j)| binary_eval(kind, ad[i], bd[j])).collect();
                t(&out, data)
            }
        };
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Binary(kind, a.id, b.id), rg)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(Bin::Add, a, b)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(Bin::Sub, a, b)
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(Bin::Mul, a, b)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(Bin::Div, a, b)
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Scale(a.id, c), rg)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// Conjugation of the imaginary component of a complex pair.
    pub fn conj_part(&self, im: Var) -> Var {
        self.neg(im)
    }

    /// `a + c` elementwise.
    pub fn offset(&self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Offset(a.id), rg)
    }

    fn unary(&self, kind: Unary, a: Var) -> Var {
        let f = match kind {
            Unary::Tanh => f64::tanh,
            Unary::Sin => f64::sin,
            Unary::Cos => f64::cos,
        };
        let value = self.value(a).map(f);
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Unary(kind, a.id), rg)
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(Unary::Tanh, a)
    }

    pub fn sin(&self, a: Var) -> Var {
        self.unary(Unary::Sin, a)
    }

    pub fn cos(&self, a: Var) -> Var {
        self.unary(Unary::Cos, a)
    }

    /// Product of two rank-2 operands.
    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.matmul(&nodes[b.id].value).unwrap_or_else(|e| panic!("matmul: {e}"))
        };
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::MatMul(a.id, b.id), rg)
    }

    /// Batched product `[B, m, k] × [B, k, n] → [B, m, n]`.
    pub fn bmm(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            bmm_raw(&nodes[a.id].value, &nodes[b.id].value, false, false)
        };
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Bmm(a.id, b.id), rg)
    }

    /// General contraction over `(axis of a, axis of b)` pairs.
    pub fn contract(&self, a: Var, b: Var, axes: &[(usize, usize)]) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            contract(&nodes[a.id].value, &nodes[b.id].value, axes)?
        };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Contract(a.id, b.id, axes.to_vec()), rg))
    }

    /// Sum of every entry, as a rank-0 value.
    pub fn sum_all(&self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.any_grad(&[a]);
        self.push(RTensor::scalar(s), Op::SumAll(a.id), rg)
    }

    /// Sum over the last axis (dropping it).
    pub fn sum_last(&self, a: Var) -> Var {
        let value = {
            let v = self.value(a);
            let shape = v.shape();
            let n = *shape.last().expect("sum_last on rank-0");
            let data = v.data().chunks(n).map(|c| c.iter().sum()).collect();
            t(&shape[..shape.len() - 1], data)
        };
        let rg = self.any_grad(&[a]);
        self.push(value, Op::SumLast(a.id), rg)
    }

    /// Normalize each row of the last axis to zero mean and unit variance.
    pub fn layer_norm(&self, a: Var, eps: f64) -> Var {
        let (value, inv_std) = {
            let v = self.value(a);
            let n = *v.shape().last().expect("layer_norm on rank-0");
            let mut out = Vec::with_capacity(v.len());
            let mut inv = Vec::with_capacity(v.len() / n);
            for row in v.data().chunks(n) {
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
                let is = 1.0 / (var + eps).sqrt();
                out.extend(row.iter().map(|x| (x - mean) * is));
                inv.push(is);
            }
            (t(v.shape(), out), inv)
        };
        let rg = self.any_grad(&[a]);
        self.push(value, Op::LayerNorm { x: a.id, inv_std }, rg)
    }

    /// Euclidean norm over the last axis, floored at `floor`.
    pub fn norm_last(&self, a: Var, floor: f64) -> Var {
        let value = {
            let v = self.value(a);
            let shape = v.shape();
            let n = *shape.last().expect("norm_last on rank-0");
            let data = v.data().chunks(n).map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt().max(floor)).collect();
            t(&shape[..shape.len() - 1], data)
        };
        let rg = self.any_grad(&[a]);
        self.push(value, Op::NormLast { x: a.id, floor }, rg)
    }

    pub fn reshape(&self, a: Var, shape: &[usize]) -> Var {
        let value = self.value(a).reshape(shape).unwrap_or_else(|e| panic!("reshape: {e}"));
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Reshape(a.id), rg)
    }

    pub fn permute(&self, a: Var, perm: &[usize]) -> Var {
        let value = self.value(a).permute(perm).unwrap_or_else(|e| panic!("permute: {e}"));
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Permute(a.id, perm.to_vec()), rg)
    }

    /// Rows of `a` picked along axis 0; `None` yields a zero row.
    pub fn gather_rows(&self, a: Var, idx: &[Option<usize>]) -> Var {
        let value = {
            let v = self.value(a);
            let row = v.len() / v.shape()[0];
            let mut data = Vec::with_capacity(idx.len() * row);
            for i in idx {
                match i {
                    Some(r) => data.extend_from_slice(&v.data()[r * row..(r + 1) * row]),
                    None => data.extend(std::iter::repeat(0.0).take(row)),
                }
            }
            let mut shape = v.shape().to_vec();
            shape[0] = idx.len();
            t(&shape, data)
        };
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Gather(a.id, idx.to_vec()), rg)
    }

    /// Sum rows of `a` into `n_out` buckets: `out[idx[r]] += a[r]`.
    pub fn scatter_add_rows(&self, a: Var, idx: &[usize], n_out: usize) -> Var {
        let value = {
            let v = self.value(a);
            assert_eq!(v.shape()[0], idx.len(), "scatter index length");
            let row = v.len() / v.shape()[0];
            let mut data = vec![0.0; n_out * row];
            for (r, &o) in idx.iter().enumerate() {
                for (d, s) in data[o * row..(o + 1) * row].iter_mut().zip(&v.data()[r * row..(r + 1) * row]) {
                    *d += s;
                }
            }
            let mut shape = v.shape().to_vec();
            shape[0] = n_out;
            t(&shape, data)
        };
        let rg = self.any_grad(&[a]);
        self.push(value, Op::ScatterAdd(a.id, idx.to_vec()), rg)
    }

    /// Concatenate along the last axis.
    pub fn concat_last(&self, parts: &[Var]) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let vals: Vec<&RTensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            let lead = &vals[0].shape()[..vals[0].rank() - 1];
            let rows = numel(lead);
            let widths: Vec<usize> = vals
                .iter()
                .map(|v| {
                    assert_eq!(&v.shape()[..v.rank() - 1], lead, "concat leading shapes");
                    *v.shape().last().unwrap()
                })
                .collect();
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (v, &w) in vals.iter().zip(&widths) {
                    data.extend_from_slice(&v.data()[r * w..(r + 1) * w]);
                }
            }
            let mut shape = lead.to_vec();
            shape.push(total);
            t(&shape, data)
        };
        let rg = self.any_grad(parts);
        self.push(value, Op::Concat(parts.iter().map(|p| p.id).collect()), rg)
    }

    /// Entries `start..start + len` of the last axis.
    pub fn slice_last(&self, a: Var, start: usize, len: usize) -> Var {
        let value = {
            let v = self.value(a);
            let n = *v.shape().last().unwrap();
            assert!(start + len <= n, "slice {start}+{len} exceeds {n}");
            let data = v.data().chunks(n).flat_map(|c| c[start..start + len].iter().copied()).collect();
            let mut shape = v.shape().to_vec();
            *shape.last_mut().unwrap() = len;
            t(&shape, data)
        };
        let rg = self.any_grad(&[a]);
        self.push(value, Op::SliceLast { x: a.id, start }, rg)
    }

    /// `a[k]` along axis 0.
    pub fn index0(&self, a: Var, k: usize) -> Var {
        let value = {
            let v = self.value(a);
            let row = v.len() / v.shape()[0];
            t(&v.shape()[1..], v.data()[k * row..(k + 1) * row].to_vec())
        };
        let rg = self.any_grad(&[a]);
        self.push(value, Op::Index0(a.id, k), rg)
    }

    /// Cross product over a trailing axis of length 3.
    pub fn cross(&self, a: Var, b: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let (av, bv) = (&nodes[a.id].value, &nodes[b.id].value);
            assert_eq!(av.shape(), bv.shape(), "cross operand shapes");
            assert_eq!(av.shape().last(), Some(&3), "cross needs a trailing axis of 3");
            t(av.shape(), cross_rows(av.data(), bv.data()))
        };
        let rg = self.any_grad(&[a, b]);
        self.push(value, Op::Cross(a.id, b.id), rg)
    }

    /// Cayley unitary from raw `[2, n, n]` parameters; the result is
    /// `[2, n, n]` holding real and imaginary parts.
    pub fn cayley(&self, raw: Var) -> Result<Var> {
        let (value, inv, shrink) = {
            let v = self.value(raw);
            let n = match v.shape() {
                &[2, a, b] if a == b => a,
                s => return Err(Error::Dimension(format!("unitary raw parameters must be [2, n, n], got {s:?}"))),
            };
            let mut a = crate::tensor::generator_from_raw(&v, n);
            let mut shrink = 1.0;
            let mut attempt = 0;
            let u = loop {
                match cayley_from_generator(&a) {
                    Ok(u) => break u,
                    Err(Error::Numerical { .. }) if attempt < 8 => {
                        crate::tensor::CAYLEY_REGULARIZATIONS.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        a = a.scale(Complex64::new(0.5, 0.0));
                        shrink *= 0.5;
                        attempt += 1;
                    }
                    Err(e) => return Err(e),
                }
            };
            // U = 2B − I, so B = (U + I)/2.
            let inv = u.add(&CTensor::eye(n))?.scale(Complex64::new(0.5, 0.0));
            let mut data = u.re().into_data();
            data.extend(u.im().into_data());
            (t(&[2, n, n], data), inv, shrink)
        };
        let rg = self.any_grad(&[raw]);
        Ok(self.push(value, Op::Cayley { raw: raw.id, inv, shrink }, rg))
    }

    /// Dispatch a primitive by name. Used by generic graph builders.
    pub fn apply_named(&self, name: &str, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(Error::Argument(format!("{name} takes {n} inputs, got {}", inputs.len())))
            }
        };
        match name {
            "add" => arity(2).map(|_| self.add(inputs[0], inputs[1])),
            "sub" => arity(2).map(|_| self.sub(inputs[0], inputs[1])),
            "mul" => arity(2).map(|_| self.mul(inputs[0], inputs[1])),
            "div" => arity(2).map(|_| self.div(inputs[0], inputs[1])),
            "matmul" => arity(2).map(|_| self.matmul(inputs[0], inputs[1])),
            "cross" => arity(2).map(|_| self.cross(inputs[0], inputs[1])),
            "neg" | "conj" => arity(1).map(|_| self.neg(inputs[0])),
            "tanh" => arity(1).map(|_| self.tanh(inputs[0])),
            "sin" => arity(1).map(|_| self.sin(inputs[0])),
            "cos" => arity(1).map(|_| self.cos(inputs[0])),
            "sum" => arity(1).map(|_| self.sum_all(inputs[0])),
            "layer_norm" => arity(1).map(|_| self.layer_norm(inputs[0], 1e-5)),
            "norm" => arity(1).map(|_| self.norm_last(inputs[0], 1e-8)),
            "cayley" => {
                arity(1)?;
                self.cayley(inputs[0])
            }
            "svd" => Err(Error::Capability("svd is not differentiable on the tape".into())),
            other => Err(Error::Capability(format!("unknown primitive {other:?}"))),
        }
    }
}

fn cross_rows(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    for (x, y) in a.chunks(3).zip(b.chunks(3)) {
        out.push(x[1] * y[2] - x[2] * y[1]);
        out.push(x[2] * y[0] - x[0] * y[2]);
        out.push(x[0] * y[1] - x[1] * y[0]);
    }
    out
}

/// Batched product with optional transposition of either operand's
/// trailing two axes.
fn bmm_raw(a: &RTensor, b: &RTensor, ta: bool, tb: bool) -> RTensor {
    assert!(a.rank() == 3 && b.rank() == 3, "bmm needs rank-3 operands, got {:?} and {:?}", a.shape(), b.shape());
    let batch = a.shape()[0];
    assert_eq!(batch, b.shape()[0], "bmm batch sizes");
    let (m, k) = if ta { (a.shape()[2], a.shape()[1]) } else { (a.shape()[1], a.shape()[2]) };
    let (k2, n) = if tb { (b.shape()[2], b.shape()[1]) } else { (b.shape()[1], b.shape()[2]) };
    assert_eq!(k, k2, "bmm inner dims");
    let sa = a.shape()[1] * a.shape()[2];
    let sb = b.shape()[1] * b.shape()[2];
    let mut out = vec![0.0; batch * m * n];
    let mut abuf = vec![0.0; m * k];
    let mut bbuf = vec![0.0; k * n];
    for p in 0..batch {
        let asl = &a.data()[p * sa..(p + 1) * sa];
        let bsl = &b.data()[p * sb..(p + 1) * sb];
        let am: &[f64] = if ta {
            for i in 0..m {
                for j in 0..k {
                    abuf[i * k + j] = asl[j * m + i];
                }
            }
            &abuf
        } else {
            asl
        };
        let bm: &[f64] = if tb {
            for i in 0..k {
                for j in 0..n {
                    bbuf[i * n + j] = bsl[j * k + i];
                }
            }
            &bbuf
        } else {
            bsl
        };
        matmul_into(am, bm, &mut out[p * m * n..(p + 1) * m * n], m, k, n);
    }
    t(&[batch, m, n], out)
}

/// Inverse permutation.
fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

impl Op {
    pub(crate) fn backward(&self, nodes: &[Node], out: &RTensor, g: &RTensor, grads: &mut [Option<RTensor>]) {
        let val = |id: usize| &nodes[id].value;
        let wants = |id: usize| nodes[id].requires_grad;
        match self {
            Op::Leaf => {}
            Op::Binary(kind, a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let same = av.shape() == bv.shape();
                let oa = if same { None } else { Some(bcast_offsets(out.shape(), av.shape())) };
                let ob = if same { None } else { Some(bcast_offsets(out.shape(), bv.shape())) };
                let ia = |k: usize| oa.as_ref().map_or(k, |o| o[k]);
                let ib = |k: usize| ob.as_ref().map_or(k, |o| o[k]);
                let (ad, bd, gd) = (av.data(), bv.data(), g.data());
                if wants(*a) {
                    let mut ga = vec![0.0; av.len()];
                    for (k, &gk) in gd.iter().enumerate() {
                        ga[ia(k)] += match kind {
                            Bin::Add | Bin::Sub => gk,
                            Bin::Mul => gk * bd[ib(k)],
                            Bin::Div => gk / bd[ib(k)],
                        };
                    }
                    accumulate(grads, nodes, *a, t(av.shape(), ga));
                }
                if wants(*b) {
                    let mut gb = vec![0.0; bv.len()];
                    for (k, &gk) in gd.iter().enumerate() {
                        gb[ib(k)] += match kind {
                            Bin::Add => gk,
                            Bin::Sub => -gk,
                            Bin::Mul => gk * ad[ia(k)],
                            Bin::Div => {
                                let y = bd[ib(k)];
                                -gk * ad[ia(k)] / (y * y)
                            }
                        };
                    }
                    accumulate(grads, nodes, *b, t(bv.shape(), gb));
                }
            }
            Op::Scale(a, c) => accumulate(grads, nodes, *a, g.map(|x| x * c)),
            Op::Offset(a) => accumulate(grads, nodes, *a, g.clone()),
            Op::Unary(kind, a) => {
                let x = val(*a);
                let data = match kind {
                    Unary::Tanh => g.data().iter().zip(out.data()).map(|(gk, y)| gk * (1.0 - y * y)).collect(),
                    Unary::Sin => g.data().iter().zip(x.data()).map(|(gk, x)| gk * x.cos()).collect(),
                    Unary::Cos => g.data().iter().zip(x.data()).map(|(gk, x)| -gk * x.sin()).collect(),
                };
                accumulate(grads, nodes, *a, t(x.shape(), data));
            }
            Op::MatMul(a, b) => {
                if wants(*a) {
                    accumulate(grads, nodes, *a, g.matmul(&transpose2(val(*b))).unwrap());
                }
                if wants(*b) {
                    accumulate(grads, nodes, *b, transpose2(val(*a)).matmul(g).unwrap());
                }
            }
            Op::Bmm(a, b) => {
                if wants(*a) {
                    accumulate(grads, nodes, *a, bmm_raw(g, val(*b), false, true));
                }
                if wants(*b) {
                    accumulate(grads, nodes, *b, bmm_raw(val(*a), g, true, false));
                }
            }
            Op::Contract(a, b, axes) => {
                let (av, bv) = (val(*a), val(*b));
                let free_a: Vec<usize> = (0..av.rank()).filter(|i| !axes.iter().any(|p| p.0 == *i)).collect();
                let free_b: Vec<usize> = (0..bv.rank()).filter(|i| !axes.iter().any(|p| p.1 == *i)).collect();
                let na = free_a.len();
                if wants(*a) {
                    // g[fa.., fb..] · b over b's free axes → [fa.., contracted b axes in b order]
                    let pairs: Vec<(usize, usize)> = free_b.iter().enumerate().map(|(t, &jb)| (na + t, jb)).collect();
                    let r = contract(g, bv, &pairs).unwrap();
                    let mut order = free_a.clone();
                    for jb in 0..bv.rank() {
                        if let Some(p) = axes.iter().find(|p| p.1 == jb) {
                            order.push(p.0);
                        }
                    }
                    accumulate(grads, nodes, *a, r.permute(&invert(&order)).unwrap());
                }
                if wants(*b) {
                    let pairs: Vec<(usize, usize)> = free_a.iter().enumerate().map(|(t, &ia)| (ia, t)).collect();
                    let r = contract(av, g, &pairs).unwrap();
                    let mut order = Vec::new();
                    for ia in 0..av.rank() {
                        if let Some(p) = axes.iter().find(|p| p.0 == ia) {
                            order.push(p.1);
                        }
                    }
                    order.extend(free_b.iter().copied());
                    accumulate(grads, nodes, *b, r.permute(&invert(&order)).unwrap());
                }
            }
            Op::SumAll(a) => {
                let x = val(*a);
                accumulate(grads, nodes, *a, RTensor::filled(x.shape(), g.item()));
            }
            Op::SumLast(a) => {
                let x = val(*a);
                let n = *x.shape().last().unwrap();
                let data = g.data().iter().flat_map(|&gk| std::iter::repeat(gk).take(n)).collect();
                accumulate(grads, nodes, *a, t(x.shape(), data));
            }
            Op::LayerNorm { x, inv_std } => {
                let xv = val(*x);
                let n = *xv.shape().last().unwrap();
                let mut data = Vec::with_capacity(xv.len());
                for ((gr, yr), is) in g.data().chunks(n).zip(out.data().chunks(n)).zip(inv_std) {
                    let mg = gr.iter().sum::<f64>() / n as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    data.extend(gr.iter().zip(yr).map(|(gk, yk)| is * (gk - mg - yk * mgy)));
                }
                accumulate(grads, nodes, *x, t(xv.shape(), data));
            }
            Op::NormLast { x, floor } => {
                let xv = val(*x);
                let n = *xv.shape().last().unwrap();
                let mut data = Vec::with_capacity(xv.len());
                for ((xr, &nk), &gk) in xv.data().chunks(n).zip(out.data()).zip(g.data()) {
                    let raw = xr.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if raw > *floor {
                        data.extend(xr.iter().map(|v| gk * v / nk));
                    } else {
                        data.extend(std::iter::repeat(0.0).take(n));
                    }
                }
                accumulate(grads, nodes, *x, t(xv.shape(), data));
            }
            Op::Reshape(a) => accumulate(grads, nodes, *a, g.reshape(val(*a).shape()).unwrap()),
            Op::Permute(a, perm) => accumulate(grads, nodes, *a, g.permute(&invert(perm)).unwrap()),
            Op::Gather(a, idx) => {
                let x = val(*a);
                let row = x.len() / x.shape()[0];
                let mut data = vec![0.0; x.len()];
                for (r, i) in idx.iter().enumerate() {
                    if let Some(src) = i {
                        for (d, s) in data[src * row..(src + 1) * row].iter_mut().zip(&g.data()[r * row..(r + 1) * row]) {
                            *d += s;
                        }
                    }
                }
                accumulate(grads, nodes, *a, t(x.shape(), data));
            }
            Op::ScatterAdd(a, idx) => {
                let x = val(*a);
                let row = x.len() / x.shape()[0];
                let mut data = Vec::with_capacity(x.len());
                for &o in idx {
                    data.extend_from_slice(&g.data()[o * row..(o + 1) * row]);
                }
                accumulate(grads, nodes, *a, t(x.shape(), data));
            }
            Op::Concat(parts) => {
                let total = *out.shape().last().unwrap();
                let mut start = 0;
                for &p in parts {
                    let x = val(p);
                    let w = *x.shape().last().unwrap();
                    if wants(p) {
                        let data = g.data().chunks(total).flat_map(|c| c[start..start + w].iter().copied()).collect();
                        accumulate(grads, nodes, p, t(x.shape(), data));
                    }
                    start += w;
                }
            }
            Op::SliceLast { x, start } => {
                let xv = val(*x);
                let n = *xv.shape().last().unwrap();
                let w = *out.shape().last().unwrap();
                let mut data = vec![0.0; xv.len()];
                for (dst, src) in data.chunks_mut(n).zip(g.data().chunks(w)) {
                    dst[*start..start + w].copy_from_slice(src);
                }
                accumulate(grads, nodes, *x, t(xv.shape(), data));
            }
            Op::Index0(a, k) => {
                let x = val(*a);
                let row = g.len();
                let mut data = vec![0.0; x.len()];
                data[k * row..(k + 1) * row].copy_from_slice(g.data());
                accumulate(grads, nodes, *a, t(x.shape(), data));
            }
            Op::Cross(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if wants(*a) {
                    accumulate(grads, nodes, *a, t(av.shape(), cross_rows(bv.data(), g.data())));
                }
                if wants(*b) {
                    accumulate(grads, nodes, *b, t(bv.shape(), cross_rows(g.data(), av.data())));
                }
            }
            Op::Cayley { raw, inv, shrink } => {
                let n = inv.shape()[0];
                let gu = CTensor::from_re_im(
                    &t(&[n, n], g.data()[..n * n].to_vec()),
                    &t(&[n, n], g.data()[n * n..].to_vec()),
                )
                .unwrap();
                // dU = −2 B dA B, so the real-inner-product adjoint is −2 Bᴴ G Bᴴ.
                let bh = inv.adjoint().unwrap();
                let ga = bh.matmul(&gu).unwrap().matmul(&bh).unwrap().scale(Complex64::new(-2.0 * shrink, 0.0));
                let gd = ga.data();
                let mut data = vec![0.0; 2 * n * n];
                for i in 0..n {
                    for j in 0..n {
                        if i > j {
                            data[i * n + j] = gd[i * n + j].re - gd[j * n + i].re;
                        }
                        data[n * n + i * n + j] = 0.5 * (gd[i * n + j].im + gd[j * n + i].im);
                    }
                }
                accumulate(grads, nodes, *raw, t(&[2, n, n], data));
            }
        }
    }
}
