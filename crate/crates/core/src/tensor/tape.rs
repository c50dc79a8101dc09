use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Square(Var),
    Concat(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
    Softmax(Var),
    LogSoftmax(Var),
    NormRows(Var),
    Rbf(Var, Arc<[f64]>, f64),
    ClipNormRows(Var, f64),
    PickCols(Var, Arc<[usize]>),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// A tape is built fresh for every forward pass and is confined to the
/// thread that built it.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    by_node: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, Var>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.by_node.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter bound on the tape that the loss reached.
    pub fn params(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.params
            .iter()
            .filter_map(|(n, v)| self.wrt(*v).map(|g| (n.as_str(), g)))
    }

    pub fn param(&self, name: &str) -> Option<&[f64]> {
        self.params.get(name).and_then(|v| self.wrt(*v))
    }
}

fn dims2(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::shape(
            op,
            format!("expected a matrix, got {shape:?}"),
        )),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].data
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].data[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.data.clone()).expect("tape node shape is consistent")
    }

    /// Records a value that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let Tensor { shape, data, .. } = t;
        self.push(shape, data, Op::Leaf, false)
    }

    /// Records a leaf that follows the tensor's own `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            Op::Leaf,
            t.is_requires_grad(),
        )
    }

    /// Binds a named parameter. Binding the same name twice returns the same
    /// handle.
    pub fn param(&mut self, params: &ParamSet, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let t = params
            .get(name)
            .ok_or_else(|| Error::contract("param", format!("unknown parameter `{name}`")))?;
        let v = self.leaf(t);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2("matmul", self.shape(a))?;
        let (k2, n) = dims2("matmul", self.shape(b))?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let crow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (c, b) in crow.iter_mut().zip(brow) {
                    *c += x * b;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x + y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b)))
    }

    /// Adds a row vector (`[n]` or `[1, n]`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = dims2("add_row", self.shape(a))?;
        if self.value(row).len() != n {
            return Err(Error::shape(
                "add_row",
                format!("[{m},{n}] + {:?}", self.shape(row)),
            ));
        }
        let r = self.value(row);
        let mut out = self.value(a).to_vec();
        for chunk in out.chunks_mut(n.max(1)) {
            chunk.iter_mut().zip(r).for_each(|(o, b)| *o += b);
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(vec![m, n], out, Op::AddRow(a, row), rg))
    }

    /// Scales row `i` of `a` by `s[i]`, where `s` is `[m, 1]`.
    pub fn mul_col(&mut self, a: Var, s: Var) -> Result<Var> {
        let (m, n) = dims2("mul_col", self.shape(a))?;
        if self.shape(s) != [m, 1] {
            return Err(Error::shape(
                "mul_col",
                format!("[{m},{n}] * {:?}", self.shape(s)),
            ));
        }
        let sv = self.value(s);
        let mut out = self.value(a).to_vec();
        for (i, chunk) in out.chunks_mut(n.max(1)).enumerate() {
            chunk.iter_mut().for_each(|o| *o *= sv[i]);
        }
        let rg = self.rg(&[a, s]);
        Ok(self.push(vec![m, n], out, Op::MulCol(a, s), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * c).collect();
        let rg = self.rg(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Scale(a, c), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x * sigmoid(x)).collect();
        let rg = self.rg(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Silu(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|x| x * x).collect();
        let rg = self.rg(&[a]);
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Square(a), rg)
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let mut widths = Vec::with_capacity(parts.len());
        let (m, _) = dims2("concat", self.shape(parts[0]))?;
        for p in parts {
            let (r, c) = dims2("concat", self.shape(*p))?;
            if r != m {
                let shapes: Vec<_> = parts.iter().map(|p| self.shape(*p).to_vec()).collect();
                return Err(Error::shape("concat", format!("{shapes:?}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut offset = 0;
        for (p, &w) in parts.iter().zip(&widths) {
            let src = self.value(*p);
            for i in 0..m {
                out[i * total + offset..i * total + offset + w]
                    .copy_from_slice(&src[i * w..(i + 1) * w]);
            }
            offset += w;
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![m, total], out, Op::Concat(parts.to_vec()), rg))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat_rows", "no inputs"));
        }
        let (_, n) = dims2("concat_rows", self.shape(parts[0]))?;
        let mut rows = 0;
        for p in parts {
            let (r, c) = dims2("concat_rows", self.shape(*p))?;
            if c != n {
                let shapes: Vec<_> = parts.iter().map(|p| self.shape(*p).to_vec()).collect();
                return Err(Error::shape("concat_rows", format!("{shapes:?}")));
            }
            rows += r;
        }
        let mut out = Vec::with_capacity(rows * n);
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        let rg = self.rg(parts);
        Ok(self.push(vec![rows, n], out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Row `r` of the result is row `index[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let (m, n) = dims2("gather_rows", self.shape(a))?;
        if let Some(bad) = index.iter().find(|&&i| i >= m) {
            return Err(Error::shape(
                "gather_rows",
                format!("index {bad} out of range for [{m},{n}]"),
            ));
        }
        let src = self.value(a);
        let mut out = Vec::with_capacity(index.len() * n);
        for &i in index.iter() {
            out.extend_from_slice(&src[i * n..(i + 1) * n]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![index.len(), n], out, Op::GatherRows(a, index), rg))
    }

    /// Sums rows of `a` into `n_segments` buckets: row `e` goes to
    /// `segments[e]`.
    pub fn segment_sum(
        &mut self,
        a: Var,
        segments: Arc<[usize]>,
        n_segments: usize,
    ) -> Result<Var> {
        let (m, n) = dims2("segment_sum", self.shape(a))?;
        if segments.len() != m {
            return Err(Error::shape(
                "segment_sum",
                format!("[{m},{n}] with {} segment ids", segments.len()),
            ));
        }
        if let Some(bad) = segments.iter().find(|&&s| s >= n_segments) {
            return Err(Error::shape(
                "segment_sum",
                format!("segment {bad} >= {n_segments}"),
            ));
        }
        let src = self.value(a);
        let mut out = vec![0.0; n_segments * n];
        for (e, &s) in segments.iter().enumerate() {
            out[s * n..(s + 1) * n]
                .iter_mut()
                .zip(&src[e * n..(e + 1) * n])
                .for_each(|(o, x)| *o += x);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![n_segments, n], out, Op::SegmentSum(a, segments), rg))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2("softmax", self.shape(a))?;
        let out = row_softmax(self.value(a), n);
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m, n], out, Op::Softmax(a), rg))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2("log_softmax", self.shape(a))?;
        let src = self.value(a);
        let mut out = Vec::with_capacity(m * n);
        for row in src.chunks(n.max(1)) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|x| (x - mx).exp()).sum::<f64>().ln();
            out.extend(row.iter().map(|x| x - lse));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m, n], out, Op::LogSoftmax(a), rg))
    }

    /// Euclidean norm of each row, as an `[m, 1]` column.
    pub fn norm_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = dims2("norm_rows", self.shape(a))?;
        let out = self
            .value(a)
            .chunks(n.max(1))
            .map(|r| r.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m, 1], out, Op::NormRows(a), rg))
    }

    /// Gaussian radial basis expansion of an `[m, 1]` column of distances.
    pub fn rbf(&mut self, d: Var, centers: Arc<[f64]>, gamma: f64) -> Result<Var> {
        let (m, c) = dims2("rbf", self.shape(d))?;
        if c != 1 {
            return Err(Error::shape(
                "rbf",
                format!("expected [m,1], got [{m},{c}]"),
            ));
        }
        let k = centers.len();
        let mut out = Vec::with_capacity(m * k);
        for &x in self.value(d) {
            out.extend(centers.iter().map(|mu| (-gamma * (x - mu).powi(2)).exp()));
        }
        let rg = self.rg(&[d]);
        Ok(self.push(vec![m, k], out, Op::Rbf(d, centers, gamma), rg))
    }

    /// Rescales rows whose norm exceeds `max_norm` down to `max_norm`.
    pub fn clip_norm_rows(&mut self, a: Var, max_norm: f64) -> Result<Var> {
        let (m, n) = dims2("clip_norm_rows", self.shape(a))?;
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(n.max(1)) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > max_norm {
                let s = max_norm / norm;
                row.iter_mut().for_each(|x| *x *= s);
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m, n], out, Op::ClipNormRows(a, max_norm), rg))
    }

    /// Picks `a[i, cols[i]]` for every row, as an `[m, 1]` column.
    pub fn pick_cols(&mut self, a: Var, cols: Arc<[usize]>) -> Result<Var> {
        let (m, n) = dims2("pick_cols", self.shape(a))?;
        if cols.len() != m || cols.iter().any(|&c| c >= n) {
            return Err(Error::shape(
                "pick_cols",
                format!("[{m},{n}] with {} column ids", cols.len()),
            ));
        }
        let src = self.value(a);
        let out = cols
            .iter()
            .enumerate()
            .map(|(i, &c)| src[i * n + c])
            .collect();
        let rg = self.rg(&[a]);
        Ok(self.push(vec![m, 1], out, Op::PickCols(a, cols), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let rg = self.rg(&[a]);
        self.push(Vec::new(), vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.rg(&[a]);
        self.push(Vec::new(), vec![s], Op::Mean(a), rg)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward", "empty tape"));
        }
        if self.nodes[loss.0].data.len() != 1 {
            return Err(Error::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let by_node = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| if n.requires_grad { g } else { None })
            .collect();
        Ok(Gradients {
            by_node,
            params: self.params.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let mut acc = |v: Var, delta: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(&delta).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(delta),
            }
        };
        let val = |v: Var| self.nodes[v.0].data.as_slice();
        let shp = |v: Var| self.nodes[v.0].shape.as_slice();

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (shp(*a)[0], shp(*a)[1]);
                let n = shp(*b)[1];
                let (av, bv) = (val(*a), val(*b));
                if self.nodes[a.0].requires_grad {
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    acc(*a, da);
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let grow = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            db[p * n..(p + 1) * n]
                                .iter_mut()
                                .zip(grow)
                                .for_each(|(d, gv)| *d += x * gv);
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, g.to_vec());
                acc(*b, g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc(*a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                acc(*b, g.iter().zip(av).map(|(x, y)| x * y).collect());
            }
            Op::AddRow(a, r) => {
                acc(*a, g.to_vec());
                let n = val(*r).len();
                let mut dr = vec![0.0; n];
                for chunk in g.chunks(n.max(1)) {
                    dr.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                }
                acc(*r, dr);
            }
            Op::MulCol(a, s) => {
                let n = shp(*a)[1];
                let (av, sv) = (val(*a), val(*s));
                let mut da = g.to_vec();
                let mut ds = vec![0.0; sv.len()];
                for i in 0..sv.len() {
                    let row = i * n..(i + 1) * n;
                    da[row.clone()].iter_mut().for_each(|d| *d *= sv[i]);
                    ds[i] = g[row.clone()]
                        .iter()
                        .zip(&av[row])
                        .map(|(x, y)| x * y)
                        .sum();
                }
                acc(*a, da);
                acc(*s, ds);
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|x| x * c).collect()),
            Op::Silu(a) => {
                let d = g
                    .iter()
                    .zip(val(*a))
                    .map(|(gv, &x)| {
                        let s = sigmoid(x);
                        gv * s * (1.0 + x * (1.0 - s))
                    })
                    .collect();
                acc(*a, d);
            }
            Op::Square(a) => acc(
                *a,
                g.iter().zip(val(*a)).map(|(gv, x)| 2.0 * x * gv).collect(),
            ),
            Op::Concat(parts) => {
                let total = node.shape[1];
                let m = node.shape[0];
                let mut offset = 0;
                for p in parts {
                    let w = shp(*p)[1];
                    let mut d = Vec::with_capacity(m * w);
                    for i in 0..m {
                        d.extend_from_slice(&g[i * total + offset..i * total + offset + w]);
                    }
                    acc(*p, d);
                    offset += w;
                }
            }
            Op::GatherRows(a, index) => {
                let n = node.shape[1];
                let mut d = vec![0.0; val(*a).len()];
                for (r, &i) in index.iter().enumerate() {
                    d[i * n..(i + 1) * n]
                        .iter_mut()
                        .zip(&g[r * n..(r + 1) * n])
                        .for_each(|(o, x)| *o += x);
                }
                acc(*a, d);
            }
            Op::SegmentSum(a, segments) => {
                let n = node.shape[1];
                let mut d = Vec::with_capacity(segments.len() * n);
                for &s in segments.iter() {
                    d.extend_from_slice(&g[s * n..(s + 1) * n]);
                }
                acc(*a, d);
            }
            Op::Softmax(a) => {
                let n = node.shape[1];
                let mut d = Vec::with_capacity(g.len());
                for (y, gy) in node.data.chunks(n.max(1)).zip(g.chunks(n.max(1))) {
                    let dot: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    d.extend(y.iter().zip(gy).map(|(yv, gv)| yv * (gv - dot)));
                }
                acc(*a, d);
            }
            Op::LogSoftmax(a) => {
                let n = node.shape[1];
                let mut d = Vec::with_capacity(g.len());
                for (y, gy) in node.data.chunks(n.max(1)).zip(g.chunks(n.max(1))) {
                    let total: f64 = gy.iter().sum();
                    d.extend(y.iter().zip(gy).map(|(yv, gv)| gv - yv.exp() * total));
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = val(*p).len();
                    acc(*p, g[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::NormRows(a) => {
                let n = shp(*a)[1];
                let av = val(*a);
                let mut d = vec![0.0; av.len()];
                for i in 0..node.data.len() {
                    let norm = node.data[i];
                    if norm > 0.0 {
                        for j in 0..n {
                            d[i * n + j] = g[i] * av[i * n + j] / norm;
                        }
                    }
                }
                acc(*a, d);
            }
            Op::Rbf(x, centers, gamma) => {
                let k = centers.len();
                let d = val(*x)
                    .iter()
                    .enumerate()
                    .map(|(i, &xv)| {
                        (0..k)
                            .map(|c| {
                                g[i * k + c]
                                    * node.data[i * k + c]
                                    * (-2.0 * gamma * (xv - centers[c]))
                            })
                            .sum()
                    })
                    .collect();
                acc(*x, d);
            }
            Op::ClipNormRows(a, max_norm) => {
                let n = node.shape[1];
                let av = val(*a);
                let mut d = g.to_vec();
                for i in 0..node.shape[0] {
                    let row = &av[i * n..(i + 1) * n];
                    let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm > *max_norm {
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f64 = row.iter().zip(gr).map(|(x, y)| x * y).sum();
                        for j in 0..n {
                            d[i * n + j] = max_norm / norm * (gr[j] - row[j] * dot / (norm * norm));
                        }
                    }
                }
                acc(*a, d);
            }
            Op::PickCols(a, cols) => {
                let n = shp(*a)[1];
                let mut d = vec![0.0; val(*a).len()];
                for (i, &c) in cols.iter().enumerate() {
                    d[i * n + c] += g[i];
                }
                acc(*a, d);
            }
            Op::Sum(a) => acc(*a, vec![g[0]; val(*a).len()]),
            Op::Mean(a) => {
                let len = val(*a).len();
                acc(*a, vec![g[0] / len.max(1) as f64; len]);
            }
        }
    }
}

pub(crate) fn row_softmax(src: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(src.len());
    for row in src.chunks(n.max(1)) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|x| (x - mx).exp()));
        let z: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= z);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 4], &[0.0; 4]));
        let y = tape.softmax(x).unwrap();
        assert_eq!(tape.value(y), &[0.25; 4]);
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let eye = tape.constant(t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]));
        let a_data = [1.5, -2.0, 0.25, 3.0, 4.0, -5.0, 0.0, 7.0, 8.5];
        let a = tape.constant(t(&[3, 3], &a_data));
        let c = tape.matmul(eye, a).unwrap();
        assert_eq!(tape.value(c), &a_data);
    }

    #[test]
    fn segment_sum_hand_example() {
        let mut tape = Tape::new();
        let v = tape.constant(t(&[3, 1], &[1., 2., 3.]));
        let s = tape.segment_sum(v, Arc::from(vec![0, 0, 1]), 2).unwrap();
        assert_eq!(tape.value(s), &[3., 3.]);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(
            err.contains("matmul") && err.contains("[2,3] x [2,3]"),
            "{err}"
        );
    }

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(3.0).requires_grad(true));
        let y = tape.square(x);
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[6.0]);
    }

    #[test]
    fn sum_of_matvec_gradient_is_ones() {
        let mut params = ParamSet::new();
        params.insert("a", t(&[2, 2], &[0.3, -1.0, 2.0, 0.5]));
        let mut tape = Tape::new();
        let a = tape.param(&params, "a").unwrap();
        let x = tape.constant(t(&[2, 1], &[1.0, 1.0]));
        let ax = tape.matmul(a, x).unwrap();
        let s = tape.sum(ax);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.param("a").unwrap(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn constant_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::scalar(2.0).requires_grad(true));
        let c = tape.constant(Tensor::scalar(5.0));
        let zero = tape.scale(x, 0.0);
        let c2 = tape.add(c, zero).unwrap();
        let g = tape.backward(c2).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0.0]);
        assert!(g.wrt(c).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::zeros(&[2, 2]).requires_grad(true));
        assert!(matches!(tape.backward(x), Err(Error::Contract { .. })));
    }

    #[test]
    fn repeated_backward_accumulates_into_params() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::scalar(3.0));
        let mut tape = Tape::new();
        let w = tape.param(&params, "w").unwrap();
        let y = tape.square(w);
        let loss = tape.sum(y);
        let g = tape.backward(loss).unwrap();
        params.accumulate(&g);
        params.accumulate(&g);
        assert_eq!(params.get("w").unwrap().grad().unwrap(), &[12.0]);
    }
}
