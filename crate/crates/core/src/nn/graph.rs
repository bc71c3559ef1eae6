use super::params::{ParamId, ParamSet};
use super::{gemm, NnError, Tensor};
use crate::sheaf::edge_disagreement_grad;
use crate::Scalar;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One agent graph inside a batch of stacked rows: rows
/// `offset..offset + count`, edges in local indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SectionGroup {
    pub offset: usize,
    pub count: usize,
    pub edges: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    out_c: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }

    fn out_rows(&self) -> usize {
        self.batch * self.ho * self.wo
    }

    /// Input element for patch entry `(ky, kx)` of output pixel `(oy, ox)`.
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul { x: Var, w: Var, w_t: bool },
    AddBias { x: Var, b: Var },
    Relu(Var),
    Conv2d { x: Var, k: Var, b: Var, geom: ConvGeom, cols: Vec<T> },
    Reshape(Var),
    ConcatCols(Var, Var),
    Dueling { v: Var, a: Var },
    Gather { q: Var, idx: Vec<usize> },
    Mse { x: Var, target: Vec<T> },
    Section { m: Var, groups: Vec<SectionGroup> },
    Add(Var, Var),
    Scale(Var, T),
    Detach,
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
}

/// Recorded forward computation.
pub struct Graph<'p, T: Scalar> {
    params: &'p ParamSet<T>,
    nodes: Vec<Node<T>>,
}

fn shape_err<T>(msg: String) -> Result<T, NnError> {
    Err(NnError::Shape(msg))
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamSet<T>) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamSet<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-param nodes hold a value"),
        }
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    fn matrix(&self, v: Var, what: &str) -> Result<(usize, usize), NnError> {
        let s = self.value(v).shape();
        match s {
            [r, c] => Ok((*r, *c)),
            _ => shape_err(format!("{what}: expected a matrix, got {s:?}")),
        }
    }

    /// `x [b, i] * w [i, o]`, or `x * w^T` for `w [o, i]` when `w_t`.
    pub fn matmul(&mut self, x: Var, w: Var, w_t: bool) -> Result<Var, NnError> {
        let (b, i) = self.matrix(x, "matmul lhs")?;
        let (wr, wc) = self.matrix(w, "matmul rhs")?;
        let (wi, o) = if w_t { (wc, wr) } else { (wr, wc) };
        if wi != i {
            return shape_err(format!("matmul: inner dims {i} vs {wi}"));
        }
        let mut out = vec![T::zero(); b * o];
        gemm((b, i, o), self.value(x).data(), false, self.value(w).data(), w_t, &mut out, false);
        Ok(self.push(Tensor::new(vec![b, o], out)?, Op::MatMul { x, w, w_t }))
    }

    /// Adds `b [o]` to every row of `x [.., o]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, NnError> {
        let o = self.value(b).len();
        let xv = self.value(x);
        if xv.shape().last() != Some(&o) {
            return shape_err(format!("add_bias: {:?} vs bias {o}", xv.shape()));
        }
        let bv = self.value(b).data();
        let mut data = xv.data().to_vec();
        for row in data.chunks_exact_mut(o) {
            for (r, &bb) in row.iter_mut().zip(bv) {
                *r += bb;
            }
        }
        let shape = xv.shape().to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::AddBias { x, b }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v.max(T::zero())).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Relu(x))
    }

    /// Channels-last convolution: `x [b, h, w, c]`, `k [kh, kw, c, o]`, `bias [o]`.
    pub fn conv2d(&mut self, x: Var, k: Var, bias: Var, stride: usize, pad: usize) -> Result<Var, NnError> {
        let (batch, h, w, c) = match self.value(x).shape() {
            &[b, h, w, c] => (b, h, w, c),
            s => return shape_err(format!("conv2d input must be [b, h, w, c], got {s:?}")),
        };
        let (kh, kw, kc, out_c) = match self.value(k).shape() {
            &[kh, kw, kc, o] => (kh, kw, kc, o),
            s => return shape_err(format!("conv2d kernel must be [kh, kw, c, o], got {s:?}")),
        };
        if kc != c {
            return shape_err(format!("conv2d: input has {c} channels, kernel expects {kc}"));
        }
        if self.value(bias).len() != out_c {
            return shape_err(format!("conv2d: bias length {} != {out_c}", self.value(bias).len()));
        }
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return shape_err(format!("conv2d: kernel {kh}x{kw} does not fit {h}x{w} with padding {pad}"));
        }
        let geom = ConvGeom {
            batch,
            h,
            w,
            c,
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
            out_c,
        };
        let xd = self.value(x).data();
        let patch = geom.patch();
        let mut cols = vec![T::zero(); geom.out_rows() * patch];
        for bi in 0..batch {
            for oy in 0..geom.ho {
                for ox in 0..geom.wo {
                    let row = (bi * geom.ho + oy) * geom.wo + ox;
                    let dst = &mut cols[row * patch..(row + 1) * patch];
                    for ky in 0..kh {
                        for kx in 0..kw {
                            if let Some((y, xx)) = geom.source(oy, ox, ky, kx) {
                                let src = ((bi * h + y) * w + xx) * c;
                                let d = (ky * kw + kx) * c;
                                dst[d..d + c].copy_from_slice(&xd[src..src + c]);
                            }
                        }
                    }
                }
            }
        }
        let mut out = vec![T::zero(); geom.out_rows() * out_c];
        gemm((geom.out_rows(), patch, out_c), &cols, false, self.value(k).data(), false, &mut out, false);
        let bv = self.value(bias).data();
        for row in out.chunks_exact_mut(out_c) {
            for (r, &bb) in row.iter_mut().zip(bv) {
                *r += bb;
            }
        }
        let t = Tensor::new(vec![batch, geom.ho, geom.wo, out_c], out)?;
        Ok(self.push(
            t,
            Op::Conv2d {
                x,
                k,
                b: bias,
                geom,
                cols,
            },
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, NnError> {
        let t = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape(x)))
    }

    /// `[b, rest...] -> [b, prod(rest)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var, NnError> {
        let v = self.value(x);
        let shape = vec![v.rows(), v.row_len()];
        self.reshape(x, shape)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (ra, ca) = self.matrix(a, "concat lhs")?;
        let (rb, cb) = self.matrix(b, "concat rhs")?;
        if ra != rb {
            return shape_err(format!("concat: {ra} rows vs {rb} rows"));
        }
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(&ad[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&bd[r * cb..(r + 1) * cb]);
        }
        Ok(self.push(Tensor::new(vec![ra, ca + cb], data)?, Op::ConcatCols(a, b)))
    }

    /// `q[r, k] = v[r] + a[r, k] - mean_k a[r, :]` for `v [b, 1]`, `a [b, k]`.
    pub fn dueling(&mut self, v: Var, a: Var) -> Result<Var, NnError> {
        let (rv, cv) = self.matrix(v, "dueling value")?;
        let (ra, ca) = self.matrix(a, "dueling advantage")?;
        if cv != 1 || rv != ra || ca == 0 {
            return shape_err(format!("dueling: value [{rv}, {cv}] vs advantage [{ra}, {ca}]"));
        }
        let inv = T::one() / T::lit(ca as f64);
        let (vd, ad) = (self.value(v).data(), self.value(a).data());
        let mut q = Vec::with_capacity(ra * ca);
        for r in 0..ra {
            let row = &ad[r * ca..(r + 1) * ca];
            let mean = row.iter().copied().sum::<T>() * inv;
            q.extend(row.iter().map(|&x| vd[r] + x - mean));
        }
        Ok(self.push(Tensor::new(vec![ra, ca], q)?, Op::Dueling { v, a }))
    }

    /// `out[r] = q[r, idx[r]]`.
    pub fn gather(&mut self, q: Var, idx: Vec<usize>) -> Result<Var, NnError> {
        let (r, c) = self.matrix(q, "gather")?;
        if idx.len() != r || idx.iter().any(|&i| i >= c) {
            return shape_err(format!("gather: {} indices into [{r}, {c}]", idx.len()));
        }
        let qd = self.value(q).data();
        let data = idx.iter().enumerate().map(|(row, &i)| qd[row * c + i]).collect();
        Ok(self.push(Tensor::new(vec![r], data)?, Op::Gather { q, idx }))
    }

    /// Mean squared error against constant targets; a scalar node.
    pub fn mse(&mut self, x: Var, target: Vec<T>) -> Result<Var, NnError> {
        let xd = self.value(x).data();
        if xd.len() != target.len() || xd.is_empty() {
            return shape_err(format!("mse: {} values vs {} targets", xd.len(), target.len()));
        }
        let n = T::lit(xd.len() as f64);
        let loss = xd.iter().zip(&target).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / n;
        Ok(self.push(Tensor::scalar(loss), Op::Mse { x, target }))
    }

    /// Mean over groups of the global-section loss of mapped stalks
    /// `m [rows, d_e]`. Zero when there are no groups.
    pub fn section_loss(&mut self, m: Var, groups: Vec<SectionGroup>) -> Result<Var, NnError> {
        let (rows, de) = self.matrix(m, "section loss")?;
        if let Some(g) = groups.iter().find(|g| g.offset + g.count > rows) {
            return shape_err(format!("section group {g:?} exceeds {rows} rows"));
        }
        let md = self.value(m).data();
        let mut total = T::zero();
        for g in &groups {
            let slice = &md[g.offset * de..(g.offset + g.count) * de];
            total += edge_disagreement_grad(slice, de, g.count, &g.edges, false).0;
        }
        if !groups.is_empty() {
            total /= T::lit(groups.len() as f64);
        }
        Ok(self.push(Tensor::scalar(total), Op::Section { m, groups }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return shape_err(format!("add: {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::new(av.shape().to_vec(), data)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| v * c).collect();
        let t = Tensor::new(xv.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Scale(x, c))
    }

    /// Identity in the forward pass; blocks gradient flow.
    pub fn detach(&mut self, x: Var) -> Var {
        let t = self.value(x).clone();
        self.push(t, Op::Detach)
    }

    /// Reverse pass from `out`, seeded with `seed` (same shape as `out`).
    pub fn backward(&self, out: Var, seed: &Tensor<T>) -> Result<Gradients<T>, NnError> {
        if seed.shape() != self.value(out).shape() {
            return shape_err(format!(
                "backward seed {:?} does not match output {:?}",
                seed.shape(),
                self.value(out).shape()
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed.data().to_vec());
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let mut params: Vec<Tensor<T>> = self
            .params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        for (node, g) in self.nodes.iter().zip(&grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                for (p, &v) in params[id.0].data_mut().iter_mut().zip(g) {
                    *p += v;
                }
            }
        }
        Ok(Gradients { params, nodes: grads })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let acc = |v: Var, grads: &mut [Option<Vec<T>>], f: &dyn Fn(&mut [T])| {
            let len = self.value(v).len();
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
            f(slot);
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Param(_) | Op::Detach => {}
            &Op::MatMul { x, w, w_t } => {
                let (b, inner) = (self.value(x).rows(), self.value(x).row_len());
                let o = g.len() / b.max(1);
                let (xd, wd) = (self.value(x).data(), self.value(w).data());
                acc(x, grads, &|dx| {
                    // dx = g * W^T  (W [i, o])   or   g * W  (W [o, i])
                    gemm((b, o, inner), g, false, wd, !w_t, dx, true);
                });
                acc(w, grads, &|dw| {
                    if w_t {
                        gemm((o, b, inner), g, true, xd, false, dw, true);
                    } else {
                        gemm((inner, b, o), xd, true, g, false, dw, true);
                    }
                });
            }
            &Op::AddBias { x, b } => {
                acc(x, grads, &|dx| dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
                let o = self.value(b).len();
                acc(b, grads, &|db| {
                    for row in g.chunks_exact(o) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            &Op::Relu(x) => {
                let xd = self.value(x).data();
                acc(x, grads, &|dx| {
                    for ((d, &v), &xv) in dx.iter_mut().zip(g).zip(xd) {
                        if xv > T::zero() {
                            *d += v;
                        }
                    }
                });
            }
            Op::Conv2d { x, k, b, geom, cols } => {
                let geom = *geom;
                let (rows, patch, oc) = (geom.out_rows(), geom.patch(), geom.out_c);
                acc(*b, grads, &|db| {
                    for row in g.chunks_exact(oc) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d += v);
                    }
                });
                acc(*k, grads, &|dk| gemm((patch, rows, oc), cols, true, g, false, dk, true));
                let kd = self.value(*k).data();
                let mut dcols = vec![T::zero(); rows * patch];
                gemm((rows, oc, patch), g, false, kd, true, &mut dcols, false);
                acc(*x, grads, &|dx| {
                    let c = geom.c;
                    for bi in 0..geom.batch {
                        for oy in 0..geom.ho {
                            for ox in 0..geom.wo {
                                let row = (bi * geom.ho + oy) * geom.wo + ox;
                                let src = &dcols[row * patch..(row + 1) * patch];
                                for ky in 0..geom.kh {
                                    for kx in 0..geom.kw {
                                        if let Some((y, xx)) = geom.source(oy, ox, ky, kx) {
                                            let dst = ((bi * geom.h + y) * geom.w + xx) * c;
                                            let s = (ky * geom.kw + kx) * c;
                                            for ch in 0..c {
                                                dx[dst + ch] += src[s + ch];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            &Op::Reshape(x) => acc(x, grads, &|dx| dx.iter_mut().zip(g).for_each(|(d, &v)| *d += v)),
            &Op::ConcatCols(a, b) => {
                let (ca, cb) = (self.value(a).row_len(), self.value(b).row_len());
                acc(a, grads, &|da| {
                    for (r, row) in g.chunks_exact(ca + cb).enumerate() {
                        da[r * ca..(r + 1) * ca].iter_mut().zip(&row[..ca]).for_each(|(d, &v)| *d += v);
                    }
                });
                acc(b, grads, &|db| {
                    for (r, row) in g.chunks_exact(ca + cb).enumerate() {
                        db[r * cb..(r + 1) * cb].iter_mut().zip(&row[ca..]).for_each(|(d, &v)| *d += v);
                    }
                });
            }
            &Op::Dueling { v, a } => {
                let k = self.value(a).row_len();
                let inv = T::one() / T::lit(k as f64);
                acc(v, grads, &|dv| {
                    for (r, row) in g.chunks_exact(k).enumerate() {
                        dv[r] += row.iter().copied().sum::<T>();
                    }
                });
                acc(a, grads, &|da| {
                    for (r, row) in g.chunks_exact(k).enumerate() {
                        let mean = row.iter().copied().sum::<T>() * inv;
                        for (d, &x) in da[r * k..(r + 1) * k].iter_mut().zip(row) {
                            *d += x - mean;
                        }
                    }
                });
            }
            Op::Gather { q, idx } => {
                let c = self.value(*q).row_len();
                acc(*q, grads, &|dq| {
                    for (r, &i) in idx.iter().enumerate() {
                        dq[r * c + i] += g[r];
                    }
                });
            }
            Op::Mse { x, target } => {
                let xd = self.value(*x).data();
                let scale = T::lit(2.0) * g[0] / T::lit(xd.len() as f64);
                acc(*x, grads, &|dx| {
                    for ((d, &xv), &t) in dx.iter_mut().zip(xd).zip(target) {
                        *d += scale * (xv - t);
                    }
                });
            }
            Op::Section { m, groups } => {
                if groups.is_empty() {
                    return;
                }
                let de = self.value(*m).row_len();
                let md = self.value(*m).data();
                let scale = g[0] / T::lit(groups.len() as f64);
                acc(*m, grads, &|dm| {
                    for grp in groups {
                        let range = grp.offset * de..(grp.offset + grp.count) * de;
                        let (_, gm) = edge_disagreement_grad(&md[range.clone()], de, grp.count, &grp.edges, true);
                        for (d, &v) in dm[range].iter_mut().zip(&gm) {
                            *d += scale * v;
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                acc(a, grads, &|da| da.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
                acc(b, grads, &|db| db.iter_mut().zip(g).for_each(|(d, &v)| *d += v));
            }
            &Op::Scale(x, c) => acc(x, grads, &|dx| dx.iter_mut().zip(g).for_each(|(d, &v)| *d += c * v)),
        }
    }
}

/// Output of [`Graph::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    params: Vec<Tensor<T>>,
    nodes: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// All-zero gradients for a parameter set.
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        Self {
            params: params.iter().map(|(_, _, t)| Tensor::zeros(t.shape().to_vec())).collect(),
            nodes: Vec::new(),
        }
    }

    pub fn param(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    /// Gradient with respect to a node, if any flowed into it.
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Add another set of parameter gradients into this one.
    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, &y)| *x += y);
        }
    }

    pub fn global_norm(&self) -> T {
        self.params
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|&x| x * x)
            .sum::<T>()
            .sqrt()
    }

    pub fn scale(&mut self, c: T) {
        for t in &mut self.params {
            t.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }
}
