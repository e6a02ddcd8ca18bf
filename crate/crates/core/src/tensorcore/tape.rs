use std::borrow::Cow;
use std::collections::BTreeMap;

use super::dense::{dot, norm, softmax};
use super::{Matrix, NumError};

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named, shaped block of values with a gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    name: String,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    grad: Vec<f64>,
    frozen: bool,
}

impl Param {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn value(&self) -> &[f64] {
        &self.value
    }

    pub fn grad(&self) -> &[f64] {
        &self.grad
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.value[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_matrix(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.value.clone()).expect("param shape")
    }
}

/// Owns every parameter a model reads on its tapes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        value: Vec<f64>,
        frozen: bool,
    ) -> Result<ParamId, NumError> {
        if value.len() != rows * cols {
            return Err(NumError::DimensionMismatch {
                expected: rows * cols,
                found: value.len(),
            });
        }
        if value.iter().any(|v| !v.is_finite()) {
            return Err(NumError::NonFinite);
        }
        let grad = vec![0.0; value.len()];
        self.params.push(Param {
            name: name.into(),
            rows,
            cols,
            value,
            grad,
            frozen,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_matrix(
        &mut self,
        name: impl Into<String>,
        m: Matrix,
        frozen: bool,
    ) -> Result<ParamId, NumError> {
        let (r, c) = (m.rows(), m.cols());
        self.add(name, r, c, m.into_vec(), frozen)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    /// Direct write access; used by initialisers and perturbation checks.
    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].grad
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    /// Total number of scalars that are not frozen.
    pub fn learnable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| !p.frozen)
            .map(|p| p.value.len())
            .sum()
    }

    /// Adds `grads` into the accumulators. Frozen parameters are skipped.
    pub fn accumulate(&mut self, grads: &Gradients) {
        for (id, g) in &grads.by_param {
            let p = &mut self.params[id.0];
            if p.frozen {
                continue;
            }
            for (acc, v) in p.grad.iter_mut().zip(g) {
                *acc += v;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }
}

/// Plain gradient descent: `value ← value − lr·grad` on every learnable
/// parameter, then all accumulators are cleared.
pub fn sgd_step(params: &mut ParamSet, lr: f64) {
    for p in &mut params.params {
        if !p.frozen {
            for (v, g) in p.value.iter_mut().zip(&p.grad) {
                *v -= lr * g;
            }
        }
    }
    params.zero_grad();
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    fn add(&mut self, id: ParamId, g: &[f64]) {
        match self.by_param.get_mut(&id) {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a += v),
            None => {
                self.by_param.insert(id, g.to_vec());
            }
        }
    }
}

/// Node handle on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf(Option<ParamId>),
    Add(Var, Var),
    /// vector times a length-1 node
    Scale(Var, Var),
    ScaleConst(Var, f64),
    Dot(Var, Var),
    Slice(Var, usize),
    Concat(Vec<Var>),
    /// row-major matrix node times vector node
    MatVec(Var, Var),
    Sigmoid(Var),
    Relu(Var),
    /// `x / max(‖x‖, floor)`
    Normalize(Var, f64),
    SoftmaxCe(Var, usize),
}

#[derive(Debug)]
struct Node<'a> {
    op: Op,
    value: Cow<'a, [f64]>,
    needs_grad: bool,
}

/// Append-only record of a forward computation.
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Cow<'a, [f64]>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "node is not a scalar");
        val[0]
    }

    /// Constant leaf borrowing `data`.
    pub fn constant(&mut self, data: &'a [f64]) -> Var {
        self.push(Op::Leaf(None), Cow::Borrowed(data), false)
    }

    pub fn constant_vec(&mut self, data: Vec<f64>) -> Var {
        self.push(Op::Leaf(None), Cow::Owned(data), false)
    }

    /// Leaf holding a snapshot of parameter `id`. Frozen parameters never
    /// receive gradient. Bind each parameter once per tape and reuse the
    /// returned [`Var`].
    pub fn param(&mut self, set: &ParamSet, id: ParamId) -> Var {
        let p = set.get(id);
        self.push(Op::Leaf(Some(id)), Cow::Owned(p.value.clone()), !p.frozen)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "add: length mismatch");
        let out = va.iter().zip(vb).map(|(x, y)| x + y).collect();
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), Cow::Owned(out), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.scale_const(b, -1.0);
        self.add(a, nb)
    }

    /// `a · s` where `s` is a length-1 node.
    pub fn scale(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let out = self.value(a).iter().map(|x| x * k).collect();
        let ng = self.needs(a) || self.needs(s);
        self.push(Op::Scale(a, s), Cow::Owned(out), ng)
    }

    pub fn scale_const(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).iter().map(|x| x * k).collect();
        let ng = self.needs(a);
        self.push(Op::ScaleConst(a, k), Cow::Owned(out), ng)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.len(), vb.len(), "dot: length mismatch");
        let out = vec![dot(va, vb)];
        let ng = self.needs(a) || self.needs(b);
        self.push(Op::Dot(a, b), Cow::Owned(out), ng)
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a)[start..start + len].to_vec();
        let ng = self.needs(a);
        self.push(Op::Slice(a, start), Cow::Owned(out), ng)
    }

    /// Row `i` of a row-major node with rows of width `cols`.
    pub fn row(&mut self, a: Var, i: usize, cols: usize) -> Var {
        self.slice(a, i * cols, cols)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let mut out = Vec::new();
        for p in parts {
            out.extend_from_slice(self.value(*p));
        }
        let ng = parts.iter().any(|p| self.needs(*p));
        self.push(Op::Concat(parts.to_vec()), Cow::Owned(out), ng)
    }

    /// `W x` with `W` a row-major node of `len(W)/len(x)` rows.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (vw, vx) = (self.value(w), self.value(x));
        let cols = vx.len();
        assert!(cols > 0 && vw.len() % cols == 0, "matvec: shape mismatch");
        let out = vw.chunks_exact(cols).map(|r| dot(r, vx)).collect();
        let ng = self.needs(w) || self.needs(x);
        self.push(Op::MatVec(w, x), Cow::Owned(out), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        let ng = self.needs(a);
        self.push(Op::Sigmoid(a), Cow::Owned(out), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(0.0)).collect();
        let ng = self.needs(a);
        self.push(Op::Relu(a), Cow::Owned(out), ng)
    }

    pub fn normalize(&mut self, a: Var, floor: f64) -> Var {
        let va = self.value(a);
        let n = norm(va).max(floor);
        let out = va.iter().map(|x| x / n).collect();
        let ng = self.needs(a);
        self.push(Op::Normalize(a, floor), Cow::Owned(out), ng)
    }

    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, NumError> {
        let (loss, _) = super::softmax_cross_entropy(self.value(logits), target)?;
        let ng = self.needs(logits);
        Ok(self.push(Op::SoftmaxCe(logits, target), Cow::Owned(vec![loss]), ng))
    }

    /// Sum of equally sized nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let (first, rest) = parts.split_first().expect("sum of nothing");
        rest.iter().fold(*first, |acc, &p| self.add(acc, p))
    }

    pub fn mean(&mut self, parts: &[Var]) -> Var {
        let s = self.sum(parts);
        self.scale_const(s, 1.0 / parts.len() as f64)
    }

    /// Cosine similarity composed as `dot(normalize(u), normalize(v))`.
    pub fn cosine(&mut self, u: Var, v: Var, floor: f64) -> Var {
        let nu = self.normalize(u, floor);
        let nv = self.normalize(v, floor);
        self.dot(nu, nv)
    }

    /// Reverse sweep from the scalar `root`. Nodes are visited in strictly
    /// decreasing index order, which is a reverse topological order because
    /// the tape is append-only.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward root must be scalar");
        let mut grads = Gradients::default();
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; root.0 + 1];
        adj[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf(Some(id)) => grads.add(*id, &g),
                Op::Leaf(None) => {}
                Op::Add(a, b) => {
                    self.acc(&mut adj, *a, 0, &g);
                    self.acc(&mut adj, *b, 0, &g);
                }
                Op::Scale(a, s) => {
                    let k = self.value(*s)[0];
                    let ga: Vec<f64> = g.iter().map(|x| x * k).collect();
                    let gs = dot(&g, self.value(*a));
                    self.acc(&mut adj, *a, 0, &ga);
                    self.acc(&mut adj, *s, 0, &[gs]);
                }
                Op::ScaleConst(a, k) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * k).collect();
                    self.acc(&mut adj, *a, 0, &ga);
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    let ga: Vec<f64> = self.value(*b).iter().map(|x| g0 * x).collect();
                    let gb: Vec<f64> = self.value(*a).iter().map(|x| g0 * x).collect();
                    self.acc(&mut adj, *a, 0, &ga);
                    self.acc(&mut adj, *b, 0, &gb);
                }
                Op::Slice(a, start) => self.acc(&mut adj, *a, *start, &g),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        self.acc(&mut adj, *p, 0, &g[off..off + n]);
                        off += n;
                    }
                }
                Op::MatVec(w, x) => {
                    let vw = self.value(*w);
                    let vx = self.value(*x);
                    let cols = vx.len();
                    if self.needs(*w) {
                        let mut gw = vec![0.0; vw.len()];
                        for (r, gr) in g.iter().enumerate() {
                            if *gr != 0.0 {
                                for (dst, xv) in gw[r * cols..(r + 1) * cols].iter_mut().zip(vx) {
                                    *dst = gr * xv;
                                }
                            }
                        }
                        self.acc(&mut adj, *w, 0, &gw);
                    }
                    if self.needs(*x) {
                        let mut gx = vec![0.0; cols];
                        for (row, gr) in vw.chunks_exact(cols).zip(&g) {
                            for (dst, wv) in gx.iter_mut().zip(row) {
                                *dst += gr * wv;
                            }
                        }
                        self.acc(&mut adj, *x, 0, &gx);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga: Vec<f64> = node
                        .value
                        .iter()
                        .zip(&g)
                        .map(|(y, gy)| gy * y * (1.0 - y))
                        .collect();
                    self.acc(&mut adj, *a, 0, &ga);
                }
                Op::Relu(a) => {
                    let ga: Vec<f64> = self
                        .value(*a)
                        .iter()
                        .zip(&g)
                        .map(|(x, gy)| if *x > 0.0 { *gy } else { 0.0 })
                        .collect();
                    self.acc(&mut adj, *a, 0, &ga);
                }
                Op::Normalize(a, floor) => {
                    let n = norm(self.value(*a));
                    let ga: Vec<f64> = if n > *floor {
                        let y = &node.value;
                        let yg = dot(y, &g);
                        y.iter().zip(&g).map(|(yi, gi)| (gi - yi * yg) / n).collect()
                    } else {
                        g.iter().map(|gi| gi / floor).collect()
                    };
                    self.acc(&mut adj, *a, 0, &ga);
                }
                Op::SoftmaxCe(a, target) => {
                    let g0 = g[0];
                    let mut ga = softmax(self.value(*a));
                    ga[*target] -= 1.0;
                    ga.iter_mut().for_each(|v| *v *= g0);
                    self.acc(&mut adj, *a, 0, &ga);
                }
            }
        }
        grads
    }

    fn acc(&self, adj: &mut [Option<Vec<f64>>], target: Var, offset: usize, g: &[f64]) {
        if !self.needs(target) {
            return;
        }
        let slot = adj[target.0].get_or_insert_with(|| vec![0.0; self.nodes[target.0].value.len()]);
        for (dst, v) in slot[offset..offset + g.len()].iter_mut().zip(g) {
            *dst += v;
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
