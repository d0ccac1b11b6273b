//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Values are stored row-major. Every operation whose inputs include a
//! gradient-tracked tensor records its provenance, so a later call to
//! [`Tensor::backward`] on a scalar can push derivatives back to all
//! `requires_grad` leaves. Operations on plain value tensors record nothing
//! and cost nothing beyond the arithmetic, which is what makes evaluation of
//! frozen networks cheap.
//!
//! Shape violations are programmer errors and panic with messages naming the
//! offending shapes.

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::ops::Range;
use std::rc::Rc;

#[derive(Clone)]
pub struct Tensor {
    inner: Rc<RefCell<Inner>>,
}

struct Inner {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    tracked: bool,
    op: Op,
}

#[derive(Clone)]
enum Op {
    Leaf,
    Matmul(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    /// Matrix plus a row vector broadcast over every row.
    AddRow(Tensor, Tensor),
    Scale(Tensor, f64),
    Relu(Tensor),
    SliceCols(Tensor, usize, usize),
    SoftmaxRows(Tensor),
    LogSoftmaxRows(Tensor),
    Sum(Tensor),
    Mean(Tensor),
}

impl Op {
    fn parents(&self) -> Vec<Tensor> {
        match self {
            Op::Leaf => vec![],
            Op::Matmul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![a.clone(), b.clone()]
            }
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::SliceCols(a, _, _)
            | Op::SoftmaxRows(a)
            | Op::LogSoftmaxRows(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![a.clone()],
        }
    }
}

impl Tensor {
    /// Plain value tensor. Panics if `shape` does not describe `values`.
    pub fn new(values: Vec<f64>, shape: &[usize]) -> Tensor {
        let expected: usize = shape.iter().product();
        assert!(
            expected == values.len(),
            "shape {:?} describes {} elements but {} values were given",
            shape,
            expected,
            values.len()
        );
        Tensor::leaf(values, shape.to_vec(), false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor::leaf(vec![0.0; len], shape.to_vec(), false)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::leaf(vec![v], vec![1], false)
    }

    /// 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Tensor {
        let cols = rows.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            assert!(
                row.len() == cols,
                "from_rows: row 0 has {} columns but row {} has {}",
                cols,
                i,
                row.len()
            );
            values.extend_from_slice(row);
        }
        Tensor::leaf(values, vec![rows.len(), cols], false)
    }

    fn leaf(values: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Tensor {
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                values,
                grad: None,
                requires_grad,
                tracked: requires_grad,
                op: Op::Leaf,
            })),
        }
    }

    fn from_op(values: Vec<f64>, shape: Vec<usize>, op: Op) -> Tensor {
        let tracked = op.parents().iter().any(Tensor::is_tracked);
        // Untracked results drop their provenance so frozen-network forward
        // passes hold no references to their inputs.
        let op = if tracked { op } else { Op::Leaf };
        Tensor {
            inner: Rc::new(RefCell::new(Inner {
                shape,
                values,
                grad: None,
                requires_grad: false,
                tracked,
                op,
            })),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row/column pair; panics unless the tensor is 2-D.
    pub fn dims2(&self) -> (usize, usize) {
        let inner = self.inner.borrow();
        assert!(
            inner.shape.len() == 2,
            "expected a 2-D tensor, got shape {:?}",
            inner.shape
        );
        (inner.shape[0], inner.shape[1])
    }

    pub fn rows(&self) -> usize {
        self.dims2().0
    }

    pub fn cols(&self) -> usize {
        self.dims2().1
    }

    /// Borrowed view of the values.
    pub fn values(&self) -> Ref<'_, [f64]> {
        Ref::map(self.inner.borrow(), |i| i.values.as_slice())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.borrow().values.clone()
    }

    pub fn value_at(&self, row: usize, col: usize) -> f64 {
        let (r, c) = self.dims2();
        assert!(row < r && col < c, "index ({row},{col}) out of [{r}x{c}]");
        self.inner.borrow().values[row * c + col]
    }

    /// One row of a 2-D tensor as a plain vector.
    pub fn row(&self, row: usize) -> Vec<f64> {
        let (r, c) = self.dims2();
        assert!(row < r, "row {row} out of {r}");
        self.inner.borrow().values[row * c..(row + 1) * c].to_vec()
    }

    /// Scalar value; panics unless the tensor holds exactly one element.
    pub fn item(&self) -> f64 {
        let inner = self.inner.borrow();
        assert!(
            inner.values.len() == 1,
            "item() requires a scalar, got shape {:?}",
            inner.shape
        );
        inner.values[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn is_tracked(&self) -> bool {
        self.inner.borrow().tracked
    }

    /// Marks a leaf as a differentiation target. Panics on non-leaf tensors.
    pub fn set_requires_grad(&self, flag: bool) {
        let mut inner = self.inner.borrow_mut();
        assert!(
            matches!(inner.op, Op::Leaf),
            "requires_grad can only be toggled on leaf tensors"
        );
        inner.requires_grad = flag;
        inner.tracked = flag;
    }

    /// Copy of the values as a fresh untracked leaf.
    pub fn detach(&self) -> Tensor {
        let inner = self.inner.borrow();
        Tensor::leaf(inner.values.clone(), inner.shape.clone(), false)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow().grad.clone()
    }

    /// Takes the accumulated gradient, leaving none behind.
    pub fn take_grad(&self) -> Option<Vec<f64>> {
        self.inner.borrow_mut().grad.take()
    }

    pub fn clear_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Mutates the values in place. Intended for optimizer updates and weight
    /// clipping between training steps, not for tensors inside a live graph.
    pub fn update_values(&self, f: impl FnOnce(&mut [f64])) {
        f(&mut self.inner.borrow_mut().values);
    }

    fn ptr_key(&self) -> usize {
        Rc::as_ptr(&self.inner) as *const () as usize
    }

    // ---- operations ----

    /// 2-D matrix product.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (m, k) = self.dims2();
        let (k2, n) = other.dims2();
        assert!(
            k == k2,
            "matmul shape mismatch: [{m}x{k}] then [{k2}x{n}]"
        );
        let a = self.values();
        let b = other.values();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = a[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &b[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        drop(a);
        drop(b);
        Tensor::from_op(out, vec![m, n], Op::Matmul(self.clone(), other.clone()))
    }

    pub fn add(&self, other: &Tensor) -> Tensor {
        self.zip_with(other, "add", |x, y| x + y, Op::Add(self.clone(), other.clone()))
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        self.zip_with(other, "sub", |x, y| x - y, Op::Sub(self.clone(), other.clone()))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Tensor {
        self.zip_with(other, "mul", |x, y| x * y, Op::Mul(self.clone(), other.clone()))
    }

    fn zip_with(&self, other: &Tensor, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Tensor {
        let (ls, rs) = (self.shape(), other.shape());
        assert!(ls == rs, "{name}: shape mismatch {ls:?} vs {rs:?}");
        let out = {
            let a = self.values();
            let b = other.values();
            a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
        };
        Tensor::from_op(out, ls, op)
    }

    /// Adds a row vector to every row of a 2-D tensor.
    pub fn add_row(&self, row: &Tensor) -> Tensor {
        let (r, c) = self.dims2();
        let rshape = row.shape();
        assert!(
            rshape == vec![c],
            "add_row: matrix [{r}x{c}] cannot take row of shape {rshape:?}"
        );
        let out = {
            let a = self.values();
            let b = row.values();
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                for j in 0..c {
                    out.push(a[i * c + j] + b[j]);
                }
            }
            out
        };
        Tensor::from_op(out, vec![r, c], Op::AddRow(self.clone(), row.clone()))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let out = self.values().iter().map(|&x| x * c).collect();
        Tensor::from_op(out, self.shape(), Op::Scale(self.clone(), c))
    }

    pub fn relu(&self) -> Tensor {
        let out = self.values().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        Tensor::from_op(out, self.shape(), Op::Relu(self.clone()))
    }

    /// Columns `range` of a 2-D tensor.
    pub fn slice_cols(&self, range: Range<usize>) -> Tensor {
        let (r, c) = self.dims2();
        assert!(
            range.start < range.end && range.end <= c,
            "slice_cols: range {range:?} out of [{r}x{c}]"
        );
        let w = range.end - range.start;
        let out = {
            let a = self.values();
            let mut out = Vec::with_capacity(r * w);
            for i in 0..r {
                out.extend_from_slice(&a[i * c + range.start..i * c + range.end]);
            }
            out
        };
        Tensor::from_op(
            out,
            vec![r, w],
            Op::SliceCols(self.clone(), range.start, range.end),
        )
    }

    /// Temperature-scaled softmax over the last axis. A 1-D tensor is treated
    /// as a single row. Panics on non-finite logits or `temperature <= 0`.
    pub fn softmax(&self, temperature: f64) -> Tensor {
        let scaled = self.checked_temperature_scale(temperature, "softmax");
        let (r, c) = scaled.row_view();
        let out = {
            let v = scaled.values();
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let row = &v[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
                let sum: f64 = exps.iter().sum();
                out.extend(exps.iter().map(|&e| e / sum));
            }
            out
        };
        Tensor::from_op(out, scaled.shape(), Op::SoftmaxRows(scaled.clone()))
    }

    /// Temperature-scaled log-softmax over the last axis.
    pub fn log_softmax(&self, temperature: f64) -> Tensor {
        let scaled = self.checked_temperature_scale(temperature, "log_softmax");
        let (r, c) = scaled.row_view();
        let out = {
            let v = scaled.values();
            let mut out = Vec::with_capacity(r * c);
            for i in 0..r {
                let row = &v[i * c..(i + 1) * c];
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
                out.extend(row.iter().map(|&x| x - lse));
            }
            out
        };
        Tensor::from_op(out, scaled.shape(), Op::LogSoftmaxRows(scaled.clone()))
    }

    fn checked_temperature_scale(&self, temperature: f64, name: &str) -> Tensor {
        assert!(
            temperature > 0.0 && temperature.is_finite(),
            "{name}: temperature must be positive and finite, got {temperature}"
        );
        {
            let v = self.values();
            if let Some(bad) = v.iter().find(|x| !x.is_finite()) {
                panic!("{name}: non-finite logit {bad}");
            }
        }
        if temperature == 1.0 {
            self.clone()
        } else {
            self.scale(1.0 / temperature)
        }
    }

    /// Rows/cols where a 1-D tensor counts as one row.
    fn row_view(&self) -> (usize, usize) {
        let shape = self.shape();
        match shape.len() {
            1 => (1, shape[0]),
            2 => (shape[0], shape[1]),
            _ => panic!("expected a 1-D or 2-D tensor, got shape {shape:?}"),
        }
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&self) -> Tensor {
        let s: f64 = self.values().iter().sum();
        Tensor::from_op(vec![s], vec![1], Op::Sum(self.clone()))
    }

    /// Mean of all elements as a scalar. Panics on empty tensors.
    pub fn mean(&self) -> Tensor {
        let n = self.len();
        assert!(n > 0, "mean of an empty tensor");
        let s: f64 = self.values().iter().sum();
        Tensor::from_op(vec![s / n as f64], vec![1], Op::Mean(self.clone()))
    }

    /// Reverse-mode gradient propagation from a scalar.
    ///
    /// Gradients accumulate into every `requires_grad` leaf reachable through
    /// the recorded operations; existing leaf gradients are added to, matching
    /// the usual accumulate-then-clear optimizer handshake. Calling this on an
    /// untracked scalar is a no-op.
    pub fn backward(&self) {
        {
            let inner = self.inner.borrow();
            assert!(
                inner.values.len() == 1,
                "backward requires a scalar loss, got shape {:?}",
                inner.shape
            );
            if !inner.tracked {
                return;
            }
        }
        let order = topo_order(self);
        accumulate(self, &[1.0]);
        for node in order.iter().rev() {
            let (op, go, out_vals) = {
                let inner = node.inner.borrow();
                let go = match &inner.grad {
                    Some(g) => g.clone(),
                    None => continue,
                };
                (inner.op.clone(), go, inner.values.clone())
            };
            propagate(&op, &go, &out_vals);
        }
    }
}

/// Post-order over the tracked ancestry of `root`; `root` comes last.
fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.ptr_key()) {
            continue;
        }
        stack.push((node.clone(), true));
        let parents = node.inner.borrow().op.parents();
        for p in parents {
            if p.is_tracked() && !visited.contains(&p.ptr_key()) {
                stack.push((p, false));
            }
        }
    }
    order
}

fn accumulate(target: &Tensor, contrib: &[f64]) {
    if !target.is_tracked() {
        return;
    }
    let mut inner = target.inner.borrow_mut();
    let len = inner.values.len();
    debug_assert_eq!(len, contrib.len());
    let grad = inner.grad.get_or_insert_with(|| vec![0.0; len]);
    for (g, c) in grad.iter_mut().zip(contrib) {
        *g += c;
    }
}

fn propagate(op: &Op, go: &[f64], out_vals: &[f64]) {
    match op {
        Op::Leaf => {}
        Op::Matmul(a, b) => {
            let (m, k) = a.dims2();
            let n = b.dims2().1;
            if a.is_tracked() {
                let bv = b.to_vec();
                let mut da = vec![0.0; m * k];
                for i in 0..m {
                    for j in 0..n {
                        let g = go[i * n + j];
                        if g == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            da[i * k + p] += g * bv[p * n + j];
                        }
                    }
                }
                accumulate(a, &da);
            }
            if b.is_tracked() {
                let av = a.to_vec();
                let mut db = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            db[p * n + j] += aip * go[i * n + j];
                        }
                    }
                }
                accumulate(b, &db);
            }
        }
        Op::Add(a, b) => {
            accumulate(a, go);
            accumulate(b, go);
        }
        Op::Sub(a, b) => {
            accumulate(a, go);
            if b.is_tracked() {
                let neg: Vec<f64> = go.iter().map(|g| -g).collect();
                accumulate(b, &neg);
            }
        }
        Op::Mul(a, b) => {
            if a.is_tracked() {
                let bv = b.to_vec();
                let da: Vec<f64> = go.iter().zip(&bv).map(|(g, y)| g * y).collect();
                accumulate(a, &da);
            }
            if b.is_tracked() {
                let av = a.to_vec();
                let db: Vec<f64> = go.iter().zip(&av).map(|(g, x)| g * x).collect();
                accumulate(b, &db);
            }
        }
        Op::AddRow(mat, row) => {
            accumulate(mat, go);
            if row.is_tracked() {
                let (r, c) = mat.dims2();
                let mut dr = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        dr[j] += go[i * c + j];
                    }
                }
                accumulate(row, &dr);
            }
        }
        Op::Scale(a, c) => {
            let da: Vec<f64> = go.iter().map(|g| g * c).collect();
            accumulate(a, &da);
        }
        Op::Relu(a) => {
            if a.is_tracked() {
                let av = a.to_vec();
                let da: Vec<f64> = go
                    .iter()
                    .zip(&av)
                    .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                    .collect();
                accumulate(a, &da);
            }
        }
        Op::SliceCols(a, start, end) => {
            if a.is_tracked() {
                let (r, c) = a.dims2();
                let w = end - start;
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..w {
                        da[i * c + start + j] = go[i * w + j];
                    }
                }
                accumulate(a, &da);
            }
        }
        Op::SoftmaxRows(a) => {
            if a.is_tracked() {
                let (r, c) = row_dims(a);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    let y = &out_vals[i * c..(i + 1) * c];
                    let g = &go[i * c..(i + 1) * c];
                    let dot: f64 = y.iter().zip(g).map(|(yi, gi)| yi * gi).sum();
                    for j in 0..c {
                        da[i * c + j] = y[j] * (g[j] - dot);
                    }
                }
                accumulate(a, &da);
            }
        }
        Op::LogSoftmaxRows(a) => {
            if a.is_tracked() {
                let (r, c) = row_dims(a);
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    let out = &out_vals[i * c..(i + 1) * c];
                    let g = &go[i * c..(i + 1) * c];
                    let gsum: f64 = g.iter().sum();
                    for j in 0..c {
                        da[i * c + j] = g[j] - out[j].exp() * gsum;
                    }
                }
                accumulate(a, &da);
            }
        }
        Op::Sum(a) => {
            if a.is_tracked() {
                let da = vec![go[0]; a.len()];
                accumulate(a, &da);
            }
        }
        Op::Mean(a) => {
            if a.is_tracked() {
                let n = a.len();
                let da = vec![go[0] / n as f64; n];
                accumulate(a, &da);
            }
        }
    }
}

fn row_dims(t: &Tensor) -> (usize, usize) {
    let shape = t.shape();
    match shape.len() {
        1 => (1, shape[0]),
        _ => (shape[0], shape[1]),
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        write!(
            f,
            "Tensor{:?}{}",
            inner.shape,
            if inner.tracked { " (tracked)" } else { "" }
        )
    }
}
