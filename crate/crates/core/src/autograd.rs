//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every model in this crate builds its forward pass on a [`Graph`]. Leaves are
//! either constants or named parameters bound from a [`Params`] store; calling
//! [`Graph::backward`] returns the gradient of a scalar node with respect to
//! every bound parameter. All values are 2-D; vectors are `1 × d` rows.

use std::collections::BTreeMap;

use ndarray::{concatenate, s, Array2, Axis};

pub type Tensor = Array2<f64>;

/// Named parameter tensors, ordered by name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Params {
    tensors: BTreeMap<String, Tensor>,
}

impl Params {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Copies every tensor whose name starts with `prefix` from `other`.
    pub fn copy_prefix_from(&mut self, other: &Params, prefix: &str) {
        for (name, t) in other.iter().filter(|(n, _)| n.starts_with(prefix)) {
            self.insert(name, t.clone());
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a` plus a `1 × d` row broadcast over every row.
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    ConcatRows(Vec<Var>),
    MeanRows(Var),
    BroadcastRows(Var),
    Gather(Var, Vec<usize>),
    Sum(Var),
    PickMean(Var, Vec<(usize, usize)>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A single forward pass. Cheap to create; drop it after `backward`.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    bound: BTreeMap<String, Var>,
}

/// Gradients of a scalar with respect to each bound parameter.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_name: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.by_name.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.by_name.keys().map(String::as_str)
    }

    /// `self += scale * other`, adding entries missing from `self`.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        for (name, g) in &other.by_name {
            match self.by_name.get_mut(name) {
                Some(acc) => acc.scaled_add(scale, g),
                None => {
                    self.by_name.insert(name.clone(), g * scale);
                }
            }
        }
    }
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Row-wise softmax on plain values.
pub fn softmax(x: &Tensor) -> Tensor {
    softmax_rows(x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Binds a named parameter; repeated binds of the same name share one leaf.
    ///
    /// Panics if `name` is missing from `params`; model constructors create
    /// every tensor they later bind.
    pub fn param(&mut self, params: &Params, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let value = params
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` is not initialised"))
            .clone();
        let v = self.push(value, Op::Leaf);
        self.bound.insert(name.to_string(), v);
        v
    }

    /// Names of all parameters bound so far.
    pub fn bound_params(&self) -> impl Iterator<Item = &str> {
        self.bound.keys().map(String::as_str)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1, "add_row expects a 1 × d row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a) * c;
        self.push(v, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(v, Op::LogSoftmaxRows(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, end))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean_rows of an empty matrix")
            .insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a))
    }

    /// Repeats a `1 × d` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let row = self.value(a);
        assert_eq!(row.nrows(), 1, "broadcast_rows expects a 1 × d row");
        let v = row
            .broadcast((n, row.ncols()))
            .expect("broadcast")
            .to_owned();
        self.push(v, Op::BroadcastRows(a))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: Var, rows: &[usize]) -> Var {
        let v = self.value(table).select(Axis(0), rows);
        self.push(v, Op::Gather(table, rows.to_vec()))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// Mean of the selected `(row, col)` entries, as a `1 × 1` node.
    pub fn pick_mean(&mut self, a: Var, picks: &[(usize, usize)]) -> Var {
        assert!(!picks.is_empty(), "pick_mean over no entries");
        let x = self.value(a);
        let total: f64 = picks.iter().map(|&(r, c)| x[[r, c]]).sum();
        let v = Array2::from_elem((1, 1), total / picks.len() as f64);
        self.push(v, Op::PickMean(a, picks.to_vec()))
    }

    /// Reverse pass from `output`, seeded with ones.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array2::ones(self.value(output).raw_dim()));

        fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for i in (0..=output.0).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(dy);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = dy.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&dy);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = dy.dot(self.value(*b));
                    let gb = dy.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, dy.clone());
                    acc(&mut grads, *b, dy);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&dy);
                    acc(&mut grads, *a, dy);
                }
                Op::Mul(a, b) => {
                    let ga = &dy * self.value(*b);
                    let gb = &dy * self.value(*a);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::AddRow(a, r) => {
                    let gr = dy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, dy);
                }
                Op::Scale(a, c) => acc(&mut grads, *a, dy * *c),
                Op::Relu(a) => {
                    let mask = self.value(*a).mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, dy * mask);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let dot = (&dy * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = y * &(&dy - &dot);
                    acc(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a) => {
                    let p = node.value.mapv(f64::exp);
                    let total = dy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &dy - &(p * &total);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start, end) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&dy);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, dy.slice(s![.., offset..offset + w]).to_owned());
                        offset += w;
                    }
                }
                Op::SliceRows(a, start, end) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![*start..*end, ..]).assign(&dy);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut grads, *p, dy.slice(s![offset..offset + h, ..]).to_owned());
                        offset += h;
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).nrows();
                    let ga = dy
                        .broadcast((n, dy.ncols()))
                        .expect("broadcast")
                        .mapv(|x| x / n as f64);
                    acc(&mut grads, *a, ga);
                }
                Op::BroadcastRows(a) => {
                    acc(&mut grads, *a, dy.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Gather(table, rows) => {
                    let mut ga = Array2::zeros(self.value(*table).raw_dim());
                    for (i, &r) in rows.iter().enumerate() {
                        let mut dst = ga.row_mut(r);
                        dst += &dy.row(i);
                    }
                    acc(&mut grads, *table, ga);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.value(*a).raw_dim(), dy[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::PickMean(a, picks) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    let w = dy[[0, 0]] / picks.len() as f64;
                    for &(r, c) in picks {
                        ga[[r, c]] += w;
                    }
                    acc(&mut grads, *a, ga);
                }
            }
        }

        let by_name = self
            .bound
            .iter()
            .map(|(name, v)| {
                let g = grads
                    .get(v.0)
                    .and_then(|g| g.clone())
                    .unwrap_or_else(|| Array2::zeros(self.value(*v).raw_dim()));
                (name.clone(), g)
            })
            .collect();
        Gradients { by_name }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fd_check(params: &Params, f: impl Fn(&mut Graph, &Params) -> Var) {
        let mut g = Graph::new();
        let out = f(&mut g, params);
        let grads = g.backward(out);
        let h = 1e-6;
        for (name, t) in params.iter() {
            let analytic = grads.get(name).unwrap();
            for idx in 0..t.len() {
                let (r, c) = (idx / t.ncols(), idx % t.ncols());
                let mut p = params.clone();
                p.get_mut(name).unwrap()[[r, c]] += h;
                let mut gp = Graph::new();
                let up = f(&mut gp, &p);
                let up = gp.scalar(up);
                let mut p = params.clone();
                p.get_mut(name).unwrap()[[r, c]] -= h;
                let mut gm = Graph::new();
                let down = f(&mut gm, &p);
                let down = gm.scalar(down);
                let fd = (up - down) / (2.0 * h);
                assert!(
                    (fd - analytic[[r, c]]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "{name}[{r},{c}]: fd {fd} vs analytic {}",
                    analytic[[r, c]]
                );
            }
        }
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut params = Params::new();
        params.insert("a", array![[0.3, -0.7, 1.1], [0.5, 0.2, -0.4]]);
        params.insert("b", array![[0.9, -0.1], [0.4, 0.8], [-0.6, 0.3]]);
        params.insert("r", array![[0.1, -0.25, 0.05]]);
        params.insert("emb", array![[0.2, 0.1, -0.3], [0.7, -0.5, 0.6], [0.0, 0.4, 0.9]]);
        fd_check(&params, |g, p| {
            let a = g.param(p, "a");
            let b = g.param(p, "b");
            let r = g.param(p, "r");
            let emb = g.param(p, "emb");
            let ab = g.matmul(a, b);
            let abt = g.matmul_t(a, emb);
            let sm = g.softmax_rows(abt);
            let ls = g.log_softmax_rows(ab);
            let ar = g.add_row(a, r);
            let rel = g.relu(ar);
            let sc = g.scale(rel, 1.7);
            let left = g.slice_cols(sc, 0, 2);
            let right = g.slice_cols(sc, 2, 3);
            let cat = g.concat_cols(&[right, left]);
            let top = g.slice_rows(cat, 0, 1);
            let mean = g.mean_rows(cat);
            let rows = g.concat_rows(&[top, mean]);
            let gathered = g.gather(emb, &[2, 0, 2]);
            let gm = g.mean_rows(gathered);
            let bc = g.broadcast_rows(gm, 2);
            let prod = g.mul(sm, bc);
            let diff = g.sub(prod, rows);
            let s1 = g.sum(diff);
            let s2 = g.pick_mean(ls, &[(0, 1), (1, 0)]);
            let s3 = g.add(s1, s2);
            let sq = g.mul(s3, s3);
            g.add(sq, s3)
        });
    }

    #[test]
    fn repeated_binds_share_one_leaf_and_accumulate() {
        let mut params = Params::new();
        params.insert("w", array![[2.0]]);
        let mut g = Graph::new();
        let a = g.param(&params, "w");
        let b = g.param(&params, "w");
        assert_eq!(a, b);
        let y = g.mul(a, b);
        let grads = g.backward(y);
        assert_eq!(grads.get("w").unwrap()[[0, 0]], 4.0);
    }

    #[test]
    fn unreached_params_get_zero_gradients() {
        let mut params = Params::new();
        params.insert("used", array![[1.0, 2.0]]);
        params.insert("unused", array![[3.0]]);
        let mut g = Graph::new();
        let u = g.param(&params, "used");
        let _ = g.param(&params, "unused");
        let s = g.sum(u);
        let grads = g.backward(s);
        assert_eq!(grads.get("unused").unwrap()[[0, 0]], 0.0);
        assert_eq!(grads.get("used").unwrap(), &array![[1.0, 1.0]]);
    }

    #[test]
    fn softmax_rows_are_normalised() {
        let x = array![[1000.0, 1001.0, 999.0], [0.0, 0.0, 0.0]];
        let y = softmax(&x);
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }
}
