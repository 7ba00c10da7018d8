//! Define-by-run gradient graph.
//!
//! Every operation appends a node holding its value and the operand handles
//! needed by its backward rule. Operands always precede the node that uses
//! them, so a single reverse sweep over the node list is a valid topological
//! order for backpropagation.

use crate::error::{Error, Result};

use super::tensor::{log_sum_exp, matmul_acc, softmax_slice, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softmax(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    MeanRows(Var),
    Sum(Var),
    Reshape(Var),
    Concat(Vec<Var>),
    EmbeddingMean {
        table: Var,
        rows: Vec<Vec<usize>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation tape plus gradient buffers.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    corrupt_matmul: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Makes the matmul backward rule wrong on purpose. Only used to check
    /// that the gradient checker notices a broken rule.
    #[doc(hidden)]
    pub fn corrupt_matmul_backward(&mut self) {
        self.corrupt_matmul = true;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: &Tensor) -> Var {
        self.push(value.clone(), Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`] call. Zeros when
    /// the node did not influence the loss.
    pub fn grad(&self, v: Var) -> Vec<f64> {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => vec![0.0; self.nodes[v.0].value.len()],
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op_name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = self.operands(&op).iter().any(|o| self.nodes[o.0].requires_grad);
        Ok(self.push(Tensor::from_parts(shape, data), op, requires_grad))
    }

    fn operands(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::AddRow(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Softmax(a)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::Reshape(a) => vec![*a],
            Op::CrossEntropy { logits, .. } => vec![*logits],
            Op::Concat(vs) => vs.clone(),
            Op::EmbeddingMean { table, .. } => vec![*table],
        }
    }

    fn dims2(&self, v: Var, op: &'static str) -> Result<(usize, usize)> {
        match self.shape(v) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::dim(op, format!("expected a matrix, got shape {s:?}"))),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (k2, n) = self.dims2(b, "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m},{k}] x [{k2},{n}]")));
        }
        let mut out = vec![0.0; m * n];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        self.record("matmul", vec![m, n], out, Op::MatMul(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "transpose")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.record("transpose", vec![n, m], out, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x + y);
        let shape = self.shape(a).to_vec();
        self.record("add", shape, out, Op::Add(a, b))
    }

    /// Adds the vector `bias[n]` to every row of `a[m,n]`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "add_row")?;
        if self.shape(bias) != [n] {
            return Err(Error::dim(
                "add_row",
                format!("bias {:?} for rows of width {n}", self.shape(bias)),
            ));
        }
        let b = self.value(bias).data();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        self.record("add_row", vec![m, n], out, Op::AddRow(a, bias))
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim("mul", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let out = zip_map(self.value(a).data(), self.value(b).data(), |x, y| x * y);
        let shape = self.shape(a).to_vec();
        self.record("mul", shape, out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = self.value(a).data().iter().map(|x| x * c).collect();
        let shape = self.shape(a).to_vec();
        self.record("scale", shape, out, Op::Scale(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.shape(a).to_vec();
        self.record("relu", shape, out, Op::Relu(a))
    }

    /// Softmax of a vector.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 1 {
            return Err(Error::dim("softmax", format!("expected a vector, got {shape:?}")));
        }
        let out = softmax_slice(self.value(a).data());
        self.record("softmax", shape, out, Op::Softmax(a))
    }

    /// Mean softmax cross-entropy over the rows of `logits` (`[n]` is one row).
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(logits).to_vec();
        let (rows, n) = match shape.as_slice() {
            [n] => (1, *n),
            [r, n] => (*r, *n),
            s => return Err(Error::dim("cross_entropy", format!("shape {s:?}"))),
        };
        if targets.len() != rows {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} targets for {rows} rows", targets.len()),
            ));
        }
        if let Some(&t) = targets.iter().find(|&&t| t >= n) {
            return Err(Error::InvalidArgument(format!(
                "class index {t} out of range for {n} classes"
            )));
        }
        let data = self.value(logits).data();
        let mut total = 0.0;
        let mut probs = Vec::with_capacity(rows * n);
        for (r, &t) in targets.iter().enumerate() {
            let row = &data[r * n..(r + 1) * n];
            total += log_sum_exp(row) - row[t];
            probs.extend(softmax_slice(row));
        }
        let loss = total / rows as f64;
        self.record(
            "cross_entropy",
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Column means of `a[m,n]`, giving `[n]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.dims2(a, "mean_rows")?;
        let src = self.value(a).data();
        let mut out = vec![0.0; n];
        for row in src.chunks(n) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let inv = 1.0 / m as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        self.record("mean_rows", vec![n], out, Op::MeanRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.record("sum", vec![1], vec![s], Op::Sum(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) || len != self.value(a).len() {
            return Err(Error::dim("reshape", format!("{:?} -> {shape:?}", self.shape(a))));
        }
        let out = self.value(a).data().to_vec();
        self.record("reshape", shape.to_vec(), out, Op::Reshape(a))
    }

    /// Concatenates along the first axis. Vectors join end to end; matrices
    /// stack rows and must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_rows", "no operands"))?;
        let tail: Vec<usize> = self.shape(*first)[1..].to_vec();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != tail[..] {
                return Err(Error::dim(
                    "concat_rows",
                    format!("trailing shape {:?} vs {tail:?}", &s[1..]),
                ));
            }
            rows += s[0];
            out.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![rows];
        shape.extend(tail);
        self.record("concat_rows", shape, out, Op::Concat(parts.to_vec()))
    }

    /// For each id list, the mean of the selected rows of `table[v,d]`,
    /// skipping id 0 (padding). Returns `[rows.len(), d]`.
    pub fn embedding_mean(&mut self, table: Var, rows: &[Vec<usize>]) -> Result<Var> {
        let (v, d) = self.dims2(table, "embedding_mean")?;
        if rows.is_empty() {
            return Err(Error::dim("embedding_mean", "no id lists"));
        }
        let src = self.value(table).data();
        let mut out = vec![0.0; rows.len() * d];
        for (r, ids) in rows.iter().enumerate() {
            let dst = &mut out[r * d..(r + 1) * d];
            let mut count = 0usize;
            for &id in ids.iter().filter(|&&id| id != 0) {
                if id >= v {
                    return Err(Error::dim(
                        "embedding_mean",
                        format!("token id {id} outside table of {v} rows"),
                    ));
                }
                for (o, &e) in dst.iter_mut().zip(&src[id * d..(id + 1) * d]) {
                    *o += e;
                }
                count += 1;
            }
            if count == 0 {
                return Err(Error::InvalidArgument(format!("id list {r} contains only padding")));
            }
            let inv = 1.0 / count as f64;
            dst.iter_mut().for_each(|o| *o *= inv);
        }
        self.record(
            "embedding_mean",
            vec![rows.len(), d],
            out,
            Op::EmbeddingMean {
                table,
                rows: rows.to_vec(),
            },
        )
    }

    /// Backpropagates from the scalar `loss`, replacing any previous gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            ));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(upstream) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &upstream);
            self.grads[i] = Some(upstream);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: Var, contribution: Vec<f64>) {
        if !self.nodes[target.0].requires_grad {
            return;
        }
        match &mut self.grads[target.0] {
            Some(g) => g.iter_mut().zip(contribution).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contribution),
        }
    }

    fn propagate(&mut self, i: usize, up: &[f64]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (m, k) = dims(self.shape(a));
                let n = self.shape(b)[1];
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let ga = self.requires_grad(a).then(|| {
                    // dA = dC * B^T
                    let mut ga = vec![0.0; m * k];
                    for r in 0..m {
                        let urow = &up[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            ga[r * k + p] = urow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    if self.corrupt_matmul {
                        ga.iter_mut().for_each(|g| *g *= 1.5);
                    }
                    ga
                });
                let gb = self.requires_grad(b).then(|| {
                    // dB = A^T * dC
                    let mut gb = vec![0.0; k * n];
                    for r in 0..m {
                        let urow = &up[r * n..(r + 1) * n];
                        for p in 0..k {
                            let av = av[r * k + p];
                            if av == 0.0 {
                                continue;
                            }
                            for (g, &u) in gb[p * n..(p + 1) * n].iter_mut().zip(urow) {
                                *g += av * u;
                            }
                        }
                    }
                    gb
                });
                if let Some(ga) = ga {
                    self.accumulate(a, ga);
                }
                if let Some(gb) = gb {
                    self.accumulate(b, gb);
                }
            }
            &Op::Transpose(a) => {
                let (m, n) = dims(self.shape(a));
                let mut g = vec![0.0; m * n];
                for r in 0..m {
                    for c in 0..n {
                        g[r * n + c] = up[c * m + r];
                    }
                }
                self.accumulate(a, g);
            }
            &Op::Add(a, b) => {
                self.accumulate(a, up.to_vec());
                self.accumulate(b, up.to_vec());
            }
            &Op::AddRow(a, bias) => {
                let n = self.shape(bias)[0];
                let mut gb = vec![0.0; n];
                for row in up.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(g, &u)| *g += u);
                }
                self.accumulate(a, up.to_vec());
                self.accumulate(bias, gb);
            }
            &Op::Mul(a, b) => {
                let ga = zip_map(up, self.value(b).data(), |u, y| u * y);
                let gb = zip_map(up, self.value(a).data(), |u, x| u * x);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            &Op::Scale(a, c) => {
                let g = up.iter().map(|u| u * c).collect();
                self.accumulate(a, g);
            }
            &Op::Relu(a) => {
                let g = zip_map(up, self.value(a).data(), |u, x| if x > 0.0 { u } else { 0.0 });
                self.accumulate(a, g);
            }
            &Op::Softmax(a) => {
                let y = node.value.data();
                let dot: f64 = up.iter().zip(y).map(|(u, y)| u * y).sum();
                let g = zip_map(up, y, |u, y| y * (u - dot));
                self.accumulate(a, g);
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let logits = *logits;
                let n = probs.len() / targets.len();
                let scale = up[0] / targets.len() as f64;
                let mut g: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (r, &t) in targets.iter().enumerate() {
                    g[r * n + t] -= scale;
                }
                self.accumulate(logits, g);
            }
            &Op::MeanRows(a) => {
                let (m, n) = dims(self.shape(a));
                let inv = 1.0 / m as f64;
                let mut g = Vec::with_capacity(m * n);
                for _ in 0..m {
                    g.extend(up.iter().map(|u| u * inv));
                }
                self.accumulate(a, g);
            }
            &Op::Sum(a) => {
                let g = vec![up[0]; self.value(a).len()];
                self.accumulate(a, g);
            }
            &Op::Reshape(a) => self.accumulate(a, up.to_vec()),
            Op::Concat(parts) => {
                let parts = parts.clone();
                let mut offset = 0;
                for p in parts {
                    let len = self.value(p).len();
                    self.accumulate(p, up[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::EmbeddingMean { table, rows } => {
                let table = *table;
                let d = self.shape(table)[1];
                let mut g = vec![0.0; self.value(table).len()];
                for (r, ids) in rows.iter().enumerate() {
                    let count = ids.iter().filter(|&&id| id != 0).count();
                    let inv = 1.0 / count as f64;
                    let urow = &up[r * d..(r + 1) * d];
                    for &id in ids.iter().filter(|&&id| id != 0) {
                        for (gv, &u) in g[id * d..(id + 1) * d].iter_mut().zip(urow) {
                            *gv += u * inv;
                        }
                    }
                }
                self.accumulate(table, g);
            }
        }
    }
}

fn dims(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let mut g = Graph::new();
        let a = g.constant(mat(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let i = g.constant(Tensor::identity(2));
        let c = g.matmul(a, i).unwrap();
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

        let e = g.constant(Tensor::identity(2));
        let v = g.constant(mat(&[vec![5.0], vec![7.0]]));
        let c = g.matmul(e, v).unwrap();
        assert_eq!(g.value(c).data(), &[5.0, 7.0]);

        let ones = g.constant(mat(&[vec![1.0], vec![1.0]]));
        let c = g.matmul(a, ones).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 1]);
        assert_eq!(g.value(c).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2, 3]));
        assert!(matches!(g.matmul(a, b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn relu_values_and_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);

        let mut g = Graph::new();
        let x = g.param(&Tensor::vector(vec![-1.0, 2.0]).unwrap());
        let y = g.relu(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(x), vec![0.0, 1.0]);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0; 3]).unwrap());
        let y = g.softmax(x).unwrap();
        for p in g.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let x = g.constant(Tensor::vector(vec![1f64.ln(), 2f64.ln(), 2f64.ln()]).unwrap());
        let y = g.softmax(x).unwrap();
        let expected = [0.2, 0.4, 0.4];
        for (p, e) in g.value(y).data().iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
        let x = g.constant(Tensor::vector(vec![1000.0, 0.0]).unwrap());
        let y = g.softmax(x).unwrap();
        assert!((g.value(y).data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_matrix() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[2, 2]));
        assert!(g.softmax(x).is_err());
    }

    #[test]
    fn cross_entropy_examples() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::vector(vec![0.0, 0.0]).unwrap());
        let l = g.cross_entropy(x, &[0]).unwrap();
        assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-15);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x), vec![-0.5, 0.5]);

        let x = g.constant(Tensor::vector(vec![20.0, -20.0]).unwrap());
        let l = g.cross_entropy(x, &[0]).unwrap();
        assert!(g.value(l).item() < 1e-15);

        assert!(matches!(g.cross_entropy(x, &[2]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn suite_examples() {
        let mut g = Graph::new();
        let x = g.constant(mat(&[vec![2.0, 4.0], vec![4.0, 8.0]]));
        let m = g.mean_rows(x).unwrap();
        assert_eq!(g.value(m).data(), &[3.0, 6.0]);

        let r = g.reshape(x, &[4]).unwrap();
        let back = g.reshape(r, &[2, 2]).unwrap();
        assert_eq!(g.value(back), g.value(x));

        let z = g.constant(Tensor::zeros(&[2, 2]));
        let s = g.add(x, z).unwrap();
        assert_eq!(g.value(s), g.value(x));

        let c = g.concat_rows(&[x, x]).unwrap();
        assert_eq!(g.shape(c), &[4, 2]);
        let bad = g.constant(Tensor::zeros(&[1, 3]));
        assert!(g.concat_rows(&[x, bad]).is_err());
    }

    #[test]
    fn embedding_mean_skips_padding() {
        let mut g = Graph::new();
        let table = g.param(&mat(&[vec![9.0, 9.0], vec![1.0, 1.0], vec![2.0, 4.0], vec![4.0, 0.0]]));
        let e = g.embedding_mean(table, &[vec![2, 3, 0], vec![1]]).unwrap();
        assert_eq!(g.value(e).data(), &[3.0, 2.0, 1.0, 1.0]);
        assert!(g.embedding_mean(table, &[vec![0, 0]]).is_err());
        assert!(g.embedding_mean(table, &[vec![7]]).is_err());

        let s = g.sum(e).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(table), vec![0.0, 0.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn shared_operand_accumulates() {
        // y = sum(x) + sum(x) must give exactly twice the single-branch gradient.
        let x0 = Tensor::vector(vec![0.3, -1.2, 2.5]).unwrap();
        let mut g = Graph::new();
        let x = g.param(&x0);
        let w = g.constant(Tensor::vector(vec![1.5, -0.5, 2.0]).unwrap());
        let branch = g.mul(x, w).unwrap();
        let single = g.sum(branch).unwrap();
        g.backward(single).unwrap();
        let once = g.grad(x);

        let mut g = Graph::new();
        let x = g.param(&x0);
        let w = g.constant(Tensor::vector(vec![1.5, -0.5, 2.0]).unwrap());
        let b1 = g.mul(x, w).unwrap();
        let b2 = g.mul(x, w).unwrap();
        let s1 = g.sum(b1).unwrap();
        let s2 = g.sum(b2).unwrap();
        let total = g.add(s1, s2).unwrap();
        g.backward(total).unwrap();
        let twice = g.grad(x);
        for (a, b) in once.iter().zip(&twice) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let x = g.param(&Tensor::zeros(&[2]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1e300]).unwrap());
        assert!(matches!(g.scale(x, 1e300), Err(Error::NonFinite { .. })));
    }
}
