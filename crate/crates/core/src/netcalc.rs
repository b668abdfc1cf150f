//! Feed-forward ReLU networks in the shifted parameterization
//! `x -> A_L ReLU_{b_{L-1}}(... ReLU_{b_1}(A_1 x)) - b_L` with `ReLU_b(v) = max(v - b, 0)`,
//! exact configuration statistics, combinators, and a text serialization.
//!
//! Weights are stored row-compressed. Only nonzero entries are kept, so the nonzero count
//! `S` is exact by construction and large block-structured nets stay cheap to evaluate.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Row-compressed sparse matrix. Columns within a row are strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_ptr: vec![0; rows + 1],
            col_idx: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            vals: vec![1.0; n],
        }
    }

    /// Builds from `(row, col, value)` entries. Duplicates are summed in input order and
    /// exact zeros are dropped.
    pub fn from_triplets(rows: usize, cols: usize, mut entries: Vec<(usize, usize, f64)>) -> Result<Self> {
        for &(r, c, v) in &entries {
            if r >= rows || c >= cols {
                return Err(Error::invalid(format!("entry ({r},{c}) outside {rows}x{cols}")));
            }
            if !v.is_finite() {
                return Err(Error::invalid("non-finite weight"));
            }
        }
        entries.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut vals = Vec::with_capacity(entries.len());
        let mut i = 0;
        while i < entries.len() {
            let (r, c, mut v) = entries[i];
            i += 1;
            while i < entries.len() && entries[i].0 == r && entries[i].1 == c {
                v += entries[i].2;
                i += 1;
            }
            if v != 0.0 {
                row_ptr[r + 1] += 1;
                col_idx.push(c);
                vals.push(v);
            }
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            vals,
        })
    }

    /// Builds from a row-major dense array.
    pub fn from_dense(rows: usize, cols: usize, a: &[f64]) -> Result<Self> {
        if a.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: a.len(),
                context: "dense matrix entries",
            });
        }
        let mut entries = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let v = a[r * cols + c];
                if v != 0.0 {
                    entries.push((r, c, v));
                }
            }
        }
        Self::from_triplets(rows, cols, entries)
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `(col, value)` pairs of row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let s = self.row_ptr[r];
        let e = self.row_ptr[r + 1];
        self.col_idx[s..e].iter().copied().zip(self.vals[s..e].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        (0..self.rows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.triplets() {
            out[r * self.cols + c] = v;
        }
        out
    }

    /// `y = A x`, summing each row in increasing column order.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate().take(self.rows) {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            *yr = acc;
        }
    }

    /// `self * other`.
    pub fn matmul(&self, other: &SparseMatrix) -> Result<SparseMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: other.rows,
                context: "sparse matmul inner dimension",
            });
        }
        let mut acc = vec![0.0; other.cols];
        let mut touched = vec![false; other.cols];
        let mut list = Vec::new();
        let mut entries = Vec::new();
        for r in 0..self.rows {
            for (k, a) in self.row(r) {
                for (c, b) in other.row(k) {
                    if !touched[c] {
                        touched[c] = true;
                        list.push(c);
                    }
                    acc[c] += a * b;
                }
            }
            list.sort_unstable();
            for &c in &list {
                entries.push((r, c, acc[c]));
                acc[c] = 0.0;
                touched[c] = false;
            }
            list.clear();
        }
        SparseMatrix::from_triplets(self.rows, other.cols, entries)
    }

    pub fn scaled(&self, f: f64) -> SparseMatrix {
        let mut m = self.clone();
        m.vals.iter_mut().for_each(|v| *v *= f);
        if f == 0.0 {
            return SparseMatrix::zeros(self.rows, self.cols);
        }
        m
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[&SparseMatrix]) -> Result<SparseMatrix> {
        let cols = parts.first().map(|p| p.cols).unwrap_or(0);
        let mut entries = Vec::new();
        let mut off = 0;
        for p in parts {
            if p.cols != cols {
                return Err(Error::invalid("vstack needs equal column counts"));
            }
            entries.extend(p.triplets().into_iter().map(|(r, c, v)| (r + off, c, v)));
            off += p.rows;
        }
        SparseMatrix::from_triplets(off, cols, entries)
    }

    /// Block-diagonal matrix.
    pub fn block_diag(parts: &[&SparseMatrix]) -> SparseMatrix {
        let mut entries = Vec::new();
        let (mut ro, mut co) = (0, 0);
        for p in parts {
            entries.extend(p.triplets().into_iter().map(|(r, c, v)| (r + ro, c + co, v)));
            ro += p.rows;
            co += p.cols;
        }
        SparseMatrix::from_triplets(ro, co, entries).expect("block indices are in range")
    }
}

/// One affine map with its shift: `A x - b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub a: SparseMatrix,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn new(a: SparseMatrix, b: Vec<f64>) -> Result<Self> {
        if b.len() != a.rows {
            return Err(Error::DimensionMismatch {
                expected: a.rows,
                got: b.len(),
                context: "layer shift length",
            });
        }
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite shift"));
        }
        Ok(Self { a, b })
    }

    pub fn dense(rows: usize, cols: usize, a: &[f64], b: Vec<f64>) -> Result<Self> {
        Self::new(SparseMatrix::from_dense(rows, cols, a)?, b)
    }
}

/// Depth `L`, widths `(W_0, ..., W_L)`, nonzero count `S` and magnitude `B`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetStats {
    pub depth: usize,
    pub widths: Vec<usize>,
    pub nonzeros: usize,
    pub magnitude: f64,
}

impl NetStats {
    pub fn max_width(&self) -> usize {
        self.widths.iter().copied().max().unwrap_or(0)
    }

    fn of(layers: &[Layer], in_dim: usize) -> Self {
        let mut widths = vec![in_dim];
        widths.extend(layers.iter().map(|l| l.a.rows));
        let nonzeros = layers
            .iter()
            .map(|l| l.a.nnz() + l.b.iter().filter(|v| **v != 0.0).count())
            .sum();
        let magnitude = layers
            .iter()
            .map(|l| l.b.iter().fold(l.a.max_abs(), |m, v| m.max(v.abs())))
            .fold(0.0, f64::max);
        Self {
            depth: layers.len(),
            widths,
            nonzeros,
            magnitude,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReluNet {
    pub in_dim: usize,
    pub out_dim: usize,
    layers: Vec<Layer>,
    stats: NetStats,
}

impl ReluNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::invalid("a network needs a layer"))?;
        let in_dim = first.a.cols;
        for w in layers.windows(2) {
            if w[1].a.cols != w[0].a.rows {
                return Err(Error::DimensionMismatch {
                    expected: w[0].a.rows,
                    got: w[1].a.cols,
                    context: "adjacent layer dimensions",
                });
            }
        }
        let out_dim = layers.last().unwrap().a.rows;
        let stats = NetStats::of(&layers, in_dim);
        Ok(Self {
            in_dim,
            out_dim,
            layers,
            stats,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn stats(&self) -> &NetStats {
        &self.stats
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Recomputes the statistics from the weights.
    pub fn recount(&self) -> NetStats {
        NetStats::of(&self.layers, self.in_dim)
    }

    /// Single affine layer `x -> M x + c`.
    pub fn affine(m: SparseMatrix, c: &[f64]) -> Result<Self> {
        let b = c.iter().map(|v| -v).collect();
        Self::new(vec![Layer::new(m, b)?])
    }

    /// Constant output `c`, ignoring an input of dimension `in_dim`.
    pub fn constant(in_dim: usize, c: &[f64]) -> Result<Self> {
        Self::affine(SparseMatrix::zeros(c.len(), in_dim), c)
    }

    /// Identity on `R^n` realized with `depth` layers through the `(z+, z-)` gadget.
    pub fn identity(n: usize, depth: usize) -> Self {
        assert!(depth >= 1);
        if depth == 1 {
            return Self::new(vec![Layer::new(SparseMatrix::identity(n), vec![0.0; n]).unwrap()])
                .unwrap();
        }
        let mut layers = vec![Layer::new(split_matrix(n), vec![0.0; 2 * n]).unwrap()];
        for _ in 1..depth - 1 {
            layers.push(Layer::new(SparseMatrix::identity(2 * n), vec![0.0; 2 * n]).unwrap());
        }
        layers.push(Layer::new(merge_matrix(n), vec![0.0; n]).unwrap());
        Self::new(layers).unwrap()
    }

    /// Forward pass.
    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        crate::error::ensure_dim(self.in_dim, x.len(), "network input")?;
        let mut buf = Vec::new();
        Ok(self.evaluate_with(x, &mut buf))
    }

    /// Forward pass reusing `scratch` for hidden activations. Panics on a dimension mismatch.
    pub fn evaluate_with(&self, x: &[f64], scratch: &mut Vec<f64>) -> Vec<f64> {
        assert_eq!(x.len(), self.in_dim, "network input dimension");
        let mut cur = x.to_vec();
        let last = self.layers.len() - 1;
        for (j, layer) in self.layers.iter().enumerate() {
            scratch.resize(layer.a.rows, 0.0);
            layer.a.mul_vec_into(&cur, scratch);
            for (v, b) in scratch.iter_mut().zip(&layer.b) {
                *v -= b;
                if j < last && *v < 0.0 {
                    *v = 0.0;
                }
            }
            std::mem::swap(&mut cur, scratch);
        }
        cur
    }

    /// Evaluates many inputs, in order.
    pub fn evaluate_batch(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for x in xs {
            crate::error::ensure_dim(self.in_dim, x.len(), "network input")?;
        }
        Ok(crate::exec::map_chunks(xs.len(), 64, |r| {
            let mut s = Vec::new();
            xs[r].iter().map(|x| self.evaluate_with(x, &mut s)).collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect())
    }

    /// `outer ∘ inner`. The last affine layer of `inner` is split into `(z+, z-)` channels,
    /// so depth is additive and the composition is exact.
    pub fn concat(outer: &ReluNet, inner: &ReluNet) -> Result<ReluNet> {
        if inner.out_dim != outer.in_dim {
            return Err(Error::DimensionMismatch {
                expected: outer.in_dim,
                got: inner.out_dim,
                context: "concat: inner output vs outer input",
            });
        }
        let n = inner.out_dim;
        let mut layers: Vec<Layer> = inner.layers[..inner.layers.len() - 1].to_vec();
        let last = inner.layers.last().unwrap();
        let split = split_matrix(n).matmul(&last.a)?;
        let mut b = Vec::with_capacity(2 * n);
        for v in &last.b {
            b.push(*v);
            b.push(-*v);
        }
        layers.push(Layer::new(split, b)?);
        let first = &outer.layers[0];
        let merged = first.a.matmul(&merge_matrix(n))?;
        layers.push(Layer::new(merged, first.b.clone())?);
        layers.extend(outer.layers[1..].iter().cloned());
        ReluNet::new(layers)
    }

    /// Extends the depth to `depth` by composing with an identity gadget.
    pub fn padded(&self, depth: usize) -> Result<ReluNet> {
        if depth <= self.depth() {
            return Ok(self.clone());
        }
        ReluNet::concat(&ReluNet::identity(self.out_dim, depth - self.depth()), self)
    }

    /// Stacks `nets` side by side; outputs are concatenated in order. With `shared_input`
    /// all members read the same input, otherwise the inputs are concatenated too.
    pub fn parallel(nets: &[ReluNet], shared_input: bool) -> Result<ReluNet> {
        if nets.is_empty() {
            return Err(Error::invalid("parallel needs at least one network"));
        }
        if shared_input && nets.iter().any(|n| n.in_dim != nets[0].in_dim) {
            return Err(Error::invalid("parallel with a shared input needs equal input dimensions"));
        }
        let depth = nets.iter().map(|n| n.depth()).max().unwrap();
        let padded: Vec<ReluNet> = nets.iter().map(|n| n.padded(depth)).collect::<Result<_>>()?;
        let mut layers = Vec::with_capacity(depth);
        for j in 0..depth {
            let mats: Vec<&SparseMatrix> = padded.iter().map(|n| &n.layers[j].a).collect();
            let a = if j == 0 && shared_input {
                SparseMatrix::vstack(&mats)?
            } else {
                SparseMatrix::block_diag(&mats)
            };
            let b = padded.iter().flat_map(|n| n.layers[j].b.iter().copied()).collect();
            layers.push(Layer::new(a, b)?);
        }
        ReluNet::new(layers)
    }

    /// `x -> M net(x) + c`, fused into the final layer.
    pub fn linear_post(&self, m: &SparseMatrix, c: &[f64]) -> Result<ReluNet> {
        if m.cols != self.out_dim || c.len() != m.rows {
            return Err(Error::DimensionMismatch {
                expected: self.out_dim,
                got: m.cols,
                context: "linear_post matrix",
            });
        }
        let last = self.layers.last().unwrap();
        let a = m.matmul(&last.a)?;
        let mut mb = vec![0.0; m.rows];
        m.mul_vec_into(&last.b, &mut mb);
        let b = mb.iter().zip(c).map(|(x, ci)| x - ci).collect();
        let mut layers = self.layers.clone();
        *layers.last_mut().unwrap() = Layer::new(a, b)?;
        ReluNet::new(layers)
    }

    /// `x -> net(M x + c)`, fused into the first layer.
    pub fn pre_affine(&self, m: &SparseMatrix, c: &[f64]) -> Result<ReluNet> {
        if m.rows != self.in_dim || c.len() != m.rows {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                got: m.rows,
                context: "pre_affine matrix",
            });
        }
        let first = &self.layers[0];
        let a = first.a.matmul(m)?;
        let mut ac = vec![0.0; first.a.rows];
        first.a.mul_vec_into(c, &mut ac);
        let b = first.b.iter().zip(&ac).map(|(b, x)| b - x).collect();
        let mut layers = self.layers.clone();
        layers[0] = Layer::new(a, b)?;
        ReluNet::new(layers)
    }

    /// Writes the text format: one `key value...` record per line, numbers with 17
    /// significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "relunet 1").unwrap();
        writeln!(s, "in_dim {}", self.in_dim).unwrap();
        writeln!(s, "out_dim {}", self.out_dim).unwrap();
        writeln!(s, "layers {}", self.layers.len()).unwrap();
        for (j, l) in self.layers.iter().enumerate() {
            let dense = l.a.rows * l.a.cols <= 65_536;
            writeln!(
                s,
                "layer {} rows {} cols {} {}",
                j + 1,
                l.a.rows,
                l.a.cols,
                if dense { "dense" } else { "sparse" }
            )
            .unwrap();
            if dense {
                s.push('A');
                for v in l.a.to_dense() {
                    write!(s, " {}", num(v)).unwrap();
                }
            } else {
                write!(s, "A_sparse {}", l.a.nnz()).unwrap();
                for (r, c, v) in l.a.triplets() {
                    write!(s, " {r} {c} {}", num(v)).unwrap();
                }
            }
            s.push('\n');
            s.push('b');
            for v in &l.b {
                write!(s, " {}", num(*v)).unwrap();
            }
            s.push('\n');
        }
        let st = &self.stats;
        write!(s, "stats L {} W", st.depth).unwrap();
        for w in &st.widths {
            write!(s, " {w}").unwrap();
        }
        writeln!(s, " S {} B {}", st.nonzeros, num(st.magnitude)).unwrap();
        s
    }

    /// Parses [`to_text`](Self::to_text) output and checks the stored statistics.
    pub fn from_text(text: &str) -> Result<ReluNet> {
        let mut p = LineParser::new(text);
        let v = p.field("relunet", "header")?;
        if v.first().copied() != Some("1") {
            return Err(p.err("unsupported format version"));
        }
        let in_dim: usize = p.scalar("in_dim")?;
        let out_dim: usize = p.scalar("out_dim")?;
        let n_layers: usize = p.scalar("layers")?;
        let mut layers = Vec::with_capacity(n_layers);
        for j in 0..n_layers {
            let head = p.field("layer", &format!("layer {} header", j + 1))?;
            if head.len() != 6 || head[1] != "rows" || head[3] != "cols" {
                return Err(p.err("malformed layer header"));
            }
            let rows: usize = p.parse(head[2])?;
            let cols: usize = p.parse(head[4])?;
            let a = match head[5] {
                "dense" => {
                    let vals = p.field("A", &format!("A of layer {}", j + 1))?;
                    let nums: Vec<f64> = vals.iter().map(|x| p.parse(x)).collect::<Result<_>>()?;
                    if nums.len() != rows * cols {
                        return Err(p.err(&format!("A has {} entries, expected {}", nums.len(), rows * cols)));
                    }
                    SparseMatrix::from_dense(rows, cols, &nums)?
                }
                "sparse" => {
                    let vals = p.field("A_sparse", &format!("A_sparse of layer {}", j + 1))?;
                    let nnz: usize = p.parse(vals.first().copied().unwrap_or(""))?;
                    if vals.len() != 1 + 3 * nnz {
                        return Err(p.err("A_sparse entry count does not match"));
                    }
                    let mut entries = Vec::with_capacity(nnz);
                    for e in vals[1..].chunks(3) {
                        entries.push((p.parse(e[0])?, p.parse(e[1])?, p.parse(e[2])?));
                    }
                    SparseMatrix::from_triplets(rows, cols, entries)?
                }
                other => return Err(p.err(&format!("unknown storage `{other}`"))),
            };
            let bvals = p.field("b", &format!("b of layer {}", j + 1))?;
            let b: Vec<f64> = bvals.iter().map(|x| p.parse(x)).collect::<Result<_>>()?;
            if b.len() != rows {
                return Err(p.err(&format!("b has {} entries, expected {rows}", b.len())));
            }
            layers.push(Layer::new(a, b)?);
        }
        let st = p.field("stats", "stats")?;
        let net = ReluNet::new(layers)?;
        if net.in_dim != in_dim || net.out_dim != out_dim {
            return Err(p.err("declared dimensions do not match the layers"));
        }
        let expected = net.to_text();
        let stats_line = expected.lines().last().unwrap();
        let got = format!("stats {}", st.join(" "));
        if got != stats_line {
            return Err(p.err(&format!("stored `{got}` disagrees with recount `{stats_line}`")));
        }
        Ok(net)
    }
}

/// `z -> (z_1+, z_1-, z_2+, ...)` before the ReLU: rows `(e_i, -e_i)` interleaved.
fn split_matrix(n: usize) -> SparseMatrix {
    let entries = (0..n).flat_map(|i| [(2 * i, i, 1.0), (2 * i + 1, i, -1.0)]).collect();
    SparseMatrix::from_triplets(2 * n, n, entries).unwrap()
}

/// `(z_1+, z_1-, ...) -> z`.
fn merge_matrix(n: usize) -> SparseMatrix {
    let entries = (0..n).flat_map(|i| [(i, 2 * i, 1.0), (i, 2 * i + 1, -1.0)]).collect();
    SparseMatrix::from_triplets(n, 2 * n, entries).unwrap()
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

struct LineParser<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line_no: usize,
}

impl<'a> LineParser<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            lines: text.lines().enumerate(),
            line_no: 0,
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::parse(format!("line {}", self.line_no), msg)
    }

    fn field(&mut self, key: &str, what: &str) -> Result<Vec<&'a str>> {
        loop {
            let Some((i, line)) = self.lines.next() else {
                self.line_no += 1;
                return Err(self.err(&format!("missing field `{key}` ({what}): unexpected end of file")));
            };
            self.line_no = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_ascii_whitespace();
            let k = parts.next().unwrap();
            if k != key {
                return Err(self.err(&format!("expected field `{key}` ({what}), found `{k}`")));
            }
            return Ok(parts.collect());
        }
    }

    fn scalar<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let v = self.field(key, key)?;
        if v.len() != 1 {
            return Err(self.err(&format!("field `{key}` takes one value")));
        }
        self.parse(v[0])
    }

    fn parse<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(&format!("cannot parse `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    pub(crate) fn random_net(seed: u64, dims: &[usize]) -> ReluNet {
        let mut r = rng::stream(seed, 0);
        let layers = dims
            .windows(2)
            .map(|w| {
                let a: Vec<f64> = (0..w[0] * w[1]).map(|_| rng::normal(&mut r) / (w[0] as f64).sqrt()).collect();
                let b: Vec<f64> = (0..w[1]).map(|_| 0.3 * rng::normal(&mut r)).collect();
                Layer::dense(w[1], w[0], &a, b).unwrap()
            })
            .collect();
        ReluNet::new(layers).unwrap()
    }

    fn points(seed: u64, n: usize, dim: usize) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, 1);
        (0..n).map(|_| (0..dim).map(|_| 2.0 * rng::normal(&mut r)).collect()).collect()
    }

    /// Straight-line dense interpreter used as an independent check.
    fn interpret(net: &ReluNet, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        let n = net.layers().len();
        for (j, l) in net.layers().iter().enumerate() {
            let a = l.a.to_dense();
            let mut out = vec![0.0; l.a.rows];
            for r in 0..l.a.rows {
                let mut acc = 0.0;
                for c in 0..l.a.cols {
                    if a[r * l.a.cols + c] != 0.0 {
                        acc += a[r * l.a.cols + c] * h[c];
                    }
                }
                out[r] = acc - l.b[r];
                if j + 1 < n {
                    out[r] = out[r].max(0.0);
                }
            }
            h = out;
        }
        h
    }

    #[test]
    fn identity_and_relu() {
        let id = ReluNet::identity(3, 1);
        assert_eq!(id.evaluate(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
        let relu = ReluNet::new(vec![
            Layer::dense(1, 1, &[1.0], vec![0.0]).unwrap(),
            Layer::dense(1, 1, &[1.0], vec![0.0]).unwrap(),
        ])
        .unwrap();
        assert_eq!(relu.evaluate(&[-3.0]).unwrap(), vec![0.0]);
        assert_eq!(relu.evaluate(&[2.0]).unwrap(), vec![2.0]);
        for depth in 2..5 {
            let id = ReluNet::identity(2, depth);
            assert_eq!(id.evaluate(&[-1.25, 4.0]).unwrap(), vec![-1.25, 4.0]);
            assert_eq!(id.depth(), depth);
        }
        assert!(relu.evaluate(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn matches_straight_line_interpreter() {
        let net = random_net(1, &[4, 7, 5, 2]);
        for x in points(2, 50, 4) {
            assert_eq!(net.evaluate(&x).unwrap(), interpret(&net, &x));
        }
    }

    #[test]
    fn stats_are_exact() {
        let net = ReluNet::new(vec![
            Layer::dense(2, 2, &[1.0, 0.0, -3.0, 0.5], vec![0.0, 2.0]).unwrap(),
            Layer::dense(1, 2, &[0.0, 1.0], vec![-4.5]).unwrap(),
        ])
        .unwrap();
        let s = net.stats();
        assert_eq!(s.depth, 2);
        assert_eq!(s.widths, vec![2, 2, 1]);
        assert_eq!(s.nonzeros, 3 + 1 + 1 + 1);
        assert_eq!(s.magnitude, 4.5);
        assert_eq!(&net.recount(), s);
    }

    #[test]
    fn concat_composes_exactly() {
        let inner = random_net(3, &[3, 6, 4]);
        let outer = random_net(4, &[4, 5, 5, 2]);
        let c = ReluNet::concat(&outer, &inner).unwrap();
        assert_eq!(c.depth(), inner.depth() + outer.depth());
        for x in points(5, 1000, 3) {
            let direct = outer.evaluate(&inner.evaluate(&x).unwrap()).unwrap();
            let got = c.evaluate(&x).unwrap();
            for (a, b) in direct.iter().zip(&got) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        let id = ReluNet::identity(2, 1);
        let left = ReluNet::concat(&id, &outer).unwrap();
        let right = ReluNet::concat(&inner, &ReluNet::identity(3, 1)).unwrap();
        for x in points(6, 100, 4) {
            assert_eq!(left.evaluate(&x).unwrap(), outer.evaluate(&x).unwrap());
        }
        for x in points(7, 100, 3) {
            assert_eq!(right.evaluate(&x).unwrap(), inner.evaluate(&x).unwrap());
        }
        assert!(ReluNet::concat(&inner, &inner).is_err());
    }

    #[test]
    fn parallel_pads_and_stacks() {
        let f = random_net(8, &[3, 4, 2]);
        let g = random_net(9, &[3, 5, 5, 5, 4, 1]);
        let p = ReluNet::parallel(&[f.clone(), g.clone()], true).unwrap();
        assert_eq!(p.out_dim, 3);
        assert_eq!(p.depth(), 5);
        assert_eq!(p.stats().widths[1], 2 * 2 + 5);
        for x in points(10, 1000, 3) {
            let out = p.evaluate(&x).unwrap();
            assert_eq!(&out[..2], &f.evaluate(&x).unwrap()[..]);
            assert_eq!(out[2], g.evaluate(&x).unwrap()[0]);
        }
        let single = ReluNet::parallel(std::slice::from_ref(&f), true).unwrap();
        assert_eq!(single, f);
        let q = ReluNet::parallel(&[f.clone(), f.clone()], false).unwrap();
        assert_eq!(q.in_dim, 6);
        assert!(ReluNet::parallel(&[], true).is_err());
    }

    #[test]
    fn linear_post_and_pre_affine() {
        let net = random_net(11, &[3, 6, 2]);
        let m = SparseMatrix::from_dense(3, 2, &[1.0, -2.0, 0.0, 0.5, 3.0, 0.0]).unwrap();
        let c = [0.1, -0.2, 0.3];
        let post = net.linear_post(&m, &c).unwrap();
        let pre_m = SparseMatrix::from_dense(3, 2, &[1.0, 0.0, 0.0, 1.0, 1.0, -1.0]).unwrap();
        let pre = net.pre_affine(&pre_m, &[0.5, 0.0, -0.5]).unwrap();
        for x in points(12, 1000, 3) {
            let y = net.evaluate(&x).unwrap();
            let got = post.evaluate(&x).unwrap();
            for r in 0..3 {
                let want = m.row(r).map(|(k, v)| v * y[k]).sum::<f64>() + c[r];
                assert!((got[r] - want).abs() <= 1e-12 * want.abs().max(1.0));
            }
            let z = [x[0] + 0.5, x[1], x[0] - x[1] - 0.5];
            let want = net.evaluate(&z).unwrap();
            let got = pre.evaluate(&x[..2]).unwrap();
            for (a, b) in want.iter().zip(&got) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
        let zero = net.linear_post(&SparseMatrix::zeros(2, 2), &[1.0, 2.0]).unwrap();
        assert_eq!(zero.evaluate(&[0.3, 0.2, 0.1]).unwrap(), vec![1.0, 2.0]);
        let same = net.linear_post(&SparseMatrix::identity(2), &[0.0, 0.0]).unwrap();
        assert_eq!(same.evaluate(&[0.3, 0.2, 0.1]).unwrap(), net.evaluate(&[0.3, 0.2, 0.1]).unwrap());
    }

    #[test]
    fn text_round_trip_is_bit_identical() {
        let net = random_net(13, &[2, 9, 3]);
        let back = ReluNet::from_text(&net.to_text()).unwrap();
        assert_eq!(back, net);
        let big = ReluNet::identity(300, 3);
        assert!(big.to_text().contains("A_sparse"));
        assert_eq!(ReluNet::from_text(&big.to_text()).unwrap(), big);
    }

    #[test]
    fn truncated_text_names_missing_field() {
        let text = random_net(14, &[2, 3, 1]).to_text();
        let cut: String = text.lines().take(6).map(|l| format!("{l}\n")).collect();
        let err = ReluNet::from_text(&cut).unwrap_err().to_string();
        assert!(err.contains("missing field `b`"), "{err}");
        let cut: String = text.lines().take(10).map(|l| format!("{l}\n")).collect();
        let err = ReluNet::from_text(&cut).unwrap_err().to_string();
        assert!(err.contains("missing field `stats`"), "{err}");
    }
}
