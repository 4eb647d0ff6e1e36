//! ReLU network calculus: architectures, realization, parameter counts and the
//! exact composition / parallel-sum / identity / prolongation constructions.
//!
//! Sign splits are always laid out interleaved, `(x1+, x1-, x2+, x2-, ...)`.
//! With that layout and "dot product first, bias second" evaluation the
//! identity, affine and composition constructions reproduce direct evaluation
//! bit for bit on finite inputs.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Layer widths `(k0, k1, ..., k_{H+1})` of a network.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture(Vec<usize>);

impl Architecture {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::Architecture(format!(
                "need at least 3 widths (input, hidden, output), got {}",
                widths.len()
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Architecture("every width must be positive".into()));
        }
        Ok(Architecture(widths))
    }

    pub fn widths(&self) -> &[usize] {
        &self.0
    }

    /// Number of entries, i.e. `H + 2`.
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.0[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.0.last().unwrap()
    }

    /// Max over all widths, endpoints included.
    pub fn max_width(&self) -> usize {
        max_width(self)
    }

    /// Dense parameter count `sum k_n (k_{n-1} + 1)`.
    pub fn param_count(&self) -> u128 {
        self.0
            .windows(2)
            .map(|w| w[1] as u128 * (w[0] as u128 + 1))
            .sum()
    }

    /// Architecture of the identity network on `R^d` with `len` entries.
    pub fn identity(d: usize, len: usize) -> Result<Self> {
        if len < 3 {
            return Err(Error::Architecture(format!(
                "identity network needs length >= 3, got {len}"
            )));
        }
        let mut w = vec![2 * d; len];
        w[0] = d;
        w[len - 1] = d;
        Architecture::new(w)
    }

    /// `self ⊙ inner`: architecture of `compose(self, inner)`.
    pub fn odot(&self, inner: &Architecture) -> Result<Self> {
        if inner.output_dim() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "cannot compose: inner output {} vs outer input {}",
                inner.output_dim(),
                self.input_dim()
            )));
        }
        let b = &inner.0;
        let mut w = b[..b.len() - 1].to_vec();
        w.push(b[b.len() - 1] + self.0[0]);
        w.extend_from_slice(&self.0[1..]);
        Ok(Architecture(w))
    }

    /// `self ⊞ other`: shared endpoints, hidden widths added.
    pub fn boxplus(&self, other: &Architecture) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Architecture(format!(
                "parallel sum needs equal depth: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if self.input_dim() != other.input_dim() || self.output_dim() != other.output_dim() {
            return Err(Error::Dimension("parallel sum needs equal endpoints".into()));
        }
        let n = self.len();
        let mut w = Vec::with_capacity(n);
        w.push(self.0[0]);
        for i in 1..n - 1 {
            w.push(self.0[i] + other.0[i]);
        }
        w.push(self.0[n - 1]);
        Ok(Architecture(w))
    }

    /// Architecture of [`compose_fused`]`(self, inner)`.
    pub fn fused(&self, inner: &Architecture) -> Result<Self> {
        if inner.output_dim() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "cannot fuse: inner output {} vs outer input {}",
                inner.output_dim(),
                self.input_dim()
            )));
        }
        let b = &inner.0;
        let mut w = b[..b.len() - 1].to_vec();
        w.extend_from_slice(&self.0[1..]);
        Architecture::new(w)
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, w) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{w}")?;
        }
        write!(f, ")")
    }
}

pub fn max_width(arch: &Architecture) -> usize {
    arch.0.iter().copied().max().unwrap_or(0)
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "matrix {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Matrix::from_row_major(r, c, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// `self * x` with left-to-right summation per row.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn matmul(&self, rhs: &Matrix) -> Result<Matrix> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "matmul {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                let src = rhs.row(k);
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    pub fn scaled(&self, h: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| h * v).collect() }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// One affine map `x -> W x + B`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weights: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::Dimension(format!(
                "bias length {} vs {} rows",
                bias.len(),
                weights.rows()
            )));
        }
        Ok(Layer { weights, bias })
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weights.rows())
            .map(|i| dot(self.weights.row(i), x) + self.bias[i])
            .collect()
    }
}

/// A fully connected ReLU network: activation after every layer but the last.
#[derive(Clone, Debug, PartialEq)]
pub struct ReluNetwork {
    layers: Vec<Layer>,
}

impl ReluNetwork {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Architecture(format!(
                "need at least 2 affine layers, got {}",
                layers.len()
            )));
        }
        for w in layers.windows(2) {
            if w[1].weights.cols() != w[0].weights.rows() {
                return Err(Error::Dimension(format!(
                    "layer chain broken: {} rows feed {} columns",
                    w[0].weights.rows(),
                    w[1].weights.cols()
                )));
            }
        }
        if layers.iter().any(|l| l.weights.rows() == 0 || l.weights.cols() == 0) {
            return Err(Error::Architecture("zero-width layer".into()));
        }
        Ok(ReluNetwork { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.rows()
    }

    /// Number of architecture entries (`layers + 1`).
    pub fn depth(&self) -> usize {
        self.layers.len() + 1
    }

    pub fn architecture(&self) -> Architecture {
        architecture(self)
    }

    pub fn param_count(&self) -> u128 {
        param_count(self)
    }

    pub fn realize(&self, x: &[f64]) -> Result<Vec<f64>> {
        realize(self, x)
    }

    /// The all-zero network of the given architecture.
    pub fn zeros(arch: &Architecture) -> ReluNetwork {
        let layers = arch
            .widths()
            .windows(2)
            .map(|w| Layer { weights: Matrix::zeros(w[1], w[0]), bias: vec![0.0; w[1]] })
            .collect();
        ReluNetwork { layers }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(NetworkJson::from(self)).expect("network serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&NetworkJson::from(self)).expect("network serializes")
    }

    /// JSON with an attached `"metadata"` object.
    pub fn to_json_with_metadata(&self, metadata: serde_json::Value) -> String {
        let mut j = NetworkJson::from(self);
        j.metadata = Some(metadata);
        serde_json::to_string(&j).expect("network serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let parsed: NetworkJson = serde_json::from_str(s)?;
        parsed.try_into()
    }

    pub fn from_json_value(v: serde_json::Value) -> Result<Self> {
        let parsed: NetworkJson = serde_json::from_value(v)?;
        parsed.try_into()
    }
}

/// On-disk layout, see `docs/formats.md`.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkJson {
    pub layers: Vec<LayerJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metadata: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerJson {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl From<&ReluNetwork> for NetworkJson {
    fn from(net: &ReluNetwork) -> Self {
        NetworkJson {
            layers: net
                .layers
                .iter()
                .map(|l| LayerJson {
                    rows: l.weights.rows(),
                    cols: l.weights.cols(),
                    weights: l.weights.data().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
            metadata: None,
        }
    }
}

impl TryFrom<NetworkJson> for ReluNetwork {
    type Error = Error;

    fn try_from(j: NetworkJson) -> Result<Self> {
        let layers = j
            .layers
            .into_iter()
            .map(|l| Layer::new(Matrix::from_row_major(l.rows, l.cols, l.weights)?, l.bias))
            .collect::<Result<Vec<_>>>()?;
        ReluNetwork::new(layers)
    }
}

pub fn realize(net: &ReluNetwork, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != net.input_dim() {
        return Err(Error::Dimension(format!(
            "input length {} vs network input dim {}",
            x.len(),
            net.input_dim()
        )));
    }
    let last = net.layers.len() - 1;
    let mut cur = x.to_vec();
    for (i, layer) in net.layers.iter().enumerate() {
        cur = layer.apply(&cur);
        if i < last {
            for v in &mut cur {
                *v = v.max(0.0);
            }
        }
    }
    Ok(cur)
}

pub fn param_count(net: &ReluNetwork) -> u128 {
    net.layers
        .iter()
        .map(|l| l.weights.rows() as u128 * (l.weights.cols() as u128 + 1))
        .sum()
}

pub fn architecture(net: &ReluNetwork) -> Architecture {
    let mut w = vec![net.input_dim()];
    w.extend(net.layers.iter().map(|l| l.weights.rows()));
    Architecture(w)
}

/// Sign-split rows: `[W; -W]` interleaved row by row.
fn split_rows(layer: &Layer) -> Layer {
    let (r, c) = (layer.weights.rows(), layer.weights.cols());
    let mut w = Matrix::zeros(2 * r, c);
    let mut b = vec![0.0; 2 * r];
    for i in 0..r {
        for j in 0..c {
            let v = layer.weights.get(i, j);
            w.set(2 * i, j, v);
            w.set(2 * i + 1, j, -v);
        }
        b[2 * i] = layer.bias[i];
        b[2 * i + 1] = -layer.bias[i];
    }
    Layer { weights: w, bias: b }
}

/// Sign-merge columns: `W [I, -I]` interleaved column by column.
fn merge_cols(layer: &Layer) -> Layer {
    let (r, c) = (layer.weights.rows(), layer.weights.cols());
    let mut w = Matrix::zeros(r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let v = layer.weights.get(i, j);
            w.set(i, 2 * j, v);
            w.set(i, 2 * j + 1, -v);
        }
    }
    Layer { weights: w, bias: layer.bias.clone() }
}

/// Network realizing `outer ∘ inner` with architecture `D(outer) ⊙ D(inner)`.
pub fn compose(outer: &ReluNetwork, inner: &ReluNetwork) -> Result<ReluNetwork> {
    if inner.output_dim() != outer.input_dim() {
        return Err(Error::Dimension(format!(
            "cannot compose: inner output {} vs outer input {}",
            inner.output_dim(),
            outer.input_dim()
        )));
    }
    let mut layers = inner.layers[..inner.layers.len() - 1].to_vec();
    layers.push(split_rows(inner.layers.last().unwrap()));
    layers.push(merge_cols(&outer.layers[0]));
    layers.extend_from_slice(&outer.layers[1..]);
    Ok(ReluNetwork { layers })
}

/// Network realizing `outer ∘ inner` with the two boundary affine maps merged
/// into one, so the result has `len(outer) + len(inner) - 2` entries.
pub fn compose_fused(outer: &ReluNetwork, inner: &ReluNetwork) -> Result<ReluNetwork> {
    if inner.output_dim() != outer.input_dim() {
        return Err(Error::Dimension(format!(
            "cannot fuse: inner output {} vs outer input {}",
            inner.output_dim(),
            outer.input_dim()
        )));
    }
    let a = &outer.layers[0];
    let b = inner.layers.last().unwrap();
    let w = a.weights.matmul(&b.weights)?;
    let bias: Vec<f64> = a
        .weights
        .mul_vec(&b.bias)
        .into_iter()
        .zip(&a.bias)
        .map(|(x, y)| x + y)
        .collect();
    let mut layers = inner.layers[..inner.layers.len() - 1].to_vec();
    layers.push(Layer { weights: w, bias });
    layers.extend_from_slice(&outer.layers[1..]);
    ReluNetwork::new(layers)
}

/// Network realizing `sum_i h_i R(net_i)` with architecture `⊞_i D(net_i)`.
pub fn sum_networks(coefficients: &[f64], nets: &[&ReluNetwork]) -> Result<ReluNetwork> {
    if coefficients.len() != nets.len() || nets.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} coefficients for {} networks",
            coefficients.len(),
            nets.len()
        )));
    }
    let first = nets[0];
    let depth = first.layers.len();
    let (din, dout) = (first.input_dim(), first.output_dim());
    for n in nets {
        if n.layers.len() != depth {
            return Err(Error::Architecture(format!(
                "parallel sum needs equal depth: {} vs {}",
                n.depth(),
                first.depth()
            )));
        }
        if n.input_dim() != din || n.output_dim() != dout {
            return Err(Error::Dimension("parallel sum needs equal endpoints".into()));
        }
    }
    let mut layers = Vec::with_capacity(depth);
    for li in 0..depth {
        let rows: usize = if li == depth - 1 {
            dout
        } else {
            nets.iter().map(|n| n.layers[li].weights.rows()).sum()
        };
        let cols: usize = if li == 0 {
            din
        } else {
            nets.iter().map(|n| n.layers[li].weights.cols()).sum()
        };
        let mut w = Matrix::zeros(rows, cols);
        let mut b = vec![0.0; rows];
        let (mut r0, mut c0) = (0usize, 0usize);
        for (h, n) in coefficients.iter().zip(nets) {
            let l = &n.layers[li];
            let (lr, lc) = (l.weights.rows(), l.weights.cols());
            let ro = if li == depth - 1 { 0 } else { r0 };
            let co = if li == 0 { 0 } else { c0 };
            let scale = if li == depth - 1 { *h } else { 1.0 };
            for i in 0..lr {
                for j in 0..lc {
                    w.set(ro + i, co + j, scale * l.weights.get(i, j));
                }
                if li == depth - 1 {
                    b[i] += h * l.bias[i];
                } else {
                    b[ro + i] = l.bias[i];
                }
            }
            r0 += lr;
            c0 += lc;
        }
        layers.push(Layer { weights: w, bias: b });
    }
    Ok(ReluNetwork { layers })
}

/// Identity on `R^d` with architecture `(d, 2d, ..., 2d, d)` of length `depth`.
pub fn identity_network(d: usize, depth: usize) -> Result<ReluNetwork> {
    if depth < 3 {
        return Err(Error::Architecture(format!(
            "identity network needs depth >= 3, got {depth}"
        )));
    }
    if d == 0 {
        return Err(Error::Architecture("dimension must be positive".into()));
    }
    let id = Layer { weights: Matrix::identity(d), bias: vec![0.0; d] };
    let mut layers = vec![split_rows(&id)];
    for _ in 0..depth - 3 {
        layers.push(Layer { weights: Matrix::identity(2 * d), bias: vec![0.0; 2 * d] });
    }
    layers.push(merge_cols(&id));
    Ok(ReluNetwork { layers })
}

/// Prolong `net` to `target_depth` architecture entries without changing its
/// realization.
pub fn extend_depth(net: &ReluNetwork, target_depth: usize) -> Result<ReluNetwork> {
    let cur = net.depth();
    if target_depth < cur {
        return Err(Error::Architecture(format!(
            "target depth {target_depth} below current depth {cur}"
        )));
    }
    match target_depth - cur {
        0 => Ok(net.clone()),
        1 => {
            let mut layers = net.layers.clone();
            let k = layers[layers.len() - 1].weights.cols();
            let pos = layers.len() - 1;
            layers.insert(pos, Layer { weights: Matrix::identity(k), bias: vec![0.0; k] });
            Ok(ReluNetwork { layers })
        }
        gap => compose(&identity_network(net.output_dim(), gap + 1)?, net),
    }
}

/// `x -> W x + B` as a network with `depth` architecture entries.
pub fn affine_network(w: &Matrix, b: &[f64], depth: usize) -> Result<ReluNetwork> {
    if b.len() != w.rows() {
        return Err(Error::Dimension(format!("bias length {} vs {} rows", b.len(), w.rows())));
    }
    let mut net = identity_network(w.cols(), depth)?;
    let last = Layer { weights: w.clone(), bias: b.to_vec() };
    *net.layers.last_mut().unwrap() = merge_cols(&last);
    Ok(net)
}

type Evaluator = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A plain function `R^in -> R^out` carried next to its network encoding.
#[derive(Clone)]
pub struct RealFunctionHandle {
    in_dim: usize,
    out_dim: usize,
    eval: Arc<Evaluator>,
}

impl RealFunctionHandle {
    pub fn new<F>(in_dim: usize, out_dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        RealFunctionHandle { in_dim, out_dim, eval: Arc::new(f) }
    }

    /// Handle backed by a network realization.
    pub fn from_network(net: ReluNetwork) -> Self {
        let (i, o) = (net.input_dim(), net.output_dim());
        RealFunctionHandle::new(i, o, move |x| realize(&net, x).expect("dimension checked"))
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Dimension(format!(
                "function expects {} inputs, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let y = (self.eval)(x);
        if y.len() != self.out_dim {
            return Err(Error::Dimension(format!(
                "function declared {} outputs, produced {}",
                self.out_dim,
                y.len()
            )));
        }
        Ok(y)
    }

    /// Evaluation without the dimension checks, for hot loops.
    pub fn call(&self, x: &[f64]) -> Vec<f64> {
        (self.eval)(x)
    }
}

impl fmt::Debug for RealFunctionHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RealFunctionHandle({} -> {})", self.in_dim, self.out_dim)
    }
}
