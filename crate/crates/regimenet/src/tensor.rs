//! Dense tensors and the small set of multilinear operations the model needs:
//! mode-n vector products, matricization, vectorization, outer products and
//! PARAFAC reconstruction.
//!
//! Storage is column-major (first index fastest). All Kronecker identities in
//! the sampler depend on this linearization, so it is fixed globally and never
//! configurable.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("mode {mode} is out of range for a tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("vector of length {got} cannot contract mode {mode} of extent {expected}")]
    LengthMismatch {
        mode: usize,
        expected: usize,
        got: usize,
    },
    #[error("data length {got} does not match shape product {expected}")]
    DataLength { expected: usize, got: usize },
    #[error("tensor shapes entries must be positive")]
    EmptyMode,
}

/// Dense real tensor of arbitrary order, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::EmptyMode);
        }
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(TensorError::DataLength {
                expected: len,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self {
            shape: vec![v.len()],
            data: v,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Column-major strides: mode 1 is fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.shape.len());
        let mut acc = 1;
        for &d in &self.shape {
            s.push(acc);
            acc *= d;
        }
        s
    }

    /// Linear position of a multi-index (0-based).
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut pos = 0;
        let mut stride = 1;
        for (k, &i) in idx.iter().enumerate() {
            debug_assert!(i < self.shape[k]);
            pos += i * stride;
            stride *= self.shape[k];
        }
        pos
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let p = self.linear_index(idx);
        self.data[p] = v;
    }
}

/// Contract mode `n` (1-based) of `t` with `v`, dropping that mode.
pub fn mode_n_vec_product(
    t: &DenseTensor,
    v: &[f64],
    n: usize,
) -> Result<DenseTensor, TensorError> {
    let order = t.order();
    if n == 0 || n > order {
        return Err(TensorError::ModeOutOfRange { mode: n, order });
    }
    let dn = t.shape[n - 1];
    if v.len() != dn {
        return Err(TensorError::LengthMismatch {
            mode: n,
            expected: dn,
            got: v.len(),
        });
    }
    let inner: usize = t.shape[..n - 1].iter().product();
    let outer: usize = t.shape[n..].iter().product();
    let mut out_shape: Vec<usize> = t.shape.clone();
    out_shape.remove(n - 1);
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let mut out = vec![0.0; inner * outer];
    for o in 0..outer {
        let obase = o * dn * inner;
        let rbase = o * inner;
        for (k, &vk) in v.iter().enumerate() {
            if vk == 0.0 {
                continue;
            }
            let tbase = obase + k * inner;
            for i in 0..inner {
                out[rbase + i] += t.data[tbase + i] * vk;
            }
        }
    }
    DenseTensor::new(out_shape, out)
}

/// Mode-n matricization: rows index mode n, columns enumerate the remaining
/// modes in their original order, column-major. Returned as a dense tensor of
/// shape (d_n, prod of the rest).
pub fn matricize(t: &DenseTensor, n: usize) -> Result<DenseTensor, TensorError> {
    let order = t.order();
    if n == 0 || n > order {
        return Err(TensorError::ModeOutOfRange { mode: n, order });
    }
    let dn = t.shape[n - 1];
    let inner: usize = t.shape[..n - 1].iter().product();
    let outer: usize = t.shape[n..].iter().product();
    let cols = inner * outer;
    let mut out = vec![0.0; dn * cols];
    for o in 0..outer {
        for r in 0..dn {
            for i in 0..inner {
                let src = i + r * inner + o * inner * dn;
                let col = i + o * inner;
                out[r + col * dn] = t.data[src];
            }
        }
    }
    DenseTensor::new(vec![dn, cols], out)
}

/// Inverse of [`matricize`]: rebuild the tensor of `shape` from its mode-n
/// unfolding.
pub fn dematricize(
    m: &DenseTensor,
    shape: &[usize],
    n: usize,
) -> Result<DenseTensor, TensorError> {
    let order = shape.len();
    if n == 0 || n > order {
        return Err(TensorError::ModeOutOfRange { mode: n, order });
    }
    let dn = shape[n - 1];
    let inner: usize = shape[..n - 1].iter().product();
    let outer: usize = shape[n..].iter().product();
    if m.shape() != [dn, inner * outer] {
        return Err(TensorError::DataLength {
            expected: dn * inner * outer,
            got: m.len(),
        });
    }
    let mut out = vec![0.0; dn * inner * outer];
    for o in 0..outer {
        for r in 0..dn {
            for i in 0..inner {
                let dst = i + r * inner + o * inner * dn;
                let col = i + o * inner;
                out[dst] = m.data[r + col * dn];
            }
        }
    }
    DenseTensor::new(shape.to_vec(), out)
}

/// Stack all entries into one vector following the fixed column-major order.
pub fn vectorize(t: &DenseTensor) -> Vec<f64> {
    t.data.clone()
}

/// Outer product of two or more tensors; the result shape is the
/// concatenation of the operand shapes.
pub fn outer_product(operands: &[&DenseTensor]) -> Result<DenseTensor, TensorError> {
    assert!(
        operands.len() >= 2,
        "outer product needs at least two operands"
    );
    let mut acc = operands[0].clone();
    for t in &operands[1..] {
        acc = outer_pair(&acc, t)?;
    }
    Ok(acc)
}

fn outer_pair(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor, TensorError> {
    let mut shape = a.shape.clone();
    shape.extend_from_slice(&b.shape);
    let mut data = vec![0.0; a.len() * b.len()];
    for (j, &bv) in b.data.iter().enumerate() {
        let base = j * a.len();
        for (i, &av) in a.data.iter().enumerate() {
            data[base + i] = av * bv;
        }
    }
    DenseTensor::new(shape, data)
}

/// PARAFAC marginals of a 4-order coefficient tensor: for every rank
/// `r < rank` and mode `h < 4` a vector of length `dims[h]`.
///
/// Mode `h` vectors are stored contiguously, rank-major, in `factors[h]`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ParafacMarginals {
    rank: usize,
    dims: [usize; 4],
    factors: [Vec<f64>; 4],
}

impl ParafacMarginals {
    pub fn zeros(rank: usize, dims: [usize; 4]) -> Self {
        assert!(rank > 0, "rank must be positive");
        assert!(dims.iter().all(|&d| d > 0), "dims must be positive");
        let factors = [
            vec![0.0; dims[0] * rank],
            vec![0.0; dims[1] * rank],
            vec![0.0; dims[2] * rank],
            vec![0.0; dims[3] * rank],
        ];
        Self {
            rank,
            dims,
            factors,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    /// Marginal vector for mode `h` (0-based) and rank `r` (0-based).
    pub fn factor(&self, h: usize, r: usize) -> &[f64] {
        let n = self.dims[h];
        &self.factors[h][r * n..(r + 1) * n]
    }

    pub fn factor_mut(&mut self, h: usize, r: usize) -> &mut [f64] {
        let n = self.dims[h];
        &mut self.factors[h][r * n..(r + 1) * n]
    }

    /// Number of stored reals: R(I+J+K+Q), versus IJKQ for the dense tensor.
    pub fn parameter_count(&self) -> usize {
        self.rank * self.dims.iter().sum::<usize>()
    }

    pub fn dense_parameter_count(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Reconstruct the dense (I, J, K, Q) tensor as a sum of rank-one outer
/// products of the marginals.
pub fn parafac_reconstruct(m: &ParafacMarginals) -> DenseTensor {
    let [i_n, j_n, k_n, q_n] = m.dims;
    let mut out = DenseTensor::zeros(vec![i_n, j_n, k_n, q_n]);
    let data = out.data_mut();
    for r in 0..m.rank {
        let g1 = m.factor(0, r);
        let g2 = m.factor(1, r);
        let g3 = m.factor(2, r);
        let g4 = m.factor(3, r);
        let mut pos = 0;
        for &zq in g4.iter() {
            for &zk in g3.iter() {
                for &zj in g2.iter() {
                    let w = zq * zk * zj;
                    for &zi in g1.iter() {
                        data[pos] += w * zi;
                        pos += 1;
                    }
                }
            }
        }
    }
    out
}

/// Rank-one slice vec(g1 ∘ g2 ∘ g3) written into `out` (length IJK),
/// the column-major vectorization used throughout the sampler.
pub fn rank_one_vec3(g1: &[f64], g2: &[f64], g3: &[f64], out: &mut [f64]) {
    debug_assert_eq!(out.len(), g1.len() * g2.len() * g3.len());
    let mut pos = 0;
    for &zk in g3.iter() {
        for &zj in g2.iter() {
            let w = zk * zj;
            for &zi in g1.iter() {
                out[pos] = w * zi;
                pos += 1;
            }
        }
    }
}
