use super::NumError;

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NumError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(NumError::DataLength {
                shape,
                len: data.len(),
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

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds an `rows × cols` matrix from row-major data.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&e| e == 1)
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<f64, NumError> {
        if self.data.len() != 1 {
            return Err(NumError::NotScalar {
                shape: self.shape.clone(),
            });
        }
        Ok(self.data[0])
    }

    /// `(rows, cols)` of a rank-2 tensor; a rank-1 tensor is treated as one row.
    pub fn dims2(&self) -> Result<(usize, usize), NumError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            [c] => Ok((1, *c)),
            _ => Err(NumError::Rank {
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().unwrap_or(&1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, NumError> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(NumError::DataLength {
                shape,
                len: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub(crate) fn zip_map(
        &self,
        other: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, NumError> {
        if self.shape != other.shape {
            return Err(NumError::ShapeMismatch {
                op: "elementwise",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a · b` for `a: m×k`, `b: k×n`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumError> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 || a.shape.len() != 2 || b.shape.len() != 2 {
        return Err(NumError::ShapeMismatch {
            op: "matmul",
            left: a.shape.clone(),
            right: b.shape.clone(),
        });
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a.data[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// `aᵀ · g` for `a: m×k`, `g: m×n`, giving `k×n`.
pub(crate) fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let n = g.shape[1];
    let mut out = vec![0.0; k * n];
    for r in 0..m {
        let a_row = &a.data[r * k..(r + 1) * k];
        let g_row = &g.data[r * n..(r + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
    Tensor {
        shape: vec![k, n],
        data: out,
    }
}

/// `g · bᵀ` for `g: m×n`, `b: k×n`, giving `m×k`.
pub(crate) fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let (m, n) = (g.shape[0], g.shape[1]);
    let k = b.shape[0];
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let g_row = &g.data[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b.data[p * n..(p + 1) * n];
            out[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
        }
    }
    Tensor {
        shape: vec![m, k],
        data: out,
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

/// Normalizes each row of `v` (a vector counts as one row) to unit Euclidean norm.
pub fn l2_normalize(v: &Tensor) -> Result<Tensor, NumError> {
    let (rows, cols) = v.dims2()?;
    let mut out = v.clone();
    for r in 0..rows {
        let row = &mut out.data[r * cols..(r + 1) * cols];
        // Dividing by the largest magnitude first keeps the squares in range
        // and makes the result independent of any exactly representable scale.
        let peak = row.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if peak == 0.0 || !peak.is_finite() {
            return Err(NumError::Degenerate {
                op: "l2_normalize",
                reason: format!("row {r} has peak magnitude {peak}"),
            });
        }
        for x in row.iter_mut() {
            *x /= peak;
        }
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(NumError::Degenerate {
                op: "l2_normalize",
                reason: format!("row {r} has norm {norm}"),
            });
        }
        for x in row.iter_mut() {
            *x /= norm;
        }
    }
    Ok(out)
}

/// Pulls `grad` (with respect to the normalized rows) back through row-wise
/// L2 normalization: `(g − ẑ(ẑ·g)) / ‖v‖`.
pub fn l2_normalize_backward(input: &Tensor, normalized: &Tensor, grad: &Tensor) -> Tensor {
    let cols = *input.shape.last().unwrap_or(&1);
    let rows = input.data.len() / cols.max(1);
    let mut out = vec![0.0; input.data.len()];
    for r in 0..rows {
        let span = r * cols..(r + 1) * cols;
        let v = &input.data[span.clone()];
        let z = &normalized.data[span.clone()];
        let g = &grad.data[span.clone()];
        let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let norm = peak * v.iter().map(|x| (x / peak).powi(2)).sum::<f64>().sqrt();
        let dot: f64 = z.iter().zip(g).map(|(a, b)| a * b).sum();
        for ((o, &zi), &gi) in out[span].iter_mut().zip(z).zip(g) {
            *o = (gi - zi * dot) / norm;
        }
    }
    Tensor {
        shape: input.shape.clone(),
        data: out,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::matrix(rows, cols, data).unwrap()
    }

    #[test]
    fn data_length_must_match_shape() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_identity() {
        let i = Tensor::identity(2);
        let b = Tensor::matrix(2, 2, vec![2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(matmul(&i, &b).unwrap(), b);
    }

    #[test]
    fn matmul_against_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let c = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for p in 0..4 {
                    acc += a.data()[i * 4 + p] * b.data()[p * 2 + j];
                }
                assert_eq!(c.data()[i * 2 + j], acc);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(
            matmul(&a, &b),
            Err(NumError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random(&mut rng, 5, 3);
        let g = random(&mut rng, 5, 4);
        let mut at = Tensor::zeros(vec![3, 5]);
        for i in 0..5 {
            for j in 0..3 {
                at.data_mut()[j * 5 + i] = a.data()[i * 3 + j];
            }
        }
        let expected = matmul(&at, &g).unwrap();
        let got = matmul_tn(&a, &g);
        for (x, y) in got.data().iter().zip(expected.data()) {
            assert!((x - y).abs() < 1e-14);
        }

        let b = random(&mut rng, 3, 4);
        let mut bt = Tensor::zeros(vec![4, 3]);
        for i in 0..3 {
            for j in 0..4 {
                bt.data_mut()[j * 3 + i] = b.data()[i * 4 + j];
            }
        }
        let expected = matmul(&g, &bt).unwrap();
        let got = matmul_nt(&g, &b);
        for (x, y) in got.data().iter().zip(expected.data()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn l2_normalize_examples() {
        let out = l2_normalize(&Tensor::vector(vec![3.0, 4.0])).unwrap();
        assert!((out.data()[0] - 0.6).abs() < 1e-15);
        assert!((out.data()[1] - 0.8).abs() < 1e-15);

        let unit = Tensor::vector(vec![0.0, 1.0, 0.0]);
        assert_eq!(l2_normalize(&unit).unwrap(), unit);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random(&mut rng, 1, 5).reshape(vec![5]).unwrap();
        let out = l2_normalize(&v).unwrap();
        let norm = out.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_zero_vector_is_degenerate() {
        assert!(matches!(
            l2_normalize(&Tensor::vector(vec![0.0, 0.0])),
            Err(NumError::Degenerate { .. })
        ));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!(sigmoid(800.0) <= 1.0);
        assert!(sigmoid(800.0).is_finite() && sigmoid(-800.0).is_finite());
    }
}
