use super::FreqError;
use crate::scalar::Scalar;

/// Row-major dense matrix with `rows × cols` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, FreqError> {
        if data.len() != rows * cols {
            return Err(FreqError::DimensionMismatch { expected: rows * cols, actual: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    /// Rectangular identity (ones on the main diagonal).
    pub fn identity(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for k in 0..rows.min(cols) {
            m.data[k * cols + k] = T::one();
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    /// Row vector times matrix, plus bias.
    fn affine(&self, v: &[T], bias: &[T]) -> Vec<T> {
        (0..self.cols)
            .map(|c| v.iter().enumerate().fold(bias[c], |acc, (r, &x)| acc + x * self.get(r, c)))
            .collect()
    }
}

/// Weights of the two-layer adapter: `d_in → d_mid → d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterParams<T> {
    pub w_tune: Matrix<T>,
    pub b_tune: Vec<T>,
    pub w_up: Matrix<T>,
    pub b_up: Vec<T>,
}

impl<T: Scalar> AdapterParams<T> {
    pub fn validate(&self) -> Result<(), FreqError> {
        let check = |expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(FreqError::DimensionMismatch { expected, actual })
            }
        };
        check(self.w_tune.cols, self.b_tune.len())?;
        check(self.w_tune.cols, self.w_up.rows)?;
        check(self.w_up.cols, self.b_up.len())?;
        let finite = self
            .w_tune
            .data
            .iter()
            .chain(&self.b_tune)
            .chain(&self.w_up.data)
            .chain(&self.b_up)
            .all(|v| v.is_finite());
        if !finite {
            return Err(FreqError::NonFiniteWeights);
        }
        Ok(())
    }

    pub fn d_in(&self) -> usize {
        self.w_tune.rows
    }

    pub fn d_out(&self) -> usize {
        self.w_up.cols
    }
}

/// `0.5·x·(1 + erf(x/√2))`.
pub fn gelu<T: Scalar>(x: T) -> T {
    T::of(0.5) * x * (T::one() + (x / T::SQRT_2()).erf())
}

/// Per vector: `w_up · gelu(w_tune · f + b_tune) + b_up`.
pub fn adapter_forward<T: Scalar>(f: &[Vec<T>], p: &AdapterParams<T>) -> Result<Vec<Vec<T>>, FreqError> {
    p.validate()?;
    f.iter()
        .map(|v| {
            if v.len() != p.d_in() {
                return Err(FreqError::DimensionMismatch { expected: p.d_in(), actual: v.len() });
            }
            let hidden: Vec<T> = p.w_tune.affine(v, &p.b_tune).into_iter().map(gelu).collect();
            Ok(p.w_up.affine(&hidden, &p.b_up))
        })
        .collect()
}
