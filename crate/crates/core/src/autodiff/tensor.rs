use std::fmt;

/// Dimension list of a dense tensor. Only ranks 0 (scalar), 1 (vector) and
/// 2 (row-major matrix) are used.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Shape(pub Vec<usize>);

impl Shape {
    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn vector(n: usize) -> Self {
        Shape(vec![n])
    }

    pub fn matrix(rows: usize, cols: usize) -> Self {
        Shape(vec![rows, cols])
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1 && self.rank() <= 1
    }

    /// Rows of a matrix, length of a vector, 1 for a scalar.
    pub fn rows(&self) -> usize {
        match self.0.as_slice() {
            [] => 1,
            [n] => *n,
            [r, _] => *r,
            _ => unreachable!("rank > 2"),
        }
    }

    /// Columns of a matrix; vectors and scalars count as one column.
    pub fn cols(&self) -> usize {
        match self.0.as_slice() {
            [_, c] => *c,
            _ => 1,
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Dense double-precision tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.numel(),
            data.len(),
            "tensor data does not match shape {shape}"
        );
        Self { shape, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(Shape::scalar(), vec![v])
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self::new(Shape::vector(data.len()), data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(Shape::matrix(rows, cols), data)
    }

    pub fn zeros(shape: Shape) -> Self {
        let n = shape.numel();
        Self::new(shape, vec![0.0; n])
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self::matrix(n, n, data)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}
