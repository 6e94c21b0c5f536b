use serde::{Deserialize, Serialize};

/// Per-sample activation shape. Images are stored height x width x channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shape {
    Vector([usize; 1]),
    Image([usize; 3]),
}

impl Shape {
    pub fn vector(n: usize) -> Shape {
        Shape::Vector([n])
    }

    pub fn image(h: usize, w: usize, c: usize) -> Shape {
        Shape::Image([h, w, c])
    }

    pub fn len(&self) -> usize {
        match self {
            Shape::Vector([n]) => *n,
            Shape::Image([h, w, c]) => h * w * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dims(&self) -> &[usize] {
        match self {
            Shape::Vector(d) => d,
            Shape::Image(d) => d,
        }
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Shape::Vector([n]) => write!(f, "({n})"),
            Shape::Image([h, w, c]) => write!(f, "({h}, {w}, {c})"),
        }
    }
}

/// A batch of activations: `batch` samples of `shape`, contiguous, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub batch: usize,
    pub shape: Shape,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(batch: usize, shape: Shape) -> Self {
        Tensor {
            batch,
            shape,
            data: vec![0.0; batch * shape.len()],
        }
    }

    pub fn from_vec(batch: usize, shape: Shape, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), batch * shape.len(), "tensor buffer size");
        Tensor { batch, shape, data }
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let n = self.shape.len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let n = self.shape.len();
        &mut self.data[i * n..(i + 1) * n]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// `c = a * b (+ c)`, with `a` m x k and `b` k x n, either stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_transposed: bool,
    b: &[f32],
    b_transposed: bool,
    c: &mut [f32],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserted lengths cover every index reachable through the
    // given dimensions and strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
