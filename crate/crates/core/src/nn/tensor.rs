use serde::{Deserialize, Serialize};

/// Dense f64 array with a row-major shape. Feature maps are `[C, H, W]`,
/// point features `[N, C]`, scalars `[]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor data does not match shape {shape:?}"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(C, H, W)` of a feature map.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected a [C, H, W] tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    /// `(rows, cols)` of a matrix.
    pub fn rc(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected a [N, C] tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Mirror a `[C, H, W]` map left-right.
    pub fn mirrored_w(&self) -> Tensor {
        let (c, h, w) = self.chw();
        let mut out = vec![0.0; self.data.len()];
        for ci in 0..c {
            for y in 0..h {
                let row = (ci * h + y) * w;
                for x in 0..w {
                    out[row + x] = self.data[row + w - 1 - x];
                }
            }
        }
        Tensor::new(self.shape.clone(), out)
    }
}
