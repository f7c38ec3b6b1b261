//! A small CPU convolutional network engine with explicit backward passes.
//!
//! Tensors are `f32`, NCHW. Layers cache what their backward pass needs
//! during `forward`, so a network instance is not re-entrant: one
//! forward/backward pair at a time.

mod layers;
mod optim;
mod resnet;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;


pub use layers::{BatchNorm2d, Conv2d, Linear};
pub use optim::{Adam, Scheduler};
pub use resnet::{BlockKind, ResNet, ResNetConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor {
            n,
            c,
            h,
            w,
            data: vec![0.0; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == n * c * h * w).then_some(Tensor { n, c, h, w, data })
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Vec<f32>,
    pub grad: Vec<f32>,
    pub shape: Vec<usize>,
}

impl Param {
    pub fn new(value: Vec<f32>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(value.len(), shape.iter().product::<usize>());
        Param {
            grad: vec![0.0; value.len()],
            value,
            shape,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// A named view on a parameter or buffer, for checkpoints and weight import.
pub struct NamedTensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a mut Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers, running statistics updated.
    Train,
    /// Running statistics, no state changes.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackboneOutput {
    /// `N × embedding_dim`, the representation fed to the classifier head.
    pub embeddings: Vec<f32>,
    /// `N × num_classes`.
    pub logits: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LayerError {
    #[error("unknown layer `{0}`")]
    Unknown(String),
    #[error("layer `{0}` has no spatial extent")]
    NotSpatial(String),
}

/// A classifier that exposes its penultimate representation.
pub trait Backbone {
    fn embedding_dim(&self) -> usize;
    fn num_classes(&self) -> usize;

    fn forward(&mut self, input: &Tensor, mode: Mode) -> BackboneOutput;

    /// Backpropagates from the last forward pass. `d_embeddings` is a
    /// gradient arriving directly at the embeddings, in addition to what
    /// flows back from the classifier head. Gradients accumulate.
    fn backward(&mut self, d_embeddings: &[f32], d_logits: &[f32]);

    /// Visits every parameter the optimizer may update. With frozen
    /// features only the head is visited.
    fn visit_trainable(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_trainable(&mut |p| p.zero_grad());
    }

    fn set_frozen_features(&mut self, frozen: bool);

    /// Names of layers whose output can be captured.
    fn layer_ids(&self) -> Vec<String>;

    /// Requests that the next forward/backward pair records the output of
    /// `layer` and the gradient arriving at it.
    fn set_capture(&mut self, layer: Option<&str>) -> Result<(), LayerError>;

    /// `(activation, gradient)` recorded for the captured layer.
    fn captured(&self) -> Option<(&Tensor, &Tensor)>;

    /// All parameters and buffers by name.
    fn tensors_mut(&mut self) -> Vec<NamedTensorMut<'_>>;
}

/// `C = alpha · op(A) · op(B) + beta · C`, all row-major; `op` transposes
/// when the flag is set. `A` is `m × k` after `op`, `B` is `k × n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    beta: f32,
    c: &mut [f32],
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the strides above describe matrices that fit inside the
    // asserted slice lengths, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2,3],[4,5,6]], B = [[1,0],[0,1],[1,1]]
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let mut c = [0.0; 4];
        gemm(2, 3, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [4.0, 5.0, 10.0, 11.0]);
        // Aᵀ stored as 3×2.
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, 0.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = [0.0; 4];
        gemm(2, 3, 2, &at, true, &bt, true, 0.0, &mut c2);
        assert_eq!(c2, c);
    }
}
