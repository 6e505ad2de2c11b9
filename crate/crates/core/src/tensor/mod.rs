//! A small reverse-mode autodiff tensor engine.
//!
//! Tensors are immutable, reference-counted, row-major and carry the graph
//! that produced them. Backward functions are themselves written in terms of
//! tensor ops, so gradients are ordinary graph tensors and differentiating
//! through a gradient (needed for the R1 penalty) works with no extra
//! machinery.
//!
//! The element type is generic over [`Element`]; training runs in `f32`,
//! finite-difference gradient verification in `f64`.

mod conv;
mod gradcheck;
mod ops;

pub use conv::conv2d_weight_grad;
pub use gradcheck::{gradcheck, gradcheck_verbose, numeric_gradient};

use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use num_traits::Float;
use rand::Rng;

/// Scalar types the engine can compute with.
pub trait Element:
    Float + core::iter::Sum + core::fmt::Debug + core::fmt::Display + Send + Sync + 'static
{
    /// Name recorded in serialized tensors.
    const DTYPE: &'static str;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `C = alpha * A(m,k) * B(k,n) + beta * C`, arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Element for f32 {
    const DTYPE: &'static str = "f32";

    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
        }
    }
}

impl Element for f64 {
    const DTYPE: &'static str = "f64";

    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }

    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        unsafe {
            matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
        }
    }
}

/// Convert an `f64` constant into the element type.
pub fn el<T: Element>(x: f64) -> T {
    T::from_f64(x)
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

type BackFn<T> = Box<dyn Fn(&Tensor<T>) -> Vec<Option<Tensor<T>>> + Send + Sync>;

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackFn<T>>,
    requires_grad: bool,
}

/// An immutable n-dimensional array with an attached computation graph.
pub struct Tensor<T: Element>(Arc<Node<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(self.0.clone())
    }
}

impl<T: Element> core::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "Tensor(id={}, shape={:?}", self.0.id, self.0.shape)?;
        if self.numel() <= 8 {
            write!(f, ", data={:?}", &self.0.data[..])?;
        }
        write!(f, ")")
    }
}

impl<T: Element> Tensor<T> {
    // ---- construction ----------------------------------------------------

    /// Constant tensor from raw data.
    pub fn new(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data: Arc::new(data),
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        }))
    }

    /// Trainable leaf: gradients will be collected for it.
    pub fn leaf(shape: &[usize], data: Vec<T>) -> Self {
        let t = Tensor::new(shape, data);
        t.with_requires_grad()
    }

    fn with_requires_grad(self) -> Self {
        // Node has no other owners yet, so rebuilding it is cheap.
        let node = &self.0;
        Tensor(Arc::new(Node {
            id: node.id,
            shape: node.shape.clone(),
            data: node.data.clone(),
            parents: Vec::new(),
            backward: None,
            requires_grad: true,
        }))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape, alloc::vec![value; n])
    }

    /// Standard-normal entries scaled by `std`.
    pub fn randn<R: Rng>(shape: &[usize], std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| crate::rng::next_normal::<T, _>(rng) * el(std))
            .collect();
        Tensor::new(shape, data)
    }

    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackFn<T>,
    ) -> Self {
        let requires_grad = parents.iter().any(|p| p.0.requires_grad);
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: Arc::new(data),
            parents: if requires_grad { parents } else { Vec::new() },
            backward: if requires_grad { Some(backward) } else { None },
            requires_grad,
        }))
    }

    /// Shares data with `self` but drops the graph.
    pub fn detach(&self) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: self.0.shape.clone(),
            data: self.0.data.clone(),
            parents: Vec::new(),
            backward: None,
            requires_grad: false,
        }))
    }

    // ---- inspection ------------------------------------------------------

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.0.data[0]
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.as_ref().clone()
    }

    pub fn is_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    // ---- autodiff --------------------------------------------------------

    /// Reverse-mode sweep from `self`, seeded with ones.
    ///
    /// Returns gradients for every reachable tensor that requires grad. The
    /// returned gradients are graph tensors themselves; differentiating one
    /// of them again (second-order, as the R1 penalty does) just works.
    pub fn backward(&self) -> Gradients<T> {
        let order = self.topo_order();
        let mut grads: BTreeMap<u64, Tensor<T>> = BTreeMap::new();
        grads.insert(self.0.id, Tensor::ones(self.shape()));

        for node in order.iter().rev() {
            let Some(grad) = grads.get(&node.0.id).cloned() else {
                continue;
            };
            let Some(back) = node.0.backward.as_ref() else {
                continue;
            };
            let parent_grads = back(&grad);
            debug_assert_eq!(parent_grads.len(), node.0.parents.len());
            for (parent, pg) in node.0.parents.iter().zip(parent_grads) {
                if !parent.0.requires_grad {
                    continue;
                }
                let Some(pg) = pg else { continue };
                debug_assert_eq!(pg.shape(), parent.shape(), "bad grad shape");
                grads
                    .entry(parent.0.id)
                    .and_modify(|acc| *acc = acc.add(&pg))
                    .or_insert(pg);
            }
        }
        Gradients { map: grads }
    }

    /// Post-order over the requires-grad subgraph (iterative; graphs are deep
    /// enough during double-backward that recursion would be risky).
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: BTreeSet<u64> = BTreeSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = Vec::new();
        if self.0.requires_grad {
            stack.push((self.clone(), 0));
            visited.insert(self.0.id);
        }
        while let Some((node, child)) = stack.pop() {
            if child < node.0.parents.len() {
                stack.push((node.clone(), child + 1));
                let parent = &node.0.parents[child];
                if parent.0.requires_grad && visited.insert(parent.0.id) {
                    stack.push((parent.clone(), 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

/// Result of a backward sweep: tensor id -> gradient.
pub struct Gradients<T: Element> {
    map: BTreeMap<u64, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        self.map.get(&t.id())
    }

    /// Gradient of a tensor, defaulting to zeros when it never contributed.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Tensor<T> {
        self.map
            .get(&t.id())
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(t.shape()))
    }
}

pub(crate) fn same_shape<T: Element>(a: &Tensor<T>, b: &Tensor<T>, what: &str) {
    assert_eq!(a.shape(), b.shape(), "{what}: shape mismatch");
}
