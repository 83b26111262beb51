//! Real-valued functions on a normed space, with optional metadata.

use std::sync::Arc;

use crate::error::{check_dim, Result};
use crate::normed_space::NormedSpace;

/// A real-valued function on a finite-dimensional normed space.
///
/// Metadata is optional: `gradient` may return `None` where the function is not
/// differentiable or no analytic gradient is known, `lipschitz_bound` is a
/// declared (not estimated) constant, and `bounds` a declared range `[m, M]`.
pub trait ScalarField: Send + Sync {
    fn space(&self) -> &NormedSpace;

    /// Evaluates the function. `x.len()` must equal `self.space().dim()`.
    fn eval(&self, x: &[f64]) -> f64;

    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        None
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        None
    }

    fn try_eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.space().dim(), x.len())?;
        Ok(self.eval(x))
    }
}

macro_rules! forward_field {
    ($($ty:ty),*) => {$(
        impl<T: ScalarField + ?Sized> ScalarField for $ty {
            fn space(&self) -> &NormedSpace { (**self).space() }
            fn eval(&self, x: &[f64]) -> f64 { (**self).eval(x) }
            fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> { (**self).gradient(x) }
            fn lipschitz_bound(&self) -> Option<f64> { (**self).lipschitz_bound() }
            fn bounds(&self) -> Option<(f64, f64)> { (**self).bounds() }
        }
    )*};
}

forward_field!(&T, Box<T>, Arc<T>);

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// A field built from closures.
pub struct FnField {
    space: NormedSpace,
    f: Box<EvalFn>,
    grad: Option<Box<GradFn>>,
    lip: Option<f64>,
    bounds: Option<(f64, f64)>,
}

impl FnField {
    pub fn new(space: NormedSpace, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        FnField { space, f: Box::new(f), grad: None, lip: None, bounds: None }
    }

    pub fn with_gradient(mut self, g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Box::new(g));
        self
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.lip = Some(l);
        self
    }

    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        self.bounds = Some((lo, hi));
        self
    }
}

impl ScalarField for FnField {
    fn space(&self) -> &NormedSpace {
        &self.space
    }

    fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.grad.as_ref().map(|g| g(x))
    }

    fn lipschitz_bound(&self) -> Option<f64> {
        self.lip
    }

    fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }
}

/// Central finite-difference gradient with step `h` per coordinate.
pub fn finite_difference_gradient(f: &(impl ScalarField + ?Sized), x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f.eval(&y);
            y[i] = x[i] - h;
            let down = f.eval(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Declared gradient if available, otherwise central differences.
pub fn gradient_or_fd(f: &(impl ScalarField + ?Sized), x: &[f64]) -> Vec<f64> {
    f.gradient(x).unwrap_or_else(|| {
        let scale = x.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        finite_difference_gradient(f, x, 1e-6 * scale)
    })
}
