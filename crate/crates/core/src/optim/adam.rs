use crate::error::{Error, Result};
use crate::grid::{GradientBuffer, SdfGrid};
use crate::real::Real;

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
}

impl<T: Real> Default for AdamParams<T> {
    fn default() -> Self {
        Self {
            lr: T::lit(0.01),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
        }
    }
}

/// Moment estimates for every grid sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub params: AdamParams<T>,
    resolution: usize,
}

impl<T: Real> AdamState<T> {
    pub fn new(resolution: usize, params: AdamParams<T>) -> Result<Self> {
        let in_unit = |b: T| b >= T::zero() && b < T::one();
        if !in_unit(params.beta1) || !in_unit(params.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(params.lr > T::zero()) || !(params.eps > T::zero()) {
            return Err(Error::invalid("Adam learning rate and epsilon must be positive"));
        }
        let len = resolution * resolution * resolution;
        Ok(Self {
            step_count: 0,
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            params,
            resolution,
        })
    }

    /// Rebuilds state from stored moments.
    pub fn from_parts(resolution: usize, params: AdamParams<T>, step_count: u64, m: Vec<T>, v: Vec<T>) -> Result<Self> {
        let mut s = Self::new(resolution, params)?;
        if m.len() != s.m.len() || v.len() != s.v.len() {
            return Err(Error::invalid("Adam moment length does not match resolution"));
        }
        s.step_count = step_count;
        s.m = m;
        s.v = v;
        Ok(s)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }
}

/// One bias-corrected Adam update. Returns the Euclidean norm of the change
/// in grid values. A non-finite gradient leaves grid and state untouched.
pub fn adam_step<T: Real>(state: &mut AdamState<T>, grid: &mut SdfGrid<T>, grads: &GradientBuffer<T>) -> Result<T> {
    if grads.resolution() != grid.resolution() || state.resolution != grid.resolution() {
        return Err(Error::invalid("Adam state, grid and gradient shapes differ"));
    }
    if let Some(i) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(i));
    }
    let p = state.params;
    state.step_count += 1;
    let t = i32::try_from(state.step_count).unwrap_or(i32::MAX);
    let bc1 = T::one() - p.beta1.powi(t);
    let bc2 = T::one() - p.beta2.powi(t);
    let mut sq = T::zero();
    for (((x, g), m), v) in grid
        .values_mut()
        .iter_mut()
        .zip(grads.values())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = p.beta1 * *m + (T::one() - p.beta1) * *g;
        *v = p.beta2 * *v + (T::one() - p.beta2) * *g * *g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        let delta = p.lr * m_hat / (v_hat.sqrt() + p.eps);
        *x -= delta;
        sq += delta * delta;
    }
    Ok(sq.sqrt())
}
