//! Finite-difference gradient checking.
//!
//! Analytic gradients from [`Graph::backward`] are compared with central
//! differences `(f(x + h') - f(x - h')) / 2h'`, where `h' = h (|x| + 1)`.
//! The per-element error is `|a - n| / max(1e-8, |a| + |n|)`.
//!
//! Through a deep model the plain difference runs out of precision: a
//! weight behind a barely-active ReLU can have a gradient near 1e-8, far
//! below what a step of 1e-5 resolves against roundoff in `f`. For those
//! checks [`Stencil::Ladder`] takes central differences over a ladder of
//! steps and trusts the pair of neighbouring rungs that agree best. Large
//! steps give precision on tiny slopes, small steps stay clear of nearby
//! ReLU kinks and strong curvature, and the choice never looks at the
//! analytic value.

use super::array::Array;
use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

const DENOM_FLOOR: f64 = 1e-8;

/// How the numeric derivative is formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// One central difference with step `h (|x| + 1)`.
    Central,
    /// Central differences at steps `h (|x| + 1) / 10^i` for `i < 7`; the
    /// adjacent pair that agree most closely are Richardson-combined.
    Ladder,
}

const LADDER_RUNGS: usize = 7;
const LADDER_RATIO: f64 = 10.0;

/// Numeric derivative of `eval` at `x0`.
pub fn numeric_derivative(mut eval: impl FnMut(f64) -> Result<f64>, x0: f64, h: f64, stencil: Stencil) -> Result<f64> {
    numeric_derivative_terms(|x| eval(x).map(|v| vec![v]), x0, h, stencil)
}

/// Numeric derivative of a sum of terms, differenced term by term so that
/// terms the perturbation does not touch cancel exactly.
pub fn numeric_derivative_terms(
    mut eval: impl FnMut(f64) -> Result<Vec<f64>>,
    x0: f64,
    h: f64,
    stencil: Stencil,
) -> Result<f64> {
    let step = h * (x0.abs() + 1.0);
    match stencil {
        Stencil::Central => central(&mut eval, x0, step).map(|(d, _)| d),
        Stencil::Ladder => {
            let mut rungs = Vec::with_capacity(LADDER_RUNGS);
            let mut s = step;
            for _ in 0..LADDER_RUNGS {
                let (d, magnitude) = central(&mut eval, x0, s)?;
                rungs.push((s, d, magnitude));
                s /= LADDER_RATIO;
            }
            // disagreement between neighbours, plus the roundoff the smaller
            // step can carry, so noisy rungs cannot agree by accident
            let score = |i: usize| {
                let (_, d0, _) = rungs[i];
                let (s1, d1, m1) = rungs[i + 1];
                (d0 - d1).abs() + 4.0 * f64::EPSILON * m1 / s1
            };
            let i = (0..LADDER_RUNGS - 1)
                .min_by(|&a, &b| score(a).total_cmp(&score(b)))
                .unwrap_or(0);
            // second-order error: one Richardson step on the chosen pair
            let r2 = LADDER_RATIO * LADDER_RATIO;
            Ok((r2 * rungs[i + 1].1 - rungs[i].1) / (r2 - 1.0))
        }
    }
}

/// Central difference and the total magnitude of the terms involved.
fn central(eval: &mut impl FnMut(f64) -> Result<Vec<f64>>, x0: f64, step: f64) -> Result<(f64, f64)> {
    let plus = eval(x0 + step)?;
    let minus = eval(x0 - step)?;
    let diff: f64 = plus.iter().zip(&minus).map(|(p, m)| p - m).sum();
    let magnitude: f64 = plus.iter().map(|p| p.abs()).sum();
    Ok((diff / (2.0 * step), magnitude))
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstEntry {
    /// Input (or parameter) index.
    pub input: usize,
    /// Flat element index within that input.
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub tol: f64,
    pub checked: usize,
    pub worst: Option<WorstEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / DENOM_FLOOR.max(analytic.abs() + numeric.abs())
}

struct Tracker {
    max: f64,
    worst: Option<WorstEntry>,
    checked: usize,
}

impl Tracker {
    fn new() -> Self {
        Tracker {
            max: 0.0,
            worst: None,
            checked: 0,
        }
    }

    fn record(&mut self, input: usize, element: usize, analytic: f64, numeric: f64) {
        let e = relative_error(analytic, numeric);
        self.checked += 1;
        if e > self.max || self.worst.is_none() {
            self.max = self.max.max(e);
            self.worst = Some(WorstEntry {
                input,
                element,
                analytic,
                numeric,
            });
        }
    }

    fn finish(self, tol: f64) -> GradCheckReport {
        GradCheckReport {
            max_rel_err: self.max,
            tol,
            checked: self.checked,
            worst: self.worst,
        }
    }
}

/// The terms of a scalar or vector root; a vector root stands for its sum.
fn eval_terms(g: &Graph, root: NodeId) -> Result<Vec<f64>> {
    let v = g.value(root);
    if !(v.is_scalar() || v.is_vector()) {
        return Err(Error::NotScalar(v.shape().to_vec()));
    }
    if !v.all_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    Ok(v.data().to_vec())
}

fn eval_scalar(g: &Graph, root: NodeId) -> Result<f64> {
    let v = g.value(root);
    if !v.is_scalar() {
        return Err(Error::NotScalar(v.shape().to_vec()));
    }
    let x = v.item();
    if !x.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    Ok(x)
}

/// Check `f` at `point`, differentiating w.r.t. every element of every input.
pub fn grad_check<F>(f: F, point: &[Array], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(Error::InvalidInput("grad_check step must be positive".into()));
    }
    let run = |inputs: &[Array], differentiate: bool| -> Result<(Graph, Vec<NodeId>, NodeId)> {
        let mut g = Graph::new();
        let ids = inputs
            .iter()
            .map(|a| {
                if differentiate {
                    g.variable(a.clone())
                } else {
                    g.constant(a.clone())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let root = f(&mut g, &ids)?;
        Ok((g, ids, root))
    };

    let (mut g, ids, root) = run(point, true)?;
    eval_scalar(&g, root)?;
    g.backward(root)?;
    let analytic: Vec<Array> = ids
        .iter()
        .zip(point)
        .map(|(&id, p)| g.grad(id).cloned().unwrap_or_else(|| Array::zeros(p.shape())))
        .collect();

    let mut tracker = Tracker::new();
    let mut work = point.to_vec();
    for (i, a) in analytic.iter().enumerate() {
        for e in 0..a.len() {
            let x0 = point[i].data()[e];
            let numeric = numeric_derivative(
                |x| {
                    work[i].data_mut()[e] = x;
                    let (g, _, r) = run(&work, false)?;
                    eval_scalar(&g, r)
                },
                x0,
                h,
                Stencil::Central,
            )?;
            work[i].data_mut()[e] = x0;
            tracker.record(i, e, a.data()[e], numeric);
        }
    }
    Ok(tracker.finish(tol))
}

/// Check a scalar function of a whole parameter store with plain central
/// differences.
///
/// `select` restricts which parameters are perturbed; the analytic gradient
/// comes from the bound parameter nodes of one backward pass.
pub fn grad_check_params<F>(
    store: &ParamStore,
    f: F,
    select: impl Fn(ParamId) -> bool,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    grad_check_params_with(store, f, select, h, tol, Stencil::Central)
}

/// [`grad_check_params`] with a chosen stencil. `f` may return a vector of
/// terms; the function checked is their sum.
pub fn grad_check_params_with<F>(
    store: &ParamStore,
    f: F,
    select: impl Fn(ParamId) -> bool,
    h: f64,
    tol: f64,
    stencil: Stencil,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<NodeId>,
{
    if h <= 0.0 {
        return Err(Error::InvalidInput("grad_check step must be positive".into()));
    }
    let mut g = Graph::new();
    let terms = f(&mut g, store)?;
    eval_terms(&g, terms)?;
    let root = if g.value(terms).is_scalar() { terms } else { g.sum(terms)? };
    g.backward(root)?;
    let analytic = g.param_grads();

    let mut work = store.clone();
    let mut tracker = Tracker::new();
    for pid in store.ids().filter(|&p| select(p)) {
        let a = analytic
            .iter()
            .find(|(p, _)| *p == pid)
            .map(|(_, a)| a.clone())
            .unwrap_or_else(|| Array::zeros(store.value(pid).shape()));
        for e in 0..a.len() {
            let x0 = store.value(pid).data()[e];
            let numeric = numeric_derivative_terms(
                |x| {
                    work.value_mut(pid).data_mut()[e] = x;
                    let mut g = Graph::new();
                    let r = f(&mut g, &work)?;
                    eval_terms(&g, r)
                },
                x0,
                h,
                stencil,
            )?;
            work.value_mut(pid).data_mut()[e] = x0;
            tracker.record(pid.index(), e, a.data()[e], numeric);
        }
    }
    Ok(tracker.finish(tol))
}
