//! Limited-memory BFGS with a backtracking Armijo line search.
//!
//! Every accepted step strictly decreases the objective, so the recorded
//! objective trace is monotonically non-increasing.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once `‖g‖₂ ≤ grad_tol · max(1, ‖g₀‖₂)`.
    pub grad_tol: f64,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 10, max_iter: 500, grad_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    /// The line search could no longer decrease the objective.
    NoProgress,
    MaxIterations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub objective: f64,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub reason: StopReason,
}

impl LbfgsResult {
    pub fn converged(&self) -> bool {
        self.reason != StopReason::MaxIterations
    }
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    math::sqrt(dot(a, a))
}

/// Minimizes `f`, which returns the objective and writes the gradient into
/// its second argument, starting from `x0`.
pub fn minimize<F>(mut f: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let non_finite = |x: &[f64], it: usize, what: &str| Error::Solver {
        message: format!("non-finite {what} at iteration {it}"),
        iterate: x.to_vec(),
    };
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(non_finite(&x, 0, "objective or gradient"));
    }
    let g0 = norm(&g);
    let tol = cfg.grad_tol * g0.max(1.0);
    let mut trace = vec![TraceEntry { iteration: 0, objective: fx, grad_norm: g0 }];
    if g0 <= tol || g0 == 0.0 {
        return Ok(LbfgsResult { x, objective: fx, trace, iterations: 0, reason: StopReason::GradientTolerance });
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut alpha_buf = vec![0.0; cfg.memory.max(1)];
    let mut stalls = 0;

    for it in 1..=cfg.max_iter {
        // Two-loop recursion: d = −H·g.
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_buf[k] = a;
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (alpha_buf[k] - b) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = dot(&g, &d);
        }

        let mut step = if history.is_empty() { (1.0 / norm(&d)).min(1.0) } else { 1.0 };
        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..MAX_BACKTRACKS {
            x_new.iter_mut().zip(&x).zip(&d).for_each(|((xn, xi), di)| *xn = xi + step * di);
            f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + ARMIJO_C1 * step * slope && f_new < fx {
                accepted = true;
                break;
            }
            let shrink = if f_new.is_finite() {
                let denom = 2.0 * (f_new - fx - slope * step);
                if denom > 0.0 { (-slope * step * step / denom) / step } else { 0.5 }
            } else {
                0.1
            };
            step *= shrink.clamp(0.1, 0.5);
        }
        if !accepted {
            return Ok(LbfgsResult { x, objective: fx, trace, iterations: it - 1, reason: StopReason::NoProgress });
        }
        if g_new.iter().any(|v| !v.is_finite()) {
            return Err(non_finite(&x_new, it, "gradient"));
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            if cfg.memory > 0 {
                history.push_back((s, y, 1.0 / sy));
            }
        }

        let decrease = fx - f_new;
        core::mem::swap(&mut x, &mut x_new);
        core::mem::swap(&mut g, &mut g_new);
        fx = f_new;
        let gn = norm(&g);
        trace.push(TraceEntry { iteration: it, objective: fx, grad_norm: gn });

        if gn <= tol {
            return Ok(LbfgsResult { x, objective: fx, trace, iterations: it, reason: StopReason::GradientTolerance });
        }
        stalls = if decrease <= 4.0 * f64::EPSILON * fx.abs() { stalls + 1 } else { 0 };
        if stalls >= 3 {
            return Ok(LbfgsResult { x, objective: fx, trace, iterations: it, reason: StopReason::NoProgress });
        }
    }
    let iterations = cfg.max_iter;
    Ok(LbfgsResult { x, objective: fx, trace, iterations, reason: StopReason::MaxIterations })
}
