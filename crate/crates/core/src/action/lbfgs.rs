//! Preconditioned limited-memory BFGS with projected Armijo backtracking.

use std::collections::VecDeque;

use crate::{Error, Result, Scalar};

pub(crate) struct Settings<T> {
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: T,
}

pub(crate) struct Outcome<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub evaluations: usize,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn weighted<T: Scalar>(a: &[T], w: &[T], b: &[T]) -> T {
    a.iter().zip(w).zip(b).map(|((&x, &p), &y)| x * p * y).sum()
}

struct Memory<T> {
    cap: usize,
    pairs: VecDeque<(Vec<T>, Vec<T>, T)>,
}

impl<T: Scalar> Memory<T> {
    fn push(&mut self, s: Vec<T>, y: Vec<T>) {
        let sy = dot(&s, &y);
        let scale = (dot(&s, &s) * dot(&y, &y)).sqrt();
        if !(sy > T::lit(1e-12) * scale) {
            return;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, T::one() / sy));
    }

    /// `−H g` by the two-loop recursion with `H₀ = γ·diag(precond)`.
    fn direction(&self, g: &[T], precond: &[T]) -> Vec<T> {
        let mut q = g.to_vec();
        let mut alpha = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = *rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, &yi)| *qi = *qi - a * yi);
            alpha.push(a);
        }
        let gamma = match self.pairs.back() {
            Some((s, y, _)) => {
                let ypy = weighted(y, precond, y);
                if ypy > T::zero() {
                    dot(s, y) / ypy
                } else {
                    T::one()
                }
            }
            None => T::one(),
        };
        let mut r: Vec<T> = q.iter().zip(precond).map(|(&qi, &p)| gamma * p * qi).collect();
        for ((s, y, rho), a) in self.pairs.iter().zip(alpha.into_iter().rev()) {
            let b = *rho * dot(y, &r);
            r.iter_mut().zip(s).for_each(|(ri, &si)| *ri = *ri + (a - b) * si);
        }
        r.iter_mut().for_each(|v| *v = -*v);
        r
    }
}

/// Minimizes `eval` from `x0`. `project` maps trial points into the feasible
/// set; `accepted(iter, x, f, step)` is called after every accepted iterate,
/// whose evaluation is always the most recent call to `eval`.
pub(crate) fn minimize<T: Scalar>(
    x0: Vec<T>,
    precond: &[T],
    settings: &Settings<T>,
    project: &dyn Fn(&mut [T]),
    eval: &mut dyn FnMut(&[T]) -> Result<(T, Vec<T>)>,
    accepted: &mut dyn FnMut(usize, &[T], T, T) -> Result<()>,
) -> Result<Outcome<T>> {
    let mut x = x0;
    project(&mut x);
    let (mut f, mut g) = eval(&x)?;
    let mut evaluations = 1;
    let mut memory = Memory {
        cap: settings.memory.max(1),
        pairs: VecDeque::new(),
    };
    let mut iterations = 0;
    let mut flat = 0;
    while iterations < settings.max_iters {
        let gpg = weighted(&g, precond, &g);
        if !(gpg > settings.grad_tol * settings.grad_tol * f.abs().max(T::min_positive_value())) {
            break;
        }
        let mut d = memory.direction(&g, precond);
        if !(dot(&d, &g) < T::zero()) {
            memory.pairs.clear();
            d = memory.direction(&g, precond);
        }
        let mut step = T::one();
        let mut next = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut trial: Vec<T> = x.iter().zip(&d).map(|(&xi, &di)| xi + step * di).collect();
            project(&mut trial);
            let moved: Vec<T> = trial.iter().zip(&x).map(|(&a, &b)| a - b).collect();
            let slope = dot(&g, &moved);
            evaluations += 1;
            match eval(&trial) {
                Ok((ft, gt)) if ft.is_finite() && ft <= f + T::lit(ARMIJO) * slope => {
                    next = Some((trial, ft, gt, moved));
                    break;
                }
                Ok(_) | Err(Error::NonFinite { .. }) => step = step * T::lit(0.5),
                Err(e) => return Err(e),
            }
        }
        let Some((xn, fnew, gn, s)) = next else {
            if memory.pairs.is_empty() {
                break;
            }
            memory.pairs.clear();
            continue;
        };
        let y: Vec<T> = gn.iter().zip(&g).map(|(&a, &b)| a - b).collect();
        memory.push(s, y);
        let decrease = f - fnew;
        x = xn;
        f = fnew;
        g = gn;
        iterations += 1;
        accepted(iterations, &x, f, step)?;
        if decrease <= T::lit(1e-14) * f.abs() {
            flat += 1;
            if flat >= 3 {
                break;
            }
        } else {
            flat = 0;
        }
    }
    Ok(Outcome {
        x,
        iterations,
        evaluations,
    })
}
