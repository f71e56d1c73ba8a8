//! Log-barrier interior-point method for the small convex programs used here:
//! a linear objective subject to smooth convex inequalities of the form
//!
//! ```text
//! g(x) = c + Σ a_k x_k + log(α + β e^{x_v}) − Σ_m log(affine_m(x)) < 0
//! ```
//!
//! Both the max-min throughput problem and the scalarized energy/utility
//! problem have exactly this structure.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `constant + Σ coef · x[idx]`
#[derive(Debug, Clone)]
pub(crate) struct Affine<T> {
    pub constant: T,
    pub terms: Vec<(usize, T)>,
}

impl<T: Scalar> Affine<T> {
    fn eval(&self, x: &[T]) -> T {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(i, c)| acc + c * x[i])
    }
}

/// `log(alpha + beta · exp(x[var]))`
#[derive(Debug, Clone)]
pub(crate) struct LogExp<T> {
    pub var: usize,
    pub alpha: T,
    pub beta: T,
}

#[derive(Debug, Clone)]
pub(crate) struct Constraint<T> {
    pub constant: T,
    pub linear: Vec<(usize, T)>,
    pub log_exp: Option<LogExp<T>>,
    /// Each entry contributes `−log(affine(x))`.
    pub neg_logs: Vec<Affine<T>>,
}

impl<T: Scalar> Constraint<T> {
    pub fn linear(constant: T, linear: Vec<(usize, T)>) -> Self {
        Self {
            constant,
            linear,
            log_exp: None,
            neg_logs: Vec::new(),
        }
    }

    /// Constraint value, `+∞` outside the domain of the log terms.
    pub fn value(&self, x: &[T]) -> T {
        let mut v = self
            .linear
            .iter()
            .fold(self.constant, |acc, &(i, c)| acc + c * x[i]);
        if let Some(le) = &self.log_exp {
            v += (le.alpha + le.beta * x[le.var].exp()).ln();
        }
        for a in &self.neg_logs {
            let arg = a.eval(x);
            if !(arg > T::zero()) {
                return T::infinity();
            }
            v -= arg.ln();
        }
        if v.is_nan() {
            T::infinity()
        } else {
            v
        }
    }

    /// Sparse gradient (indices may repeat) and Hessian contributions.
    fn derivatives(&self, x: &[T], grad: &mut Vec<(usize, T)>, hess: &mut Vec<(usize, usize, T)>) {
        grad.clear();
        hess.clear();
        grad.extend_from_slice(&self.linear);
        if let Some(le) = &self.log_exp {
            let e = le.beta * x[le.var].exp();
            let s = e / (le.alpha + e);
            grad.push((le.var, s));
            hess.push((le.var, le.var, s * (T::one() - s)));
        }
        for a in &self.neg_logs {
            let v = a.eval(x);
            let inv = v.recip();
            for &(i, ci) in &a.terms {
                grad.push((i, -ci * inv));
                for &(j, cj) in &a.terms {
                    hess.push((i, j, ci * cj * inv * inv));
                }
            }
        }
    }
}

/// minimize cost · x subject to every constraint < 0.
#[derive(Debug, Clone)]
pub(crate) struct Problem<T> {
    pub dim: usize,
    pub cost: Vec<T>,
    pub constraints: Vec<Constraint<T>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Settings<T> {
    pub t0: T,
    pub growth: T,
    /// Stop once m / t falls below this.
    pub gap_tol: T,
    /// Centering stops when half the squared Newton decrement drops below this
    pub newton_tol: T,
    /// or when the barrier gradient is below `t · grad_tol`.
    pub grad_tol: T,
    pub max_newton: usize,
}

impl<T: Scalar> Default for Settings<T> {
    fn default() -> Self {
        Self {
            t0: T::one(),
            growth: T::lit(10.0),
            gap_tol: T::lit(1e-9),
            newton_tol: T::lit(1e-14),
            grad_tol: T::lit(1e-10),
            max_newton: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Outcome<T> {
    pub x: Vec<T>,
    /// Dual estimate 1 / (t · (−g_k)) for each constraint.
    pub multipliers: Vec<T>,
    pub newton_iterations: usize,
    pub gap: T,
}

impl<T: Scalar> Problem<T> {
    pub fn is_strictly_feasible(&self, x: &[T]) -> bool {
        self.constraints.iter().all(|c| c.value(x) < T::zero())
    }

    /// φ_t(x + step) − φ_t(x), computed term by term so the large t·cost
    /// part does not swamp the barrier differences.
    fn barrier_change(&self, t: T, x: &[T], trial: &[T], base: &[T]) -> T {
        let linear = self
            .cost
            .iter()
            .zip(trial.iter().zip(x))
            .fold(T::zero(), |acc, (&c, (&a, &b))| acc + c * (a - b));
        let mut delta = t * linear;
        for (c, &g0) in self.constraints.iter().zip(base) {
            let g = c.value(trial);
            if !(g < T::zero()) {
                return T::infinity();
            }
            delta -= (g / g0).ln();
        }
        delta
    }

    fn gradient_hessian(&self, t: T, x: &[T], grad: &mut [T], hess: &mut [T]) {
        let n = self.dim;
        for (g, &c) in grad.iter_mut().zip(&self.cost) {
            *g = t * c;
        }
        hess.iter_mut().for_each(|h| *h = T::zero());
        let mut cg = Vec::new();
        let mut ch = Vec::new();
        for c in &self.constraints {
            let slack = -c.value(x);
            c.derivatives(x, &mut cg, &mut ch);
            let inv = slack.recip();
            for &(i, gi) in &cg {
                grad[i] += gi * inv;
                for &(j, gj) in &cg {
                    hess[i * n + j] += gi * gj * inv * inv;
                }
            }
            for &(i, j, h) in &ch {
                hess[i * n + j] += h * inv;
            }
        }
    }

    /// Runs the barrier method from a strictly feasible point.
    pub fn solve(&self, x0: Vec<T>, settings: &Settings<T>) -> Result<Outcome<T>> {
        let n = self.dim;
        let m = T::from_usize(self.constraints.len()).unwrap();
        if !self.is_strictly_feasible(&x0) {
            return Err(Error::Numerical(
                "barrier start point is not strictly feasible".into(),
            ));
        }
        let mut x = x0;
        let mut t = settings.t0;
        let mut grad = vec![T::zero(); n];
        let mut hess = vec![T::zero(); n * n];
        let mut step = vec![T::zero(); n];
        let mut trial = vec![T::zero(); n];
        let mut iterations = 0;

        let mut base = vec![T::zero(); self.constraints.len()];

        loop {
            // centering
            loop {
                if iterations >= settings.max_newton {
                    return Err(Error::NonConvergence {
                        solver: "barrier method",
                        iterations,
                    });
                }
                iterations += 1;
                self.gradient_hessian(t, &x, &mut grad, &mut hess);
                let grad_norm = grad.iter().fold(T::zero(), |acc, g| acc.max(g.abs()));
                if grad_norm <= t * settings.grad_tol {
                    break;
                }
                for (s, &g) in step.iter_mut().zip(&grad) {
                    *s = -g;
                }
                if !solve_spd(&mut hess, n, &mut step) {
                    return Err(Error::Numerical("singular Newton system".into()));
                }
                let decrement = -grad
                    .iter()
                    .zip(&step)
                    .fold(T::zero(), |acc, (&g, &s)| acc + g * s);
                if decrement / T::lit(2.0) <= settings.newton_tol || !(decrement > T::zero()) {
                    break;
                }
                for (b, c) in base.iter_mut().zip(&self.constraints) {
                    *b = c.value(&x);
                }
                let mut alpha = T::one();
                let mut accepted = false;
                while alpha > T::lit(1e-12) {
                    for ((tr, &xv), &s) in trial.iter_mut().zip(&x).zip(&step) {
                        *tr = xv + alpha * s;
                    }
                    let change = self.barrier_change(t, &x, &trial, &base);
                    if change <= -T::lit(0.01) * alpha * decrement {
                        accepted = true;
                        break;
                    }
                    alpha /= T::lit(2.0);
                }
                if !accepted {
                    break;
                }
                // Tiny damped steps at a small decrement: the slacks are
                // resolved only to roundoff and the point is already centered.
                if alpha < T::lit(1e-3) && decrement < T::lit(1e-6) {
                    std::mem::swap(&mut x, &mut trial);
                    break;
                }
                std::mem::swap(&mut x, &mut trial);
            }
            if m / t <= settings.gap_tol {
                break;
            }
            t *= settings.growth;
        }

        let values: Vec<T> = self.constraints.iter().map(|c| c.value(&x)).collect();
        let multipliers = values.iter().map(|&g| (t * (-g)).recip()).collect();
        Ok(Outcome {
            x,
            multipliers,
            newton_iterations: iterations,
            gap: m / t,
        })
    }
}

/// Solves `H s = b` in place for symmetric positive (semi)definite `H`,
/// adding diagonal regularization if the plain Cholesky factorization breaks down.
pub(crate) fn solve_spd<T: Scalar>(h: &mut [T], n: usize, b: &mut [T]) -> bool {
    let scale = (0..n).map(|i| h[i * n + i].abs()).fold(T::zero(), T::max);
    let original: Vec<T> = h.to_vec();
    let mut shift = T::zero();
    for _ in 0..12 {
        h.copy_from_slice(&original);
        for i in 0..n {
            h[i * n + i] += shift;
        }
        if cholesky(h, n) {
            forward_back(h, n, b);
            return true;
        }
        shift = if shift == T::zero() {
            scale.max(T::one()) * T::epsilon() * T::lit(64.0)
        } else {
            shift * T::lit(100.0)
        };
    }
    false
}

fn cholesky<T: Scalar>(a: &mut [T], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > T::zero()) {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

fn forward_back<T: Scalar>(l: &[T], n: usize, b: &mut [T]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}
