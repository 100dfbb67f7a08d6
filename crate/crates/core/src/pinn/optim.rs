//! Adam with a staircase schedule and L-BFGS with a backtracking Wolfe
//! line search.

use std::collections::VecDeque;

/// `lr0 · decay^⌊iter / interval⌋`.
pub fn staircase_lr(lr0: f64, decay: f64, interval: usize, iter: usize) -> f64 {
    lr0 * decay.powi((iter / interval.max(1)) as i32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            x[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub max_iters: usize,
    pub history: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub grad_tol: f64,
    pub max_line_search: usize,
    /// After a Wolfe point, try the secant minimizer of the directional
    /// derivative and keep it when it lowers the loss.
    pub secant_refine: bool,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            history: 20,
            c1: 1e-4,
            c2: 0.9,
            grad_tol: 1e-10,
            max_line_search: 30,
            secant_refine: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    MaxIters,
    GradientFloor,
    /// No decrease even along the steepest-descent direction.
    Stalled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome {
    pub iterations: usize,
    pub fallbacks: usize,
    pub value: f64,
    pub grad_norm: f64,
    pub stop: Stop,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two-loop recursion: `−H·g` from the stored curvature pairs.
fn direction(g: &[f64], s: &VecDeque<Vec<f64>>, y: &VecDeque<Vec<f64>>) -> Vec<f64> {
    let mut q: Vec<f64> = g.iter().map(|v| -v).collect();
    let k = s.len();
    let mut alpha = vec![0.0; k];
    let rho: Vec<f64> = (0..k).map(|i| 1.0 / dot(&y[i], &s[i])).collect();
    for i in (0..k).rev() {
        alpha[i] = rho[i] * dot(&s[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y[i]) {
            *qj -= alpha[i] * yj;
        }
    }
    if k > 0 {
        let gamma = dot(&s[k - 1], &y[k - 1]) / dot(&y[k - 1], &y[k - 1]);
        for v in q.iter_mut() {
            *v *= gamma;
        }
    }
    for i in 0..k {
        let beta = rho[i] * dot(&y[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s[i]) {
            *qj += (alpha[i] - beta) * sj;
        }
    }
    q
}

struct Trial<T> {
    step: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    extra: T,
}

/// Weak-Wolfe search by bracketing: shrink with a safeguarded quadratic fit
/// while sufficient decrease fails, grow (or bisect) while the curvature
/// condition fails. Non-finite trial values count as insufficient decrease.
#[allow(clippy::too_many_arguments)]
fn line_search<T, E, F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    step0: f64,
    cfg: &LbfgsConfig,
    armijo_only: bool,
) -> Result<Option<Trial<T>>, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, T), E>,
{
    let dg0 = dot(g0, d);
    let mut lo = 0.0;
    let mut hi = f64::INFINITY;
    let mut step = step0;
    let mut best: Option<Trial<T>> = None;
    for _ in 0..cfg.max_line_search {
        let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + step * b).collect();
        if xt == x {
            break;
        }
        let (ft, gt, extra) = f(&xt)?;
        let armijo = ft.is_finite() && ft <= f0 + cfg.c1 * step * dg0;
        if !armijo {
            hi = step;
            let denom = 2.0 * (ft - f0 - step * dg0);
            let quad = if ft.is_finite() && denom > 0.0 {
                -dg0 * step * step / denom
            } else {
                0.5 * step
            };
            let lo_guard = lo + 0.1 * (step - lo);
            let hi_guard = lo + 0.5 * (step - lo);
            step = quad.clamp(lo_guard, hi_guard);
            continue;
        }
        let dgt = dot(&gt, d);
        let trial = Trial {
            step,
            x: xt,
            f: ft,
            g: gt,
            extra,
        };
        if armijo_only {
            return Ok(Some(trial));
        }
        if dgt >= cfg.c2 * dg0 {
            return refine(f, x, d, dg0, trial, cfg);
        }
        lo = step;
        if best.as_ref().is_none_or(|b| trial.f < b.f) {
            best = Some(trial);
        }
        step = if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * step
        };
    }
    // Out of trials: a point with sufficient decrease is still progress.
    Ok(best)
}

fn refine<T, E, F>(
    f: &mut F,
    x: &[f64],
    d: &[f64],
    dg0: f64,
    trial: Trial<T>,
    cfg: &LbfgsConfig,
) -> Result<Option<Trial<T>>, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, T), E>,
{
    let dgt = dot(&trial.g, d);
    let denom = dg0 - dgt;
    if !cfg.secant_refine || denom >= 0.0 {
        return Ok(Some(trial));
    }
    let step = trial.step * dg0 / denom;
    if !step.is_finite() || step <= 0.0 || (step - trial.step).abs() <= 1e-10 * trial.step {
        return Ok(Some(trial));
    }
    let xs: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + step * b).collect();
    let (fs, gs, extra) = f(&xs)?;
    if fs.is_finite() && fs < trial.f {
        return Ok(Some(Trial {
            step,
            x: xs,
            f: fs,
            g: gs,
            extra,
        }));
    }
    Ok(Some(trial))
}

/// Minimizes `f` from `x` in place. `f` returns the value, gradient and a
/// payload; `on_iter` sees the iteration index, accepted step, value and
/// payload of every accepted point.
pub fn lbfgs<T, E, F, C>(
    x: &mut Vec<f64>,
    mut f: F,
    cfg: &LbfgsConfig,
    mut on_iter: C,
) -> Result<LbfgsOutcome, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>, T), E>,
    C: FnMut(usize, f64, f64, &T) -> Result<(), E>,
{
    let (mut fx, mut g, _) = f(x)?;
    let mut s_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut y_hist: VecDeque<Vec<f64>> = VecDeque::new();
    let mut fallbacks = 0;
    let mut it = 0;
    let stop = loop {
        if norm(&g) < cfg.grad_tol {
            break Stop::GradientFloor;
        }
        if it >= cfg.max_iters {
            break Stop::MaxIters;
        }
        let mut d = direction(&g, &s_hist, &y_hist);
        let descent = dot(&d, &g) < 0.0 && d.iter().all(|v| v.is_finite());
        let mut trial = None;
        if descent {
            let step0 = if s_hist.is_empty() {
                1.0 / norm(&g).max(1.0)
            } else {
                1.0
            };
            trial = line_search(&mut f, x, fx, &g, &d, step0, cfg, false)?;
        }
        if trial.is_none() {
            fallbacks += 1;
            s_hist.clear();
            y_hist.clear();
            d = g.iter().map(|v| -v).collect();
            let step0 = 1.0 / norm(&g).max(1.0);
            trial = line_search(&mut f, x, fx, &g, &d, step0, cfg, true)?;
        }
        let Some(t) = trial else {
            break Stop::Stalled;
        };
        let s: Vec<f64> = t.x.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = t.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if s_hist.len() == cfg.history.max(1) {
                s_hist.pop_front();
                y_hist.pop_front();
            }
            s_hist.push_back(s);
            y_hist.push_back(y);
        }
        *x = t.x;
        fx = t.f;
        g = t.g;
        on_iter(it, t.step, fx, &t.extra)?;
        it += 1;
    };
    Ok(LbfgsOutcome {
        iterations: it,
        fallbacks,
        value: fx,
        grad_norm: norm(&g),
        stop,
    })
}
