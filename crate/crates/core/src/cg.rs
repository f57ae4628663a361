//! Nonlinear conjugate gradient (Polak-Ribière+) with a strong-Wolfe line
//! search.
//!
//! The objective may report a point as infeasible by returning `Ok(None)`;
//! the line search then shrinks the step toward the last feasible point.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgConfig {
    pub max_iter: usize,
    /// Stop when `‖g‖ < gtol · ‖g₀‖`.
    pub gtol: f64,
    pub c1: f64,
    pub c2: f64,
    /// Restart period in iterations; `None` uses `10 × #parameters`.
    pub restart_every: Option<usize>,
    pub max_line_search: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            gtol: 1e-6,
            c1: 1e-4,
            c2: 0.1,
            restart_every: None,
            max_line_search: 30,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    MaxIter,
    GradientTolerance,
    LineSearchFailure,
}

#[derive(Debug, Clone)]
pub struct CgReport {
    /// Best point encountered.
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub history: Vec<f64>,
    pub line_search_failures: usize,
    pub stop: StopReason,
}

/// `f(x)` and `∇f(x)`, or `None` at an infeasible point.
pub type Evaluation = Option<(f64, Vec<f64>)>;

#[derive(Clone)]
struct Point {
    alpha: f64,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

struct LineSearch<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    cfg: &'a CgConfig,
    evaluations: usize,
    /// Best sufficient-decrease point seen, as a fallback.
    best: Option<Point>,
}

impl<F> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    fn eval(&mut self, alpha: f64) -> Result<Option<Point>> {
        self.evaluations += 1;
        let trial: Vec<f64> = self.x.iter().zip(self.dir).map(|(x, d)| x + alpha * d).collect();
        let Some((f, g)) = (self.objective)(&trial)? else {
            return Ok(None);
        };
        if !f.is_finite() {
            return Ok(None);
        }
        let slope = dot(&g, self.dir);
        let p = Point { alpha, f, g, slope };
        if self.armijo(&p) && self.best.as_ref().is_none_or(|b| p.f < b.f) {
            self.best = Some(p.clone());
        }
        Ok(Some(p))
    }

    fn armijo(&self, p: &Point) -> bool {
        p.f <= self.f0 + self.cfg.c1 * p.alpha * self.slope0
    }

    fn curvature(&self, p: &Point) -> bool {
        p.slope.abs() <= -self.cfg.c2 * self.slope0
    }

    fn search(&mut self, alpha0: f64) -> Result<Option<Point>> {
        let origin = Point { alpha: 0.0, f: self.f0, g: Vec::new(), slope: self.slope0 };
        let mut prev = origin;
        let mut alpha = alpha0;
        let mut infeasible_hi: Option<f64> = None;
        for i in 0..self.cfg.max_line_search {
            let Some(p) = self.eval(alpha)? else {
                infeasible_hi = Some(alpha);
                alpha = prev.alpha + 0.5 * (alpha - prev.alpha);
                continue;
            };
            if !self.armijo(&p) || (i > 0 && p.f >= prev.f) {
                return self.zoom(prev, p);
            }
            if self.curvature(&p) {
                return Ok(Some(p));
            }
            if p.slope >= 0.0 {
                return self.zoom(p, prev);
            }
            let next = match infeasible_hi {
                Some(hi) => p.alpha + 0.5 * (hi - p.alpha),
                None => 2.0 * p.alpha,
            };
            prev = p;
            alpha = next;
        }
        Ok(self.best.take())
    }

    fn zoom(&mut self, mut lo: Point, mut hi: Point) -> Result<Option<Point>> {
        for _ in 0..self.cfg.max_line_search {
            let alpha = interpolate(&lo, &hi);
            let Some(p) = self.eval(alpha)? else {
                hi = Point { alpha, f: f64::INFINITY, g: Vec::new(), slope: f64::NAN };
                continue;
            };
            if !self.armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(&p) {
                    return Ok(Some(p));
                }
                if p.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
            if (hi.alpha - lo.alpha).abs() < 1e-16 * lo.alpha.abs().max(1.0) {
                break;
            }
        }
        Ok(self.best.take())
    }
}

/// Safeguarded cubic interpolation between two bracket ends, falling back to
/// bisection.
fn interpolate(lo: &Point, hi: &Point) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !hi.f.is_finite() || !hi.slope.is_finite() || !lo.slope.is_finite() {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let t = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (left, right) = (a.min(b), a.max(b));
    let margin = 0.1 * (right - left);
    if !t.is_finite() || t < left + margin || t > right - margin {
        mid
    } else {
        t
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimizes `objective` from `x0`. `on_iter` sees every accepted iterate.
pub fn minimize<F, C>(
    mut objective: F,
    x0: Vec<f64>,
    cfg: &CgConfig,
    mut on_iter: C,
) -> Result<CgReport>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
    C: FnMut(usize, &[f64], f64),
{
    let p = x0.len();
    let restart_every = cfg.restart_every.unwrap_or(10 * p.max(1));
    let (mut f, mut g) = objective(&x0)?
        .ok_or_else(|| Error::BadParameters("initial point is infeasible".into()))?;
    let mut evaluations = 1;
    let mut x = x0;
    let mut history = vec![f];
    let g0 = norm(&g);
    let mut dir: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut since_restart = 0;
    let mut prev_alpha = if g0 > 0.0 { 1.0 / g0 } else { 1.0 };
    let mut prev_slope: Option<f64> = None;
    let mut line_search_failures = 0;
    let mut iterations = 0;
    let mut stop = StopReason::MaxIter;

    while iterations < cfg.max_iter {
        let gn = norm(&g);
        if gn == 0.0 || gn < cfg.gtol * g0 {
            stop = StopReason::GradientTolerance;
            break;
        }
        let mut slope = dot(&g, &dir);
        let mut restarted = since_restart == 0;
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = -gn * gn;
            restarted = true;
        }
        let alpha0 = match prev_slope {
            Some(ps) => (prev_alpha * (ps / slope).min(10.0)).max(f64::MIN_POSITIVE),
            None => prev_alpha,
        };
        let mut ls = LineSearch {
            objective: &mut objective,
            x: &x,
            dir: &dir,
            f0: f,
            slope0: slope,
            cfg,
            evaluations: 0,
            best: None,
        };
        let found = ls.search(alpha0)?;
        evaluations += ls.evaluations;
        let Some(step) = found else {
            line_search_failures += 1;
            if restarted {
                stop = StopReason::LineSearchFailure;
                break;
            }
            // Retry along steepest descent.
            dir = g.iter().map(|v| -v).collect();
            since_restart = 0;
            prev_slope = None;
            continue;
        };
        iterations += 1;
        for (xi, di) in x.iter_mut().zip(&dir) {
            *xi += step.alpha * di;
        }
        since_restart += 1;
        let reset = since_restart >= restart_every;
        let beta = if reset {
            0.0
        } else {
            let num: f64 = step.g.iter().zip(&g).map(|(gn, go)| gn * (gn - go)).sum();
            (num / dot(&g, &g)).max(0.0)
        };
        if reset {
            since_restart = 0;
        }
        dir = step.g.iter().zip(&dir).map(|(gi, di)| -gi + beta * di).collect();
        prev_alpha = step.alpha;
        prev_slope = Some(slope);
        f = step.f;
        g = step.g;
        history.push(f);
        on_iter(iterations, &x, f);
    }
    Ok(CgReport { x, f, iterations, evaluations, history, line_search_failures, stop })
}
