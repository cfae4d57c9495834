//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizerConfig {
    pub max_iterations: usize,
    /// Stop once ‖g‖ ≤ grad_reduction · ‖g₀‖.
    pub grad_reduction: f64,
    pub memory: usize,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            grad_reduction: 1e-3,
            memory: 10,
        }
    }
}

impl MinimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.grad_reduction > 0.0 && self.grad_reduction < 1.0) {
            return Err(invalid("grad_reduction", "must lie in (0, 1)"));
        }
        if self.memory == 0 {
            return Err(invalid("memory", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub f0: f64,
    pub grad_norm: f64,
    pub grad_norm0: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    /// Cost after every accepted iteration, starting with the initial cost.
    pub history: Vec<f64>,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_TRIALS: usize = 20;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Minimises `fg`, which returns the value and gradient at a point.
pub fn minimize<F>(mut fg: F, x0: Vec<f64>, cfg: &MinimizerConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    cfg.validate()?;
    let mut x = x0;
    let (mut f, mut g) = fg(&x)?;
    let mut evaluations = 1;
    let f0 = f;
    let g0 = norm(&g);
    let mut history = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = g0 == 0.0;
    let mut line_search_failed = false;

    while !converged && iterations < cfg.max_iterations {
        let d = direction(&g, &pairs);
        let mut slope = dot(&g, &d);
        let d = if slope < 0.0 {
            d
        } else {
            pairs.clear();
            slope = -dot(&g, &g);
            g.iter().map(|v| -v).collect()
        };
        let alpha0 = if pairs.is_empty() && iterations == 0 {
            (1.0 / norm(&d)).min(1.0)
        } else {
            1.0
        };
        let ls = line_search(&mut fg, &x, f, slope, &d, alpha0)?;
        evaluations += ls.evaluations;
        let Some((alpha, fa, ga)) = ls.accepted else {
            line_search_failed = true;
            break;
        };
        let s: Vec<f64> = d.iter().map(|v| alpha * v).collect();
        let y: Vec<f64> = ga.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        for (xi, si) in x.iter_mut().zip(&s) {
            *xi += si;
        }
        f = fa;
        g = ga;
        iterations += 1;
        history.push(f);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        converged = norm(&g) <= cfg.grad_reduction * g0;
    }
    Ok(LbfgsResult {
        grad_norm: norm(&g),
        x,
        f,
        f0,
        grad_norm0: g0,
        iterations,
        evaluations,
        converged,
        line_search_failed,
        history,
    })
}

/// Two-loop recursion: returns −H g.
fn direction(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

struct LineSearch {
    accepted: Option<(f64, f64, Vec<f64>)>,
    evaluations: usize,
}

struct Trial {
    alpha: f64,
    f: f64,
    slope: f64,
    g: Vec<f64>,
}

fn line_search<F>(fg: &mut F, x: &[f64], f0: f64, slope0: f64, d: &[f64], alpha0: f64) -> Result<LineSearch>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut evaluations = 0;
    let mut eval = |alpha: f64, evaluations: &mut usize| -> Result<Trial> {
        let xa: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let (f, g) = fg(&xa)?;
        *evaluations += 1;
        Ok(Trial {
            alpha,
            f,
            slope: dot(&g, d),
            g,
        })
    };
    let mut best: Option<Trial> = None;
    let keep_best = |t: &Trial, best: &mut Option<Trial>| {
        if t.f.is_finite() && t.f < f0 + C1 * t.alpha * slope0 && best.as_ref().is_none_or(|b| t.f < b.f) {
            *best = Some(Trial {
                alpha: t.alpha,
                f: t.f,
                slope: t.slope,
                g: t.g.clone(),
            });
        }
    };

    let mut lo = Trial {
        alpha: 0.0,
        f: f0,
        slope: slope0,
        g: Vec::new(),
    };
    let mut alpha = alpha0;
    let mut hi: Option<Trial> = None;
    // bracketing phase
    while evaluations < MAX_TRIALS {
        let t = eval(alpha, &mut evaluations)?;
        keep_best(&t, &mut best);
        if !t.f.is_finite() || t.f > f0 + C1 * alpha * slope0 || (t.f >= lo.f && lo.alpha > 0.0) {
            hi = Some(t);
            break;
        }
        if t.slope.abs() <= -C2 * slope0 {
            return Ok(LineSearch {
                accepted: Some((t.alpha, t.f, t.g)),
                evaluations,
            });
        }
        if t.slope >= 0.0 {
            hi = Some(lo);
            lo = t;
            break;
        }
        lo = t;
        alpha *= 2.0;
    }
    // zoom phase
    if let Some(mut hi) = hi {
        while evaluations < MAX_TRIALS {
            let a = interpolate_step(&lo, &hi);
            let t = eval(a, &mut evaluations)?;
            keep_best(&t, &mut best);
            if !t.f.is_finite() || t.f > f0 + C1 * a * slope0 || t.f >= lo.f {
                hi = t;
            } else {
                if t.slope.abs() <= -C2 * slope0 {
                    return Ok(LineSearch {
                        accepted: Some((t.alpha, t.f, t.g)),
                        evaluations,
                    });
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = t;
            }
            if (hi.alpha - lo.alpha).abs() <= 1e-14 * lo.alpha.abs().max(hi.alpha.abs()) {
                break;
            }
        }
    }
    Ok(LineSearch {
        accepted: best.map(|b| (b.alpha, b.f, b.g)),
        evaluations,
    })
}

/// Minimiser of the cubic through both ends, safeguarded to the interior
/// of the bracket.
fn interpolate_step(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let mid = 0.5 * (a + b);
    if !hi.f.is_finite() {
        return a + 0.25 * (b - a);
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let c = b - (b - a) * (hi.slope + d2 - d1) / (hi.slope - lo.slope + 2.0 * d2);
    let (lo_b, hi_b) = (a.min(b), a.max(b));
    let margin = 0.1 * (hi_b - lo_b);
    if c.is_finite() && c > lo_b + margin && c < hi_b - margin {
        c
    } else {
        mid
    }
}
