//! Limited-memory BFGS with a strong-Wolfe line search, plus an
//! orthant-wise mode (OWL-QN) for objectives with an L1 penalty.
//!
//! The objective callback always evaluates the *smooth* part and fills its
//! gradient; per-coordinate L1 weights, when supplied, are handled here via
//! the pseudo-gradient and orthant projection, since plain L-BFGS cannot
//! cope with the nondifferentiable term.

use std::collections::VecDeque;

#[derive(Debug, Clone)]
pub struct LbfgsConfig {
    /// Number of curvature pairs kept for the two-loop recursion.
    pub memory: usize,
    pub max_iters: usize,
    /// Convergence threshold on the infinity norm of the (pseudo)gradient.
    pub grad_tol: f64,
    /// Armijo constant.
    pub c1: f64,
    /// Curvature constant (strong Wolfe).
    pub c2: f64,
    /// Per-coordinate L1 penalties; `None` or all-zero means smooth mode.
    pub l1: Option<Vec<f64>>,
}

impl Default for LbfgsConfig {
    fn default() -> LbfgsConfig {
        LbfgsConfig {
            memory: 10,
            max_iters: 200,
            grad_tol: 1e-6,
            c1: 1e-4,
            c2: 0.9,
            l1: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    /// Final objective value, including the L1 term when one is configured.
    pub value: f64,
    /// Infinity norm of the final (pseudo)gradient.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn l1_term(x: &[f64], l1: &[f64]) -> f64 {
    x.iter().zip(l1).map(|(xi, li)| li * xi.abs()).sum()
}

/// Steepest-descent direction of `f + sum l1|x|` where it exists; at kinks
/// the one-sided derivative that allows descent, else 0.
fn pseudo_gradient(x: &[f64], grad: &[f64], l1: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(grad)
        .zip(l1)
        .map(|((&xi, &gi), &li)| {
            if li == 0.0 {
                gi
            } else if xi > 0.0 {
                gi + li
            } else if xi < 0.0 {
                gi - li
            } else if gi + li < 0.0 {
                gi + li
            } else if gi - li > 0.0 {
                gi - li
            } else {
                0.0
            }
        })
        .collect()
}

fn two_loop(
    g: &[f64],
    history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>,
) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    for qi in q.iter_mut() {
        *qi = -*qi;
    }
    q
}

/// Minimize `objective` starting at `x0`. The callback receives the point
/// and must fill the gradient buffer, returning the (smooth) value.
pub fn lbfgs_minimize<F>(mut objective: F, x0: Vec<f64>, config: &LbfgsConfig) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let l1 = config
        .l1
        .as_ref()
        .filter(|w| w.iter().any(|v| *v > 0.0))
        .cloned();
    match l1 {
        Some(l1) => owlqn(&mut objective, x0, config, &l1),
        None => {
            if n == 0 {
                return LbfgsOutcome {
                    x: x0,
                    value: 0.0,
                    grad_norm: 0.0,
                    iterations: 0,
                    converged: true,
                    line_search_failed: false,
                };
            }
            smooth_lbfgs(&mut objective, x0, config)
        }
    }
}

fn smooth_lbfgs<F>(objective: &mut F, x0: Vec<f64>, config: &LbfgsConfig) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);

    let mut best_x = x.clone();
    let mut best_f = f;

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut line_search_failed = false;

    while iterations < config.max_iters {
        if inf_norm(&g) <= config.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut d = two_loop(&g, &history);
        if dot(&d, &g) >= 0.0 {
            // Not a descent direction; fall back to steepest descent.
            history.clear();
            d = g.iter().map(|v| -v).collect();
        }

        match wolfe_search(objective, &x, f, &g, &d, config) {
            Some((x_new, f_new, g_new)) => {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 {
                    if history.len() == config.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                x = x_new;
                f = f_new;
                g = g_new;
                if f < best_f {
                    best_f = f;
                    best_x = x.clone();
                }
            }
            None => {
                line_search_failed = true;
                break;
            }
        }
    }

    if f > best_f {
        x = best_x;
        f = best_f;
        objective(&x, &mut g);
    }
    LbfgsOutcome {
        grad_norm: inf_norm(&g),
        x,
        value: f,
        iterations,
        converged,
        line_search_failed,
    }
}

/// Strong-Wolfe line search (bracket then zoom with bisection).
fn wolfe_search<F>(
    objective: &mut F,
    x: &[f64],
    f0: f64,
    g0: &[f64],
    d: &[f64],
    config: &LbfgsConfig,
) -> Option<(Vec<f64>, f64, Vec<f64>)>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x.len();
    let dphi0 = dot(g0, d);
    if dphi0 >= 0.0 {
        return None;
    }
    let mut eval = |alpha: f64| -> (f64, f64, Vec<f64>, Vec<f64>) {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect();
        let mut gt = vec![0.0; n];
        let ft = objective(&xt, &mut gt);
        let dphit = dot(&gt, d);
        (ft, dphit, xt, gt)
    };

    let mut alpha_prev = 0.0;
    let mut f_prev = f0;
    let mut alpha = 1.0;

    let mut bracket: Option<(f64, f64, f64, f64)> = None; // (lo, f_lo, hi, f_hi)
    for i in 0..30 {
        let (ft, dphit, xt, gt) = eval(alpha);
        if ft > f0 + config.c1 * alpha * dphi0 || (i > 0 && ft >= f_prev) {
            bracket = Some((alpha_prev, f_prev, alpha, ft));
            break;
        }
        if dphit.abs() <= -config.c2 * dphi0 {
            return Some((xt, ft, gt));
        }
        if dphit >= 0.0 {
            bracket = Some((alpha, ft, alpha_prev, f_prev));
            break;
        }
        alpha_prev = alpha;
        f_prev = ft;
        alpha *= 2.0;
    }
    let (mut lo, mut f_lo, mut hi, mut _f_hi) = bracket?;

    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let (ft, dphit, xt, gt) = eval(mid);
        if ft > f0 + config.c1 * mid * dphi0 || ft >= f_lo {
            hi = mid;
            _f_hi = ft;
        } else {
            if dphit.abs() <= -config.c2 * dphi0 {
                return Some((xt, ft, gt));
            }
            if dphit * (hi - lo) >= 0.0 {
                hi = lo;
            }
            lo = mid;
            f_lo = ft;
        }
        if (hi - lo).abs() < 1e-16 {
            // Interval collapsed; accept if it at least decreases.
            let (ft, _, xt, gt) = eval(lo);
            if ft < f0 {
                return Some((xt, ft, gt));
            }
            return None;
        }
    }
    None
}

fn owlqn<F>(
    objective: &mut F,
    x0: Vec<f64>,
    config: &LbfgsConfig,
    l1: &[f64],
) -> LbfgsOutcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let f_smooth = objective(&x, &mut g);
    let mut value = f_smooth + l1_term(&x, l1);

    let mut best_x = x.clone();
    let mut best_value = value;

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut line_search_failed = false;
    let mut pg = pseudo_gradient(&x, &g, l1);

    while iterations < config.max_iters {
        if inf_norm(&pg) <= config.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut d = two_loop(&pg, &history);
        // Keep only components that agree with the steepest-descent
        // direction of the penalized objective.
        for (di, pgi) in d.iter_mut().zip(&pg) {
            if *di * *pgi > 0.0 {
                *di = 0.0;
            }
        }
        if d.iter().all(|v| *v == 0.0) {
            history.clear();
            d = pg.iter().map(|v| -v).collect();
        }

        // Orthant the step must stay in.
        let orthant: Vec<f64> = x
            .iter()
            .zip(&pg)
            .map(|(&xi, &pgi)| {
                if xi != 0.0 {
                    xi.signum()
                } else {
                    -pgi.signum()
                }
            })
            .collect();

        let mut accepted = None;
        let mut alpha = 1.0;
        for _ in 0..60 {
            let mut x_new: Vec<f64> = x
                .iter()
                .zip(&d)
                .map(|(xi, di)| xi + alpha * di)
                .collect();
            for ((xn, &o), &li) in x_new.iter_mut().zip(&orthant).zip(l1) {
                if li > 0.0 && *xn * o < 0.0 {
                    *xn = 0.0;
                }
            }
            let mut g_new = vec![0.0; n];
            let f_new_smooth = objective(&x_new, &mut g_new);
            let value_new = f_new_smooth + l1_term(&x_new, l1);
            let dir_deriv: f64 = pg
                .iter()
                .zip(x_new.iter().zip(&x))
                .map(|(pgi, (xn, xo))| pgi * (xn - xo))
                .sum();
            if value_new <= value + config.c1 * dir_deriv && value_new < value {
                accepted = Some((x_new, f_new_smooth, g_new, value_new));
                break;
            }
            alpha *= 0.5;
        }

        match accepted {
            Some((x_new, _f_new_smooth, g_new, value_new)) => {
                let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-12 {
                    if history.len() == config.memory {
                        history.pop_front();
                    }
                    history.push_back((s, y, 1.0 / sy));
                }
                x = x_new;
                g = g_new;
                value = value_new;
                pg = pseudo_gradient(&x, &g, l1);
                if value < best_value {
                    best_value = value;
                    best_x = x.clone();
                }
            }
            None => {
                line_search_failed = true;
                break;
            }
        }
    }

    if value > best_value {
        x = best_x;
        value = best_value;
        objective(&x, &mut g);
        pg = pseudo_gradient(&x, &g, l1);
    }
    LbfgsOutcome {
        grad_norm: inf_norm(&pg),
        x,
        value,
        iterations,
        converged,
        line_search_failed,
    }
}
