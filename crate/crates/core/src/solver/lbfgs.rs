//! Limited-memory BFGS with a backtracking (Armijo) line search.

use std::collections::VecDeque;

use nalgebra::DVector;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsSettings {
    pub memory: usize,
    pub max_iters: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Step shrink factor per backtrack.
    pub backtrack: f64,
    pub max_halvings: usize,
    /// Stop once an accepted step lowers f by no more than `ftol * |f|`.
    pub ftol: f64,
}

impl Default for LbfgsSettings {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 30,
            c1: 1e-4,
            backtrack: 0.5,
            max_halvings: 50,
            ftol: 1e-15,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: DVector<f64>,
    pub value: f64,
    pub iterations: usize,
    /// The line search could not find a decreasing step, even along the
    /// steepest-descent direction.
    pub stalled: bool,
}

struct Pair {
    s: DVector<f64>,
    y: DVector<f64>,
    rho: f64,
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient. The returned
/// value never exceeds `f(x0)`.
pub fn minimize<F>(mut f: F, x0: DVector<f64>, settings: &LbfgsSettings) -> LbfgsOutcome
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = x0;
    let (mut fx, mut g) = f(&x);
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(settings.memory);
    let mut iterations = 0;
    let mut stalled = false;

    while iterations < settings.max_iters {
        if g.iter().all(|&v| v == 0.0) || !fx.is_finite() {
            break;
        }
        let mut d = two_loop(&history, &g);
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            history.clear();
            d = -&g;
            slope = -g.norm_squared();
        }

        let step = match line_search(&mut f, &x, fx, &d, slope, history.is_empty(), settings) {
            Some(s) => Some(s),
            None if !history.is_empty() => {
                history.clear();
                d = -&g;
                slope = -g.norm_squared();
                line_search(&mut f, &x, fx, &d, slope, true, settings)
            }
            None => None,
        };
        let Some((x_new, f_new, g_new)) = step else {
            stalled = true;
            break;
        };
        iterations += 1;

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() && sy > 0.0 {
            if history.len() == settings.memory {
                history.pop_front();
            }
            history.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        let decrease = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if decrease <= settings.ftol * fx.abs() {
            break;
        }
    }
    LbfgsOutcome { x, value: fx, iterations, stalled }
}

/// `-H g` from the stored curvature pairs, scaled by `sᵀy / yᵀy` of the
/// newest pair.
fn two_loop(history: &VecDeque<Pair>, g: &DVector<f64>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alpha = vec![0.0; history.len()];
    for (i, p) in history.iter().enumerate().rev() {
        alpha[i] = p.rho * p.s.dot(&q);
        q.axpy(-alpha[i], &p.y, 1.0);
    }
    if let Some(last) = history.back() {
        let gamma = last.s.dot(&last.y) / last.y.norm_squared();
        q *= gamma;
    }
    for (i, p) in history.iter().enumerate() {
        let beta = p.rho * p.y.dot(&q);
        q.axpy(alpha[i] - beta, &p.s, 1.0);
    }
    -q
}

fn line_search<F>(
    f: &mut F,
    x: &DVector<f64>,
    fx: f64,
    d: &DVector<f64>,
    slope: f64,
    first: bool,
    settings: &LbfgsSettings,
) -> Option<(DVector<f64>, f64, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    // Without curvature information the direction is the raw gradient, whose
    // length carries no step-size information.
    let mut t = if first { (1.0 / d.norm()).min(1.0) } else { 1.0 };
    for _ in 0..=settings.max_halvings {
        let x_new = x + d * t;
        let (f_new, g_new) = f(&x_new);
        if f_new.is_finite() && f_new <= fx + settings.c1 * t * slope && f_new <= fx {
            return Some((x_new, f_new, g_new));
        }
        t *= settings.backtrack;
    }
    None
}
