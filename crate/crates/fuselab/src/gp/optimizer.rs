//! Guarded Adam: first-moment/second-moment steps with a backtracking
//! acceptance test so the recorded loss trace is monotone non-increasing.

pub struct AdamConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub grad_tol: f64,
    pub loss_tol: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.05,
            max_iters: 200,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_tol: 1e-6,
            loss_tol: 1e-10,
        }
    }
}

pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub loss: f64,
    /// Accepted losses, one per iteration including the starting point.
    /// Diagnostic; only inspected by tests in release builds of the library.
    #[cfg_attr(not(test), allow(dead_code))]
    pub trace: Vec<f64>,
}

/// Minimizes `loss_grad` starting from `x0`. `loss_grad` returns None when
/// the objective cannot be evaluated (e.g. factorization failure); such
/// points are never accepted. Steps are projected onto `bounds` when given.
/// Returns None if even the starting point is infeasible.
pub fn minimize(
    mut loss_grad: impl FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
    mut loss_only: impl FnMut(&[f64]) -> Option<f64>,
    x0: &[f64],
    bounds: Option<&[(f64, f64)]>,
    cfg: &AdamConfig,
) -> Option<MinimizeResult> {
    let project = |x: &mut Vec<f64>| {
        if let Some(b) = bounds {
            for (v, &(lo, hi)) in x.iter_mut().zip(b) {
                *v = v.clamp(lo, hi);
            }
        }
    };
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x);
    let (mut loss, mut grad) = loss_grad(&x)?;
    let mut trace = vec![loss];

    let mut m = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut stall = 0;
    let mut backtrack_failures = 0;

    for t in 1..=cfg.max_iters {
        let gnorm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < cfg.grad_tol {
            break;
        }
        for i in 0..n {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        }
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        let step: Vec<f64> = (0..n)
            .map(|i| -cfg.learning_rate * (m[i] / bc1) / ((v[i] / bc2).sqrt() + cfg.eps))
            .collect();

        // backtrack until the step does not increase the loss
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..8 {
            let mut trial: Vec<f64> = (0..n).map(|i| x[i] + scale * step[i]).collect();
            project(&mut trial);
            if let Some(l) = loss_only(&trial) {
                if l.is_finite() && l <= loss {
                    accepted = Some((trial, l));
                    break;
                }
            }
            scale *= 0.5;
        }
        // momentum can point uphill; reset it and retry with a fresh
        // gradient direction before giving up
        let Some((trial, l)) = accepted else {
            backtrack_failures += 1;
            if backtrack_failures >= 3 {
                break;
            }
            m.iter_mut().for_each(|v| *v = 0.0);
            v.iter_mut().for_each(|v| *v = 0.0);
            continue;
        };
        backtrack_failures = 0;
        let improvement = loss - l;
        x = trial;
        loss = l;
        trace.push(loss);
        if improvement < cfg.loss_tol * (1.0 + loss.abs()) {
            stall += 1;
            if stall >= 3 {
                break;
            }
        } else {
            stall = 0;
        }
        match loss_grad(&x) {
            Some((l2, g2)) => {
                loss = loss.min(l2);
                grad = g2;
            }
            None => break,
        }
    }
    Some(MinimizeResult { x, loss, trace })
}
