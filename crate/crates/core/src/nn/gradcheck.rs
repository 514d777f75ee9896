//! Central finite-difference checks for the hand-written backward passes.

use ndarray::Array2;

use super::Parameters;

pub const FD_STEP: f64 = 1e-5;

/// Smaller steps tried when the first estimate disagrees. A LeakyReLU or max
/// kink inside the stencil spoils one step size but not all of them, while
/// a wrong analytic gradient disagrees at every step.
pub const FD_REFINE: [f64; 2] = [1e-6, 1e-7];

/// Gradients smaller than this are compared in absolute terms against it.
pub const REL_FLOOR: f64 = 1e-4;

/// Maximum accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst: String,
    pub checked: usize,
    /// Entries that needed a smaller step to agree.
    pub refined: usize,
}

impl GradCheck {
    fn new() -> Self {
        GradCheck {
            max_rel_error: 0.0,
            worst: String::new(),
            checked: 0,
            refined: 0,
        }
    }

    fn rel_error(analytic: f64, numeric: f64) -> f64 {
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        (analytic - numeric).abs() / denom
    }

    /// `numeric(h)` is the central difference with step `h`.
    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: impl Fn(f64) -> f64) {
        let mut best = numeric(FD_STEP);
        let mut rel = Self::rel_error(analytic, best);
        if !(rel < TOLERANCE) {
            for h in FD_REFINE {
                let n = numeric(h);
                let r = Self::rel_error(analytic, n);
                if r < rel || rel.is_nan() {
                    (best, rel) = (n, r);
                }
            }
            if rel < TOLERANCE {
                self.refined += 1;
            }
        }
        self.checked += 1;
        if rel > self.max_rel_error || !rel.is_finite() {
            self.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
            self.worst = format!("{} analytic={analytic:e} numeric={best:e}", label());
        }
    }

    pub fn merge(mut self, other: GradCheck) -> GradCheck {
        if other.max_rel_error > self.max_rel_error {
            self.max_rel_error = other.max_rel_error;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.refined += other.refined;
        self
    }
}

/// Compare `analytic[t]` against central differences of `loss` for every
/// entry of every tensor exposed by `access`.
pub fn check<S, A, L>(state: &S, access: A, loss: L, analytic: &[Array2<f64>]) -> GradCheck
where
    S: Clone,
    A: Fn(&mut S) -> Vec<&mut Array2<f64>>,
    L: Fn(&S) -> f64,
{
    let mut report = GradCheck::new();
    let mut probe = state.clone();
    let shapes: Vec<(usize, usize)> = access(&mut probe).iter().map(|t| t.dim()).collect();
    assert_eq!(shapes.len(), analytic.len(), "one analytic gradient per tensor");
    for (t, &(rows, cols)) in shapes.iter().enumerate() {
        assert_eq!(analytic[t].dim(), (rows, cols), "gradient shape for tensor {t}");
        for r in 0..rows {
            for c in 0..cols {
                let numeric = |h: f64| {
                    let mut plus = state.clone();
                    access(&mut plus)[t][[r, c]] += h;
                    let mut minus = state.clone();
                    access(&mut minus)[t][[r, c]] -= h;
                    (loss(&plus) - loss(&minus)) / (2.0 * h)
                };
                report.record(|| format!("tensor {t} [{r},{c}]"), analytic[t][[r, c]], numeric);
            }
        }
    }
    report
}

/// Check a layer's parameter gradients and its input gradient together.
/// `backward` must accumulate into the zeroed gradient set and return the
/// gradient with respect to `input`.
pub fn check_gradients<P, L, B>(params: &P, input: &Array2<f64>, loss: L, backward: B) -> GradCheck
where
    P: Parameters<f64> + Clone,
    L: Fn(&P, &Array2<f64>) -> f64,
    B: Fn(&P, &Array2<f64>, &mut P) -> Array2<f64>,
{
    let mut grads = params.clone();
    grads.zero();
    let g_input = backward(params, input, &mut grads);
    let mut analytic: Vec<Array2<f64>> = grads.named_tensors().into_iter().map(|(_, t)| t.clone()).collect();
    analytic.push(g_input);
    let state = (params.clone(), input.clone());
    check(
        &state,
        |s: &mut (P, Array2<f64>)| {
            let mut v = s.0.tensors_mut();
            v.push(&mut s.1);
            v
        },
        |s| loss(&s.0, &s.1),
        &analytic,
    )
}
