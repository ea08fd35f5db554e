//! Downhill-simplex minimisation with box bounds and restarts.

/// Settings for [`minimize_bounded`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexOptions {
    /// maximum number of objective evaluations (≥ 1)
    pub budget: usize,
    /// initial simplex edge as a fraction of each coordinate's bound width
    pub initial_step: f64,
    /// how many times to rebuild the simplex around the incumbent after it collapses
    pub restarts: usize,
    /// collapse threshold on the spread of vertex values
    pub f_tol: f64,
    /// collapse threshold on the largest vertex distance, relative to bound width
    pub x_tol: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { budget: 2000, initial_step: 0.1, restarts: 3, f_tol: 1e-14, x_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evaluations: usize,
    /// best value seen after each evaluation; never increases
    pub history: Vec<f64>,
}

/// Folds `v` into [lo, hi] by mirror reflection at the walls.
pub fn reflect_into(v: f64, lo: f64, hi: f64) -> f64 {
    if (lo..=hi).contains(&v) {
        return v;
    }
    let w = hi - lo;
    if w <= 0.0 {
        return lo;
    }
    let period = 2.0 * w;
    let mut r = (v - lo).rem_euclid(period);
    if r > w {
        r = period - r;
    }
    lo + r
}

struct Tracker<'a, F> {
    f: F,
    lower: &'a [f64],
    upper: &'a [f64],
    budget: usize,
    best_x: Vec<f64>,
    best_f: f64,
    history: Vec<f64>,
}

impl<F: FnMut(&[f64]) -> f64> Tracker<'_, F> {
    fn exhausted(&self) -> bool {
        self.history.len() >= self.budget
    }

    fn eval(&mut self, x: &mut [f64]) -> f64 {
        for (k, v) in x.iter_mut().enumerate() {
            *v = reflect_into(*v, self.lower[k], self.upper[k]);
        }
        let mut v = (self.f)(x);
        if v.is_nan() {
            v = f64::INFINITY;
        }
        if v < self.best_f || self.history.is_empty() {
            self.best_f = v;
            self.best_x = x.to_vec();
        }
        self.history.push(self.best_f);
        v
    }
}

/// Minimises `f` over the box [lower, upper] starting from `x0`.
///
/// Trial points outside the box are reflected back in. The run stops when the
/// evaluation budget is spent or the simplex has collapsed `restarts + 1`
/// times. Deterministic for a deterministic `f`.
pub fn minimize_bounded<F>(f: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &SimplexOptions) -> SimplexResult
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    assert!(lower.len() == n && upper.len() == n, "bounds must match the start point");
    let budget = opts.budget.max(1);
    let mut tr = Tracker {
        f,
        lower,
        upper,
        budget,
        best_x: x0.to_vec(),
        best_f: f64::INFINITY,
        history: Vec::with_capacity(budget),
    };
    let mut start = x0.to_vec();
    tr.eval(&mut start);

    let width: Vec<f64> = (0..n).map(|k| (upper[k] - lower[k]).max(0.0)).collect();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);

    'outer: for _ in 0..=opts.restarts {
        if tr.exhausted() || n == 0 {
            break;
        }
        // simplex around the incumbent, stepping towards the roomier side of each bound
        let base = tr.best_x.clone();
        let mut verts = vec![base.clone()];
        let mut vals = vec![tr.best_f];
        for k in 0..n {
            if tr.exhausted() {
                break 'outer;
            }
            let mut v = base.clone();
            let step = opts.initial_step * width[k];
            v[k] += if upper[k] - base[k] >= base[k] - lower[k] { step } else { -step };
            let fv = tr.eval(&mut v);
            verts.push(v);
            vals.push(fv);
        }

        loop {
            let mut order: Vec<usize> = (0..=n).collect();
            order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
            verts = order.iter().map(|&i| verts[i].clone()).collect();
            vals = order.iter().map(|&i| vals[i]).collect();

            let spread = vals[n] - vals[0];
            let size = (1..=n)
                .map(|i| {
                    (0..n)
                        .map(|k| if width[k] > 0.0 { (verts[i][k] - verts[0][k]).abs() / width[k] } else { 0.0 })
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if spread <= opts.f_tol * (1.0 + vals[0].abs()) && size <= opts.x_tol || size == 0.0 {
                break;
            }
            if tr.exhausted() {
                break 'outer;
            }

            let centroid: Vec<f64> = (0..n).map(|k| verts[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64).collect();
            let along = |t: f64| -> Vec<f64> { (0..n).map(|k| centroid[k] + t * (verts[n][k] - centroid[k])).collect() };

            let mut xr = along(-alpha);
            let fr = tr.eval(&mut xr);
            if fr < vals[0] {
                if tr.exhausted() {
                    break 'outer;
                }
                let mut xe = along(-gamma);
                let fe = tr.eval(&mut xe);
                (verts[n], vals[n]) = if fe < fr { (xe, fe) } else { (xr, fr) };
                continue;
            }
            if fr < vals[n - 1] {
                (verts[n], vals[n]) = (xr, fr);
                continue;
            }
            if tr.exhausted() {
                break 'outer;
            }
            let (mut xc, outside) = if fr < vals[n] { (along(-rho), true) } else { (along(rho), false) };
            let fc = tr.eval(&mut xc);
            if (outside && fc <= fr) || (!outside && fc < vals[n]) {
                (verts[n], vals[n]) = (xc, fc);
                continue;
            }
            // shrink towards the best vertex
            for i in 1..=n {
                if tr.exhausted() {
                    break 'outer;
                }
                let mut v: Vec<f64> = (0..n).map(|k| verts[0][k] + sigma * (verts[i][k] - verts[0][k])).collect();
                vals[i] = tr.eval(&mut v);
                verts[i] = v;
            }
        }
    }

    SimplexResult { x: tr.best_x, f: tr.best_f, evaluations: tr.history.len(), history: tr.history }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn finds_rosenbrock_minimum() {
        let r = minimize_bounded(rosenbrock, &[-1.2, 1.0], &[-2.0, -2.0], &[2.0, 2.0], &SimplexOptions::default());
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(r.history.len(), r.evaluations);
    }

    #[test]
    fn respects_bounds() {
        // unconstrained minimum at (3, 3) lies outside the box
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] - 3.0).powi(2);
        let mut seen_outside = false;
        let r = minimize_bounded(
            |x: &[f64]| {
                seen_outside |= x.iter().any(|v| !(0.0..=1.0).contains(v));
                f(x)
            },
            &[0.5, 0.5],
            &[0.0, 0.0],
            &[1.0, 1.0],
            &SimplexOptions::default(),
        );
        assert!(!seen_outside);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn budget_of_one_returns_start() {
        let r = minimize_bounded(rosenbrock, &[0.3, 0.4], &[-2.0; 2], &[2.0; 2], &SimplexOptions { budget: 1, ..Default::default() });
        assert_eq!(r.x, vec![0.3, 0.4]);
        assert_eq!(r.f, rosenbrock(&[0.3, 0.4]));
        assert_eq!(r.evaluations, 1);
    }

    #[test]
    fn budget_is_never_exceeded() {
        for budget in [2, 3, 7, 50] {
            let r = minimize_bounded(rosenbrock, &[0.0, 0.0], &[-2.0; 2], &[2.0; 2], &SimplexOptions { budget, ..Default::default() });
            assert!(r.evaluations <= budget);
        }
    }

    #[test]
    fn reflection_folds_into_box() {
        assert_eq!(reflect_into(1.25, 0.0, 1.0), 0.75);
        assert_eq!(reflect_into(-0.25, 0.0, 1.0), 0.25);
        assert_eq!(reflect_into(2.5, 0.0, 1.0), 0.5);
        assert_eq!(reflect_into(0.4, 0.0, 1.0), 0.4);
    }
}
