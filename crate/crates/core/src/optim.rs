//! Derivative-free minimisation used by the outer predictor-weight search.

use alloc::vec;
use core::cell::Cell;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy)]
pub struct NelderMeadOptions {
    pub initial_step: f64,
    pub max_evaluations: usize,
    /// Stop when the spread of simplex values falls below this.
    pub f_tolerance: f64,
    pub x_tolerance: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            initial_step: 1.0,
            max_evaluations: 1000,
            f_tolerance: 1e-12,
            x_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

/// Nelder–Mead with the standard coefficients (1, 2, 0.5, 0.5).
pub fn nelder_mead<F>(f: F, x0: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let evals = Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() { f64::INFINITY } else { v }
    };
    if n == 0 {
        let value = eval(x0);
        return Minimum { x: Vec::new(), value, evaluations: 1 };
    }

    let mut points: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    points.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += opts.initial_step;
        points.push(p);
    }
    let mut values: Vec<f64> = points.iter().map(|p| eval(p)).collect();

    loop {
        // stable ordering keeps runs reproducible when values tie
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        points = order.iter().map(|&i| points[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let size = points[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&points[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if evals.get() >= opts.max_evaluations
            || (spread.abs() <= opts.f_tolerance && size <= opts.x_tolerance)
            || (values[0].is_finite() && spread.abs() <= opts.f_tolerance * 1e-3)
        {
            break;
        }

        let mut centroid = vec![0.0; n];
        for p in &points[..n] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&points[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };

        let reflected = along(-1.0);
        let f_r = eval(&reflected);
        if f_r < values[0] {
            let expanded = along(-2.0);
            let f_e = eval(&expanded);
            if f_e < f_r {
                points[n] = expanded;
                values[n] = f_e;
            } else {
                points[n] = reflected;
                values[n] = f_r;
            }
            continue;
        }
        if f_r < values[n - 1] {
            points[n] = reflected;
            values[n] = f_r;
            continue;
        }
        let (contracted, f_c) = if f_r < values[n] {
            let c = along(-0.5);
            let fc = eval(&c);
            (c, fc)
        } else {
            let c = along(0.5);
            let fc = eval(&c);
            (c, fc)
        };
        if f_c < values[n].min(f_r) {
            points[n] = contracted;
            values[n] = f_c;
            continue;
        }
        // shrink towards the best point
        let best = points[0].clone();
        for k in 1..=n {
            for (x, b) in points[k].iter_mut().zip(&best) {
                *x = b + 0.5 * (*x - b);
            }
            values[k] = eval(&points[k]);
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)))
        .unwrap_or(0);
    Minimum {
        x: points[best].clone(),
        value: values[best],
        evaluations: evals.get(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimises_rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions { max_evaluations: 5000, ..Default::default() };
        let m = nelder_mead(f, &[-1.2, 1.0], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-3, "{:?}", m);
        assert!((m.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| (x[0] - 3.0).abs() + x[1].abs();
        let start = [0.5, -0.5];
        let m = nelder_mead(f, &start, &NelderMeadOptions::default());
        assert!(m.value <= f(&start));
    }
}
