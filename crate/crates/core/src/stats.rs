//! Small statistics helpers for replication output.

use statrs::distribution::{ContinuousCDF, StudentsT};

/// Two-sided 95% Student-t critical value with `dof` degrees of freedom.
pub fn t_critical_95(dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(1.959_963_984_540_054)
}

/// Sample mean, standard error and 95% half-width of i.i.d. observations.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Summary {
    pub mean: f64,
    pub std_error: f64,
    pub half_width: f64,
    pub n: usize,
}

pub fn summarize(xs: &[f64]) -> Summary {
    let n = xs.len();
    if n == 0 {
        return Summary::default();
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Summary {
            mean,
            std_error: 0.0,
            half_width: 0.0,
            n,
        };
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let std_error = (var / n as f64).sqrt();
    Summary {
        mean,
        std_error,
        half_width: t_critical_95(n - 1) * std_error,
        n,
    }
}

/// Batch-means summary of one long autocorrelated series.
pub fn batch_means(xs: &[f64], batches: usize) -> Summary {
    let b = batches.max(2).min(xs.len().max(1));
    let size = xs.len() / b;
    if size == 0 {
        return summarize(xs);
    }
    let means: Vec<f64> = (0..b)
        .map(|i| xs[i * size..(i + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    summarize(&means)
}
