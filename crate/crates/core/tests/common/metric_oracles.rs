//! Brute-force reference implementations of the scoring metrics.

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let sxx: f64 = x.iter().map(|a| a * a).sum();
    let syy: f64 = y.iter().map(|b| b * b).sum();
    let num = n * sxy - sx * sy;
    let den = ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        None
    } else {
        Some(num / den)
    }
}

pub fn root_mean_square(x: &[f64], y: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..x.len() {
        total += (x[i] - y[i]).powi(2);
    }
    (total / x.len() as f64).sqrt()
}

/// Counts index pairs whose bins differ by at most `bins`.
pub fn within_bins(pred: &[usize], gold: &[usize], bins: usize) -> f64 {
    let mut hits = 0;
    for i in 0..pred.len() {
        let gap = pred[i].abs_diff(gold[i]);
        if gap <= bins {
            hits += 1;
        }
    }
    hits as f64 / pred.len() as f64
}

pub fn balanced_recall(pred: &[usize], gold: &[usize]) -> f64 {
    let mut sum = 0.0;
    let mut classes = 0;
    for level in 0..8 {
        let members: Vec<usize> = (0..gold.len()).filter(|&i| gold[i] == level).collect();
        if members.is_empty() {
            continue;
        }
        let right = members.iter().filter(|&&i| pred[i] == level).count();
        sum += right as f64 / members.len() as f64;
        classes += 1;
    }
    sum / classes as f64
}
