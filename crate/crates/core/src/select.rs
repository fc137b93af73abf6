//! Pareto fronts and kneedle knee detection.

use thiserror::Error;

#[derive(Clone, Debug, PartialEq)]
pub struct ParetoPoint {
    pub complexity: f64,
    pub score: f64,
    pub label: String,
}

impl ParetoPoint {
    pub fn new(complexity: f64, score: f64) -> Self {
        ParetoPoint { complexity, score, label: String::new() }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum KneeError {
    #[error("front is empty")]
    Empty,
    #[error("front is not sorted by ascending complexity")]
    Unsorted,
    #[error("front has duplicate complexity {0}")]
    DuplicateComplexity(f64),
    #[error("front has a non-finite or negative coordinate")]
    BadCoordinate,
}

/// Nondominated points, minimizing both coordinates, sorted by complexity.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted: Vec<&ParetoPoint> =
        points.iter().filter(|p| p.complexity.is_finite() && !p.score.is_nan()).collect();
    sorted.sort_by(|a, b| a.complexity.total_cmp(&b.complexity).then(a.score.total_cmp(&b.score)));
    let mut out: Vec<ParetoPoint> = Vec::new();
    for p in sorted {
        if out.last().map(|q| p.score < q.score).unwrap_or(true) {
            out.push(p.clone());
        }
    }
    out
}

/// Kneedle on a decreasing convex front; returns an index into `front`.
///
/// Fronts with fewer than three points return the lowest-score point.
pub fn knee_point(front: &[ParetoPoint], sensitivity: f64) -> Result<usize, KneeError> {
    if front.is_empty() {
        return Err(KneeError::Empty);
    }
    for p in front {
        if !p.complexity.is_finite() || !p.score.is_finite() || p.complexity < 0.0 || p.score < 0.0 {
            return Err(KneeError::BadCoordinate);
        }
    }
    for w in front.windows(2) {
        if w[1].complexity == w[0].complexity {
            return Err(KneeError::DuplicateComplexity(w[0].complexity));
        }
        if w[1].complexity < w[0].complexity {
            return Err(KneeError::Unsorted);
        }
    }
    let n = front.len();
    if n < 3 {
        let mut best = 0;
        for i in 1..n {
            if front[i].score < front[best].score {
                best = i;
            }
        }
        return Ok(best);
    }
    let diff = difference_curve(front);
    let xn = normalize(&front.iter().map(|p| p.complexity).collect::<Vec<_>>());
    let step = xn.windows(2).map(|w| w[1] - w[0]).sum::<f64>() / (n - 1) as f64;

    let is_max = |i: usize| {
        let left = i == 0 || diff[i] >= diff[i - 1];
        let right = i == n - 1 || diff[i] >= diff[i + 1];
        left && right && i > 0 && i < n - 1
    };
    let is_min = |i: usize| {
        let left = i == 0 || diff[i] <= diff[i - 1];
        let right = i == n - 1 || diff[i] <= diff[i + 1];
        left && right && i > 0 && i < n - 1
    };
    let mut threshold: Option<(f64, usize)> = None;
    for i in 0..n - 1 {
        if is_max(i) {
            threshold = Some((diff[i] - sensitivity * step.abs(), i));
        }
        if is_min(i) {
            if let Some((_, idx)) = threshold {
                threshold = Some((0.0, idx));
            }
        }
        if let Some((t, idx)) = threshold {
            if diff[i + 1] < t {
                return Ok(idx);
            }
        }
    }
    // No knee by the threshold test: fall back to the maximum of the difference curve.
    let mut best = 0;
    for i in 1..n {
        if diff[i] > diff[best] + 1e-12 {
            best = i;
        }
    }
    Ok(best)
}

/// Kneedle difference curve: (1 - normalized score) - normalized complexity.
pub fn difference_curve(front: &[ParetoPoint]) -> Vec<f64> {
    let xn = normalize(&front.iter().map(|p| p.complexity).collect::<Vec<_>>());
    let yn = normalize(&front.iter().map(|p| p.score).collect::<Vec<_>>());
    xn.iter().zip(&yn).map(|(x, y)| (1.0 - y) - x).collect()
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        v.iter().map(|x| (x - lo) / (hi - lo)).collect()
    } else {
        vec![0.0; v.len()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<ParetoPoint> {
        v.iter().map(|&(c, s)| ParetoPoint::new(c, s)).collect()
    }

    #[test]
    fn dominance() {
        let f = pareto_front(&pts(&[(1.0, 5.0), (2.0, 1.0), (3.0, 2.0)]));
        assert_eq!(f, pts(&[(1.0, 5.0), (2.0, 1.0)]));
        assert_eq!(pareto_front(&pts(&[(4.0, 4.0)])).len(), 1);
    }

    #[test]
    fn ai_feynman_solar_knee() {
        let f = pts(&[(15.0, 31.62), (23.12, 24.00), (32.12, 16.66), (70.10, 15.13)]);
        assert_eq!(knee_point(&f, 1.0).unwrap(), 2);
    }

    #[test]
    fn degenerate_fronts() {
        assert_eq!(knee_point(&pts(&[(1.0, 3.0), (2.0, 1.0)]), 1.0).unwrap(), 1);
        let line = pts(&[(0.0, 3.0), (1.0, 2.0), (2.0, 1.0), (3.0, 0.0)]);
        assert_eq!(knee_point(&line, 1.0).unwrap(), 0);
        assert_eq!(knee_point(&pts(&[(2.0, 1.0), (1.0, 0.5), (3.0, 0.1)]), 1.0), Err(KneeError::Unsorted));
        assert!(matches!(
            knee_point(&pts(&[(1.0, 2.0), (1.0, 1.0), (3.0, 0.1)]), 1.0),
            Err(KneeError::DuplicateComplexity(_))
        ));
    }
}
