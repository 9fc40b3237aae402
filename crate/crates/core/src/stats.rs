//! Correlation of two score vectors: Pearson, Spearman (average ranks) and
//! Kendall tau-b, with asymptotic p-values.
//!
//! Kendall runs in O(n log n) via merge-sort inversion counting; the test
//! suites check it against an explicit O(n^2) pair-counting oracle. The
//! p-values use the t approximation for Pearson/Spearman and the
//! tie-corrected normal approximation for tau-b.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationMethod {
    Pearson,
    Spearman,
    KendallTauB,
}

/// Correlation of two equal-length vectors; returns `(coefficient,
/// two-sided p-value)`.
pub fn correlate(x: &[f64], y: &[f64], method: CorrelationMethod) -> Result<(f64, f64)> {
    validate(x, y)?;
    match method {
        CorrelationMethod::Pearson => pearson(x, y),
        CorrelationMethod::Spearman => {
            let rx = average_ranks(x);
            let ry = average_ranks(y);
            pearson(&rx, &ry)
        }
        CorrelationMethod::KendallTauB => kendall_tau_b(x, y),
    }
}

fn validate(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "vectors of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 observations, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite value".to_string()));
    }
    for (name, v) in [("x", x), ("y", y)] {
        if v.iter().all(|&a| a == v[0]) {
            return Err(Error::Undefined(format!(
                "undefined correlation: zero variance in {name}"
            )));
        }
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    let mx = math::mean(x);
    let my = math::mean(y);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = x[i] - mx;
        let dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined(
            "undefined correlation: zero variance".to_string(),
        ));
    }
    let r = (sxy / math::sqrt(sxx * syy)).clamp(-1.0, 1.0);
    let df = (n - 2) as f64;
    let p = if 1.0 - r * r < 1e-15 {
        0.0
    } else {
        math::student_t_two_sided_p(r * math::sqrt(df / (1.0 - r * r)), df)
    };
    Ok((r, p))
}

/// Fractional ranks (1-based), ties receiving their group average.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Counts strict inversions (left > right) with a merge sort.
fn count_inversions(values: &mut [f64]) -> u64 {
    let n = values.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut left = values[..mid].to_vec();
    let mut right = values[mid..].to_vec();
    let mut inv = count_inversions(&mut left) + count_inversions(&mut right);
    let (mut li, mut ri, mut out) = (0, 0, 0);
    while li < left.len() && ri < right.len() {
        if left[li] <= right[ri] {
            values[out] = left[li];
            li += 1;
        } else {
            inv += (left.len() - li) as u64;
            values[out] = right[ri];
            ri += 1;
        }
        out += 1;
    }
    while li < left.len() {
        values[out] = left[li];
        li += 1;
        out += 1;
    }
    while ri < right.len() {
        values[out] = right[ri];
        ri += 1;
        out += 1;
    }
    inv
}

/// Tie bookkeeping: for each group of `t` equal keys accumulates
/// `t(t-1)/2`, `t(t-1)(t-2)` and `t(t-1)(2t+5)`.
fn tie_stats(sorted_keys: &[f64]) -> (f64, f64, f64) {
    let mut pairs = 0.0;
    let mut triples = 0.0;
    let mut weighted = 0.0;
    let mut i = 0;
    while i < sorted_keys.len() {
        let mut j = i;
        while j + 1 < sorted_keys.len() && sorted_keys[j + 1] == sorted_keys[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        pairs += t * (t - 1.0) / 2.0;
        triples += t * (t - 1.0) * (t - 2.0);
        weighted += t * (t - 1.0) * (2.0 * t + 5.0);
        i = j + 1;
    }
    (pairs, triples, weighted)
}

fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap()
            .then(y[a].partial_cmp(&y[b]).unwrap())
    });

    let x_sorted: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let mut y_in_x_order: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    // Joint ties: runs of equal (x, y).
    let mut joint_pairs = 0.0;
    {
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n
                && x_sorted[j + 1] == x_sorted[i]
                && y_in_x_order[j + 1] == y_in_x_order[i]
            {
                j += 1;
            }
            let t = (j - i + 1) as f64;
            joint_pairs += t * (t - 1.0) / 2.0;
            i = j + 1;
        }
    }

    let (x_tie_pairs, x_triples, x_weighted) = tie_stats(&x_sorted);
    let mut y_sorted = y.to_vec();
    y_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (y_tie_pairs, y_triples, y_weighted) = tie_stats(&y_sorted);

    let discordant = count_inversions(&mut y_in_x_order) as f64;
    let total_pairs = (n * (n - 1) / 2) as f64;
    let concordant = total_pairs - x_tie_pairs - y_tie_pairs + joint_pairs - discordant;
    let con_minus_dis = concordant - discordant;

    let denom = (total_pairs - x_tie_pairs) * (total_pairs - y_tie_pairs);
    if denom <= 0.0 {
        return Err(Error::Undefined(
            "undefined correlation: a variable is entirely tied".to_string(),
        ));
    }
    let tau = (con_minus_dis / math::sqrt(denom)).clamp(-1.0, 1.0);

    // Tie-corrected variance of C - D under independence.
    let nf = n as f64;
    let m = nf * (nf - 1.0);
    let var = (m * (2.0 * nf + 5.0) - x_weighted - y_weighted) / 18.0
        + (2.0 * x_tie_pairs * y_tie_pairs) / m
        + (x_triples * y_triples) / (9.0 * m * (nf - 2.0));
    let p = if var > 0.0 {
        math::normal_two_sided_p(con_minus_dis / math::sqrt(var))
    } else {
        1.0
    };
    Ok((tau, p))
}

/// The three coefficients and their p-values for one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub pearson: f64,
    pub spearman: f64,
    pub kendall: f64,
    /// Mean of the three coefficients.
    pub average: f64,
    pub p_pearson: f64,
    pub p_spearman: f64,
    pub p_kendall: f64,
    pub n: usize,
}

impl CorrelationReport {
    /// Correlates predicted scores against (raw) human scores.
    pub fn from_scores(predicted: &[f64], human: &[f64]) -> Result<Self> {
        let (pearson, p_pearson) = correlate(predicted, human, CorrelationMethod::Pearson)?;
        let (spearman, p_spearman) = correlate(predicted, human, CorrelationMethod::Spearman)?;
        let (kendall, p_kendall) = correlate(predicted, human, CorrelationMethod::KendallTauB)?;
        Ok(CorrelationReport {
            pearson,
            spearman,
            kendall,
            average: (pearson + spearman + kendall) / 3.0,
            p_pearson,
            p_spearman,
            p_kendall,
            n: predicted.len(),
        })
    }

    /// True when every coefficient is significant at the given level.
    pub fn all_significant(&self, alpha: f64) -> bool {
        self.p_pearson <= alpha && self.p_spearman <= alpha && self.p_kendall <= alpha
    }
}

/// Five-number summary (min, q25, median, q75, max) with linear
/// interpolation between order statistics.
pub fn five_number_summary(values: &[f64]) -> Result<[f64; 5]> {
    if values.is_empty() {
        return Err(Error::InvalidInput("no values to summarize".to_string()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos as usize;
        let frac = pos - lo as f64;
        if lo + 1 < sorted.len() {
            sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
        } else {
            sorted[lo]
        }
    };
    Ok([sorted[0], q(0.25), q(0.5), q(0.75), sorted[sorted.len() - 1]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// O(n^2) oracle: explicit pair counting, tau-b formula applied
    /// directly.
    fn kendall_brute(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut c, mut d, mut tx, mut ty) = (0f64, 0f64, 0f64, 0f64);
        for i in 0..n {
            for j in i + 1..n {
                let dx = x[j] - x[i];
                let dy = y[j] - y[i];
                if dx == 0.0 && dy == 0.0 {
                    // joint tie: excluded from both denominote terms
                } else if dx == 0.0 {
                    tx += 1.0;
                } else if dy == 0.0 {
                    ty += 1.0;
                } else if dx * dy > 0.0 {
                    c += 1.0;
                } else {
                    d += 1.0;
                }
            }
        }
        (c - d) / math::sqrt((c + d + tx) * (c + d + ty))
    }

    /// Independent rank construction: count-smaller plus half the ties.
    fn spearman_brute(x: &[f64], y: &[f64]) -> f64 {
        let rank = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .map(|&a| {
                    let smaller = v.iter().filter(|&&b| b < a).count() as f64;
                    let ties = v.iter().filter(|&&b| b == a).count() as f64;
                    smaller + (ties - 1.0) / 2.0 + 1.0
                })
                .collect()
        };
        pearson_brute(&rank(x), &rank(y))
    }

    fn pearson_brute(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let vy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        cov / math::sqrt(vx * vy)
    }

    #[test]
    fn perfect_agreement_is_one() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        for m in [
            CorrelationMethod::Pearson,
            CorrelationMethod::Spearman,
            CorrelationMethod::KendallTauB,
        ] {
            let (r, _) = correlate(&x, &x, m).unwrap();
            assert!((r - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn perfect_reversal_is_minus_one() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [9.0, 7.0, 5.0, 3.0, 1.0];
        for m in [
            CorrelationMethod::Pearson,
            CorrelationMethod::Spearman,
            CorrelationMethod::KendallTauB,
        ] {
            let (r, _) = correlate(&x, &y, m).unwrap();
            assert!((r + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kendall_worked_example_two_thirds() {
        // Six pairs: five concordant, one discordant.
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        let (tau, _) = correlate(&x, &y, CorrelationMethod::KendallTauB).unwrap();
        assert_eq!(tau, 2.0 / 3.0);
    }

    #[test]
    fn zero_variance_is_an_error() {
        let x = [1.0, 1.0, 1.0, 1.0];
        let y = [1.0, 2.0, 3.0, 4.0];
        for m in [
            CorrelationMethod::Pearson,
            CorrelationMethod::Spearman,
            CorrelationMethod::KendallTauB,
        ] {
            assert!(correlate(&x, &y, m).is_err());
            assert!(correlate(&y, &x, m).is_err());
        }
    }

    #[test]
    fn length_and_size_preconditions() {
        assert!(correlate(&[1.0, 2.0], &[1.0, 2.0], CorrelationMethod::Pearson).is_err());
        assert!(correlate(&[1.0, 2.0, 3.0], &[1.0, 2.0], CorrelationMethod::Pearson).is_err());
        assert!(
            correlate(&[1.0, f64::NAN, 3.0], &[1.0, 2.0, 3.0], CorrelationMethod::Pearson)
                .is_err()
        );
    }

    #[test]
    fn symmetry_in_the_arguments() {
        let mut rng = Rng::new(3);
        let x: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..20).map(|_| (rng.normal() * 4.0).round() / 4.0).collect();
        for m in [
            CorrelationMethod::Pearson,
            CorrelationMethod::Spearman,
            CorrelationMethod::KendallTauB,
        ] {
            let (a, pa) = correlate(&x, &y, m).unwrap();
            let (b, pb) = correlate(&y, &x, m).unwrap();
            assert!((a - b).abs() < 1e-12);
            assert!((pa - pb).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_brute_force_with_and_without_ties() {
        let mut rng = Rng::new(41);
        for round in 0..60 {
            let n = 5 + (rng.next_u64() % 46) as usize;
            let tie_heavy = round % 2 == 0;
            let gen = |rng: &mut Rng| -> Vec<f64> {
                (0..n)
                    .map(|_| {
                        let v = rng.normal();
                        if tie_heavy {
                            (v * 2.0).round() / 2.0
                        } else {
                            v
                        }
                    })
                    .collect()
            };
            let x = gen(&mut rng);
            let y = gen(&mut rng);
            if validate(&x, &y).is_err() {
                continue;
            }
            let (tau, _) = correlate(&x, &y, CorrelationMethod::KendallTauB).unwrap();
            assert!((tau - kendall_brute(&x, &y)).abs() < 1e-10, "round {round}");
            let (rho, _) = correlate(&x, &y, CorrelationMethod::Spearman).unwrap();
            assert!((rho - spearman_brute(&x, &y)).abs() < 1e-10, "round {round}");
            let (r, _) = correlate(&x, &y, CorrelationMethod::Pearson).unwrap();
            assert!((r - pearson_brute(&x, &y)).abs() < 1e-10, "round {round}");
        }
    }

    #[test]
    fn rank_invariance_of_the_rank_methods() {
        // Strictly monotone transforms leave Spearman and tau-b unchanged.
        let mut rng = Rng::new(8);
        let x: Vec<f64> = (0..25).map(|_| rng.normal()).collect();
        let y: Vec<f64> = (0..25).map(|_| rng.normal()).collect();
        let fx: Vec<f64> = x.iter().map(|&v| math::exp(0.8 * v)).collect();
        for m in [CorrelationMethod::Spearman, CorrelationMethod::KendallTauB] {
            let (a, _) = correlate(&x, &y, m).unwrap();
            let (b, _) = correlate(&fx, &y, m).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
        // Pearson is invariant under positive affine maps.
        let ax: Vec<f64> = x.iter().map(|&v| 3.5 * v + 2.0).collect();
        let (p1, _) = correlate(&x, &y, CorrelationMethod::Pearson).unwrap();
        let (p2, _) = correlate(&ax, &y, CorrelationMethod::Pearson).unwrap();
        assert!((p1 - p2).abs() < 1e-12);
    }

    #[test]
    fn kendall_p_matches_classic_formula_without_ties() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let y = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0, 8.0, 7.0];
        let (tau, p) = correlate(&x, &y, CorrelationMethod::KendallTauB).unwrap();
        // No ties: tau = (C - D) / n0 and var(C - D) = n(n-1)(2n+5)/18.
        let n = 8.0;
        let n0 = n * (n - 1.0) / 2.0;
        let cmd = tau * n0;
        let z = cmd / math::sqrt(n * (n - 1.0) * (2.0 * n + 5.0) / 18.0);
        assert!((p - math::normal_two_sided_p(z)).abs() < 1e-12);
    }

    #[test]
    fn pearson_p_behaves_with_sample_size() {
        // Same coefficient, larger sample: smaller p.
        let x4: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let y4: Vec<f64> = x4.iter().map(|v| v + if v % 2.0 == 0.0 { 0.4 } else { -0.4 }).collect();
        let x8: Vec<f64> = x4.iter().chain(&x4).map(|&v| v).collect();
        let y8: Vec<f64> = y4.iter().chain(&y4).map(|&v| v).collect();
        let (_, p_small) = correlate(&x4, &y4, CorrelationMethod::Pearson).unwrap();
        let (_, p_big) = correlate(&x8, &y8, CorrelationMethod::Pearson).unwrap();
        assert!(p_big < p_small);
    }

    #[test]
    fn report_averages_the_three() {
        let x = [1.0, 3.0, 2.0, 5.0, 4.0, 6.0];
        let y = [1.5, 2.5, 2.2, 4.9, 5.0, 6.3];
        let r = CorrelationReport::from_scores(&x, &y).unwrap();
        assert!((r.average - (r.pearson + r.spearman + r.kendall) / 3.0).abs() < 1e-15);
        assert_eq!(r.n, 6);
    }

    #[test]
    fn five_number_summary_interpolates() {
        let values = [4.0, 1.0, 3.0, 2.0];
        let [min, q25, med, q75, max] = five_number_summary(&values).unwrap();
        assert_eq!(min, 1.0);
        assert_eq!(q25, 1.75);
        assert_eq!(med, 2.5);
        assert_eq!(q75, 3.25);
        assert_eq!(max, 4.0);
    }
}
