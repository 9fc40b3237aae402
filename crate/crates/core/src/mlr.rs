//! Multi-level ranking objective for pre-training.
//!
//! For one dialogue example the predicted scores form an L x K grid. Level
//! centroids are the per-level score means. Three hinge penalties apply:
//!
//! * separation: two centroids closer than `gap * margin` are pushed apart,
//!   where `gap` is the level distance and the centroid distance is L1;
//! * compactness: a score further than `tolerance` from its own centroid is
//!   pulled in;
//! * ordering: a higher level whose centroid falls below a lower level's is
//!   penalized by the inversion amount, fixing the direction the
//!   separation term alone leaves free.
//!
//! Hinge subgradients at the kink are taken as 0 (the inactive side).

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::report::LossReport;

/// Predicted scores for one example, `levels[j]` holding level j+1's
/// scores. Levels may have different sizes.
#[derive(Debug, Clone)]
pub struct ScoreGrid {
    pub levels: Vec<Vec<f64>>,
}

impl ScoreGrid {
    pub fn new(levels: Vec<Vec<f64>>) -> Self {
        ScoreGrid { levels }
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Per-level centroid scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids {
    pub values: Vec<f64>,
}

/// Margins of the ranking objective.
#[derive(Debug, Clone, Copy)]
pub struct MlrHyper {
    /// Lower bound on the centroid gap per unit of level distance.
    pub separation_margin: f64,
    /// Upper bound on the distance between a score and its centroid.
    pub compactness_tolerance: f64,
}

impl MlrHyper {
    pub fn new(separation_margin: f64, compactness_tolerance: f64) -> Result<Self> {
        if !(separation_margin > 0.0) {
            return Err(Error::InvalidConfig(
                "separation margin must be positive".to_string(),
            ));
        }
        if !(compactness_tolerance >= 0.0) {
            return Err(Error::InvalidConfig(
                "compactness tolerance must be non-negative".to_string(),
            ));
        }
        Ok(MlrHyper {
            separation_margin,
            compactness_tolerance,
        })
    }

    /// The margins only cooperate when the separation bound exceeds the
    /// compactness tolerance; callers may warn otherwise.
    pub fn is_recommended(&self) -> bool {
        self.separation_margin > self.compactness_tolerance
    }
}

impl Default for MlrHyper {
    fn default() -> Self {
        MlrHyper {
            separation_margin: 0.3,
            compactness_tolerance: 0.1,
        }
    }
}

/// Component switches for the ablation studies.
#[derive(Debug, Clone, Copy)]
pub struct MlrFlags {
    pub separation: bool,
    pub compactness: bool,
    pub ordering: bool,
}

impl Default for MlrFlags {
    fn default() -> Self {
        MlrFlags {
            separation: true,
            compactness: true,
            ordering: true,
        }
    }
}

/// Per-level mean of the predicted scores.
pub fn compute_centroids(grid: &ScoreGrid) -> Result<Centroids> {
    let mut values = Vec::with_capacity(grid.levels.len());
    for (j, level) in grid.levels.iter().enumerate() {
        if level.is_empty() {
            return Err(Error::InvalidInput(alloc::format!(
                "level {} has no scores",
                j + 1
            )));
        }
        values.push(crate::math::mean(level));
    }
    Ok(Centroids { values })
}

/// Sum over level pairs j < l of `max(0, (l-j)*margin - |e_j - e_l|)`.
pub fn separation_loss(centroids: &Centroids, hyper: &MlrHyper) -> f64 {
    let e = &centroids.values;
    let mut total = 0.0;
    for j in 0..e.len() {
        for l in j + 1..e.len() {
            let weight = (l - j) as f64;
            let hinge = weight * hyper.separation_margin - (e[j] - e[l]).abs();
            if hinge > 0.0 {
                total += hinge;
            }
        }
    }
    total
}

/// Sum over all scores of `max(0, |e_j - s| - tolerance)`.
pub fn compactness_loss(
    grid: &ScoreGrid,
    centroids: &Centroids,
    hyper: &MlrHyper,
) -> Result<f64> {
    if centroids.values.len() != grid.levels.len() {
        return Err(Error::ShapeMismatch(
            "centroids do not match the grid's level count".to_string(),
        ));
    }
    let mut total = 0.0;
    for (level, &e) in grid.levels.iter().zip(&centroids.values) {
        for &s in level {
            let hinge = (e - s).abs() - hyper.compactness_tolerance;
            if hinge > 0.0 {
                total += hinge;
            }
        }
    }
    Ok(total)
}

/// Sum over level pairs j < l of `max(0, e_j - e_l)`: zero exactly when no
/// higher level's centroid falls below a lower level's.
pub fn ordering_loss(centroids: &Centroids) -> f64 {
    let e = &centroids.values;
    let mut total = 0.0;
    for j in 0..e.len() {
        for l in j + 1..e.len() {
            if e[j] > e[l] {
                total += e[j] - e[l];
            }
        }
    }
    total
}

/// Batch-mean of the three components over a batch of score grids.
pub fn mlr_loss(grids: &[ScoreGrid], hyper: &MlrHyper) -> Result<LossReport> {
    mlr_loss_with_grad(grids, hyper, &MlrFlags::default()).map(|(report, _)| report)
}

/// Like [`mlr_loss`] but also returns dL/d(score) in the grid shapes, with
/// disabled components contributing nothing to either value or gradient.
pub fn mlr_loss_with_grad(
    grids: &[ScoreGrid],
    hyper: &MlrHyper,
    flags: &MlrFlags,
) -> Result<(LossReport, Vec<Vec<Vec<f64>>>)> {
    if grids.is_empty() {
        return Err(Error::InvalidInput("empty batch".to_string()));
    }
    let scale = 1.0 / grids.len() as f64;
    let mut sep_sum = 0.0;
    let mut com_sum = 0.0;
    let mut ord_sum = 0.0;
    let mut grid_grads = Vec::with_capacity(grids.len());

    for grid in grids {
        let centroids = compute_centroids(grid)?;
        let e = &centroids.values;
        let levels = grid.levels.len();
        let mut g_scores: Vec<Vec<f64>> =
            grid.levels.iter().map(|l| vec![0.0; l.len()]).collect();
        let mut g_centroids = vec![0.0; levels];

        if flags.separation {
            for j in 0..levels {
                for l in j + 1..levels {
                    let weight = (l - j) as f64;
                    let diff = e[j] - e[l];
                    let hinge = weight * hyper.separation_margin - diff.abs();
                    if hinge > 0.0 {
                        sep_sum += scale * hinge;
                        // d(-|e_j - e_l|)/de_j = -sign(diff)
                        let sign = if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        g_centroids[j] -= scale * sign;
                        g_centroids[l] += scale * sign;
                    }
                }
            }
        }

        if flags.compactness {
            for (j, level) in grid.levels.iter().enumerate() {
                let inv_k = 1.0 / level.len() as f64;
                for (k, &s) in level.iter().enumerate() {
                    let diff = e[j] - s;
                    let hinge = diff.abs() - hyper.compactness_tolerance;
                    if hinge > 0.0 {
                        com_sum += scale * hinge;
                        let sign = if diff > 0.0 {
                            1.0
                        } else if diff < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        // Through the centroid (every member) and directly.
                        for g in g_scores[j].iter_mut() {
                            *g += scale * sign * inv_k;
                        }
                        g_scores[j][k] -= scale * sign;
                    }
                }
            }
        }

        if flags.ordering {
            for j in 0..levels {
                for l in j + 1..levels {
                    if e[j] > e[l] {
                        ord_sum += scale * (e[j] - e[l]);
                        g_centroids[j] += scale;
                        g_centroids[l] -= scale;
                    }
                }
            }
        }

        // Chain centroid gradients into the scores (centroid = mean).
        for (j, level) in grid.levels.iter().enumerate() {
            let spread = g_centroids[j] / level.len() as f64;
            if spread != 0.0 {
                for g in g_scores[j].iter_mut() {
                    *g += spread;
                }
            }
        }
        grid_grads.push(g_scores);
    }

    let total = sep_sum + com_sum + ord_sum;
    let report = LossReport::new(
        vec![
            ("sep".to_string(), sep_sum),
            ("com".to_string(), com_sum),
            ("ord".to_string(), ord_sum),
        ],
        total,
    );
    Ok((report, grid_grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-12;

    fn grid(levels: &[&[f64]]) -> ScoreGrid {
        ScoreGrid::new(levels.iter().map(|l| l.to_vec()).collect())
    }

    fn hyper(sep: f64, com: f64) -> MlrHyper {
        MlrHyper::new(sep, com).unwrap()
    }

    #[test]
    fn centroid_is_the_mean() {
        let g = grid(&[&[0.2, 0.4, 0.6, 0.8, 1.0]]);
        let c = compute_centroids(&g).unwrap();
        assert!((c.values[0] - 0.6).abs() < TOL);
    }

    #[test]
    fn centroid_of_singleton_is_the_score() {
        let g = grid(&[&[0.37], &[0.81]]);
        let c = compute_centroids(&g).unwrap();
        assert_eq!(c.values, vec![0.37, 0.81]);
    }

    #[test]
    fn constant_levels_have_equal_centroids() {
        let g = grid(&[&[0.5, 0.5], &[0.5, 0.5, 0.5], &[0.5]]);
        let c = compute_centroids(&g).unwrap();
        assert!(c.values.iter().all(|&e| (e - 0.5).abs() < TOL));
    }

    #[test]
    fn empty_level_rejected() {
        let g = ScoreGrid::new(alloc::vec![alloc::vec![0.1], alloc::vec![]]);
        assert!(compute_centroids(&g).is_err());
    }

    #[test]
    fn separation_with_coincident_centroids() {
        // Three coincident centroids at margin 0.3: weights 1 + 2 + 1.
        let c = Centroids {
            values: alloc::vec![0.5, 0.5, 0.5],
        };
        let loss = separation_loss(&c, &hyper(0.3, 0.1));
        assert!((loss - 1.2).abs() < TOL);
    }

    #[test]
    fn separation_zero_when_margins_met() {
        // Gaps 0.4, 1.0, 0.6 against weighted margins 0.3, 0.6, 0.3.
        let c = Centroids {
            values: alloc::vec![0.0, 0.4, 1.0],
        };
        assert_eq!(separation_loss(&c, &hyper(0.3, 0.1)), 0.0);
    }

    #[test]
    fn separation_single_level_is_zero() {
        let c = Centroids {
            values: alloc::vec![0.7],
        };
        assert_eq!(separation_loss(&c, &hyper(0.3, 0.1)), 0.0);
    }

    #[test]
    fn compactness_within_tolerance_is_zero() {
        let g = grid(&[&[0.1, 0.3]]);
        let c = compute_centroids(&g).unwrap();
        assert!((c.values[0] - 0.2).abs() < TOL);
        let loss = compactness_loss(&g, &c, &hyper(0.3, 0.1)).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn compactness_beyond_tolerance_accumulates() {
        // Distances 0.2 each against tolerance 0.1: 0.1 + 0.1.
        let g = grid(&[&[0.0, 0.4]]);
        let c = compute_centroids(&g).unwrap();
        let loss = compactness_loss(&g, &c, &hyper(0.3, 0.1)).unwrap();
        assert!((loss - 0.2).abs() < TOL);
    }

    #[test]
    fn compactness_zero_when_scores_equal_centroid() {
        let g = grid(&[&[0.4, 0.4], &[0.9, 0.9]]);
        let c = compute_centroids(&g).unwrap();
        assert_eq!(compactness_loss(&g, &c, &hyper(0.3, 0.1)).unwrap(), 0.0);
    }

    #[test]
    fn ordering_zero_for_ascending() {
        let c = Centroids {
            values: alloc::vec![0.1, 0.5, 0.9],
        };
        assert_eq!(ordering_loss(&c), 0.0);
    }

    #[test]
    fn ordering_penalizes_descending() {
        // Pairs (1,2): 0.4, (1,3): 0.7, (2,3): 0.3.
        let c = Centroids {
            values: alloc::vec![0.9, 0.5, 0.2],
        };
        assert!((ordering_loss(&c) - 1.4).abs() < TOL);
    }

    #[test]
    fn ordering_equal_pair_contributes_zero() {
        let c = Centroids {
            values: alloc::vec![0.5, 0.5],
        };
        assert_eq!(ordering_loss(&c), 0.0);
    }

    #[test]
    fn mlr_total_sums_components() {
        // sep 1.2 (coincident centroids), com 0.2, ord 0 -> total 1.4.
        let g = grid(&[&[0.0, 0.4], &[0.2, 0.2], &[0.2, 0.2]]);
        let report = mlr_loss(&[g], &hyper(0.3, 0.1)).unwrap();
        assert!((report.component("sep").unwrap() - 1.2).abs() < TOL);
        assert!((report.component("com").unwrap() - 0.2).abs() < TOL);
        assert_eq!(report.component("ord").unwrap(), 0.0);
        assert!((report.total - 1.4).abs() < TOL);
    }

    #[test]
    fn duplicate_examples_average_to_the_same_total() {
        let g = grid(&[&[0.0, 0.4], &[0.2, 0.2], &[0.2, 0.2]]);
        let one = mlr_loss(&[g.clone()], &hyper(0.3, 0.1)).unwrap();
        let two = mlr_loss(&[g.clone(), g], &hyper(0.3, 0.1)).unwrap();
        assert!((one.total - two.total).abs() < TOL);
    }

    #[test]
    fn well_separated_ascending_grid_reaches_zero() {
        let g = grid(&[
            &[0.03, 0.05, 0.07, 0.05, 0.05],
            &[0.48, 0.5, 0.52, 0.5, 0.5],
            &[0.93, 0.95, 0.97, 0.95, 0.95],
        ]);
        let report = mlr_loss(&[g], &hyper(0.3, 0.1)).unwrap();
        assert_eq!(report.total, 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        assert!(mlr_loss(&[], &hyper(0.3, 0.1)).is_err());
    }

    /// Central finite difference of the batched loss wrt one score.
    fn fd_grad(grids: &[ScoreGrid], hyper: &MlrHyper, ex: usize, j: usize, k: usize) -> f64 {
        let h = 1e-6;
        let mut plus = grids.to_vec();
        plus[ex].levels[j][k] += h;
        let mut minus = grids.to_vec();
        minus[ex].levels[j][k] -= h;
        let lp = mlr_loss(&plus, hyper).unwrap().total;
        let lm = mlr_loss(&minus, hyper).unwrap().total;
        (lp - lm) / (2.0 * h)
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let grids = alloc::vec![
            grid(&[&[0.11, 0.42], &[0.35, 0.27, 0.66], &[0.72, 0.58]]),
            grid(&[&[0.9, 0.82], &[0.4], &[0.15, 0.33]]),
        ];
        let hy = hyper(0.3, 0.1);
        let (_, grads) = mlr_loss_with_grad(&grids, &hy, &MlrFlags::default()).unwrap();
        for ex in 0..grids.len() {
            for j in 0..grids[ex].levels.len() {
                for k in 0..grids[ex].levels[j].len() {
                    let fd = fd_grad(&grids, &hy, ex, j, k);
                    let an = grads[ex][j][k];
                    assert!(
                        (an - fd).abs() <= 1e-4 * an.abs().max(fd.abs()).max(1e-3),
                        "ex={ex} j={j} k={k}: analytic {an} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn disabled_components_drop_out() {
        let grids = alloc::vec![grid(&[&[0.9, 0.82], &[0.4], &[0.15, 0.33]])];
        let hy = hyper(0.3, 0.1);
        let flags = MlrFlags {
            separation: false,
            compactness: false,
            ordering: false,
        };
        let (report, grads) = mlr_loss_with_grad(&grids, &hy, &flags).unwrap();
        assert_eq!(report.total, 0.0);
        assert!(grads[0].iter().flatten().all(|&g| g == 0.0));
    }

    proptest! {
        #[test]
        fn translation_invariance(
            delta in -0.5f64..0.5,
            base in proptest::collection::vec(0.0f64..1.0, 6..12),
        ) {
            let l1 = base[..3].to_vec();
            let l2 = base[3..].to_vec();
            let g = ScoreGrid::new(alloc::vec![l1.clone(), l2.clone()]);
            let shifted = ScoreGrid::new(alloc::vec![
                l1.iter().map(|s| s + delta).collect(),
                l2.iter().map(|s| s + delta).collect(),
            ]);
            let hy = hyper(0.3, 0.1);
            let a = mlr_loss(&[g], &hy).unwrap();
            let b = mlr_loss(&[shifted], &hy).unwrap();
            prop_assert!((a.total - b.total).abs() < 1e-9);
            for (x, y) in a.components.iter().zip(&b.components) {
                prop_assert!((x.1 - y.1).abs() < 1e-9);
            }
        }

        #[test]
        fn components_non_negative(
            scores in proptest::collection::vec(0.0f64..1.0, 9),
            sep in 0.05f64..0.6,
            com in 0.0f64..0.3,
        ) {
            let g = ScoreGrid::new(alloc::vec![
                scores[..3].to_vec(),
                scores[3..6].to_vec(),
                scores[6..].to_vec(),
            ]);
            let report = mlr_loss(&[g], &hyper(sep, com)).unwrap();
            for (_, v) in &report.components {
                prop_assert!(*v >= 0.0);
            }
            prop_assert!(report.total >= 0.0);
        }

        #[test]
        fn monotone_in_margins(
            scores in proptest::collection::vec(0.0f64..1.0, 6),
            sep in 0.05f64..0.5,
            com in 0.0f64..0.3,
            bump in 0.01f64..0.2,
        ) {
            let g = ScoreGrid::new(alloc::vec![scores[..3].to_vec(), scores[3..].to_vec()]);
            let c = compute_centroids(&g).unwrap();
            // Raising the separation margin never lowers separation loss.
            let s1 = separation_loss(&c, &hyper(sep, com));
            let s2 = separation_loss(&c, &hyper(sep + bump, com));
            prop_assert!(s2 >= s1 - 1e-12);
            // Raising the tolerance never raises compactness loss.
            let c1 = compactness_loss(&g, &c, &hyper(sep, com)).unwrap();
            let c2 = compactness_loss(&g, &c, &hyper(sep, com + bump)).unwrap();
            prop_assert!(c2 <= c1 + 1e-12);
        }

        #[test]
        fn level_swap_changes_only_ordering(
            scores in proptest::collection::vec(0.0f64..1.0, 6),
        ) {
            let a = ScoreGrid::new(alloc::vec![scores[..3].to_vec(), scores[3..].to_vec()]);
            let b = ScoreGrid::new(alloc::vec![scores[3..].to_vec(), scores[..3].to_vec()]);
            let hy = hyper(0.3, 0.1);
            let ca = compute_centroids(&a).unwrap();
            let cb = compute_centroids(&b).unwrap();
            prop_assert!((separation_loss(&ca, &hy) - separation_loss(&cb, &hy)).abs() < 1e-12);
            let coma = compactness_loss(&a, &ca, &hy).unwrap();
            let comb = compactness_loss(&b, &cb, &hy).unwrap();
            prop_assert!((coma - comb).abs() < 1e-12);
            // Ordering differs whenever the two centroids differ.
            if (ca.values[0] - ca.values[1]).abs() > 1e-9 {
                prop_assert!((ordering_loss(&ca) - ordering_loss(&cb)).abs() > 1e-12);
            }
        }
    }
}
