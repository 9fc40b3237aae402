//! Comparison pre-training objectives.
//!
//! Two two-level objectives (binary cross-entropy, margin ranking) operate
//! on scores via a [`TwoLevelView`] that treats the top level as positive
//! and everything below as negative. Three multi-level objectives also
//! exist: a supervised contrastive loss and a point-to-cluster triplet
//! relaxation over pooled encoder features, and a pairwise multi-level
//! extension of margin ranking over scores. Every loss comes with its
//! analytic gradient so all of them can drive encoder pre-training.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::mlr::ScoreGrid;

const NORM_FLOOR: f64 = 1e-12;

/// Scores split into the top level (positives) and all lower levels
/// (negatives), in grid order.
#[derive(Debug, Clone)]
pub struct TwoLevelView {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl TwoLevelView {
    /// Top level becomes the positive set; levels below concatenate into
    /// the negative set in level order.
    pub fn from_grid(grid: &ScoreGrid) -> Self {
        let mut negatives = Vec::new();
        let last = grid.levels.len().saturating_sub(1);
        for level in &grid.levels[..last] {
            negatives.extend_from_slice(level);
        }
        TwoLevelView {
            positives: grid.levels.get(last).cloned().unwrap_or_default(),
            negatives,
        }
    }
}

/// Gradients with respect to a [`TwoLevelView`]'s scores.
#[derive(Debug, Clone)]
pub struct ViewGrads {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

/// Pooled encoder features in the grid layout, one vector per
/// context-response pair.
#[derive(Debug, Clone)]
pub struct FeatureGrid {
    pub levels: Vec<Vec<Vec<f64>>>,
}

impl FeatureGrid {
    pub fn new(levels: Vec<Vec<Vec<f64>>>) -> Self {
        FeatureGrid { levels }
    }

    fn dim(&self) -> Result<usize> {
        let dim = self
            .levels
            .iter()
            .flatten()
            .next()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("empty feature grid".to_string()))?;
        for f in self.levels.iter().flatten() {
            if f.len() != dim {
                return Err(Error::ShapeMismatch(
                    "feature vectors differ in dimension".to_string(),
                ));
            }
        }
        Ok(dim)
    }

    /// Unit-normalized copy (L2, floored at 1e-12) for contrastive use.
    pub fn normalized(&self) -> FeatureGrid {
        FeatureGrid {
            levels: self
                .levels
                .iter()
                .map(|level| {
                    level
                        .iter()
                        .map(|f| {
                            let norm = math::l2_norm(f).max(NORM_FLOOR);
                            f.iter().map(|x| x / norm).collect()
                        })
                        .collect()
                })
                .collect(),
        }
    }

    fn zeros_like(&self) -> Vec<Vec<Vec<f64>>> {
        self.levels
            .iter()
            .map(|level| level.iter().map(|f| vec![0.0; f.len()]).collect())
            .collect()
    }
}

/// Mean binary cross-entropy with targets 1 (positives) and 0 (negatives).
pub fn bce_loss(view: &TwoLevelView) -> f64 {
    bce_loss_with_grad(view).0
}

pub fn bce_loss_with_grad(view: &TwoLevelView) -> (f64, ViewGrads) {
    let n = (view.positives.len() + view.negatives.len()) as f64;
    let mut loss = 0.0;
    let mut gp = vec![0.0; view.positives.len()];
    let mut gn = vec![0.0; view.negatives.len()];
    if n == 0.0 {
        return (0.0, ViewGrads { positives: gp, negatives: gn });
    }
    for (g, &s) in gp.iter_mut().zip(&view.positives) {
        loss -= math::ln(s);
        *g = -1.0 / (s * n);
    }
    for (g, &s) in gn.iter_mut().zip(&view.negatives) {
        loss -= math::ln(1.0 - s);
        *g = 1.0 / ((1.0 - s) * n);
    }
    (loss / n, ViewGrads { positives: gp, negatives: gn })
}

/// Mean over all (positive, negative) pairs of
/// `max(0, margin - (s_pos - s_neg))`.
pub fn margin_ranking_loss(view: &TwoLevelView, margin: f64) -> Result<f64> {
    margin_ranking_loss_with_grad(view, margin).map(|(l, _)| l)
}

pub fn margin_ranking_loss_with_grad(
    view: &TwoLevelView,
    margin: f64,
) -> Result<(f64, ViewGrads)> {
    if !(margin > 0.0) {
        return Err(Error::InvalidConfig("margin must be positive".to_string()));
    }
    let pairs = view.positives.len() * view.negatives.len();
    let mut gp = vec![0.0; view.positives.len()];
    let mut gn = vec![0.0; view.negatives.len()];
    if pairs == 0 {
        return Ok((0.0, ViewGrads { positives: gp, negatives: gn }));
    }
    let scale = 1.0 / pairs as f64;
    let mut loss = 0.0;
    for (pi, &sp) in view.positives.iter().enumerate() {
        for (ni, &sn) in view.negatives.iter().enumerate() {
            let hinge = margin - (sp - sn);
            if hinge > 0.0 {
                loss += scale * hinge;
                gp[pi] -= scale;
                gn[ni] += scale;
            }
        }
    }
    Ok((loss, ViewGrads { positives: gp, negatives: gn }))
}

/// Supervised contrastive loss with coherence levels as classes, cosine
/// similarity on internally normalized features.
///
/// Anchors are samples whose level has at least one other member; levels
/// with a single member still serve as negatives. The result is the mean
/// over anchors of the mean over same-level positives of
/// `-log softmax(sim / temperature)` against all other samples.
pub fn supcon_loss(features: &FeatureGrid, temperature: f64) -> Result<f64> {
    supcon_loss_with_grad(features, temperature).map(|(l, _)| l)
}

pub fn supcon_loss_with_grad(
    features: &FeatureGrid,
    temperature: f64,
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    if !(temperature > 0.0) {
        return Err(Error::InvalidConfig(
            "temperature must be positive".to_string(),
        ));
    }
    let dim = features.dim()?;
    let flat: Vec<(usize, &Vec<f64>)> = features
        .levels
        .iter()
        .enumerate()
        .flat_map(|(j, level)| level.iter().map(move |f| (j, f)))
        .collect();
    let n = flat.len();
    let norms: Vec<f64> = flat
        .iter()
        .map(|(_, f)| math::l2_norm(f).max(NORM_FLOOR))
        .collect();
    let z: Vec<Vec<f64>> = flat
        .iter()
        .zip(&norms)
        .map(|((_, f), &norm)| f.iter().map(|x| x / norm).collect())
        .collect();

    let anchors: Vec<usize> = (0..n)
        .filter(|&i| flat.iter().enumerate().any(|(a, s)| a != i && s.0 == flat[i].0))
        .collect();
    if anchors.is_empty() {
        return Err(Error::InvalidInput(
            "no valid anchors: every level is a singleton".to_string(),
        ));
    }

    let mut gz = vec![vec![0.0; dim]; n];
    let mut loss = 0.0;
    let anchor_scale = 1.0 / anchors.len() as f64;
    for &i in &anchors {
        let positives: Vec<usize> = (0..n)
            .filter(|&p| p != i && flat[p].0 == flat[i].0)
            .collect();
        let sims: Vec<f64> = (0..n)
            .map(|a| math::dot(&z[i], &z[a]) / temperature)
            .collect();
        let max = (0..n)
            .filter(|&a| a != i)
            .map(|a| sims[a])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for a in 0..n {
            if a != i {
                denom += math::exp(sims[a] - max);
            }
        }
        let log_denom = max + math::ln(denom);
        let pos_scale = 1.0 / positives.len() as f64;
        for &p in &positives {
            loss += anchor_scale * pos_scale * (log_denom - sims[p]);
            // Positive-pair pull.
            for k in 0..dim {
                gz[i][k] -= anchor_scale * pos_scale * z[p][k] / temperature;
                gz[p][k] -= anchor_scale * pos_scale * z[i][k] / temperature;
            }
        }
        // Softmax push over all non-anchor samples.
        for a in 0..n {
            if a == i {
                continue;
            }
            let w = math::exp(sims[a] - log_denom);
            for k in 0..dim {
                gz[i][k] += anchor_scale * w * z[a][k] / temperature;
                gz[a][k] += anchor_scale * w * z[i][k] / temperature;
            }
        }
    }

    // Chain through the normalization: g_f = (g_z - (g_z . z) z) / ||f||.
    let mut grads = features.zeros_like();
    let mut idx = 0;
    for level in grads.iter_mut() {
        for g_f in level.iter_mut() {
            let gdotz = math::dot(&gz[idx], &z[idx]);
            for k in 0..dim {
                g_f[k] = (gz[idx][k] - gdotz * z[idx][k]) / norms[idx];
            }
            idx += 1;
        }
    }
    Ok((loss, grads))
}

/// Point-to-cluster triplet relaxation with levels as classes: for each
/// anchor, `max(0, margin + d(anchor, own centroid) - min over other
/// levels of d(anchor, that centroid))` with squared-L2 distances to
/// feature-space level centroids, summed over anchors.
pub fn fat_loss(features: &FeatureGrid, margin: f64) -> Result<f64> {
    fat_loss_with_grad(features, margin).map(|(l, _)| l)
}

pub fn fat_loss_with_grad(
    features: &FeatureGrid,
    margin: f64,
) -> Result<(f64, Vec<Vec<Vec<f64>>>)> {
    if !(margin > 0.0) {
        return Err(Error::InvalidConfig("margin must be positive".to_string()));
    }
    if features.levels.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 levels".to_string()));
    }
    for (j, level) in features.levels.iter().enumerate() {
        if level.is_empty() {
            return Err(Error::InvalidInput(alloc::format!(
                "level {} has no members",
                j + 1
            )));
        }
    }
    let dim = features.dim()?;
    let centroids: Vec<Vec<f64>> = features
        .levels
        .iter()
        .map(|level| {
            let mut c = vec![0.0; dim];
            for f in level {
                for k in 0..dim {
                    c[k] += f[k];
                }
            }
            for v in c.iter_mut() {
                *v /= level.len() as f64;
            }
            c
        })
        .collect();

    let sq_dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut loss = 0.0;
    let mut grads = features.zeros_like();
    for (j, level) in features.levels.iter().enumerate() {
        let k_own = level.len() as f64;
        for (a_idx, anchor) in level.iter().enumerate() {
            let d_own = sq_dist(anchor, &centroids[j]);
            let (nearest, d_other) = centroids
                .iter()
                .enumerate()
                .filter(|(l, _)| *l != j)
                .map(|(l, c)| (l, sq_dist(anchor, c)))
                .fold((usize::MAX, f64::INFINITY), |best, cur| {
                    if cur.1 < best.1 {
                        cur
                    } else {
                        best
                    }
                });
            let term = margin + d_own - d_other;
            if term > 0.0 {
                loss += term;
                let k_near = features.levels[nearest].len() as f64;
                for k in 0..dim {
                    let towards_own = 2.0 * (anchor[k] - centroids[j][k]);
                    let towards_other = 2.0 * (anchor[k] - centroids[nearest][k]);
                    grads[j][a_idx][k] += towards_own - towards_other;
                    for member in grads[j].iter_mut() {
                        member[k] -= towards_own / k_own;
                    }
                    for member in grads[nearest].iter_mut() {
                        member[k] += towards_other / k_near;
                    }
                }
            }
        }
    }
    Ok((loss, grads))
}

/// Pairwise multi-level extension of margin ranking: mean over all level
/// pairs j < l and all cross pairs of `max(0, margin - (s_l - s_j))`.
pub fn vanilla_mlr_loss(grid: &ScoreGrid, margin: f64) -> Result<f64> {
    vanilla_mlr_loss_with_grad(grid, margin).map(|(l, _)| l)
}

pub fn vanilla_mlr_loss_with_grad(
    grid: &ScoreGrid,
    margin: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if !(margin > 0.0) {
        return Err(Error::InvalidConfig("margin must be positive".to_string()));
    }
    if grid.levels.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 levels".to_string()));
    }
    let levels = &grid.levels;
    let mut pairs = 0usize;
    for j in 0..levels.len() {
        for l in j + 1..levels.len() {
            pairs += levels[j].len() * levels[l].len();
        }
    }
    let mut grads: Vec<Vec<f64>> = levels.iter().map(|l| vec![0.0; l.len()]).collect();
    if pairs == 0 {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / pairs as f64;
    let mut loss = 0.0;
    for j in 0..levels.len() {
        for l in j + 1..levels.len() {
            for (kj, &lo) in levels[j].iter().enumerate() {
                for (kl, &hi) in levels[l].iter().enumerate() {
                    let hinge = margin - (hi - lo);
                    if hinge > 0.0 {
                        loss += scale * hinge;
                        grads[j][kj] += scale;
                        grads[l][kl] -= scale;
                    }
                }
            }
        }
    }
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    const TOL: f64 = 1e-12;

    fn view(pos: &[f64], neg: &[f64]) -> TwoLevelView {
        TwoLevelView {
            positives: pos.to_vec(),
            negatives: neg.to_vec(),
        }
    }

    #[test]
    fn view_from_grid_splits_top_level() {
        let grid = ScoreGrid::new(vec![vec![0.1, 0.2], vec![0.4], vec![0.8, 0.9]]);
        let v = TwoLevelView::from_grid(&grid);
        assert_eq!(v.positives, vec![0.8, 0.9]);
        assert_eq!(v.negatives, vec![0.1, 0.2, 0.4]);
    }

    #[test]
    fn bce_uninformative_scores() {
        let v = view(&[0.5, 0.5], &[0.5, 0.5, 0.5]);
        let expected = -math::ln(0.5);
        assert!((bce_loss(&v) - expected).abs() < TOL);
    }

    #[test]
    fn bce_vanishes_for_confident_scores() {
        let eps = 1e-9;
        let v = view(&[1.0 - eps], &[eps]);
        assert!(bce_loss(&v) < 1e-8);
    }

    #[test]
    fn bce_symmetric_around_half() {
        // Swapping the sets with scores mirrored about 0.5 leaves the loss
        // unchanged.
        let a = view(&[0.7, 0.9], &[0.2]);
        let b = view(&[0.8], &[0.3, 0.1]);
        assert!((bce_loss(&a) - bce_loss(&b)).abs() < TOL);
    }

    #[test]
    fn ranking_inactive_when_separated() {
        let v = view(&[0.9, 0.8], &[0.1, 0.2]);
        assert_eq!(margin_ranking_loss(&v, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn ranking_single_pair_hinge() {
        let v = view(&[0.6], &[0.5]);
        assert!((margin_ranking_loss(&v, 0.3).unwrap() - 0.2).abs() < TOL);
    }

    #[test]
    fn ranking_equal_scores_cost_the_margin() {
        let v = view(&[0.4, 0.4], &[0.4]);
        assert!((margin_ranking_loss(&v, 0.25).unwrap() - 0.25).abs() < TOL);
    }

    fn features(levels: &[&[&[f64]]]) -> FeatureGrid {
        FeatureGrid::new(
            levels
                .iter()
                .map(|l| l.iter().map(|f| f.to_vec()).collect())
                .collect(),
        )
    }

    /// Naive reference: explicit anchor/positive/denominator loops on
    /// normalized features, no log-sum-exp tricks.
    fn supcon_brute_force(features: &FeatureGrid, temperature: f64) -> f64 {
        let normed = features.normalized();
        let flat: Vec<(usize, Vec<f64>)> = normed
            .levels
            .iter()
            .enumerate()
            .flat_map(|(j, level)| level.iter().map(move |f| (j, f.clone())))
            .collect();
        let n = flat.len();
        let mut total = 0.0;
        let mut anchors = 0usize;
        for i in 0..n {
            let pos: Vec<usize> = (0..n)
                .filter(|&p| p != i && flat[p].0 == flat[i].0)
                .collect();
            if pos.is_empty() {
                continue;
            }
            anchors += 1;
            let mut denom = 0.0;
            for a in 0..n {
                if a != i {
                    denom += math::exp(math::dot(&flat[i].1, &flat[a].1) / temperature);
                }
            }
            let mut term = 0.0;
            for &p in &pos {
                let sim = math::dot(&flat[i].1, &flat[p].1) / temperature;
                term -= math::ln(math::exp(sim) / denom);
            }
            total += term / pos.len() as f64;
        }
        total / anchors as f64
    }

    #[test]
    fn supcon_orthogonal_pairs_worked_example() {
        // Two levels, two identical members each, orthogonal across levels,
        // temperature 1: every anchor contributes -ln(e / (e + 2)).
        let f = features(&[
            &[&[1.0, 0.0], &[1.0, 0.0]],
            &[&[0.0, 1.0], &[0.0, 1.0]],
        ]);
        let loss = supcon_loss(&f, 1.0).unwrap();
        let e = math::exp(1.0);
        let expected = -math::ln(e / (e + 2.0));
        assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
        assert!((supcon_brute_force(&f, 1.0) - expected).abs() < 1e-12);
    }

    #[test]
    fn supcon_identical_features_uniform_value() {
        // n = 6 identical vectors in 3 levels of 2: each anchor's softmax
        // is uniform over the 5 others, so the loss is ln 5.
        let f = features(&[
            &[&[0.3, 0.4], &[0.3, 0.4]],
            &[&[0.3, 0.4], &[0.3, 0.4]],
            &[&[0.3, 0.4], &[0.3, 0.4]],
        ]);
        let loss = supcon_loss(&f, 0.7).unwrap();
        let brute = supcon_brute_force(&f, 0.7);
        assert!((loss - math::ln(5.0)).abs() < 1e-10);
        assert!((loss - brute).abs() < 1e-12);
    }

    #[test]
    fn supcon_high_temperature_limit_is_uniform() {
        let mut rng = Rng::new(5);
        let f = FeatureGrid::new(
            (0..2)
                .map(|_| {
                    (0..3)
                        .map(|_| (0..4).map(|_| rng.normal()).collect())
                        .collect()
                })
                .collect(),
        );
        let loss = supcon_loss(&f, 1e6).unwrap();
        assert!((loss - math::ln(5.0)).abs() < 1e-4);
    }

    #[test]
    fn supcon_matches_brute_force_on_random_inputs() {
        let mut rng = Rng::new(99);
        for round in 0..10 {
            let sizes = [2 + round % 3, 2, 1 + round % 2];
            let f = FeatureGrid::new(
                sizes
                    .iter()
                    .map(|&k| {
                        (0..k)
                            .map(|_| (0..5).map(|_| rng.normal()).collect())
                            .collect()
                    })
                    .collect(),
            );
            let fast = supcon_loss(&f, 0.07).unwrap();
            let brute = supcon_brute_force(&f, 0.07);
            assert!((fast - brute).abs() < 1e-10, "round {round}");
        }
    }

    #[test]
    fn supcon_all_singletons_rejected() {
        let f = features(&[&[&[1.0, 0.0]], &[&[0.0, 1.0]]]);
        assert!(supcon_loss(&f, 1.0).is_err());
    }

    #[test]
    fn fat_anchors_at_centroids_far_clusters() {
        let f = features(&[&[&[0.0, 0.0]], &[&[10.0, 0.0]]]);
        assert_eq!(fat_loss(&f, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn fat_one_dimensional_worked_example() {
        // Centroids at 0 and 1, each level a single anchor at its own
        // centroid, margin 0.5: max(0, 0.5 + 0 - 1) = 0 per anchor.
        let f = features(&[&[&[0.0]], &[&[1.0]]]);
        assert_eq!(fat_loss(&f, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn fat_equidistant_anchor_costs_the_margin() {
        // Both levels share centroid 0.5 and every anchor is equidistant
        // from both, so each of the 4 anchors contributes exactly margin.
        let f = features(&[&[&[0.0], &[1.0]], &[&[0.0], &[1.0]]]);
        let loss = fat_loss(&f, 0.5).unwrap();
        assert!((loss - 4.0 * 0.5).abs() < TOL);
    }

    #[test]
    fn fat_rejects_missing_levels() {
        let f = features(&[&[&[0.0]]]);
        assert!(fat_loss(&f, 0.5).is_err());
        let empty = FeatureGrid::new(vec![vec![vec![0.0]], vec![]]);
        assert!(fat_loss(&empty, 0.5).is_err());
    }

    #[test]
    fn vanilla_inactive_when_separated_by_margin() {
        let g = ScoreGrid::new(vec![vec![0.1, 0.2], vec![0.6, 0.7]]);
        assert_eq!(vanilla_mlr_loss(&g, 0.3).unwrap(), 0.0);
    }

    #[test]
    fn vanilla_single_pair_hinge() {
        let g = ScoreGrid::new(vec![vec![0.5], vec![0.6]]);
        assert!((vanilla_mlr_loss(&g, 0.3).unwrap() - 0.2).abs() < TOL);
    }

    #[test]
    fn vanilla_uniform_scores_cost_the_margin() {
        let g = ScoreGrid::new(vec![vec![0.4, 0.4], vec![0.4], vec![0.4, 0.4]]);
        assert!((vanilla_mlr_loss(&g, 0.3).unwrap() - 0.3).abs() < TOL);
    }

    #[test]
    fn vanilla_degenerates_to_margin_ranking() {
        // L = 2 with one score per level: identical to margin ranking on
        // the induced view.
        let g = ScoreGrid::new(vec![vec![0.45], vec![0.55]]);
        let v = TwoLevelView::from_grid(&g);
        let a = vanilla_mlr_loss(&g, 0.3).unwrap();
        let b = margin_ranking_loss(&v, 0.3).unwrap();
        assert!((a - b).abs() < TOL);
    }

    /// Shared finite-difference checker over a generic closure.
    fn assert_fd(analytic: f64, fd: f64, what: &str) {
        let denom = analytic.abs().max(fd.abs()).max(1e-3);
        assert!(
            (analytic - fd).abs() / denom <= 1e-4,
            "{what}: analytic {analytic} vs fd {fd}"
        );
    }

    #[test]
    fn score_loss_gradients_match_finite_differences() {
        let g = ScoreGrid::new(vec![vec![0.31, 0.52], vec![0.47], vec![0.66, 0.81]]);
        let v = TwoLevelView::from_grid(&g);
        let h = 1e-6;

        let (_, bg) = bce_loss_with_grad(&v);
        let (_, rg) = margin_ranking_loss_with_grad(&v, 0.3).unwrap();
        for i in 0..v.positives.len() {
            let mut plus = v.clone();
            plus.positives[i] += h;
            let mut minus = v.clone();
            minus.positives[i] -= h;
            assert_fd(
                bg.positives[i],
                (bce_loss(&plus) - bce_loss(&minus)) / (2.0 * h),
                "bce pos",
            );
            assert_fd(
                rg.positives[i],
                (margin_ranking_loss(&plus, 0.3).unwrap()
                    - margin_ranking_loss(&minus, 0.3).unwrap())
                    / (2.0 * h),
                "rank pos",
            );
        }

        let (_, vg) = vanilla_mlr_loss_with_grad(&g, 0.3).unwrap();
        for j in 0..g.levels.len() {
            for k in 0..g.levels[j].len() {
                let mut plus = g.clone();
                plus.levels[j][k] += h;
                let mut minus = g.clone();
                minus.levels[j][k] -= h;
                assert_fd(
                    vg[j][k],
                    (vanilla_mlr_loss(&plus, 0.3).unwrap()
                        - vanilla_mlr_loss(&minus, 0.3).unwrap())
                        / (2.0 * h),
                    "vanilla",
                );
            }
        }
    }

    #[test]
    fn feature_loss_gradients_match_finite_differences() {
        let mut rng = Rng::new(17);
        let f = FeatureGrid::new(
            (0..3)
                .map(|_| {
                    (0..2)
                        .map(|_| (0..4).map(|_| rng.normal()).collect())
                        .collect()
                })
                .collect(),
        );
        let h = 1e-6;
        let (_, sg) = supcon_loss_with_grad(&f, 0.5).unwrap();
        let (_, fg) = fat_loss_with_grad(&f, 0.5).unwrap();
        for j in 0..f.levels.len() {
            for k in 0..f.levels[j].len() {
                for d in 0..4 {
                    let mut plus = f.clone();
                    plus.levels[j][k][d] += h;
                    let mut minus = f.clone();
                    minus.levels[j][k][d] -= h;
                    assert_fd(
                        sg[j][k][d],
                        (supcon_loss(&plus, 0.5).unwrap() - supcon_loss(&minus, 0.5).unwrap())
                            / (2.0 * h),
                        "supcon",
                    );
                    assert_fd(
                        fg[j][k][d],
                        (fat_loss(&plus, 0.5).unwrap() - fat_loss(&minus, 0.5).unwrap())
                            / (2.0 * h),
                        "fat",
                    );
                }
            }
        }
    }

    #[test]
    fn normalized_features_are_unit_length() {
        let f = features(&[&[&[3.0, 4.0]], &[&[0.1, 0.0]]]);
        for level in &f.normalized().levels {
            for v in level {
                assert!((math::l2_norm(v) - 1.0).abs() < 1e-6);
            }
        }
    }
}
