//! Two-stage ground-truth assignment: sticky track-query matching on the
//! previously matched ground truth, then Hungarian matching of proposal
//! queries to the remaining ground truths under an L1 + focal cost.

use std::collections::{HashMap, HashSet};

use thiserror::Error;

use crate::geom::{encode_box, encoding_l1, Box3D, TrackingClass};
use crate::scalar::Real;
use crate::Scalar;

#[derive(Debug, Error)]
pub enum AssignError {
    #[error("non-finite cost at ({0}, {1})")]
    NonFiniteCost(usize, usize),
    #[error("two track predictions carry the same prev_gt {0:?}")]
    DuplicatePrevGt(String),
    #[error("duplicate ground-truth id {0:?}")]
    DuplicateGtId(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Proposal,
    Track,
}

/// One decoded query prediction entering assignment.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub slot_ref: u64,
    pub kind: QueryKind,
    pub box3d: Box3D<Scalar>,
    /// Per-class confidence in class enum order.
    pub class_scores: [Scalar; 7],
    /// The slot's previously matched ground-truth track id (track queries only).
    pub prev_gt: Option<String>,
}

/// Classification-cost settings for [`match_cost`].
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct CostConfig {
    pub alpha: Scalar,
    pub gamma: Scalar,
    /// When set, unmatched-class scores also contribute background focal terms.
    pub bipolar: bool,
}

impl Default for CostConfig {
    fn default() -> Self {
        CostConfig {
            alpha: 0.25,
            gamma: 2.0,
            bipolar: false,
        }
    }
}

/// Positive-class focal term `-alpha * (1 - p)^gamma * ln(p)`.
pub fn focal_positive<T: Real>(p: T, alpha: T, gamma: T) -> T {
    let eps = T::from_f64(1e-12).unwrap();
    let p = p.max(eps).min(T::one() - eps);
    -alpha * (T::one() - p).powf(gamma) * p.ln()
}

/// Background focal term `-(1 - alpha) * p^gamma * ln(1 - p)`.
pub fn focal_negative<T: Real>(p: T, alpha: T, gamma: T) -> T {
    let eps = T::from_f64(1e-12).unwrap();
    let p = p.max(eps).min(T::one() - eps);
    -(T::one() - alpha) * p.powf(gamma) * (T::one() - p).ln()
}

/// Matching cost: L1 over the 10-dim box encodings plus the focal
/// classification cost on the ground-truth class.
pub fn match_cost(
    pred: &Prediction,
    gt_box: &Box3D<Scalar>,
    gt_class: TrackingClass,
    cfg: &CostConfig,
) -> Scalar {
    let reg = encoding_l1(&encode_box(&pred.box3d), &encode_box(gt_box));
    let p = pred.class_scores[gt_class.index()];
    let mut cls = focal_positive(p, cfg.alpha, cfg.gamma);
    if cfg.bipolar {
        for (k, &score) in pred.class_scores.iter().enumerate() {
            if k != gt_class.index() {
                cls += focal_negative(score, cfg.alpha, cfg.gamma);
            }
        }
    }
    reg + cls
}

/// Result of the Hungarian solver: per-row column (or none on the larger
/// side of a rectangular problem) and the minimal total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment<T> {
    pub row_to_col: Vec<Option<usize>>,
    pub total: T,
}

// Problems up to this square dimension get the exact lexicographic-smallest
// tie-break (re-solving subproblems); larger ones keep the solver's own
// deterministic order.
const LEXICO_LIMIT: usize = 32;

/// Minimum-cost assignment of `min(n, m)` rows to columns.
///
/// Rectangular matrices are padded square with a finite sentinel (max entry
/// plus one), which leaves the optimum unchanged. Among optimal assignments
/// the lexicographically smallest row-to-column vector is returned.
pub fn hungarian<T: Real>(costs: &[Vec<T>]) -> Result<Assignment<T>, AssignError> {
    let n = costs.len();
    let m = costs.first().map_or(0, |r| r.len());
    for (i, row) in costs.iter().enumerate() {
        assert_eq!(row.len(), m, "ragged cost matrix");
        for (j, &c) in row.iter().enumerate() {
            if !c.is_finite() {
                return Err(AssignError::NonFiniteCost(i, j));
            }
        }
    }
    if n == 0 || m == 0 {
        return Ok(Assignment {
            row_to_col: vec![None; n],
            total: T::zero(),
        });
    }

    let row_to_col = if n.max(m) <= LEXICO_LIMIT {
        lexico_smallest(costs, n, m)
    } else {
        solve_padded(costs, n, m)
    };
    let total = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|j| costs[i][j]))
        .sum();
    Ok(Assignment { row_to_col, total })
}

// Exact O(k^3) solver on the square padding of the matrix.
fn solve_padded<T: Real>(costs: &[Vec<T>], n: usize, m: usize) -> Vec<Option<usize>> {
    let k = n.max(m);
    let mut sentinel = T::zero();
    for row in costs {
        for &c in row {
            if c > sentinel {
                sentinel = c;
            }
        }
    }
    sentinel += T::one();
    let cost = |i: usize, j: usize| -> T {
        if i < n && j < m {
            costs[i][j]
        } else {
            sentinel
        }
    };

    // augmenting-path Hungarian with potentials (1-indexed internals)
    let big = T::max_value();
    let mut u = vec![T::zero(); k + 1];
    let mut v = vec![T::zero(); k + 1];
    let mut matched_row = vec![0usize; k + 1]; // column -> row, 0 = free
    let mut way = vec![0usize; k + 1];
    for i in 1..=k {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![big; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = big;
            let mut j1 = 0usize;
            for j in 1..=k {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=k {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; n];
    for j in 1..=k {
        let i = matched_row[j];
        if i >= 1 && i - 1 < n && j - 1 < m {
            row_to_col[i - 1] = Some(j - 1);
        }
    }
    row_to_col
}

// Fix rows one at a time, keeping the smallest column that preserves the
// optimal total of the remaining subproblem.
fn lexico_smallest<T: Real>(costs: &[Vec<T>], n: usize, m: usize) -> Vec<Option<usize>> {
    let sub_optimal = |rows: &[usize], cols: &[usize]| -> T {
        if rows.is_empty() || cols.is_empty() {
            return T::zero();
        }
        let sub: Vec<Vec<T>> = rows
            .iter()
            .map(|&i| cols.iter().map(|&j| costs[i][j]).collect())
            .collect();
        let assign = solve_padded(&sub, rows.len(), cols.len());
        assign
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| sub[r][c]))
            .sum()
    };

    let mut result = vec![None; n];
    let mut free_cols: Vec<usize> = (0..m).collect();
    for i in 0..n {
        let rest_rows: Vec<usize> = (i + 1..n).collect();
        let assignable = n.min(m); // total matches required
        let done = result.iter().take(i).filter(|c| c.is_some()).count();
        let remaining = assignable - done;
        if remaining == 0 {
            break;
        }
        // candidate columns in ascending order, then "unassigned" when the
        // row side is the larger one
        let mut best: Option<(Option<usize>, T)> = None;
        for &c in &free_cols {
            let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
            let total = costs[i][c] + sub_optimal(&rest_rows, &rest_cols);
            // rows left must still cover the remaining matches
            if rest_rows.len() < remaining - 1 {
                continue;
            }
            if best.as_ref().is_none_or(|(_, t)| total < *t) {
                best = Some((Some(c), total));
            }
        }
        if rest_rows.len() >= remaining {
            // leaving this row unassigned is feasible
            let total = sub_optimal(&rest_rows, &free_cols);
            let eps = T::from_f64(1e-12).unwrap();
            if best.as_ref().is_none_or(|(_, t)| total < *t - eps) {
                best = Some((None, total));
            }
        }
        let (choice, _) = best.expect("at least one candidate");
        if let Some(c) = choice {
            free_cols.retain(|&x| x != c);
            result[i] = Some(c);
        }
    }
    result
}

/// Stage labels and per-prediction matches of the two-stage assignment.
#[derive(Debug, Clone)]
pub struct AssignmentResult {
    /// For each prediction, the matched GT index (into the input list) or none.
    pub matches: Vec<Option<usize>>,
    /// 1 for sticky track matches, 2 for Hungarian proposal matches.
    pub stages: Vec<Option<u8>>,
    /// Full (prediction, gt) cost matrix, retained for audit.
    pub cost_matrix: Vec<Vec<Scalar>>,
}

/// Two-stage assignment: track predictions stick to their previously matched
/// ground truth when present; proposals are Hungarian-matched to the rest.
pub fn assign_two_stage(
    preds: &[Prediction],
    gts: &[(String, Box3D<Scalar>)],
    cfg: &CostConfig,
) -> Result<AssignmentResult, AssignError> {
    let mut gt_index: HashMap<&str, usize> = HashMap::new();
    for (k, (id, _)) in gts.iter().enumerate() {
        if gt_index.insert(id.as_str(), k).is_some() {
            return Err(AssignError::DuplicateGtId(id.clone()));
        }
    }

    let cost_matrix: Vec<Vec<Scalar>> = preds
        .iter()
        .map(|p| {
            gts.iter()
                .map(|(_, b)| match_cost(p, b, b.class, cfg))
                .collect()
        })
        .collect();

    let mut matches: Vec<Option<usize>> = vec![None; preds.len()];
    let mut stages: Vec<Option<u8>> = vec![None; preds.len()];
    let mut taken: HashSet<usize> = HashSet::new();
    let mut claimed_prev: HashSet<&str> = HashSet::new();

    // stage 1: sticky matches for track predictions
    for (i, p) in preds.iter().enumerate() {
        if p.kind != QueryKind::Track {
            continue;
        }
        if let Some(prev) = p.prev_gt.as_deref() {
            if !claimed_prev.insert(prev) {
                return Err(AssignError::DuplicatePrevGt(prev.to_string()));
            }
            if let Some(&k) = gt_index.get(prev) {
                matches[i] = Some(k);
                stages[i] = Some(1);
                taken.insert(k);
            }
            // prev_gt absent from the frame: the track left the scene,
            // assigned to no object
        }
        // no prev_gt: a false-positive track query, assigned to no object
    }

    // stage 2: Hungarian over proposals x unmatched GTs
    let proposal_idx: Vec<usize> = preds
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind == QueryKind::Proposal)
        .map(|(i, _)| i)
        .collect();
    let open_gts: Vec<usize> = (0..gts.len()).filter(|k| !taken.contains(k)).collect();
    if !proposal_idx.is_empty() && !open_gts.is_empty() {
        let sub: Vec<Vec<Scalar>> = proposal_idx
            .iter()
            .map(|&i| open_gts.iter().map(|&k| cost_matrix[i][k]).collect())
            .collect();
        let assign = hungarian(&sub)?;
        for (r, col) in assign.row_to_col.iter().enumerate() {
            if let Some(c) = col {
                matches[proposal_idx[r]] = Some(open_gts[*c]);
                stages[proposal_idx[r]] = Some(2);
            }
        }
    }

    Ok(AssignmentResult {
        matches,
        stages,
        cost_matrix,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn brute_force_min(costs: &[Vec<f64>]) -> f64 {
        let n = costs.len();
        let m = costs[0].len();
        // enumerate injective maps of the smaller side
        if n <= m {
            let mut best = f64::INFINITY;
            let mut cols: Vec<usize> = (0..m).collect();
            permute(&mut cols, 0, &mut |perm| {
                let total: f64 = (0..n).map(|i| costs[i][perm[i]]).sum();
                if total < best {
                    best = total;
                }
            });
            best
        } else {
            let t: Vec<Vec<f64>> = (0..m).map(|j| (0..n).map(|i| costs[i][j]).collect()).collect();
            brute_force_min(&t)
        }
    }

    fn permute(items: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == items.len() {
            f(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            permute(items, k + 1, f);
            items.swap(k, i);
        }
    }

    #[test]
    fn two_by_two() {
        let costs = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let a = hungarian(&costs).unwrap();
        assert_eq!(a.row_to_col, vec![Some(0), Some(1)]);
        assert_relative_eq!(a.total, 2.0);
    }

    #[test]
    fn empty_matrix() {
        let a = hungarian::<f64>(&[]).unwrap();
        assert!(a.row_to_col.is_empty());
        assert_eq!(a.total, 0.0);
    }

    #[test]
    fn non_finite_rejected() {
        let costs = vec![vec![1.0, f64::NAN]];
        assert!(matches!(hungarian(&costs), Err(AssignError::NonFiniteCost(0, 1))));
    }

    #[test]
    fn random_square_matches_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.random_range(1..=7);
            let costs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.random_range(0..100) as f64).collect())
                .collect();
            let a = hungarian(&costs).unwrap();
            assert_eq!(a.total, brute_force_min(&costs), "costs {costs:?}");
        }
    }

    #[test]
    fn random_rectangular_matches_brute_force() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        for _ in 0..500 {
            let n = rng.random_range(1..=5);
            let m = rng.random_range(1..=8);
            let costs: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| rng.random_range(0..50) as f64).collect())
                .collect();
            let a = hungarian(&costs).unwrap();
            let matched = a.row_to_col.iter().filter(|c| c.is_some()).count();
            assert_eq!(matched, n.min(m));
            assert_eq!(a.total, brute_force_min(&costs), "costs {costs:?}");
        }
    }

    #[test]
    fn tie_break_is_lexicographically_smallest() {
        // every assignment has the same total; rows must pick columns in order
        let costs = vec![vec![1.0; 4]; 4];
        let a = hungarian(&costs).unwrap();
        assert_eq!(a.row_to_col, vec![Some(0), Some(1), Some(2), Some(3)]);

        let costs = vec![vec![0.0, 0.0, 5.0], vec![0.0, 0.0, 5.0]];
        let a = hungarian(&costs).unwrap();
        assert_eq!(a.row_to_col, vec![Some(0), Some(1)]);
    }

    #[test]
    fn row_and_column_shifts_keep_argmin() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..200 {
            let costs: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..6).map(|_| rng.random_range(0..40) as f64).collect())
                .collect();
            let base = hungarian(&costs).unwrap();
            let row = rng.random_range(0..6);
            let col = rng.random_range(0..6);
            let shift = rng.random_range(1..20) as f64;
            let mut shifted = costs.clone();
            for j in 0..6 {
                shifted[row][j] += shift;
            }
            for i in 0..6 {
                shifted[i][col] += shift;
            }
            let s = hungarian(&shifted).unwrap();
            assert_eq!(s.row_to_col, base.row_to_col);
        }
    }

    fn pred(kind: QueryKind, x: f64, score: f64, prev: Option<&str>) -> Prediction {
        let mut class_scores = [0.0; 7];
        class_scores[TrackingClass::Car.index()] = score;
        Prediction {
            slot_ref: 0,
            kind,
            box3d: Box3D::new([x, 0.0, 0.0], [2.0, 4.0, 1.5], 0.0, [0.0, 0.0], TrackingClass::Car),
            class_scores,
            prev_gt: prev.map(str::to_string),
        }
    }

    fn gt(id: &str, x: f64) -> (String, Box3D<f64>) {
        (
            id.to_string(),
            Box3D::new([x, 0.0, 0.0], [2.0, 4.0, 1.5], 0.0, [0.0, 0.0], TrackingClass::Car),
        )
    }

    #[test]
    fn perfect_match_has_zero_cost() {
        let p = pred(QueryKind::Proposal, 0.0, 1.0, None);
        let g = gt("a", 0.0);
        let c = match_cost(&p, &g.1, g.1.class, &CostConfig::default());
        assert!(c.abs() < 1e-9, "cost {c}");
    }

    #[test]
    fn focal_cost_at_half_score() {
        let p = pred(QueryKind::Proposal, 0.0, 0.5, None);
        let g = gt("a", 0.0);
        let c = match_cost(&p, &g.1, g.1.class, &CostConfig::default());
        // -0.25 * 0.5^2 * ln(0.5)
        assert_relative_eq!(c, 0.25 * 0.25 * std::f64::consts::LN_2, epsilon = 1e-9);
        assert_relative_eq!(c, 0.043321698784996581, epsilon = 1e-9);
    }

    #[test]
    fn unit_offset_costs_one() {
        let p = pred(QueryKind::Proposal, 1.0, 1.0, None);
        let g = gt("a", 0.0);
        let c = match_cost(&p, &g.1, g.1.class, &CostConfig::default());
        assert_relative_eq!(c, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn stage1_sticky_match() {
        let preds = vec![pred(QueryKind::Track, 0.0, 0.9, Some("a"))];
        let gts = vec![gt("a", 0.3)];
        let r = assign_two_stage(&preds, &gts, &CostConfig::default()).unwrap();
        assert_eq!(r.matches, vec![Some(0)]);
        assert_eq!(r.stages, vec![Some(1)]);
    }

    #[test]
    fn departed_track_gets_none_and_proposal_takes_new_gt() {
        let preds = vec![
            pred(QueryKind::Track, 0.0, 0.9, Some("a")),
            pred(QueryKind::Proposal, 10.0, 0.8, None),
        ];
        let gts = vec![gt("b", 10.0)];
        let r = assign_two_stage(&preds, &gts, &CostConfig::default()).unwrap();
        assert_eq!(r.matches, vec![None, Some(0)]);
        assert_eq!(r.stages, vec![None, Some(2)]);
    }

    #[test]
    fn false_positive_track_query_gets_none() {
        let preds = vec![pred(QueryKind::Track, 0.0, 0.9, None)];
        let gts = vec![gt("a", 0.0)];
        let r = assign_two_stage(&preds, &gts, &CostConfig::default()).unwrap();
        assert_eq!(r.matches, vec![None]);
    }

    #[test]
    fn duplicate_prev_gt_is_error() {
        let preds = vec![
            pred(QueryKind::Track, 0.0, 0.9, Some("a")),
            pred(QueryKind::Track, 1.0, 0.9, Some("a")),
        ];
        let gts = vec![gt("a", 0.0)];
        assert!(matches!(
            assign_two_stage(&preds, &gts, &CostConfig::default()),
            Err(AssignError::DuplicatePrevGt(_))
        ));
    }

    #[test]
    fn stage2_matches_enumeration_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        for _ in 0..200 {
            let np = rng.random_range(1..=3usize);
            let ng = rng.random_range(1..=3usize);
            let preds: Vec<Prediction> = (0..np)
                .map(|_| {
                    pred(
                        QueryKind::Proposal,
                        rng.random_range(-10.0..10.0),
                        rng.random_range(0.05..1.0),
                        None,
                    )
                })
                .collect();
            let gts: Vec<(String, Box3D<f64>)> = (0..ng)
                .map(|k| gt(&format!("g{k}"), rng.random_range(-10.0..10.0)))
                .collect();
            let r = assign_two_stage(&preds, &gts, &CostConfig::default()).unwrap();
            let total: f64 = r
                .matches
                .iter()
                .enumerate()
                .filter_map(|(i, m)| m.map(|k| r.cost_matrix[i][k]))
                .sum();
            let oracle = brute_force_min(&r.cost_matrix);
            assert!((total - oracle).abs() < 1e-9, "{total} vs {oracle}");
            // matched GTs distinct
            let mut seen = std::collections::HashSet::new();
            for m in r.matches.iter().flatten() {
                assert!(seen.insert(*m));
            }
        }
    }
}
