//! Dense rectangular linear-sum assignment via shortest augmenting paths
//! (the Jonker-Volgenant variant described by Crouse, as used in SciPy's
//! `linear_sum_assignment`).

const UNSET: usize = usize::MAX;

/// Minimum-cost assignment of every row to a distinct column.
///
/// `cost` is row-major `n_rows x n_cols` with `n_rows <= n_cols` and finite
/// entries. Returns the column chosen for each row. Fully deterministic:
/// rows are augmented in ascending order and cost ties resolve toward
/// unassigned, lower-index columns.
pub fn solve_lsap(n_rows: usize, n_cols: usize, cost: &[f64]) -> Vec<usize> {
    assert!(n_rows <= n_cols, "cost matrix must be wide");
    assert_eq!(cost.len(), n_rows * n_cols);
    debug_assert!(cost.iter().all(|c| c.is_finite()));

    let mut u = vec![0.0f64; n_rows];
    let mut v = vec![0.0f64; n_cols];
    let mut col4row = vec![UNSET; n_rows];
    let mut row4col = vec![UNSET; n_cols];

    let mut path = vec![UNSET; n_cols];
    let mut dist = vec![f64::INFINITY; n_cols];
    let mut row_scanned = vec![false; n_rows];
    let mut col_scanned = vec![false; n_cols];
    let mut remaining = vec![0usize; n_cols];

    for cur_row in 0..n_rows {
        // Dijkstra over reduced costs from cur_row to an unassigned column.
        let mut num_remaining = n_cols;
        for it in 0..n_cols {
            // Reverse fill so a constant cost matrix yields the identity.
            remaining[it] = n_cols - it - 1;
        }
        row_scanned.fill(false);
        col_scanned.fill(false);
        dist.fill(f64::INFINITY);

        let mut min_val = 0.0f64;
        let mut i = cur_row;
        let mut sink = UNSET;
        while sink == UNSET {
            row_scanned[i] = true;
            let mut lowest = f64::INFINITY;
            let mut index = UNSET;
            for it in 0..num_remaining {
                let j = remaining[it];
                let reduced = min_val + cost[i * n_cols + j] - u[i] - v[j];
                if reduced < dist[j] {
                    path[j] = i;
                    dist[j] = reduced;
                }
                // Prefer columns that finish the path when costs tie.
                if dist[j] < lowest || (dist[j] == lowest && row4col[j] == UNSET) {
                    lowest = dist[j];
                    index = it;
                }
            }
            min_val = lowest;
            debug_assert!(min_val.is_finite(), "infeasible assignment");

            let j = remaining[index];
            if row4col[j] == UNSET {
                sink = j;
            } else {
                i = row4col[j];
            }
            col_scanned[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
        }

        // Update duals along the scanned sets.
        u[cur_row] += min_val;
        for r in 0..n_rows {
            if row_scanned[r] && r != cur_row {
                u[r] += min_val - dist[col4row[r]];
            }
        }
        for c in 0..n_cols {
            if col_scanned[c] {
                v[c] -= min_val - dist[c];
            }
        }

        // Augment: flip assignments back along the path.
        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }

    col4row
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total(cost: &[f64], n_cols: usize, assignment: &[usize]) -> f64 {
        assignment
            .iter()
            .enumerate()
            .map(|(r, &c)| cost[r * n_cols + c])
            .sum()
    }

    fn brute_force(n_rows: usize, n_cols: usize, cost: &[f64]) -> f64 {
        fn rec(row: usize, n_rows: usize, n_cols: usize, cost: &[f64], used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == n_rows {
                *best = best.min(acc);
                return;
            }
            for c in 0..n_cols {
                if !used[c] {
                    used[c] = true;
                    rec(row + 1, n_rows, n_cols, cost, used, acc + cost[row * n_cols + c], best);
                    used[c] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, n_rows, n_cols, cost, &mut vec![false; n_cols], 0.0, &mut best);
        best
    }

    #[test]
    fn square_known_case() {
        let cost = vec![4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let assignment = solve_lsap(3, 3, &cost);
        assert_eq!(total(&cost, 3, &assignment), 5.0);
    }

    #[test]
    fn constant_costs_give_identity() {
        let cost = vec![1.0; 3 * 5];
        assert_eq!(solve_lsap(3, 5, &cost), vec![0, 1, 2]);
    }

    #[test]
    fn matches_brute_force_on_random_rectangles() {
        let mut state = 0x3cf5_u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f64) / (u32::MAX as f64)
        };
        for trial in 0..200 {
            let n_rows = 1 + trial % 5;
            let n_cols = n_rows + trial % 4;
            let cost: Vec<f64> = (0..n_rows * n_cols).map(|_| (next() * 20.0) - 5.0).collect();
            let assignment = solve_lsap(n_rows, n_cols, &cost);
            let mut seen = vec![false; n_cols];
            for &c in &assignment {
                assert!(!seen[c], "column assigned twice");
                seen[c] = true;
            }
            let got = total(&cost, n_cols, &assignment);
            let want = brute_force(n_rows, n_cols, &cost);
            assert!((got - want).abs() < 1e-9, "trial {trial}: {got} vs {want}");
        }
    }
}
