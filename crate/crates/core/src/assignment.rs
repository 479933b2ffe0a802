//! Maximum-weight bipartite matching (Hungarian method), used to score a
//! clustering against ground-truth classes.

/// Largest total weight of a one-to-one matching between rows and columns
/// of a non-negative `weights` matrix. Unmatched rows or columns add nothing.
pub fn max_weight_matching(weights: &[Vec<f64>]) -> f64 {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return 0.0;
    }
    let size = rows.max(cols);
    let max_w = weights.iter().flatten().copied().fold(0.0f64, f64::max);
    // Square cost matrix (1-based, as in the classic potentials formulation).
    let cost = |i: usize, j: usize| -> f64 {
        let w = if i <= rows && j <= cols {
            weights[i - 1][j - 1]
        } else {
            0.0
        };
        max_w - w
    };

    let mut u = vec![0.0; size + 1];
    let mut v = vec![0.0; size + 1];
    let mut matched_row = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        matched_row[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=size {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=size {
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
    (1..=size)
        .filter(|&j| j <= cols && matched_row[j] <= rows)
        .map(|j| weights[matched_row[j] - 1][j - 1])
        .sum()
}
