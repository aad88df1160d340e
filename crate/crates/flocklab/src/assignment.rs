//! Exact combinatorial solvers behind the small-N optimal-transport
//! distances: minimum-cost assignment (shortest augmenting paths with
//! potentials, O(n³)) and bottleneck assignment (binary search over the
//! distance spectrum with Hopcroft–Karp feasibility checks).
//!
//! Both operate on dense row-major matrices over equal-size point sets;
//! the Wasserstein wrappers in [`crate::meanfield`] own the conversion
//! from measures to matrices.

use std::collections::VecDeque;

const UNMATCHED: usize = usize::MAX;

/// Solves the square minimum-cost assignment problem.
///
/// `cost` is row-major `n × n`; entry `(i, j)` is the cost of assigning row
/// `i` to column `j`. Returns the optimal row-to-column map and the total
/// cost. Runs the shortest-augmenting-path method with dual potentials in
/// O(n³); ties are resolved deterministically by column order.
///
/// # Panics
///
/// Panics if `cost.len() != n * n` (internal-use contract; the public
/// wrappers validate sizes first).
pub(crate) fn min_cost_assignment(cost: &[f64], n: usize) -> (Vec<usize>, f64) {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return (Vec::new(), 0.0);
    }

    // Column n is a virtual root from which each augmenting search starts;
    // `owner[j]` is the row currently assigned to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![UNMATCHED; n + 1];
    let mut way = vec![n; n + 1];

    for i in 0..n {
        owner[n] = i;
        let mut j0 = n;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if !used[j] {
                    let reduced = cost[i0 * n + j] - u[i0] - v[j];
                    if reduced < min_to[j] {
                        min_to[j] = reduced;
                        way[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == UNMATCHED {
                break;
            }
        }
        // Flip matched edges along the augmenting path back to the root.
        while j0 != n {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
        }
    }

    let mut row_to_col = vec![UNMATCHED; n];
    for j in 0..n {
        row_to_col[owner[j]] = j;
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    (row_to_col, total)
}

/// Maximum bipartite matching (Hopcroft–Karp) on an `n × n` bipartite graph
/// given as adjacency lists for the left side. Returns the matching size.
fn max_matching(adj: &[Vec<usize>], n: usize) -> usize {
    let mut match_left = vec![UNMATCHED; n];
    let mut match_right = vec![UNMATCHED; n];
    let mut layer = vec![usize::MAX; n];
    let mut queue = VecDeque::new();
    let mut matched = 0usize;

    loop {
        // BFS: layer the left vertices starting from the free ones.
        layer.fill(usize::MAX);
        queue.clear();
        for (l, &m) in match_left.iter().enumerate() {
            if m == UNMATCHED {
                layer[l] = 0;
                queue.push_back(l);
            }
        }
        let mut augmenting_exists = false;
        while let Some(l) = queue.pop_front() {
            for &r in &adj[l] {
                match match_right[r] {
                    m if m == UNMATCHED => augmenting_exists = true,
                    m if layer[m] == usize::MAX => {
                        layer[m] = layer[l] + 1;
                        queue.push_back(m);
                    }
                    _ => {}
                }
            }
        }
        if !augmenting_exists {
            return matched;
        }

        // DFS phase: vertex-disjoint augmenting paths along the layering.
        fn try_augment(
            l: usize,
            adj: &[Vec<usize>],
            layer: &mut [usize],
            match_left: &mut [usize],
            match_right: &mut [usize],
        ) -> bool {
            for &r in &adj[l] {
                let m = match_right[r];
                if m == UNMATCHED
                    || (layer[m] == layer[l] + 1
                        && try_augment(m, adj, layer, match_left, match_right))
                {
                    match_left[l] = r;
                    match_right[r] = l;
                    return true;
                }
            }
            layer[l] = usize::MAX;
            false
        }
        for l in 0..n {
            if match_left[l] == UNMATCHED
                && try_augment(l, adj, &mut layer, &mut match_left, &mut match_right)
            {
                matched += 1;
            }
        }
    }
}

/// Solves the square bottleneck assignment problem: the minimum over
/// perfect matchings of the largest matched entry of `dist` (row-major
/// `n × n`, nonnegative).
///
/// The optimum is always one of the matrix entries, so the search is a
/// binary search over the sorted entry list; each candidate threshold is
/// tested by building the graph of admissible edges and checking for a
/// perfect matching.
///
/// # Panics
///
/// Panics if `dist.len() != n * n`.
pub(crate) fn bottleneck_assignment(dist: &[f64], n: usize) -> f64 {
    assert_eq!(dist.len(), n * n, "distance matrix must be n x n");
    if n == 0 {
        return 0.0;
    }

    let mut levels: Vec<f64> = dist.to_vec();
    levels.sort_by(|a, b| a.partial_cmp(b).expect("distances must not be NaN"));
    levels.dedup();

    let feasible = |threshold: f64| {
        let adj: Vec<Vec<usize>> = (0..n)
            .map(|i| (0..n).filter(|&j| dist[i * n + j] <= threshold).collect())
            .collect();
        max_matching(&adj, n) == n
    };

    // Invariant: levels[hi] is feasible (the largest entry always is),
    // everything below levels[lo] is not.
    let (mut lo, mut hi) = (0usize, levels.len() - 1);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if feasible(levels[mid]) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    levels[lo]
}
