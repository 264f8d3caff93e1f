//! Maximum-cardinality bipartite matching (Hopcroft-Karp).

use std::collections::VecDeque;

const UNMATCHED: usize = usize::MAX;
const INF: usize = usize::MAX;

/// Computes a maximum matching of the bipartite graph with `n_left` left vertices,
/// `n_right` right vertices and `adj[l]` listing the right neighbours of `l`.
///
/// Returns `mate[l] = Some(r)` for matched left vertices. For a fixed adjacency
/// (including neighbour order) the result is deterministic.
pub fn maximum_matching(n_left: usize, n_right: usize, adj: &[Vec<usize>]) -> Vec<Option<usize>> {
    debug_assert_eq!(adj.len(), n_left);
    let mut mate_left = vec![UNMATCHED; n_left];
    let mut mate_right = vec![UNMATCHED; n_right];
    let mut dist = vec![INF; n_left];

    // Greedy warm start.
    for l in 0..n_left {
        if let Some(&r) = adj[l].iter().find(|&&r| mate_right[r] == UNMATCHED) {
            mate_left[l] = r;
            mate_right[r] = l;
        }
    }

    while bfs(adj, &mate_left, &mate_right, &mut dist) {
        for l in 0..n_left {
            if mate_left[l] == UNMATCHED {
                dfs(l, adj, &mut mate_left, &mut mate_right, &mut dist);
            }
        }
    }

    mate_left
        .into_iter()
        .map(|r| (r != UNMATCHED).then_some(r))
        .collect()
}

/// Layers the graph from free left vertices; true if some augmenting path exists.
fn bfs(adj: &[Vec<usize>], mate_left: &[usize], mate_right: &[usize], dist: &mut [usize]) -> bool {
    let mut queue = VecDeque::new();
    for (l, d) in dist.iter_mut().enumerate() {
        if mate_left[l] == UNMATCHED {
            *d = 0;
            queue.push_back(l);
        } else {
            *d = INF;
        }
    }
    let mut found = false;
    while let Some(l) = queue.pop_front() {
        for &r in &adj[l] {
            let next = mate_right[r];
            if next == UNMATCHED {
                found = true;
            } else if dist[next] == INF {
                dist[next] = dist[l] + 1;
                queue.push_back(next);
            }
        }
    }
    found
}

fn dfs(l: usize, adj: &[Vec<usize>], mate_left: &mut [usize], mate_right: &mut [usize], dist: &mut [usize]) -> bool {
    for &r in &adj[l] {
        let next = mate_right[r];
        let advances = next == UNMATCHED
            || (dist[next] == dist[l].wrapping_add(1) && dfs(next, adj, mate_left, mate_right, dist));
        if advances {
            mate_left[l] = r;
            mate_right[r] = l;
            return true;
        }
    }
    dist[l] = INF;
    false
}
