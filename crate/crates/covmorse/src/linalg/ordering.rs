//! Reverse Cuthill–McKee ordering for profile reduction.

use super::sparse::CsrMatrix;
use std::collections::VecDeque;

fn adjacency(a: &CsrMatrix) -> Vec<Vec<usize>> {
    let n = a.nrows();
    let mut adj = vec![Vec::new(); n];
    for (i, j, _) in a.triplets() {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    adj
}

fn bfs_levels(adj: &[Vec<usize>], start: usize, level: &mut [usize]) -> (usize, usize) {
    // returns (eccentricity, a farthest node of minimum degree)
    for l in level.iter_mut() {
        *l = usize::MAX;
    }
    let mut q = VecDeque::new();
    level[start] = 0;
    q.push_back(start);
    let mut far = start;
    while let Some(u) = q.pop_front() {
        let lu = level[u];
        if lu > level[far] || (lu == level[far] && adj[u].len() < adj[far].len()) {
            far = u;
        }
        for &v in &adj[u] {
            if level[v] == usize::MAX {
                level[v] = lu + 1;
                q.push_back(v);
            }
        }
    }
    (level[far], far)
}

/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.nrows();
    let adj = adjacency(a);
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut level = vec![usize::MAX; n];
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // pseudo-peripheral start within this component
        let mut start = seed;
        let (mut ecc, mut far) = bfs_levels(&adj, start, &mut level);
        for _ in 0..4 {
            let (e2, f2) = bfs_levels(&adj, far, &mut level);
            if e2 <= ecc {
                break;
            }
            start = far;
            ecc = e2;
            far = f2;
        }
        let mut q = VecDeque::new();
        visited[start] = true;
        q.push_back(start);
        while let Some(u) = q.pop_front() {
            order.push(u);
            let mut nb: Vec<usize> = adj[u].iter().copied().filter(|&v| !visited[v]).collect();
            nb.sort_by_key(|&v| (adj[v].len(), v));
            for v in nb {
                visited[v] = true;
                q.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

/// Sum over rows of (i − first nonzero column in row i) under the ordering.
pub fn profile_size(a: &CsrMatrix, perm: &[usize]) -> usize {
    let mut inv = vec![0; perm.len()];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut first: Vec<usize> = (0..perm.len()).collect();
    for (i, j, _) in a.triplets() {
        let (ni, nj) = (inv[i], inv[j]);
        if nj < ni {
            first[ni] = first[ni].min(nj);
        }
    }
    first.iter().enumerate().map(|(i, &f)| i - f).sum()
}
