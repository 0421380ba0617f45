//! Brute-force reference implementations for the test suites. Compiled only
//! under the `test-oracles` feature; deliberately independent of the
//! algorithms they check.

use std::collections::BTreeSet;

/// Minimum spanning weight of a complete weighted graph by enumerating every
/// labeled tree through its Pruefer sequence (n^(n-2) trees). Practical for
/// n <= 8.
pub fn exhaustive_min_spanning_weight(n: usize, weight: &dyn Fn(usize, usize) -> f64) -> f64 {
    assert!((2..=8).contains(&n), "enumeration needs 2 <= n <= 8");
    if n == 2 {
        return weight(0, 1);
    }
    let seq_len = n - 2;
    let mut seq = vec![0usize; seq_len];
    let mut best = f64::INFINITY;
    loop {
        let mut total = 0.0;
        for (a, b) in tree_from_pruefer(&seq, n) {
            total += weight(a, b);
        }
        if total < best {
            best = total;
        }
        // Advance the sequence like an odometer in base n.
        let mut idx = 0;
        loop {
            if idx == seq_len {
                return best;
            }
            seq[idx] += 1;
            if seq[idx] < n {
                break;
            }
            seq[idx] = 0;
            idx += 1;
        }
    }
}

/// Standard Pruefer decoding: returns the n-1 edges of the encoded tree.
pub fn tree_from_pruefer(seq: &[usize], n: usize) -> Vec<(usize, usize)> {
    let mut degree = vec![1usize; n];
    for &s in seq {
        degree[s] += 1;
    }
    let mut edges = Vec::with_capacity(n - 1);
    let mut leaves: BTreeSet<usize> = (0..n).filter(|&i| degree[i] == 1).collect();
    for &s in seq {
        let leaf = *leaves.iter().next().expect("a leaf always exists");
        leaves.remove(&leaf);
        edges.push((leaf.min(s), leaf.max(s)));
        degree[s] -= 1;
        if degree[s] == 1 {
            leaves.insert(s);
        }
    }
    let mut rest = leaves.into_iter();
    let a = rest.next().expect("two nodes remain");
    let b = rest.next().expect("two nodes remain");
    edges.push((a.min(b), a.max(b)));
    edges
}

/// Naive agglomerative single-linkage clustering over a full distance
/// matrix, cut at `threshold`: clusters merge while the smallest
/// inter-cluster single-linkage distance is within the threshold.
pub fn single_linkage_cut(dist: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    let n = dist.len();
    let mut clusters: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let link = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| dist[i][j]))
                    .fold(f64::INFINITY, f64::min);
                if best.map_or(true, |(_, _, d)| link < d) {
                    best = Some((a, b, link));
                }
            }
        }
        match best {
            Some((a, b, d)) if d <= threshold => {
                let merged = clusters.remove(b);
                clusters[a].extend(merged);
            }
            _ => break,
        }
    }
    let mut out: Vec<Vec<usize>> = clusters
        .into_iter()
        .map(|c| c.into_iter().collect())
        .collect();
    out.sort();
    out
}

/// Partition induced by an ultrametric relation: `i ~ j` iff
/// `ultra(i, j) <= threshold` (transitive closure over the pair relation).
pub fn relation_partition(
    n: usize,
    threshold: f64,
    ultra: &dyn Fn(usize, usize) -> f64,
) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; n];
    let mut next = 0;
    for i in 0..n {
        if label[i] != usize::MAX {
            continue;
        }
        label[i] = next;
        // The relation is an equivalence for ultrametrics, so one sweep
        // from each unlabeled representative suffices.
        for j in (i + 1)..n {
            if label[j] == usize::MAX && ultra(i, j) <= threshold {
                label[j] = next;
            }
        }
        next += 1;
    }
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); next];
    for (i, &l) in label.iter().enumerate() {
        groups[l].push(i);
    }
    groups.sort();
    groups
}
