use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::DistanceMatrix;
use crate::error::{arg, Result};

/// One agglomeration step. Leaves are numbered `0..M` in label order and
/// the cluster formed by merge `i` is numbered `M + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
    pub size: usize,
    /// Leaf labels of the new cluster, in label order.
    pub members: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub labels: Vec<String>,
    pub merges: Vec<Merge>,
}

impl Dendrogram {
    /// Newick with ultrametric branch lengths (node depth = height / 2).
    pub fn to_newick(&self) -> String {
        let m = self.labels.len();
        let depth = |id: usize| if id < m { 0.0 } else { self.merges[id - m].height / 2.0 };
        fn render(d: &Dendrogram, id: usize, depth: &dyn Fn(usize) -> f64, out: &mut String) {
            let m = d.labels.len();
            if id < m {
                out.push_str(&d.labels[id]);
                return;
            }
            let node = &d.merges[id - m];
            out.push('(');
            for (k, child) in [node.a, node.b].into_iter().enumerate() {
                if k > 0 {
                    out.push(',');
                }
                render(d, child, depth, out);
                write!(out, ":{}", depth(id) - depth(child)).unwrap();
            }
            out.push(')');
        }
        let mut out = String::new();
        if self.merges.is_empty() {
            out.push_str(&self.labels[0]);
        } else {
            render(self, m + self.merges.len() - 1, &depth, &mut out);
        }
        out.push(';');
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dendrogram serialises") + "\n"
    }
}

/// UPGMA on `(D + Dᵀ)/2`: repeatedly merge the closest pair of clusters and
/// set the new cluster's distance to each other cluster to the size-weighted
/// mean of its parts. Ties go to the pair whose (smaller, larger) first-leaf
/// labels come first lexicographically.
pub fn upgma(d: &DistanceMatrix) -> Result<Dendrogram> {
    let m = d.size();
    if m < 2 {
        return Err(arg("UPGMA needs at least two classes"));
    }
    if d.values.iter().any(|v| v.is_nan()) {
        return Err(arg("NaN in distance matrix"));
    }
    let mut sorted = d.labels.clone();
    sorted.sort();
    if sorted != d.labels {
        return Err(arg("distance matrix labels must be in sorted order"));
    }
    let mut dist: Vec<Vec<f64>> = (0..m).map(|i| (0..m).map(|j| 0.5 * (d.get(i, j) + d.get(j, i))).collect()).collect();
    // active clusters: (id, first leaf, size, leaves)
    let mut active: Vec<(usize, usize, usize, Vec<usize>)> = (0..m).map(|i| (i, i, 1, vec![i])).collect();
    let mut merges = Vec::with_capacity(m - 1);
    while active.len() > 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for p in 0..active.len() {
            for q in p + 1..active.len() {
                let v = dist[p][q];
                let (fa, fb) = (active[p].1, active[q].1);
                let key = (fa.min(fb), fa.max(fb));
                let better = match best {
                    None => true,
                    Some((bv, bk, _, _)) => v < bv || (v == bv && key < bk),
                };
                if better {
                    best = Some((v, key, p, q));
                }
            }
        }
        let (height, _, p, q) = best.expect("at least one pair");
        let (ca, cb) = (active[p].clone(), active[q].clone());
        let size = ca.2 + cb.2;
        let mut leaves: Vec<usize> = ca.3.iter().chain(&cb.3).copied().collect();
        leaves.sort_unstable();
        let (first, second) = if ca.1 < cb.1 { (&ca, &cb) } else { (&cb, &ca) };
        merges.push(Merge {
            a: first.0,
            b: second.0,
            height,
            size,
            members: leaves.iter().map(|&l| d.labels[l].clone()).collect(),
        });
        let new_row: Vec<f64> = (0..active.len())
            .map(|k| (ca.2 as f64 * dist[p][k] + cb.2 as f64 * dist[q][k]) / size as f64)
            .collect();
        // replace p with the merged cluster, drop q
        for k in 0..active.len() {
            dist[p][k] = new_row[k];
            dist[k][p] = new_row[k];
        }
        dist[p][p] = 0.0;
        dist.remove(q);
        for row in &mut dist {
            row.remove(q);
        }
        active[p] = (m + merges.len() - 1, leaves[0], size, leaves);
        active.remove(q);
    }
    Ok(Dendrogram {
        labels: d.labels.clone(),
        merges,
    })
}
