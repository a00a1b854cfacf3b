#![allow(dead_code)]

use std::sync::atomic::{AtomicU64, Ordering};

use afeg::mrf::{Evidence, LabelOracle, MrfError};
use afeg::NodeId;

/// Oracle answering every query by summing an explicit joint table over
/// binary labels (bit `i` of the index is node `i`).
pub struct TableOracle {
    pub n: usize,
    pub joint: Vec<f64>,
    calls: AtomicU64,
}

impl TableOracle {
    pub fn new(n: usize, joint: Vec<f64>) -> Self {
        let total: f64 = joint.iter().sum();
        Self { n, joint: joint.into_iter().map(|p| p / total).collect(), calls: AtomicU64::new(0) }
    }

    /// Joint of a Bayes net on a rooted tree: `prior` is `P(root = 1)` and
    /// `cpt[i] = (parent, P(X_i = 1 | parent = 0), P(X_i = 1 | parent = 1))`
    /// for every non-root node, listed parents first.
    pub fn tree_net(n: usize, root: NodeId, prior: f64, cpt: &[(NodeId, NodeId, f64, f64)]) -> Self {
        let joint = (0..1usize << n)
            .map(|mask| {
                let bit = |i: usize| (mask >> i) & 1;
                let mut p = if bit(root) == 1 { prior } else { 1.0 - prior };
                for &(child, parent, p0, p1) in cpt {
                    let q = if bit(parent) == 1 { p1 } else { p0 };
                    p *= if bit(child) == 1 { q } else { 1.0 - q };
                }
                p
            })
            .collect();
        Self::new(n, joint)
    }
}

impl LabelOracle for TableOracle {
    fn node_count(&self) -> usize {
        self.n
    }

    fn alphabet_size(&self) -> usize {
        2
    }

    fn posterior(&self, node: NodeId, evidence: &Evidence) -> Result<Vec<f64>, MrfError> {
        self.calls.fetch_add(2, Ordering::Relaxed);
        let mut out = [0.0; 2];
        for (mask, &p) in self.joint.iter().enumerate() {
            if evidence.iter().all(|(i, l)| ((mask >> i) & 1) as u8 == l) {
                out[(mask >> node) & 1] += p;
            }
        }
        let total = out[0] + out[1];
        Ok(vec![out[0] / total, out[1] / total])
    }

    fn oracle_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Tree with edges 0-1, 0-2, 0-3, 1-4, 2-5, 3-6, 3-7.
pub fn figure_tree() -> afeg::Graph {
    afeg::Graph::from_edges(8, &[(0, 1), (0, 2), (0, 3), (1, 4), (2, 5), (3, 6), (3, 7)]).unwrap()
}
