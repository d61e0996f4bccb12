//! Class decomposition of finite Markov chains from their support graph.

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

/// Recurrent classes and transient states of a chain.
///
/// A class is recurrent iff no edge leaves it. Classes are sorted by their
/// smallest member and each class is sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDecomposition {
    pub recurrent: Vec<Vec<usize>>,
    pub transient: Vec<usize>,
}

impl ClassDecomposition {
    pub fn is_unichain(&self) -> bool {
        self.recurrent.len() == 1
    }

    pub fn is_irreducible(&self) -> bool {
        self.recurrent.len() == 1 && self.transient.is_empty()
    }
}

/// Decompose a chain given as adjacency lists (`successors[i]` lists every `j`
/// with `P(i, j) > 0`).
pub fn decompose(successors: &[Vec<usize>]) -> ClassDecomposition {
    let n = successors.len();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, 0);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for (i, succ) in successors.iter().enumerate() {
        for &j in succ {
            graph.add_edge(nodes[i], nodes[j], ());
        }
    }

    let mut component = vec![usize::MAX; n];
    let sccs = tarjan_scc(&graph);
    for (c, members) in sccs.iter().enumerate() {
        for node in members {
            component[node.index()] = c;
        }
    }

    let mut closed = vec![true; sccs.len()];
    for (i, succ) in successors.iter().enumerate() {
        if succ.iter().any(|&j| component[j] != component[i]) {
            closed[component[i]] = false;
        }
    }

    let mut recurrent = Vec::new();
    let mut transient = Vec::new();
    for (c, members) in sccs.into_iter().enumerate() {
        let mut members: Vec<usize> = members.into_iter().map(|v| v.index()).collect();
        members.sort_unstable();
        if closed[c] {
            recurrent.push(members);
        } else {
            transient.extend(members);
        }
    }
    recurrent.sort_by_key(|class| class[0]);
    transient.sort_unstable();
    ClassDecomposition {
        recurrent,
        transient,
    }
}
