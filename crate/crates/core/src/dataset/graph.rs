use std::collections::BTreeSet;

/// Bipartite user–item graph with its symmetric-normalized adjacency.
///
/// Node ids: users occupy `0..n_users`, item `v` is node `n_users + v`.
/// The adjacency is stored as a sorted, duplicate-free edge list with one
/// normalized weight `1 / sqrt(deg(u) · deg(v))` per undirected edge.
#[derive(Clone, Debug, PartialEq)]
pub struct InteractionGraph {
    n_users: usize,
    n_items: usize,
    edges: Vec<(u32, u32)>,
    norms: Vec<f64>,
    user_degree: Vec<usize>,
    item_degree: Vec<usize>,
}

impl InteractionGraph {
    /// Builds the graph over `edges` (user, item). Duplicates are merged.
    ///
    /// Panics if an edge references an id outside `n_users`/`n_items`.
    pub fn new(edges: impl IntoIterator<Item = (usize, usize)>, n_users: usize, n_items: usize) -> Self {
        let set: BTreeSet<(u32, u32)> = edges
            .into_iter()
            .map(|(u, v)| {
                assert!(u < n_users, "user id {u} out of range ({n_users} users)");
                assert!(v < n_items, "item id {v} out of range ({n_items} items)");
                (u as u32, v as u32)
            })
            .collect();
        let edges: Vec<(u32, u32)> = set.into_iter().collect();
        let mut user_degree = vec![0usize; n_users];
        let mut item_degree = vec![0usize; n_items];
        for &(u, v) in &edges {
            user_degree[u as usize] += 1;
            item_degree[v as usize] += 1;
        }
        let norms = edges
            .iter()
            .map(|&(u, v)| {
                1.0 / ((user_degree[u as usize] * item_degree[v as usize]) as f64).sqrt()
            })
            .collect();
        Self {
            n_users,
            n_items,
            edges,
            norms,
            user_degree,
            item_degree,
        }
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges sorted by (user, item).
    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    /// Normalized adjacency weight of each edge, aligned with [`Self::edges`].
    pub fn edge_norms(&self) -> &[f64] {
        &self.norms
    }

    pub fn user_degree(&self, u: usize) -> usize {
        self.user_degree[u]
    }

    pub fn item_degree(&self, v: usize) -> usize {
        self.item_degree[v]
    }

    /// Degree of a node in the combined id space.
    pub fn node_degree(&self, node: usize) -> usize {
        if node < self.n_users {
            self.user_degree[node]
        } else {
            self.item_degree[node - self.n_users]
        }
    }

    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        self.edges.binary_search(&(u as u32, v as u32)).ok()
    }

    pub fn contains(&self, u: usize, v: usize) -> bool {
        self.edge_index(u, v).is_some()
    }

    /// Items adjacent to user `u`, ascending.
    pub fn user_items(&self, u: usize) -> &[(u32, u32)] {
        let lo = self.edges.partition_point(|&(x, _)| (x as usize) < u);
        let hi = self.edges.partition_point(|&(x, _)| (x as usize) <= u);
        &self.edges[lo..hi]
    }

    /// Entry `(a, b)` of the normalized adjacency over node ids.
    pub fn adjacency_entry(&self, a: usize, b: usize) -> f64 {
        let (u, v) = match (a < self.n_users, b < self.n_users) {
            (true, false) => (a, b - self.n_users),
            (false, true) => (b, a - self.n_users),
            _ => return 0.0,
        };
        self.edge_index(u, v).map_or(0.0, |e| self.norms[e])
    }

    /// The normalized adjacency as a dense matrix. Intended for small graphs.
    pub fn dense_adjacency(&self) -> ndarray::Array2<f64> {
        let n = self.n_nodes();
        let mut a = ndarray::Array2::zeros((n, n));
        for (&(u, v), &w) in self.edges.iter().zip(&self.norms) {
            let (r, c) = (u as usize, self.n_users + v as usize);
            a[[r, c]] = w;
            a[[c, r]] = w;
        }
        a
    }

    /// Same nodes, only the edges for which `keep` returns true.
    pub fn subgraph(&self, mut keep: impl FnMut(usize, (u32, u32)) -> bool) -> Self {
        let edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .enumerate()
            .filter(|(e, &edge)| keep(*e, edge))
            .map(|(_, &(u, v))| (u as usize, v as usize))
            .collect();
        Self::new(edges, self.n_users, self.n_items)
    }
}

/// Builds the training graph from a set of (user, item) edges.
pub fn build_graph(train_edges: &[(usize, usize)], n_users: usize, n_items: usize) -> InteractionGraph {
    InteractionGraph::new(train_edges.iter().copied(), n_users, n_items)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge_has_unit_weight() {
        let g = build_graph(&[(0, 0)], 1, 1);
        assert_eq!(g.adjacency_entry(0, 1), 1.0);
        assert_eq!(g.adjacency_entry(1, 0), 1.0);
    }

    #[test]
    fn star_user_row_is_half() {
        let edges: Vec<_> = (0..4).map(|v| (0, v)).collect();
        let g = build_graph(&edges, 1, 4);
        for v in 0..4 {
            assert!((g.adjacency_entry(0, 1 + v) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_graph_is_all_zero() {
        let g = build_graph(&[], 3, 2);
        assert!(g.dense_adjacency().iter().all(|&x| x == 0.0));
        assert_eq!(g.n_edges(), 0);
    }

    #[test]
    fn duplicates_are_merged() {
        let g = build_graph(&[(0, 1), (0, 1), (1, 0)], 2, 2);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.user_degree(0), 1);
    }

    #[test]
    fn user_items_slices() {
        let g = build_graph(&[(0, 1), (2, 0), (2, 1), (0, 0)], 3, 2);
        assert_eq!(g.user_items(0), &[(0, 0), (0, 1)]);
        assert!(g.user_items(1).is_empty());
        assert_eq!(g.user_items(2).len(), 2);
    }
}
