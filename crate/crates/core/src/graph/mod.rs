//! Model-facing molecular graphs: featurized nodes and directed edges, an
//! optional virtual node wired to every atom, and Laplacian positional
//! encodings.

mod eigen;
mod laplacian;
mod positional;

use thiserror::Error;

use crate::chem::{atom_features, bond_features, Molecule, ATOM_FEATURE_DIM, BOND_FEATURE_DIM};
use crate::tensor::Tensor;

pub use eigen::{eigendecompose, SpectralBasis, JACOBI_MAX_SWEEPS, JACOBI_THRESHOLD};
pub use laplacian::normalized_laplacian;
pub use positional::{
    canonicalize_sign, canonicalize_sign_keyed, node_keys, positional_encoding, positional_encoding_keyed,
    random_sign_flip,
};

/// Number of Laplacian eigenvectors used as positional features.
pub const DEFAULT_PE_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("molecule has no atoms")]
    EmptyMolecule,
    #[error("Jacobi eigensolver did not converge in {sweeps} sweeps (off-diagonal norm {off_norm:e})")]
    ConvergenceFailure { sweeps: usize, off_norm: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MolecularGraph {
    /// Atom count, excluding the virtual node.
    pub n_atoms: usize,
    /// `[n_nodes × 44]`; the virtual node row is zero.
    pub node_features: Tensor<f64>,
    /// Directed `(source, destination)` pairs; both directions are present.
    pub edges: Vec<(usize, usize)>,
    /// `[n_edges × 10]`, aligned with `edges`; virtual edges are zero rows.
    pub edge_features: Tensor<f64>,
    /// Always the last node when present.
    pub virtual_node: Option<usize>,
    /// `[n_nodes × k_pe]` in the canonical sign convention (zero columns
    /// when `k_pe = 0` or the encoding was not attached).
    pub positional_encoding: Tensor<f64>,
}

impl MolecularGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_atoms + usize::from(self.virtual_node.is_some())
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn pe_dim(&self) -> usize {
        self.positional_encoding.cols()
    }

    /// Source node of every edge.
    pub fn sources(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.0).collect()
    }

    /// Destination node of every edge.
    pub fn destinations(&self) -> Vec<usize> {
        self.edges.iter().map(|e| e.1).collect()
    }

    /// Computes the normalized Laplacian of this graph, its eigenbasis and
    /// the canonical `k_pe`-column positional encoding. Sign ties are broken
    /// by node features, so the encoding does not depend on atom order.
    pub fn with_positional_encoding(mut self, k_pe: usize) -> Result<Self, GraphError> {
        let basis = eigendecompose(&normalized_laplacian(&self))?;
        let keys = node_keys(&self.node_features);
        self.positional_encoding = positional_encoding_keyed(&basis, k_pe, Some(&keys));
        Ok(self)
    }
}

/// Featurizes `molecule`. With `use_virtual_node`, a zero-feature node is
/// appended and joined to every atom by a zero-feature edge pair.
///
/// The returned graph carries an empty positional encoding; see
/// [`MolecularGraph::with_positional_encoding`].
pub fn build_graph(molecule: &Molecule, use_virtual_node: bool) -> Result<MolecularGraph, GraphError> {
    let n_atoms = molecule.atoms.len();
    if n_atoms == 0 {
        return Err(GraphError::EmptyMolecule);
    }
    let n_nodes = n_atoms + usize::from(use_virtual_node);
    let mut node_data = Vec::with_capacity(n_nodes * ATOM_FEATURE_DIM);
    for atom in &molecule.atoms {
        node_data.extend_from_slice(&atom_features(atom));
    }
    node_data.resize(n_nodes * ATOM_FEATURE_DIM, 0.0);

    let n_edges = 2 * molecule.bonds.len() + if use_virtual_node { 2 * n_atoms } else { 0 };
    let mut edges = Vec::with_capacity(n_edges);
    let mut edge_data = Vec::with_capacity(n_edges * BOND_FEATURE_DIM);
    for bond in &molecule.bonds {
        let f = bond_features(bond);
        for pair in [(bond.begin, bond.end), (bond.end, bond.begin)] {
            edges.push(pair);
            edge_data.extend_from_slice(&f);
        }
    }
    let virtual_node = use_virtual_node.then_some(n_atoms);
    if let Some(vn) = virtual_node {
        for atom in 0..n_atoms {
            edges.push((atom, vn));
            edges.push((vn, atom));
        }
    }
    edge_data.resize(edges.len() * BOND_FEATURE_DIM, 0.0);

    Ok(MolecularGraph {
        n_atoms,
        node_features: Tensor::new(vec![n_nodes, ATOM_FEATURE_DIM], node_data).expect("node feature size"),
        edge_features: Tensor::new(vec![edges.len(), BOND_FEATURE_DIM], edge_data).expect("edge feature size"),
        edges,
        virtual_node,
        positional_encoding: Tensor::zeros(vec![n_nodes, 0]),
    })
}

#[cfg(test)]
mod tests {
    use std::collections::{HashSet, VecDeque};

    use super::*;
    use crate::chem::parse_smiles;

    fn graph(smiles: &str, vn: bool) -> MolecularGraph {
        build_graph(&parse_smiles(smiles).unwrap(), vn).unwrap()
    }

    #[test]
    fn single_atom_with_virtual_node() {
        let g = graph("C", true);
        assert_eq!(g.n_nodes(), 2);
        assert_eq!(g.edges, vec![(0, 1), (1, 0)]);
        assert!(g.node_features.row(1).iter().all(|&v| v == 0.0));
        assert!(g.edge_features.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn benzene_counts() {
        let g = graph("c1ccccc1", true);
        assert_eq!((g.n_nodes(), g.n_edges()), (7, 24));
        assert_eq!(g.virtual_node, Some(6));
        let g = graph("c1ccccc1", false);
        assert_eq!((g.n_nodes(), g.n_edges()), (6, 12));
        assert_eq!(g.virtual_node, None);
    }

    #[test]
    fn edges_are_symmetric_and_virtual_node_reaches_all() {
        let g = graph("CC(=O)Nc1ccc(O)cc1", true);
        let set: HashSet<_> = g.edges.iter().copied().collect();
        for &(a, b) in &g.edges {
            assert!(set.contains(&(b, a)));
        }
        let vn = g.virtual_node.unwrap();
        assert_eq!(vn, g.n_nodes() - 1);
        for i in 0..g.n_atoms {
            assert!(set.contains(&(i, vn)) && set.contains(&(vn, i)));
        }
        let vn_rows = g.edges.iter().enumerate().filter(|(_, e)| e.0 == vn || e.1 == vn);
        for (r, _) in vn_rows {
            assert!(g.edge_features.row(r).iter().all(|&v| v == 0.0));
        }
    }

    fn diameter(g: &MolecularGraph) -> usize {
        let n = g.n_nodes();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &g.edges {
            adj[a].push(b);
        }
        let mut best = 0;
        for s in 0..n {
            let mut dist = vec![usize::MAX; n];
            dist[s] = 0;
            let mut q = VecDeque::from([s]);
            while let Some(u) = q.pop_front() {
                for &v in &adj[u] {
                    if dist[v] == usize::MAX {
                        dist[v] = dist[u] + 1;
                        q.push_back(v);
                    }
                }
            }
            best = best.max(*dist.iter().max().unwrap());
        }
        best
    }

    #[test]
    fn virtual_node_bounds_diameter() {
        for smi in ["CCCCCCCCCCCC", "c1ccc2ccccc2c1", "CC.O", "CC(C)Cc1ccc(cc1)C(C)C(=O)O"] {
            assert!(diameter(&graph(smi, true)) <= 2, "{smi}");
        }
        assert_eq!(diameter(&graph("CCCCCC", false)), 5);
    }

    #[test]
    fn empty_molecule_is_rejected() {
        let m = Molecule {
            atoms: vec![],
            bonds: vec![],
            source_smiles: String::new(),
        };
        assert_eq!(build_graph(&m, true), Err(GraphError::EmptyMolecule));
    }

    #[test]
    fn positional_encoding_pads_small_graphs() {
        let g = graph("CC", true).with_positional_encoding(8).unwrap();
        assert_eq!(g.positional_encoding.shape(), &[3, 8]);
        for r in 0..3 {
            assert!(g.positional_encoding.row(r)[2..].iter().all(|&v| v == 0.0));
        }
    }
}
