use super::MolecularGraph;
use crate::tensor::Tensor;

/// `L = I − D^{-1/2} A D^{-1/2}` from the unweighted, loop-free adjacency
/// implied by the directed edge list. Isolated nodes get an identity row.
pub fn normalized_laplacian(graph: &MolecularGraph) -> Tensor<f64> {
    let n = graph.n_nodes();
    let mut adj = vec![false; n * n];
    for &(a, b) in &graph.edges {
        if a != b {
            adj[a * n + b] = true;
            adj[b * n + a] = true;
        }
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d = adj[i * n..(i + 1) * n].iter().filter(|&&x| x).count();
            if d == 0 {
                0.0
            } else {
                1.0 / (d as f64).sqrt()
            }
        })
        .collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        l[i * n + i] = 1.0;
        for j in 0..n {
            if adj[i * n + j] {
                // product is commutative in IEEE arithmetic, so L is bitwise symmetric
                l[i * n + j] = -(inv_sqrt_deg[i] * inv_sqrt_deg[j]);
            }
        }
    }
    Tensor::new(vec![n, n], l).expect("square")
}
