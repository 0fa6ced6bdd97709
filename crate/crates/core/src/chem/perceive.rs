use super::{BondOrder, Hybridization, Molecule};

/// Fills degree, ring membership, conjugation and hybridization.
pub(super) fn perceive(mol: &mut Molecule) {
    let n = mol.atoms.len();
    let mut degree = vec![0u8; n];
    for b in &mol.bonds {
        degree[b.begin] = degree[b.begin].saturating_add(1);
        degree[b.end] = degree[b.end].saturating_add(1);
    }
    for (a, d) in mol.atoms.iter_mut().zip(degree) {
        a.degree = d;
    }

    let bridges = find_bridges(n, &mol.bonds.iter().map(|b| (b.begin, b.end)).collect::<Vec<_>>());
    for (b, is_bridge) in mol.bonds.iter_mut().zip(&bridges) {
        b.is_in_ring = !is_bridge;
        // an aromatic-aromatic link outside any ring (biphenyl) is a plain single bond
        if b.order == BondOrder::Aromatic && !b.is_in_ring {
            b.order = BondOrder::Single;
        }
    }

    assign_conjugation(mol);
    assign_hybridization(mol);
}

/// Bridges of an undirected multigraph-free graph via iterative Tarjan
/// low-link. A bond lies on a ring iff it is not a bridge.
pub(crate) fn find_bridges(n: usize, edges: &[(usize, usize)]) -> Vec<bool> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, &(a, b)) in edges.iter().enumerate() {
        adj[a].push((b, i));
        adj[b].push((a, i));
    }
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut bridge = vec![false; edges.len()];
    let mut time = 0;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // (node, edge used to enter, next adjacency position)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = time;
        low[root] = time;
        time += 1;
        while let Some(&mut (u, via, ref mut next)) = stack.last_mut() {
            if *next < adj[u].len() {
                let (v, e) = adj[u][*next];
                *next += 1;
                if e == via {
                    continue;
                }
                if disc[v] == usize::MAX {
                    disc[v] = time;
                    low[v] = time;
                    time += 1;
                    stack.push((v, e, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(parent, _, _)) = stack.last() {
                    low[parent] = low[parent].min(low[u]);
                    if low[u] > disc[parent] {
                        bridge[via] = true;
                    }
                }
            }
        }
    }
    bridge
}

/// Aromatic bonds are conjugated. A single bond is conjugated when each of its
/// endpoints carries some other double, triple or aromatic bond; a double or
/// triple bond is conjugated when it touches such a single bond.
fn assign_conjugation(mol: &mut Molecule) {
    let inc = mol.incidence();
    let multiple_elsewhere = |atom: usize, except: usize| {
        inc[atom]
            .iter()
            .any(|&j| j != except && mol.bonds[j].order.is_multiple())
    };
    let mut conj: Vec<bool> = mol
        .bonds
        .iter()
        .enumerate()
        .map(|(i, b)| match b.order {
            BondOrder::Aromatic => true,
            BondOrder::Single => multiple_elsewhere(b.begin, i) && multiple_elsewhere(b.end, i),
            _ => false,
        })
        .collect();
    for (i, b) in mol.bonds.iter().enumerate() {
        if matches!(b.order, BondOrder::Double | BondOrder::Triple) {
            let touches = [b.begin, b.end].iter().any(|&a| {
                inc[a]
                    .iter()
                    .any(|&j| j != i && mol.bonds[j].order == BondOrder::Single && conj[j])
            });
            if touches {
                conj[i] = true;
            }
        }
    }
    for (b, c) in mol.bonds.iter_mut().zip(conj) {
        b.is_conjugated = c;
    }
}

/// sp: a triple bond or two double bonds; sp2: one double bond or aromatic;
/// other: unbonded bracket atom that is charged or outside the organic subset;
/// sp3 otherwise.
fn assign_hybridization(mol: &mut Molecule) {
    let inc = mol.incidence();
    for (i, atom) in mol.atoms.iter_mut().enumerate() {
        let mut doubles = 0;
        let mut triples = 0;
        for &j in &inc[i] {
            match mol.bonds[j].order {
                BondOrder::Double => doubles += 1,
                BondOrder::Triple => triples += 1,
                _ => {}
            }
        }
        atom.hybridization = if triples > 0 || doubles >= 2 {
            Hybridization::Sp
        } else if doubles == 1 || atom.is_aromatic {
            Hybridization::Sp2
        } else if atom.bracketed && inc[i].is_empty() && (atom.formal_charge != 0 || !atom.element.is_organic_subset())
        {
            Hybridization::Other
        } else {
            Hybridization::Sp3
        };
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse_smiles;
    use super::*;

    #[test]
    fn bridges_of_a_dumbbell() {
        // two triangles joined by edge 3
        let edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)];
        let b = find_bridges(6, &edges);
        assert_eq!(b, vec![false, false, false, true, false, false, false]);
    }

    #[test]
    fn biphenyl_link_is_single_and_acyclic() {
        let m = parse_smiles("c1ccccc1c1ccccc1").unwrap();
        let link = &m.bonds[6];
        assert_eq!((link.begin, link.end), (5, 6));
        assert_eq!(link.order, BondOrder::Single);
        assert!(!link.is_in_ring);
        assert!(link.is_conjugated);
    }

    #[test]
    fn butadiene_is_conjugated_propene_is_not() {
        let m = parse_smiles("C=CC=C").unwrap();
        assert!(m.bonds.iter().all(|b| b.is_conjugated));
        let m = parse_smiles("C=CC").unwrap();
        assert!(m.bonds.iter().all(|b| !b.is_conjugated));
    }

    #[test]
    fn hybridization_rules() {
        let m = parse_smiles("C#N").unwrap();
        assert!(m.atoms.iter().all(|a| a.hybridization == Hybridization::Sp));
        let m = parse_smiles("O=C=O").unwrap();
        assert_eq!(m.atoms[1].hybridization, Hybridization::Sp);
        assert_eq!(m.atoms[0].hybridization, Hybridization::Sp2);
        let m = parse_smiles("[Na+].[Cl-].[CH4]").unwrap();
        assert_eq!(m.atoms[0].hybridization, Hybridization::Other);
        assert_eq!(m.atoms[1].hybridization, Hybridization::Other);
        assert_eq!(m.atoms[2].hybridization, Hybridization::Sp3);
    }
}
