//! SMILES parsing and fixed-width atom/bond featurization.
//!
//! Only heavy atoms become graph nodes; implicit hydrogens are never added.

mod element;
mod features;
mod perceive;
mod smiles;

pub use element::Element;
pub use features::{
    atom_features, bond_features, ATOM_FEATURE_DIM, BOND_FEATURE_DIM, FEATURE_LAYOUT_VERSION, ONE_HOT_ELEMENTS,
};
pub use smiles::{parse_smiles, SmilesError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Chirality {
    None,
    Clockwise,
    CounterClockwise,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Hybridization {
    Sp,
    Sp2,
    Sp3,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Double, triple or aromatic.
    pub fn is_multiple(self) -> bool {
        !matches!(self, BondOrder::Single)
    }
}

/// Directional marks `/` and `\` on single bonds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BondStereo {
    None,
    Up,
    Down,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    pub is_aromatic: bool,
    pub chirality: Chirality,
    pub explicit_h_count: u8,
    /// Heavy-atom neighbors.
    pub degree: u8,
    pub hybridization: Hybridization,
    pub isotope: Option<u16>,
    /// Written in square brackets in the source.
    pub bracketed: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub begin: usize,
    pub end: usize,
    pub order: BondOrder,
    pub stereo: BondStereo,
    pub is_conjugated: bool,
    pub is_in_ring: bool,
}

impl Bond {
    pub fn endpoints(&self) -> (usize, usize) {
        (self.begin, self.end)
    }

    pub fn other(&self, atom: usize) -> usize {
        if self.begin == atom {
            self.end
        } else {
            self.begin
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub source_smiles: String,
}

impl Molecule {
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// Bond indices incident to each atom, in bond order.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.atoms.len()];
        for (i, b) in self.bonds.iter().enumerate() {
            inc[b.begin].push(i);
            inc[b.end].push(i);
        }
        inc
    }

    /// Number of connected components.
    pub fn component_count(&self) -> usize {
        let n = self.atoms.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut comps = n;
        for b in &self.bonds {
            let (ra, rb) = (find(&mut parent, b.begin), find(&mut parent, b.end));
            if ra != rb {
                parent[ra] = rb;
                comps -= 1;
            }
        }
        comps
    }
}

impl Molecule {
    /// Same molecule with atoms renumbered so that new atom `k` is old atom
    /// `order[k]`. Bond order and direction are preserved.
    pub fn relabeled(&self, order: &[usize]) -> Molecule {
        assert_eq!(order.len(), self.atoms.len(), "order must be a permutation");
        let mut new_index = vec![usize::MAX; order.len()];
        for (k, &old) in order.iter().enumerate() {
            new_index[old] = k;
        }
        Molecule {
            atoms: order.iter().map(|&o| self.atoms[o].clone()).collect(),
            bonds: self
                .bonds
                .iter()
                .map(|b| Bond {
                    begin: new_index[b.begin],
                    end: new_index[b.end],
                    ..b.clone()
                })
                .collect(),
            source_smiles: self.source_smiles.clone(),
        }
    }
}
