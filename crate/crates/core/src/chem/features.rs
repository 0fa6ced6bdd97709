use super::{Atom, Bond, BondOrder, BondStereo, Chirality, Hybridization};

pub const ATOM_FEATURE_DIM: usize = 44;
pub const BOND_FEATURE_DIM: usize = 10;

/// Stored in checkpoints so a model is never fed features from another layout.
pub const FEATURE_LAYOUT_VERSION: &str = "atom44-bond10-v1";

/// Elements with a dedicated one-hot slot; everything else maps to "other".
pub const ONE_HOT_ELEMENTS: [&str; 24] = [
    "C", "N", "O", "S", "F", "Si", "P", "Cl", "Br", "Mg", "Na", "Ca", "Fe", "As", "Al", "I", "B", "V", "K", "Tl", "Yb",
    "Sb", "Sn", "Ag",
];

const ELEMENT_OFFSET: usize = 0; // 24 + other
const DEGREE_OFFSET: usize = 25; // 0..=6 + other
const CHARGE_OFFSET: usize = 33;
const AROMATIC_OFFSET: usize = 34;
const HYBRID_OFFSET: usize = 35; // sp, sp2, sp3, other
const CHIRAL_OFFSET: usize = 39; // none, cw, ccw, other
const HCOUNT_OFFSET: usize = 43;

/// Atom layout:
///
/// | slots  | content                                    |
/// |--------|--------------------------------------------|
/// | 0–24   | element one-hot ([`ONE_HOT_ELEMENTS`], other) |
/// | 25–32  | degree one-hot 0–6, other                  |
/// | 33     | formal charge                              |
/// | 34     | aromatic flag                              |
/// | 35–38  | hybridization sp / sp2 / sp3 / other       |
/// | 39–42  | chirality none / CW / CCW / other          |
/// | 43     | explicit H count clamped to 1              |
pub fn atom_features(atom: &Atom) -> [f64; ATOM_FEATURE_DIM] {
    let mut f = [0.0; ATOM_FEATURE_DIM];
    let sym = atom.element.symbol();
    let el = ONE_HOT_ELEMENTS
        .iter()
        .position(|&s| s == sym)
        .unwrap_or(ONE_HOT_ELEMENTS.len());
    f[ELEMENT_OFFSET + el] = 1.0;
    f[DEGREE_OFFSET + usize::from(atom.degree).min(7)] = 1.0;
    f[CHARGE_OFFSET] = f64::from(atom.formal_charge);
    f[AROMATIC_OFFSET] = if atom.is_aromatic { 1.0 } else { 0.0 };
    f[HYBRID_OFFSET
        + match atom.hybridization {
            Hybridization::Sp => 0,
            Hybridization::Sp2 => 1,
            Hybridization::Sp3 => 2,
            Hybridization::Other => 3,
        }] = 1.0;
    f[CHIRAL_OFFSET
        + match atom.chirality {
            Chirality::None => 0,
            Chirality::Clockwise => 1,
            Chirality::CounterClockwise => 2,
            Chirality::Other => 3,
        }] = 1.0;
    f[HCOUNT_OFFSET] = f64::from(atom.explicit_h_count.min(1));
    f
}

/// Bond layout: type one-hot single/double/triple/aromatic (0–3), conjugated
/// (4), in ring (5), stereo one-hot none/up/down/other (6–9).
pub fn bond_features(bond: &Bond) -> [f64; BOND_FEATURE_DIM] {
    let mut f = [0.0; BOND_FEATURE_DIM];
    f[match bond.order {
        BondOrder::Single => 0,
        BondOrder::Double => 1,
        BondOrder::Triple => 2,
        BondOrder::Aromatic => 3,
    }] = 1.0;
    f[4] = if bond.is_conjugated { 1.0 } else { 0.0 };
    f[5] = if bond.is_in_ring { 1.0 } else { 0.0 };
    f[6 + match bond.stereo {
        BondStereo::None => 0,
        BondStereo::Up => 1,
        BondStereo::Down => 2,
        BondStereo::Other => 3,
    }] = 1.0;
    f
}

#[cfg(test)]
mod tests {
    use super::super::{parse_smiles, Element};
    use super::*;

    fn ones(f: &[f64]) -> Vec<usize> {
        f.iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    #[test]
    fn quaternary_carbon_layout() {
        let m = parse_smiles("CC(C)(C)C").unwrap();
        let f = atom_features(&m.atoms[1]);
        assert_eq!(f.len(), 44);
        // carbon, degree 4, sp3, chirality "none"
        assert_eq!(ones(&f), vec![0, DEGREE_OFFSET + 4, HYBRID_OFFSET + 2, CHIRAL_OFFSET]);
        assert_eq!(f[CHARGE_OFFSET], 0.0);
        assert_eq!(f[AROMATIC_OFFSET], 0.0);
    }

    #[test]
    fn one_hot_blocks_have_exactly_one_bit() {
        for smi in ["[Na+]", "c1ccccc1", "[C@@H](F)(Cl)Br", "[Se]", "CC(C)(C)(C)(C)(C)(C)C"] {
            let m = parse_smiles(smi).unwrap();
            for a in &m.atoms {
                let f = atom_features(a);
                for (lo, hi) in [(0, 25), (25, 33), (35, 39), (39, 43)] {
                    assert_eq!(f[lo..hi].iter().sum::<f64>(), 1.0, "{smi}");
                }
            }
        }
    }

    #[test]
    fn charge_changes_one_entry() {
        let a = parse_smiles("[NH3+]").unwrap().atoms[0].clone();
        let mut b = a.clone();
        b.formal_charge = 0;
        let (fa, fb) = (atom_features(&a), atom_features(&b));
        let diff = fa.iter().zip(&fb).filter(|(x, y)| x != y).count();
        assert_eq!(diff, 1);
        assert_eq!(fa[CHARGE_OFFSET], 1.0);
    }

    #[test]
    fn unknown_element_uses_other_slot() {
        let mut a = parse_smiles("C").unwrap().atoms[0].clone();
        a.element = Element::from_symbol("Pt").unwrap();
        assert_eq!(atom_features(&a)[24], 1.0);
    }

    #[test]
    fn bond_layouts() {
        let m = parse_smiles("c1ccccc1").unwrap();
        let f = bond_features(&m.bonds[0]);
        assert_eq!(f[3], 1.0);
        assert_eq!(f[5], 1.0);

        let m = parse_smiles("CC").unwrap();
        let f = bond_features(&m.bonds[0]);
        // only the "single" slot outside the stereo block, which sits at "none"
        assert_eq!(ones(&f[..6]), vec![0]);
        assert_eq!(ones(&f), vec![0, 6]);

        let d = bond_features(&parse_smiles("C=C").unwrap().bonds[0]);
        let t = bond_features(&parse_smiles("C#C").unwrap().bonds[0]);
        assert_eq!(d.iter().zip(&t).filter(|(x, y)| x != y).count(), 2);
    }
}
