use std::collections::BTreeMap;

use thiserror::Error;

use super::perceive;
use super::{Atom, Bond, BondOrder, BondStereo, Chirality, Element, Hybridization, Molecule};

/// SMILES syntax errors. Every variant carries the byte offset into the
/// (untrimmed) input where the problem was detected.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES at byte {offset}")]
    EmptyInput { offset: usize },
    #[error("unbalanced parenthesis at byte {offset}")]
    UnbalancedParenthesis { offset: usize },
    #[error("ring closure {label} opened at byte {offset} is never closed")]
    UnmatchedRingClosure { label: u16, offset: usize },
    #[error("unsupported element '{symbol}' at byte {offset}")]
    UnsupportedElement { symbol: String, offset: usize },
    #[error("unexpected character '{ch}' at byte {offset}")]
    UnexpectedCharacter { ch: char, offset: usize },
    #[error("malformed bracket atom at byte {offset}")]
    InvalidBracketAtom { offset: usize },
    #[error("bond symbol at byte {offset} is not followed by an atom or ring closure")]
    DanglingBond { offset: usize },
    #[error("repeated or self bond at byte {offset}")]
    DuplicateBond { offset: usize },
}

impl SmilesError {
    pub fn offset(&self) -> usize {
        match self {
            SmilesError::EmptyInput { offset }
            | SmilesError::UnbalancedParenthesis { offset }
            | SmilesError::UnmatchedRingClosure { offset, .. }
            | SmilesError::UnsupportedElement { offset, .. }
            | SmilesError::UnexpectedCharacter { offset, .. }
            | SmilesError::InvalidBracketAtom { offset }
            | SmilesError::DanglingBond { offset }
            | SmilesError::DuplicateBond { offset } => *offset,
        }
    }
}

#[derive(Clone, Copy)]
struct BondSymbol {
    order: BondOrder,
    stereo: BondStereo,
    offset: usize,
}

struct PendingBond {
    a: usize,
    b: usize,
    symbol: Option<BondSymbol>,
    offset: usize,
}

struct RingOpen {
    atom: usize,
    symbol: Option<BondSymbol>,
    offset: usize,
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    atoms: Vec<Atom>,
    bonds: Vec<PendingBond>,
    prev: Option<usize>,
    branches: Vec<(Option<usize>, usize)>,
    pending: Option<BondSymbol>,
    rings: BTreeMap<u16, RingOpen>,
}

/// Parses a SMILES string into a heavy-atom [`Molecule`].
///
/// Text after the first whitespace is treated as a title and ignored.
pub fn parse_smiles(smiles: &str) -> Result<Molecule, SmilesError> {
    let lead = smiles.len() - smiles.trim_start().len();
    let body = smiles[lead..].split(char::is_whitespace).next().unwrap_or("");
    if body.is_empty() {
        return Err(SmilesError::EmptyInput { offset: 0 });
    }
    let mut p = Parser {
        src: smiles.as_bytes(),
        pos: lead,
        atoms: Vec::new(),
        bonds: Vec::new(),
        prev: None,
        branches: Vec::new(),
        pending: None,
        rings: BTreeMap::new(),
    };
    p.run(lead + body.len())?;
    let bonds = p.resolve_bonds()?;
    let mut mol = Molecule {
        atoms: p.atoms,
        bonds,
        source_smiles: smiles.to_string(),
    };
    perceive::perceive(&mut mol);
    Ok(mol)
}

impl Parser<'_> {
    fn run(&mut self, end: usize) -> Result<(), SmilesError> {
        while self.pos < end {
            let at = self.pos;
            let c = self.src[at];
            match c {
                b'(' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(SmilesError::UnexpectedCharacter { ch: '(', offset: at });
                    }
                    self.branches.push((self.prev, at));
                    self.pos += 1;
                }
                b')' => {
                    if let Some(sym) = self.pending {
                        return Err(SmilesError::DanglingBond { offset: sym.offset });
                    }
                    let (restored, _) = self
                        .branches
                        .pop()
                        .ok_or(SmilesError::UnbalancedParenthesis { offset: at })?;
                    self.prev = restored;
                    self.pos += 1;
                }
                b'.' => {
                    if let Some(sym) = self.pending {
                        return Err(SmilesError::DanglingBond { offset: sym.offset });
                    }
                    self.prev = None;
                    self.pos += 1;
                }
                b'-' | b'=' | b'#' | b':' | b'/' | b'\\' => {
                    if self.pending.is_some() || self.prev.is_none() {
                        return Err(SmilesError::UnexpectedCharacter {
                            ch: c as char,
                            offset: at,
                        });
                    }
                    let (order, stereo) = match c {
                        b'-' => (BondOrder::Single, BondStereo::None),
                        b'=' => (BondOrder::Double, BondStereo::None),
                        b'#' => (BondOrder::Triple, BondStereo::None),
                        b':' => (BondOrder::Aromatic, BondStereo::None),
                        b'/' => (BondOrder::Single, BondStereo::Up),
                        _ => (BondOrder::Single, BondStereo::Down),
                    };
                    self.pending = Some(BondSymbol {
                        order,
                        stereo,
                        offset: at,
                    });
                    self.pos += 1;
                }
                b'0'..=b'9' => {
                    self.pos += 1;
                    self.ring_closure(u16::from(c - b'0'), at)?;
                }
                b'%' => {
                    let digits = self
                        .src
                        .get(at + 1..at + 3)
                        .filter(|d| d.iter().all(u8::is_ascii_digit));
                    let Some(d) = digits else {
                        return Err(SmilesError::UnexpectedCharacter { ch: '%', offset: at });
                    };
                    let label = u16::from(d[0] - b'0') * 10 + u16::from(d[1] - b'0');
                    self.pos += 3;
                    self.ring_closure(label, at)?;
                }
                b'[' => {
                    let atom = self.bracket_atom(end)?;
                    self.add_atom(atom, at);
                }
                _ if c.is_ascii_alphabetic() || c == b'*' => {
                    let atom = self.organic_atom()?;
                    self.add_atom(atom, at);
                }
                _ => {
                    let ch = self.char_at(at);
                    return Err(SmilesError::UnexpectedCharacter { ch, offset: at });
                }
            }
        }
        if let Some(sym) = self.pending {
            return Err(SmilesError::DanglingBond { offset: sym.offset });
        }
        if let Some(&(_, offset)) = self.branches.last() {
            return Err(SmilesError::UnbalancedParenthesis { offset });
        }
        if let Some((&label, open)) = self.rings.iter().min_by_key(|(_, o)| o.offset) {
            return Err(SmilesError::UnmatchedRingClosure {
                label,
                offset: open.offset,
            });
        }
        Ok(())
    }

    fn char_at(&self, at: usize) -> char {
        std::str::from_utf8(&self.src[at..])
            .ok()
            .and_then(|s| s.chars().next())
            .unwrap_or(self.src[at] as char)
    }

    fn add_atom(&mut self, atom: Atom, offset: usize) {
        let idx = self.atoms.len();
        self.atoms.push(atom);
        if let Some(prev) = self.prev {
            self.bonds.push(PendingBond {
                a: prev,
                b: idx,
                symbol: self.pending.take(),
                offset,
            });
        }
        self.prev = Some(idx);
    }

    fn ring_closure(&mut self, label: u16, offset: usize) -> Result<(), SmilesError> {
        let Some(atom) = self.prev else {
            return Err(SmilesError::UnexpectedCharacter {
                ch: self.src[offset] as char,
                offset,
            });
        };
        let symbol = self.pending.take();
        match self.rings.remove(&label) {
            Some(open) => {
                let symbol = match (open.symbol, symbol) {
                    (Some(a), Some(b)) if a.order != b.order => {
                        return Err(SmilesError::UnexpectedCharacter {
                            ch: self.src[b.offset] as char,
                            offset: b.offset,
                        })
                    }
                    (a, b) => b.or(a),
                };
                self.bonds.push(PendingBond {
                    a: open.atom,
                    b: atom,
                    symbol,
                    offset,
                });
            }
            None => {
                self.rings.insert(label, RingOpen { atom, symbol, offset });
            }
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<Atom, SmilesError> {
        let at = self.pos;
        let rest = &self.src[at..];
        let two = rest.get(..2).and_then(|s| std::str::from_utf8(s).ok());
        let (symbol, aromatic, width) = match (rest[0], two) {
            (_, Some("Cl")) => ("Cl", false, 2),
            (_, Some("Br")) => ("Br", false, 2),
            (b'B', _) => ("B", false, 1),
            (b'C', _) => ("C", false, 1),
            (b'N', _) => ("N", false, 1),
            (b'O', _) => ("O", false, 1),
            (b'P', _) => ("P", false, 1),
            (b'S', _) => ("S", false, 1),
            (b'F', _) => ("F", false, 1),
            (b'I', _) => ("I", false, 1),
            (b'b', _) => ("B", true, 1),
            (b'c', _) => ("C", true, 1),
            (b'n', _) => ("N", true, 1),
            (b'o', _) => ("O", true, 1),
            (b'p', _) => ("P", true, 1),
            (b's', _) => ("S", true, 1),
            (c, _) => {
                let mut len = 1;
                if c.is_ascii_uppercase() && rest.get(1).is_some_and(u8::is_ascii_lowercase) {
                    len = 2;
                }
                return Err(SmilesError::UnsupportedElement {
                    symbol: String::from_utf8_lossy(&rest[..len]).into_owned(),
                    offset: at,
                });
            }
        };
        self.pos += width;
        Ok(new_atom(
            Element::from_symbol(symbol).expect("organic subset symbol"),
            aromatic,
            false,
        ))
    }

    /// `[` isotope? symbol chirality? hcount? charge? class? `]`
    fn bracket_atom(&mut self, end: usize) -> Result<Atom, SmilesError> {
        let open = self.pos;
        let close = self.src[open..end]
            .iter()
            .position(|&c| c == b']')
            .map(|i| open + i)
            .ok_or(SmilesError::InvalidBracketAtom { offset: open })?;
        let body = &self.src[open + 1..close];
        let bad = || SmilesError::InvalidBracketAtom { offset: open };
        let mut i = 0;

        let digits = |i: &mut usize| -> Option<u32> {
            let start = *i;
            while *i < body.len() && body[*i].is_ascii_digit() {
                *i += 1;
            }
            (start < *i).then(|| {
                std::str::from_utf8(&body[start..*i])
                    .ok()
                    .and_then(|s| s.parse().ok())
                    .unwrap_or(u32::MAX)
            })
        };

        let isotope = match digits(&mut i) {
            Some(v) => Some(u16::try_from(v).map_err(|_| bad())?),
            None => None,
        };

        // element symbol
        let sym_start = i;
        let first = *body.get(i).ok_or_else(bad)?;
        let (element, aromatic) = if first.is_ascii_uppercase() {
            let two = body
                .get(i + 1)
                .filter(|c| c.is_ascii_lowercase())
                .and_then(|_| std::str::from_utf8(&body[i..i + 2]).ok())
                .and_then(Element::from_symbol);
            match two {
                Some(e) => {
                    i += 2;
                    (e, false)
                }
                None => {
                    let s = std::str::from_utf8(&body[i..i + 1]).map_err(|_| bad())?;
                    let e = Element::from_symbol(s).ok_or_else(|| {
                        let len = if body.get(i + 1).is_some_and(u8::is_ascii_lowercase) {
                            2
                        } else {
                            1
                        };
                        SmilesError::UnsupportedElement {
                            symbol: String::from_utf8_lossy(&body[i..i + len]).into_owned(),
                            offset: open + 1 + sym_start,
                        }
                    })?;
                    i += 1;
                    (e, false)
                }
            }
        } else if first.is_ascii_lowercase() {
            let two = body.get(i..i + 2).and_then(|s| std::str::from_utf8(s).ok());
            let (sym, width) = match two {
                Some("se") => ("Se", 2),
                Some("as") => ("As", 2),
                Some("te") => ("Te", 2),
                _ => match first {
                    b'b' => ("B", 1),
                    b'c' => ("C", 1),
                    b'n' => ("N", 1),
                    b'o' => ("O", 1),
                    b'p' => ("P", 1),
                    b's' => ("S", 1),
                    _ => {
                        return Err(SmilesError::UnsupportedElement {
                            symbol: (first as char).to_string(),
                            offset: open + 1 + i,
                        })
                    }
                },
            };
            i += width;
            (Element::from_symbol(sym).expect("aromatic symbol"), true)
        } else if first == b'*' {
            return Err(SmilesError::UnsupportedElement {
                symbol: "*".into(),
                offset: open + 1 + i,
            });
        } else {
            return Err(bad());
        };

        let mut chirality = Chirality::None;
        if body.get(i) == Some(&b'@') {
            i += 1;
            chirality = Chirality::CounterClockwise;
            if body.get(i) == Some(&b'@') {
                i += 1;
                chirality = Chirality::Clockwise;
            } else if body.get(i).is_some_and(|c| c.is_ascii_uppercase() && *c != b'H') {
                // @TH1, @SP2, @OH12 ...
                i += 2;
                digits(&mut i).ok_or_else(bad)?;
                chirality = Chirality::Other;
            }
        }

        let mut h_count = 0u8;
        if body.get(i) == Some(&b'H') {
            i += 1;
            h_count = match digits(&mut i) {
                Some(n) => u8::try_from(n).map_err(|_| bad())?,
                None => 1,
            };
        }

        let mut charge: i32 = 0;
        if let Some(&sign) = body.get(i).filter(|c| **c == b'+' || **c == b'-') {
            let unit = if sign == b'+' { 1 } else { -1 };
            i += 1;
            match digits(&mut i) {
                Some(n) => charge = unit * i32::try_from(n).map_err(|_| bad())?,
                None => {
                    charge = unit;
                    while body.get(i) == Some(&sign) {
                        charge += unit;
                        i += 1;
                    }
                }
            }
        }
        let formal_charge = i8::try_from(charge).map_err(|_| bad())?;

        if body.get(i) == Some(&b':') {
            i += 1;
            digits(&mut i).ok_or_else(bad)?;
        }
        if i != body.len() {
            return Err(bad());
        }
        self.pos = close + 1;
        let mut atom = new_atom(element, aromatic, true);
        atom.isotope = isotope;
        atom.chirality = chirality;
        atom.explicit_h_count = h_count;
        atom.formal_charge = formal_charge;
        Ok(atom)
    }

    fn resolve_bonds(&self) -> Result<Vec<Bond>, SmilesError> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::with_capacity(self.bonds.len());
        for pb in &self.bonds {
            let key = (pb.a.min(pb.b), pb.a.max(pb.b));
            if pb.a == pb.b || !seen.insert(key) {
                return Err(SmilesError::DuplicateBond { offset: pb.offset });
            }
            let both_aromatic = self.atoms[pb.a].is_aromatic && self.atoms[pb.b].is_aromatic;
            let (order, stereo) = match pb.symbol {
                Some(s) => (s.order, s.stereo),
                None if both_aromatic => (BondOrder::Aromatic, BondStereo::None),
                None => (BondOrder::Single, BondStereo::None),
            };
            out.push(Bond {
                begin: pb.a,
                end: pb.b,
                order,
                stereo,
                is_conjugated: false,
                is_in_ring: false,
            });
        }
        Ok(out)
    }
}

fn new_atom(element: Element, is_aromatic: bool, bracketed: bool) -> Atom {
    Atom {
        element,
        formal_charge: 0,
        is_aromatic,
        chirality: Chirality::None,
        explicit_h_count: 0,
        degree: 0,
        hybridization: Hybridization::Sp3,
        isotope: None,
        bracketed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_carbon() {
        let m = parse_smiles("C").unwrap();
        assert_eq!(m.atoms.len(), 1);
        assert!(m.bonds.is_empty());
        assert_eq!(m.atoms[0].element, Element::CARBON);
        assert_eq!(m.atoms[0].degree, 0);
        assert_eq!(m.atoms[0].hybridization, Hybridization::Sp3);
    }

    #[test]
    fn formaldehyde_is_sp2() {
        let m = parse_smiles("C=O").unwrap();
        assert_eq!(m.atoms.len(), 2);
        assert_eq!(m.bonds.len(), 1);
        assert_eq!(m.bonds[0].order, BondOrder::Double);
        assert!(m.atoms.iter().all(|a| a.hybridization == Hybridization::Sp2));
    }

    #[test]
    fn benzene() {
        let m = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(m.atoms.len(), 6);
        assert_eq!(m.bonds.len(), 6);
        assert!(m.atoms.iter().all(|a| a.is_aromatic && a.element == Element::CARBON));
        assert!(m
            .bonds
            .iter()
            .all(|b| b.order == BondOrder::Aromatic && b.is_in_ring && b.is_conjugated));
    }

    #[test]
    fn bracket_atoms() {
        let m = parse_smiles("[13CH3][C@@H](N)[O-].[NH4+]").unwrap();
        let a = &m.atoms[0];
        assert_eq!((a.isotope, a.explicit_h_count), (Some(13), 3));
        assert_eq!(m.atoms[1].chirality, Chirality::Clockwise);
        assert_eq!(m.atoms[3].formal_charge, -1);
        assert_eq!(m.atoms[4].formal_charge, 1);
        assert_eq!(m.atoms[4].explicit_h_count, 4);
        assert_eq!(m.component_count(), 2);

        let m = parse_smiles("[C@H](F)(Cl)Br").unwrap();
        assert_eq!(m.atoms[0].chirality, Chirality::CounterClockwise);
        let m = parse_smiles("[Fe++]").unwrap();
        assert_eq!(m.atoms[0].formal_charge, 2);
        let m = parse_smiles("[Co+3]").unwrap();
        assert_eq!(m.atoms[0].formal_charge, 3);
        let m = parse_smiles("c1cc[se]c1").unwrap();
        assert_eq!(m.atoms[3].element.symbol(), "Se");
        assert!(m.atoms[3].is_aromatic);
        let m = parse_smiles("[C@TH2](F)(Cl)(Br)I").unwrap();
        assert_eq!(m.atoms[0].chirality, Chirality::Other);
    }

    #[test]
    fn two_digit_ring_labels() {
        let m = parse_smiles("C%10CCCC%10").unwrap();
        assert_eq!(m.bonds.len(), 5);
        assert!(m.bonds.iter().all(|b| b.is_in_ring));
    }

    #[test]
    fn ring_bond_symbol_on_either_side() {
        let m = parse_smiles("C=1CCCCC1").unwrap();
        assert_eq!(m.bonds.last().unwrap().order, BondOrder::Double);
        let m = parse_smiles("C1CCCCC=1").unwrap();
        assert_eq!(m.bonds.last().unwrap().order, BondOrder::Double);
        assert!(parse_smiles("C=1CCCCC#1").is_err());
    }

    #[test]
    fn directional_bonds_are_single() {
        let m = parse_smiles("F/C=C\\F").unwrap();
        assert_eq!(m.bonds[0].order, BondOrder::Single);
        assert_eq!(m.bonds[0].stereo, BondStereo::Up);
        assert_eq!(m.bonds[2].stereo, BondStereo::Down);
    }

    #[test]
    fn errors_carry_offsets() {
        assert_eq!(parse_smiles(""), Err(SmilesError::EmptyInput { offset: 0 }));
        assert_eq!(parse_smiles("   "), Err(SmilesError::EmptyInput { offset: 0 }));
        assert_eq!(
            parse_smiles("CC(C"),
            Err(SmilesError::UnbalancedParenthesis { offset: 2 })
        );
        assert_eq!(
            parse_smiles("CC)C"),
            Err(SmilesError::UnbalancedParenthesis { offset: 2 })
        );
        assert_eq!(
            parse_smiles("C1CC"),
            Err(SmilesError::UnmatchedRingClosure { label: 1, offset: 1 })
        );
        assert_eq!(
            parse_smiles("CCXe"),
            Err(SmilesError::UnsupportedElement {
                symbol: "Xe".into(),
                offset: 2
            })
        );
        assert_eq!(
            parse_smiles("C[Xx]"),
            Err(SmilesError::UnsupportedElement {
                symbol: "Xx".into(),
                offset: 2
            })
        );
        assert_eq!(
            parse_smiles("C*"),
            Err(SmilesError::UnsupportedElement {
                symbol: "*".into(),
                offset: 1
            })
        );
        assert_eq!(parse_smiles("CC="), Err(SmilesError::DanglingBond { offset: 2 }));
        assert_eq!(parse_smiles("C11"), Err(SmilesError::DuplicateBond { offset: 2 }));
        assert_eq!(parse_smiles("C12CC12"), Err(SmilesError::DuplicateBond { offset: 6 }));
        assert_eq!(parse_smiles("C[C"), Err(SmilesError::InvalidBracketAtom { offset: 1 }));
        assert_eq!(
            parse_smiles("C[CH+x]"),
            Err(SmilesError::InvalidBracketAtom { offset: 1 })
        );
        assert_eq!(
            parse_smiles("C$C"),
            Err(SmilesError::UnexpectedCharacter { ch: '$', offset: 1 })
        );
        assert_eq!(parse_smiles("CC(C)C  name").unwrap().atoms.len(), 4);
    }

    #[test]
    fn error_messages_mention_offset() {
        let e = parse_smiles("C1CC").unwrap_err();
        assert!(e.to_string().contains("byte 1"), "{e}");
        assert_eq!(e.offset(), 1);
    }
}
