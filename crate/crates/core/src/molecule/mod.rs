//! Molecular design space: feature layout, the feasibility rules over
//! adjacency, atoms, hydrogens and bond orders, their MILP encoding and a
//! brute-force enumerator.

mod constraints;
mod enumerate;

pub use constraints::{decode, emit_input_constraints, freeze_molecule, InputVars};
pub use enumerate::{
    canonical_classes, enumerate, enumerate_structures, estimate_count, random_molecule,
    DEFAULT_ENUMERATION_LIMIT,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::GraphInput;

/// Index of the first neighbour-count feature.
pub const NEIGHBOR_OFFSET: usize = 4;
/// Index of the first hydrogen-count feature.
pub const HYDROGEN_OFFSET: usize = 9;
/// Features shared by every space: 4 atoms, 5 neighbour counts, 5 hydrogen counts.
pub const BASE_FEATURES: usize = 14;
/// Largest neighbour and hydrogen count expressible by the one-hot blocks.
pub const MAX_COUNT: usize = 4;

#[derive(Debug, Error)]
pub enum MoleculeError {
    #[error("invalid molecule space: {0}")]
    Space(String),
    #[error("unknown atom `{0}`")]
    UnknownAtom(String),
    #[error("unknown bond class `{0}`")]
    UnknownBonds(String),
    #[error(
        "search space too large to enumerate: about {estimate:.3e} candidates (limit {limit:.3e})"
    )]
    TooLarge { estimate: f64, limit: f64 },
    #[error("`{name}` has value {value}, not within tolerance of 0 or 1")]
    Integrality { name: String, value: f64 },
    #[error("decoded structure is infeasible: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Milp(#[from] crate::milp::MilpError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Atom {
    C,
    O,
    F,
    Cl,
}

impl Atom {
    pub const ALL: [Atom; 4] = [Atom::C, Atom::O, Atom::F, Atom::Cl];

    /// Feature index of the atom's one-hot entry.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn covalence(self) -> usize {
        match self {
            Atom::C => 4,
            Atom::O => 2,
            Atom::F | Atom::Cl => 1,
        }
    }

    /// Most double bonds the atom may take part in.
    pub fn max_double(self) -> usize {
        match self {
            Atom::C => 2,
            Atom::O => 1,
            _ => 0,
        }
    }

    pub fn max_triple(self) -> usize {
        usize::from(self == Atom::C)
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Atom::C => "C",
            Atom::O => "O",
            Atom::F => "F",
            Atom::Cl => "Cl",
        }
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

impl FromStr for Atom {
    type Err = MoleculeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "C" | "c" => Ok(Atom::C),
            "O" | "o" => Ok(Atom::O),
            "F" | "f" => Ok(Atom::F),
            "Cl" | "CL" | "cl" => Ok(Atom::Cl),
            other => Err(MoleculeError::UnknownAtom(other.to_string())),
        }
    }
}

/// Which bond orders beyond single bonds are allowed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BondClasses {
    pub double: bool,
    pub triple: bool,
}

impl BondClasses {
    pub const SINGLE: BondClasses = BondClasses {
        double: false,
        triple: false,
    };

    pub fn orders(self) -> Vec<u8> {
        let mut v = vec![1];
        if self.double {
            v.push(2);
        }
        if self.triple {
            v.push(3);
        }
        v
    }
}

impl FromStr for BondClasses {
    type Err = MoleculeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut b = BondClasses::SINGLE;
        for part in s.to_ascii_lowercase().split('+') {
            match part.trim() {
                "single" => {}
                "double" => b.double = true,
                "triple" => b.triple = true,
                other => return Err(MoleculeError::UnknownBonds(other.to_string())),
            }
        }
        Ok(b)
    }
}

impl fmt::Display for BondClasses {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.double, self.triple) {
            (false, false) => f.write_str("single"),
            (true, false) => f.write_str("double"),
            (false, true) => f.write_str("triple"),
            (true, true) => f.write_str("double+triple"),
        }
    }
}

/// Search space of molecules with exactly `n_nodes` heavy atoms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MoleculeSpace {
    n_nodes: usize,
    atoms: Vec<Atom>,
    bonds: BondClasses,
    acyclic: bool,
}

impl MoleculeSpace {
    pub fn new(
        n_nodes: usize,
        atoms: &[Atom],
        bonds: BondClasses,
        acyclic: bool,
    ) -> Result<Self, MoleculeError> {
        if n_nodes < 2 {
            return Err(MoleculeError::Space(format!(
                "molecules need at least 2 atoms, got {n_nodes}"
            )));
        }
        let mut atoms = atoms.to_vec();
        atoms.sort();
        atoms.dedup();
        if atoms.is_empty() {
            return Err(MoleculeError::Space("atom alphabet is empty".into()));
        }
        if bonds.triple && !atoms.contains(&Atom::C) {
            return Err(MoleculeError::Space(
                "triple bonds require carbon in the atom alphabet".into(),
            ));
        }
        Ok(Self {
            n_nodes,
            atoms,
            bonds,
            acyclic,
        })
    }

    /// All four atoms, single bonds only.
    pub fn simple(n_nodes: usize) -> Result<Self, MoleculeError> {
        Self::new(n_nodes, &Atom::ALL, BondClasses::SINGLE, false)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn allows(&self, atom: Atom) -> bool {
        self.atoms.contains(&atom)
    }

    pub fn bonds(&self) -> BondClasses {
        self.bonds
    }

    pub fn acyclic(&self) -> bool {
        self.acyclic
    }

    pub fn feature_width(&self) -> usize {
        BASE_FEATURES + usize::from(self.bonds.double) + usize::from(self.bonds.triple)
    }

    pub fn double_feature(&self) -> Option<usize> {
        self.bonds.double.then_some(BASE_FEATURES)
    }

    pub fn triple_feature(&self) -> Option<usize> {
        self.bonds
            .triple
            .then_some(BASE_FEATURES + usize::from(self.bonds.double))
    }

    /// Largest number of neighbours any node can have.
    pub fn max_degree(&self) -> usize {
        let valence = self.atoms.iter().map(|a| a.covalence()).max().unwrap_or(0);
        valence.min(MAX_COUNT).min(self.n_nodes - 1)
    }
}

/// A labeled molecule: heavy atoms, bond orders and implicit hydrogens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Molecule {
    atoms: Vec<Atom>,
    /// Row-major `n x n`, 0 for no bond, otherwise the bond order.
    orders: Vec<u8>,
    hydrogens: Vec<u8>,
}

impl Molecule {
    /// Builds a molecule from bonds `(i, l, order)`. Hydrogens fill the
    /// remaining valence of each atom; `None` if some atom is over-bonded or
    /// a bond is listed twice.
    pub fn from_bonds(atoms: Vec<Atom>, bonds: &[(usize, usize, u8)]) -> Option<Self> {
        let n = atoms.len();
        let mut orders = vec![0u8; n * n];
        for &(i, l, o) in bonds {
            if i == l || i >= n || l >= n || o == 0 || o > 3 || orders[i * n + l] != 0 {
                return None;
            }
            orders[i * n + l] = o;
            orders[l * n + i] = o;
        }
        let mut m = Molecule {
            atoms,
            orders,
            hydrogens: vec![0; n],
        };
        for i in 0..n {
            let used = m.bond_valence(i);
            let h = m.atoms[i].covalence().checked_sub(used)?;
            m.hydrogens[i] = u8::try_from(h).ok()?;
        }
        Some(m)
    }

    /// Builds a molecule with explicit hydrogen counts, without validation.
    pub fn from_parts(atoms: Vec<Atom>, orders: Vec<u8>, hydrogens: Vec<u8>) -> Self {
        assert_eq!(orders.len(), atoms.len() * atoms.len());
        assert_eq!(hydrogens.len(), atoms.len());
        Self {
            atoms,
            orders,
            hydrogens,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.atoms.len()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn hydrogens(&self) -> &[u8] {
        &self.hydrogens
    }

    pub fn order(&self, i: usize, l: usize) -> u8 {
        self.orders[i * self.n_nodes() + l]
    }

    pub fn adjacent(&self, i: usize, l: usize) -> bool {
        self.order(i, l) > 0
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n_nodes()).filter(|&l| self.adjacent(i, l)).count()
    }

    /// Bonds `(i, l, order)` with `i < l`.
    pub fn bonds(&self) -> Vec<(usize, usize, u8)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for l in i + 1..n {
                if self.adjacent(i, l) {
                    out.push((i, l, self.order(i, l)));
                }
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.bonds().len()
    }

    fn count_order(&self, i: usize, order: u8) -> usize {
        (0..self.n_nodes())
            .filter(|&l| self.order(i, l) == order)
            .count()
    }

    /// Valence consumed by bonds at node `i`.
    pub fn bond_valence(&self, i: usize) -> usize {
        (0..self.n_nodes())
            .map(|l| usize::from(self.order(i, l)))
            .sum()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for l in 0..n {
                if self.adjacent(i, l) && !seen[l] {
                    seen[l] = true;
                    stack.push(l);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// Feature vector of node `i` in the layout of `space`.
    pub fn node_features(&self, space: &MoleculeSpace, i: usize) -> Vec<f64> {
        let mut x = vec![0.0; space.feature_width()];
        x[self.atoms[i].index()] = 1.0;
        x[NEIGHBOR_OFFSET + self.degree(i).min(MAX_COUNT)] = 1.0;
        x[HYDROGEN_OFFSET + usize::from(self.hydrogens[i]).min(MAX_COUNT)] = 1.0;
        if let Some(f) = space.double_feature() {
            x[f] = f64::from(u8::from(self.count_order(i, 2) > 0));
        }
        if let Some(f) = space.triple_feature() {
            x[f] = f64::from(u8::from(self.count_order(i, 3) > 0));
        }
        x
    }

    pub fn to_graph_input(&self, space: &MoleculeSpace) -> GraphInput {
        let edges: Vec<(usize, usize)> = self.bonds().iter().map(|&(i, l, _)| (i, l)).collect();
        let features = (0..self.n_nodes())
            .map(|i| self.node_features(space, i))
            .collect();
        GraphInput::from_edges(self.n_nodes(), &edges, features)
            .expect("molecule adjacency is symmetric without self-loops")
    }

    /// Names of the feasibility rules this labeled molecule breaks in
    /// `space`; empty when feasible.
    pub fn violations(&self, space: &MoleculeSpace) -> Vec<String> {
        let n = self.n_nodes();
        let mut v = Vec::new();
        if n != space.n_nodes() {
            v.push(format!(
                "size {n} differs from space size {}",
                space.n_nodes()
            ));
            return v;
        }
        let allowed = space.bonds().orders();
        for i in 0..n {
            let atom = self.atoms[i];
            if !space.allows(atom) {
                v.push(format!("atom_{i}: {atom} not in alphabet"));
            }
            if self.order(i, i) != 0 {
                v.push(format!("diag_{i}: self bond"));
            }
            let deg = self.degree(i);
            if deg > MAX_COUNT {
                v.push(format!("nbr1h_{i}: degree {deg} exceeds {MAX_COUNT}"));
            }
            if usize::from(self.hydrogens[i]) > MAX_COUNT {
                v.push(format!("hyd_{i}: {} hydrogens", self.hydrogens[i]));
            }
            if atom.covalence() != self.bond_valence(i) + usize::from(self.hydrogens[i]) {
                v.push(format!("val_{i}: covalence of {atom} not matched"));
            }
            if i > 0 && !(0..i).any(|l| self.adjacent(i, l)) {
                v.push(format!("conn_{i}: no neighbour with a lower index"));
            }
            let doubles = self.count_order(i, 2);
            if doubles > atom.max_double() {
                v.push(format!("dblcap_{i}: {doubles} double bonds on {atom}"));
            }
            let triples = self.count_order(i, 3);
            if triples > atom.max_triple() {
                v.push(format!("tplcap_{i}: {triples} triple bonds on {atom}"));
            }
            for l in 0..n {
                let o = self.order(i, l);
                if o != self.order(l, i) {
                    v.push(format!("sym_{i}_{l}: asymmetric bond"));
                }
                if i < l && o > 0 && !allowed.contains(&o) {
                    v.push(format!("order_{i}_{l}: bond order {o} not allowed"));
                }
            }
        }
        if space.acyclic() && self.edge_count() != n - 1 {
            v.push(format!(
                "acyc: {} edges, expected {}",
                self.edge_count(),
                n - 1
            ));
        }
        v
    }

    pub fn is_feasible(&self, space: &MoleculeSpace) -> bool {
        self.violations(space).is_empty()
    }

    /// Molecular formula in Hill order.
    pub fn formula(&self) -> String {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for a in &self.atoms {
            *counts.entry(a.symbol()).or_insert(0) += 1;
        }
        let h: usize = self.hydrogens.iter().map(|&h| usize::from(h)).sum();
        let mut out = String::new();
        let mut push = |sym: &str, k: usize| {
            if k > 0 {
                out.push_str(sym);
                if k > 1 {
                    out.push_str(&k.to_string());
                }
            }
        };
        if let Some(c) = counts.remove("C") {
            push("C", c);
            push("H", h);
            for (sym, k) in counts {
                push(sym, k);
            }
        } else {
            counts.insert("H", h);
            for (sym, k) in counts {
                push(sym, k);
            }
        }
        out
    }

    /// Copy with node `k` taken from old node `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Molecule {
        let n = self.n_nodes();
        let mut orders = vec![0u8; n * n];
        for a in 0..n {
            for b in 0..n {
                orders[a * n + b] = self.order(perm[a], perm[b]);
            }
        }
        Molecule {
            atoms: perm.iter().map(|&p| self.atoms[p]).collect(),
            orders,
            hydrogens: perm.iter().map(|&p| self.hydrogens[p]).collect(),
        }
    }

    /// Representative shared by all relabelings of this molecule.
    pub fn canonical(&self) -> Molecule {
        let n = self.n_nodes();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut best = self.clone();
        // Heap's algorithm over all orderings; fine for the small n enumerated
        let mut c = vec![0usize; n];
        let mut i = 0;
        while i < n {
            if c[i] < i {
                if i % 2 == 0 {
                    perm.swap(0, i);
                } else {
                    perm.swap(c[i], i);
                }
                let cand = self.permuted(&perm);
                if cand < best {
                    best = cand;
                }
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        best
    }

    /// Multi-line report: formula, atoms with hydrogens, bonds with orders.
    pub fn describe(&self) -> String {
        let mut out = format!("formula {}\n", self.formula());
        for (i, a) in self.atoms.iter().enumerate() {
            out.push_str(&format!("atom {i} {a} H{}\n", self.hydrogens[i]));
        }
        for (i, l, o) in self.bonds() {
            out.push_str(&format!("bond {i} {l} order {o}\n"));
        }
        out
    }
}
