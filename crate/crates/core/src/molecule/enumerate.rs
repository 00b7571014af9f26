use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::model::{forward, GnnModel};

use super::{Atom, Molecule, MoleculeError, MoleculeSpace, MAX_COUNT};

/// Candidate budget above which enumeration is refused.
pub const DEFAULT_ENUMERATION_LIMIT: f64 = 2e7;

/// Upper estimate of the labeled candidates the enumerator would visit.
pub fn estimate_count(space: &MoleculeSpace) -> f64 {
    let n = space.n_nodes() as f64;
    let pairs = n * (n - 1.0) / 2.0;
    let per_pair = 1.0 + space.bonds().orders().len() as f64;
    per_pair.powf(pairs) * (space.atoms().len() as f64).powf(n)
}

/// Adjacency patterns obeying ordered attachment, the degree cap and, when
/// requested, the tree edge count.
fn skeletons(space: &MoleculeSpace) -> Vec<Vec<(usize, usize)>> {
    let n = space.n_nodes();
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |l| (i, l)))
        .collect();
    let mut out = Vec::new();
    for mask in 0u64..(1u64 << pairs.len()) {
        let edges: Vec<(usize, usize)> = pairs
            .iter()
            .enumerate()
            .filter(|(k, _)| mask >> k & 1 == 1)
            .map(|(_, &p)| p)
            .collect();
        if space.acyclic() && edges.len() != n - 1 {
            continue;
        }
        let mut degree = vec![0usize; n];
        let mut attached = vec![false; n];
        attached[0] = true;
        for &(i, l) in &edges {
            degree[i] += 1;
            degree[l] += 1;
            attached[l] = true;
        }
        if attached.iter().all(|&a| a) && degree.iter().all(|&d| d <= MAX_COUNT) {
            out.push(edges);
        }
    }
    out
}

fn for_each_product(radices: &[usize], mut f: impl FnMut(&[usize])) {
    let mut digits = vec![0usize; radices.len()];
    if radices.iter().any(|&r| r == 0) {
        return;
    }
    loop {
        f(&digits);
        let mut k = 0;
        loop {
            if k == digits.len() {
                return;
            }
            digits[k] += 1;
            if digits[k] < radices[k] {
                break;
            }
            digits[k] = 0;
            k += 1;
        }
    }
}

/// Every labeled molecule of `space`, checked with the direct predicate
/// [`Molecule::violations`] and sorted.
pub fn enumerate_structures(
    space: &MoleculeSpace,
    limit: f64,
) -> Result<Vec<Molecule>, MoleculeError> {
    let estimate = estimate_count(space);
    if estimate > limit || space.n_nodes() > 8 {
        return Err(MoleculeError::TooLarge { estimate, limit });
    }
    let n = space.n_nodes();
    let atoms = space.atoms().to_vec();
    let orders = space.bonds().orders();
    let mut out: Vec<Molecule> = skeletons(space)
        .par_iter()
        .flat_map_iter(|edges| {
            let mut found = Vec::new();
            let mut degree = vec![0usize; n];
            for &(i, l) in edges {
                degree[i] += 1;
                degree[l] += 1;
            }
            for_each_product(&vec![atoms.len(); n], |pick| {
                let labels: Vec<Atom> = pick.iter().map(|&k| atoms[k]).collect();
                if (0..n).any(|i| degree[i] > labels[i].covalence()) {
                    return;
                }
                for_each_product(&vec![orders.len(); edges.len()], |ords| {
                    let bonds: Vec<(usize, usize, u8)> = edges
                        .iter()
                        .zip(ords)
                        .map(|(&(i, l), &o)| (i, l, orders[o]))
                        .collect();
                    if let Some(m) = Molecule::from_bonds(labels.clone(), &bonds) {
                        if m.is_feasible(space) {
                            found.push(m);
                        }
                    }
                });
            });
            found
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Every feasible labeled molecule with its model prediction, best first.
pub fn enumerate(
    model: &GnnModel,
    space: &MoleculeSpace,
    limit: f64,
) -> Result<Vec<(Molecule, f64)>, MoleculeError> {
    let mols = enumerate_structures(space, limit)?;
    let mut scored: Vec<(Molecule, f64)> = mols
        .into_par_iter()
        .map(|m| {
            let v = forward(model, &m.to_graph_input(space))?;
            Ok((m, v))
        })
        .collect::<Result<_, MoleculeError>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(scored)
}

/// Distinct molecules up to relabeling, as sorted canonical representatives.
pub fn canonical_classes(molecules: &[Molecule]) -> Vec<Molecule> {
    let set: BTreeSet<Molecule> = molecules.par_iter().map(Molecule::canonical).collect();
    set.into_iter().collect()
}

/// Random feasible molecule by rejection over random trees with extra
/// edges. `None` if no sample is accepted within the attempt budget.
pub fn random_molecule<R: Rng + ?Sized>(space: &MoleculeSpace, rng: &mut R) -> Option<Molecule> {
    let n = space.n_nodes();
    let orders = space.bonds().orders();
    for _ in 0..10_000 {
        let atoms: Vec<Atom> = (0..n)
            .map(|_| *space.atoms().choose(rng).expect("alphabet is non-empty"))
            .collect();
        let mut free: Vec<usize> = atoms.iter().map(|a| a.covalence()).collect();
        let mut bonds: Vec<(usize, usize, u8)> = Vec::new();
        let mut ok = true;
        for i in 1..n {
            let cands: Vec<usize> = (0..i).filter(|&l| free[l] >= 1 && free[i] >= 1).collect();
            let Some(&l) = cands.choose(rng) else {
                ok = false;
                break;
            };
            bonds.push((l, i, 1));
            free[i] -= 1;
            free[l] -= 1;
        }
        if !ok {
            continue;
        }
        if !space.acyclic() {
            for i in 0..n {
                for l in i + 1..n {
                    let present = bonds.iter().any(|&(a, b, _)| (a, b) == (i, l));
                    if !present && free[i] >= 1 && free[l] >= 1 && rng.gen_bool(0.2) {
                        bonds.push((i, l, 1));
                        free[i] -= 1;
                        free[l] -= 1;
                    }
                }
            }
        }
        for b in bonds.iter_mut() {
            let o = *orders.choose(rng).expect("single bonds always allowed");
            let extra = usize::from(o - 1);
            if free[b.0] >= extra && free[b.1] >= extra {
                free[b.0] -= extra;
                free[b.1] -= extra;
                b.2 = o;
            }
        }
        if let Some(m) = Molecule::from_bonds(atoms, &bonds) {
            if m.is_feasible(space) {
                return Some(m);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_atom_molecules() {
        let space = MoleculeSpace::simple(2).unwrap();
        let all = enumerate_structures(&space, DEFAULT_ENUMERATION_LIMIT).unwrap();
        assert_eq!(all.len(), 16);
        assert_eq!(canonical_classes(&all).len(), 10);
        let ff = MoleculeSpace::new(2, &[Atom::F], Default::default(), false).unwrap();
        let all = enumerate_structures(&ff, DEFAULT_ENUMERATION_LIMIT).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].hydrogens(), &[0, 0]);
    }

    #[test]
    fn acyclic_three_nodes_have_two_edges() {
        let space = MoleculeSpace::new(3, &Atom::ALL, Default::default(), true).unwrap();
        let all = enumerate_structures(&space, DEFAULT_ENUMERATION_LIMIT).unwrap();
        assert!(!all.is_empty());
        assert!(all.iter().all(|m| m.edge_count() == 2 && m.is_connected()));
    }

    #[test]
    fn refuses_large_spaces() {
        let space = MoleculeSpace::simple(8).unwrap();
        assert!(matches!(
            enumerate_structures(&space, DEFAULT_ENUMERATION_LIMIT),
            Err(MoleculeError::TooLarge { .. })
        ));
    }

    #[test]
    fn random_molecules_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for bonds in ["single", "double", "double+triple"] {
            let space =
                MoleculeSpace::new(5, &Atom::ALL, bonds.parse().unwrap(), bonds != "single")
                    .unwrap();
            for _ in 0..50 {
                let m = random_molecule(&space, &mut rng).unwrap();
                assert!(m.is_feasible(&space));
            }
        }
    }
}
