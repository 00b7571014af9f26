use crate::milp::{Assignment, LinExpr, MilpModel, Sense, VarId, INTEGRALITY_TOL};

use super::{
    Atom, Molecule, MoleculeError, MoleculeSpace, HYDROGEN_OFFSET, MAX_COUNT, NEIGHBOR_OFFSET,
};

/// Input variables of a molecule space inside a [`MilpModel`].
///
/// Adjacency and bond binaries exist once per unordered pair, so the
/// symmetric entries share a variable and the diagonal is identically zero.
#[derive(Debug, Clone)]
pub struct InputVars {
    n: usize,
    adjacency: Vec<Option<VarId>>,
    double: Vec<Option<VarId>>,
    triple: Vec<Option<VarId>>,
    features: Vec<Vec<VarId>>,
}

impl InputVars {
    pub fn n_nodes(&self) -> usize {
        self.n
    }

    /// `A_il`, or `None` on the diagonal.
    pub fn adjacency(&self, i: usize, l: usize) -> Option<VarId> {
        self.adjacency[i * self.n + l]
    }

    pub fn double(&self, i: usize, l: usize) -> Option<VarId> {
        self.double[i * self.n + l]
    }

    pub fn triple(&self, i: usize, l: usize) -> Option<VarId> {
        self.triple[i * self.n + l]
    }

    pub fn feature(&self, i: usize, f: usize) -> VarId {
        self.features[i][f]
    }

    pub fn features(&self, i: usize) -> &[VarId] {
        &self.features[i]
    }
}

fn pair_vars(
    model: &mut MilpModel,
    n: usize,
    prefix: &str,
) -> Result<Vec<Option<VarId>>, MoleculeError> {
    let mut v = vec![None; n * n];
    for i in 0..n {
        for l in i + 1..n {
            let id = model.add_binary(format!("{prefix}_{i}_{l}"))?;
            v[i * n + l] = Some(id);
            v[l * n + i] = Some(id);
        }
    }
    Ok(v)
}

/// Adds the input variables of `space` and its feasibility rules to `model`.
pub fn emit_input_constraints(
    model: &mut MilpModel,
    space: &MoleculeSpace,
) -> Result<InputVars, MoleculeError> {
    let n = space.n_nodes();
    let width = space.feature_width();
    let adjacency = pair_vars(model, n, "A")?;
    let mut features = Vec::with_capacity(n);
    for i in 0..n {
        let mut row = Vec::with_capacity(width);
        for f in 0..width {
            let id = model.add_binary(format!("X_{i}_{f}"))?;
            let unreachable = (f < 4 && !space.allows(Atom::ALL[f]))
                || (NEIGHBOR_OFFSET..HYDROGEN_OFFSET).contains(&f)
                    && f - NEIGHBOR_OFFSET > space.max_degree();
            if unreachable {
                model.fix(id, 0.0)?;
            }
            row.push(id);
        }
        features.push(row);
    }
    let double = if space.bonds().double {
        pair_vars(model, n, "DB")?
    } else {
        vec![None; n * n]
    };
    let triple = if space.bonds().triple {
        pair_vars(model, n, "TB")?
    } else {
        vec![None; n * n]
    };
    let vars = InputVars {
        n,
        adjacency,
        double,
        triple,
        features,
    };

    let others = |i: usize| (0..n).filter(move |&l| l != i);
    for i in 0..n {
        let x = &vars.features[i];
        let atoms = LinExpr::from_terms((0..4).map(|f| (x[f], 1.0)));
        model.add_constraint(format!("atom_{i}"), &atoms, Sense::Eq, 1.0)?;

        let nbr = LinExpr::from_terms((0..=MAX_COUNT).map(|s| (x[NEIGHBOR_OFFSET + s], 1.0)));
        model.add_constraint(format!("nbr1h_{i}"), &nbr, Sense::Eq, 1.0)?;

        let mut deg = LinExpr::new();
        for l in others(i) {
            deg.add(vars.adjacency(i, l).expect("off-diagonal"), 1.0);
        }
        for s in 1..=MAX_COUNT {
            deg.add(x[NEIGHBOR_OFFSET + s], -(s as f64));
        }
        model.add_constraint(format!("nbrdeg_{i}"), &deg, Sense::Eq, 0.0)?;

        let hyd = LinExpr::from_terms((0..=MAX_COUNT).map(|h| (x[HYDROGEN_OFFSET + h], 1.0)));
        model.add_constraint(format!("hyd_{i}"), &hyd, Sense::Eq, 1.0)?;

        // covalence = neighbours + hydrogens + extra bond orders
        let mut val = LinExpr::new();
        for atom in Atom::ALL {
            val.add(x[atom.index()], atom.covalence() as f64);
        }
        for s in 1..=MAX_COUNT {
            val.add(x[NEIGHBOR_OFFSET + s], -(s as f64));
            val.add(x[HYDROGEN_OFFSET + s], -(s as f64));
        }
        for l in others(i) {
            if let Some(db) = vars.double(i, l) {
                val.add(db, -1.0);
            }
            if let Some(tb) = vars.triple(i, l) {
                val.add(tb, -2.0);
            }
        }
        model.add_constraint(format!("val_{i}"), &val, Sense::Eq, 0.0)?;

        if i > 0 {
            let conn =
                LinExpr::from_terms((0..i).map(|l| (vars.adjacency(i, l).expect("l < i"), 1.0)));
            model.add_constraint(format!("conn_{i}"), &conn, Sense::Ge, 1.0)?;
        }
    }

    if space.acyclic() {
        let mut edges = LinExpr::new();
        for i in 0..n {
            for l in i + 1..n {
                edges.add(vars.adjacency(i, l).expect("off-diagonal"), 1.0);
            }
        }
        model.add_constraint("acyc_0", &edges, Sense::Eq, (n - 1) as f64)?;
    }

    if let Some(f) = space.double_feature() {
        multi_bond_rows(
            model,
            &vars,
            f,
            "dbl",
            |v, i, l| v.double(i, l),
            &[(Atom::C, 2.0), (Atom::O, 1.0)],
        )?;
    }
    if let Some(f) = space.triple_feature() {
        multi_bond_rows(
            model,
            &vars,
            f,
            "tpl",
            |v, i, l| v.triple(i, l),
            &[(Atom::C, 1.0)],
        )?;
    }
    if space.bonds().double && space.bonds().triple {
        for i in 0..n {
            for l in i + 1..n {
                let e = LinExpr::from_terms([
                    (vars.double(i, l).expect("double bonds enabled"), 1.0),
                    (vars.triple(i, l).expect("triple bonds enabled"), 1.0),
                ]);
                model.add_constraint(format!("dbtb_{i}_{l}"), &e, Sense::Le, 1.0)?;
            }
        }
    }
    Ok(vars)
}

/// Rows tying one bond class to its feature flag and per-atom capacity.
fn multi_bond_rows(
    model: &mut MilpModel,
    vars: &InputVars,
    flag: usize,
    family: &str,
    bond: impl Fn(&InputVars, usize, usize) -> Option<VarId>,
    capacity: &[(Atom, f64)],
) -> Result<(), MoleculeError> {
    let n = vars.n;
    for i in 0..n {
        for l in i + 1..n {
            // 3 b_il <= x_i + x_l + A_il
            let e = LinExpr::from_terms([
                (bond(vars, i, l).expect("pair variable"), 3.0),
                (vars.feature(i, flag), -1.0),
                (vars.feature(l, flag), -1.0),
                (vars.adjacency(i, l).expect("off-diagonal"), -1.0),
            ]);
            model.add_constraint(format!("{family}_{i}_{l}"), &e, Sense::Le, 0.0)?;
        }
    }
    for i in 0..n {
        let mut sum = LinExpr::new();
        for l in (0..n).filter(|&l| l != i) {
            sum.add(bond(vars, i, l).expect("pair variable"), 1.0);
        }
        let mut cap = LinExpr::new();
        for &(atom, c) in capacity {
            cap.add(vars.feature(i, atom.index()), c);
        }
        cap.add_expr(&sum, -1.0);
        model.add_constraint(format!("{family}cap_{i}"), &cap, Sense::Ge, 0.0)?;
        let mut feat = LinExpr::from_terms([(vars.feature(i, flag), 1.0)]);
        feat.add_expr(&sum, -1.0);
        model.add_constraint(format!("{family}feat_{i}"), &feat, Sense::Le, 0.0)?;
    }
    Ok(())
}

/// Fixes every input variable to the structure of `molecule`.
pub fn freeze_molecule(
    model: &mut MilpModel,
    vars: &InputVars,
    space: &MoleculeSpace,
    molecule: &Molecule,
) -> Result<(), MoleculeError> {
    let n = vars.n;
    if molecule.n_nodes() != n {
        return Err(MoleculeError::Space(format!(
            "molecule has {} atoms, space has {n}",
            molecule.n_nodes()
        )));
    }
    for i in 0..n {
        for l in i + 1..n {
            let o = molecule.order(i, l);
            model.fix(
                vars.adjacency(i, l).expect("off-diagonal"),
                f64::from(u8::from(o > 0)),
            )?;
            if let Some(db) = vars.double(i, l) {
                model.fix(db, f64::from(u8::from(o == 2)))?;
            }
            if let Some(tb) = vars.triple(i, l) {
                model.fix(tb, f64::from(u8::from(o == 3)))?;
            }
        }
        for (f, v) in molecule.node_features(space, i).into_iter().enumerate() {
            model.fix(vars.feature(i, f), v)?;
        }
    }
    Ok(())
}

/// Reads the molecule encoded by the input variables of `assignment`.
pub fn decode(
    model: &MilpModel,
    vars: &InputVars,
    space: &MoleculeSpace,
    assignment: &Assignment,
) -> Result<Molecule, MoleculeError> {
    let bit = |id: VarId| -> Result<bool, MoleculeError> {
        let v = assignment.value(id);
        let r = v.round();
        if (v - r).abs() > INTEGRALITY_TOL || !(r == 0.0 || r == 1.0) {
            return Err(MoleculeError::Integrality {
                name: model.variable(id).name.clone(),
                value: v,
            });
        }
        Ok(r == 1.0)
    };
    let n = vars.n;
    let mut orders = vec![0u8; n * n];
    for i in 0..n {
        for l in i + 1..n {
            let mut o = u8::from(bit(vars.adjacency(i, l).expect("off-diagonal"))?);
            if let Some(db) = vars.double(i, l) {
                if bit(db)? {
                    o += 1;
                }
            }
            if let Some(tb) = vars.triple(i, l) {
                if bit(tb)? {
                    o += 2;
                }
            }
            orders[i * n + l] = o;
            orders[l * n + i] = o;
        }
    }
    let mut atoms = Vec::with_capacity(n);
    let mut hydrogens = Vec::with_capacity(n);
    for i in 0..n {
        let mut atom = None;
        for a in Atom::ALL {
            if bit(vars.feature(i, a.index()))? {
                if atom.is_some() {
                    return Err(MoleculeError::Infeasible(format!(
                        "node {i} has two atom types"
                    )));
                }
                atom = Some(a);
            }
        }
        atoms.push(
            atom.ok_or_else(|| MoleculeError::Infeasible(format!("node {i} has no atom type")))?,
        );
        let mut h = None;
        for k in 0..=MAX_COUNT {
            if bit(vars.feature(i, HYDROGEN_OFFSET + k))? {
                h = Some(k as u8);
            }
        }
        hydrogens.push(
            h.ok_or_else(|| MoleculeError::Infeasible(format!("node {i} has no hydrogen count")))?,
        );
        for f in 0..space.feature_width() {
            bit(vars.feature(i, f))?;
        }
    }
    Ok(Molecule::from_parts(atoms, orders, hydrogens))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::milp::{ObjSense, FEASIBILITY_TOL};
    use crate::molecule::{enumerate_structures, BondClasses};

    fn setup(space: &MoleculeSpace) -> (MilpModel, InputVars) {
        let mut m = MilpModel::new();
        let vars = emit_input_constraints(&mut m, space).unwrap();
        let obj = LinExpr::from_terms([(vars.feature(0, 0), 1.0)]);
        m.set_objective(ObjSense::Maximize, &obj, 0.0);
        (m, vars)
    }

    fn assignment_of(
        m: &MilpModel,
        vars: &InputVars,
        space: &MoleculeSpace,
        mol: &Molecule,
    ) -> Vec<f64> {
        let mut frozen = m.clone();
        freeze_molecule(&mut frozen, vars, space, mol).unwrap();
        frozen.variables().iter().map(|v| v.lb).collect()
    }

    #[test]
    fn frozen_feasible_molecules_satisfy_rows() {
        for bonds in ["single", "double", "triple", "double+triple"] {
            let space = MoleculeSpace::new(3, &Atom::ALL, bonds.parse().unwrap(), false).unwrap();
            let (m, vars) = setup(&space);
            let mols = enumerate_structures(&space, 1e7).unwrap();
            assert!(!mols.is_empty());
            for mol in &mols {
                let values = assignment_of(&m, &vars, &space, mol);
                m.check(&values, FEASIBILITY_TOL, INTEGRALITY_TOL)
                    .unwrap_or_else(|e| panic!("{bonds}: {} rejected: {e}", mol.formula()));
                let a = Assignment {
                    values,
                    objective_value: 0.0,
                };
                assert_eq!(&decode(&m, &vars, &space, &a).unwrap(), mol);
            }
        }
    }

    #[test]
    fn fluorine_with_two_neighbours_is_rejected() {
        let space = MoleculeSpace::simple(3).unwrap();
        let (m, vars) = setup(&space);
        let bad = Molecule::from_parts(
            vec![Atom::C, Atom::F, Atom::C],
            vec![0, 1, 0, 1, 0, 1, 0, 1, 0],
            vec![3, 0, 3],
        );
        let values = assignment_of(&m, &vars, &space, &bad);
        let err = m
            .check(&values, FEASIBILITY_TOL, INTEGRALITY_TOL)
            .unwrap_err();
        assert!(err.to_string().contains("val_1"), "{err}");
    }

    #[test]
    fn shared_pair_variables() {
        let space = MoleculeSpace::new(
            3,
            &Atom::ALL,
            BondClasses {
                double: true,
                triple: false,
            },
            true,
        )
        .unwrap();
        let (m, vars) = setup(&space);
        assert_eq!(vars.adjacency(0, 2), vars.adjacency(2, 0));
        assert_eq!(vars.adjacency(1, 1), None);
        assert_eq!(vars.double(1, 1), None);
        assert!(m.var_by_name("A_0_2").is_some());
        assert!(m.var_by_name("DB_1_2").is_some());
        assert!(m.constraint_by_name("acyc_0").is_some());
    }

    #[test]
    fn fractional_adjacency_fails_decoding() {
        let space = MoleculeSpace::simple(2).unwrap();
        let (m, vars) = setup(&space);
        let mol = Molecule::from_bonds(vec![Atom::C, Atom::C], &[(0, 1, 1)]).unwrap();
        let mut values = assignment_of(&m, &vars, &space, &mol);
        values[vars.adjacency(0, 1).unwrap().0] = 0.4;
        let a = Assignment {
            values,
            objective_value: 0.0,
        };
        assert!(matches!(
            decode(&m, &vars, &space, &a),
            Err(MoleculeError::Integrality { name, .. }) if name == "A_0_1"
        ));
    }
}
