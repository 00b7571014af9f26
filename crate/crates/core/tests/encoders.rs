//! Encoders against the forward pass with presolve off, so the LP relaxation
//! and branching decide every frozen model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use gnnopt::encode::{encode, BoundSource, EncodeConfig};
use gnnopt::model::{forward, LayerKind, RandomModelSpec};
use gnnopt::molecule::{enumerate, random_molecule, MoleculeSpace};
use gnnopt::solver::{solve, SolveStatus, SolverConfig};
use gnnopt::verify::{verify, VerifyConfig};

fn no_presolve() -> SolverConfig {
    SolverConfig {
        presolve: false,
        ..SolverConfig::default()
    }
}

#[test]
fn frozen_models_are_exact_without_presolve() {
    let space = MoleculeSpace::simple(3).unwrap();
    for kind in [LayerKind::Gcn, LayerKind::Sage] {
        for seed in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let layers = 1 + seed as usize % 2;
            let model = RandomModelSpec::uniform(kind, 14, layers, 6)
                .with_head(vec![4])
                .sample(&mut rng)
                .unwrap();
            let cfg = VerifyConfig {
                trials: 3,
                seed,
                solver: no_presolve(),
                ..VerifyConfig::default()
            };
            let report = verify(&model, Some(&space), &cfg).unwrap();
            assert!(report.passed(), "{kind:?} seed {seed}: {report:?}");
        }
    }
}

#[test]
fn loose_uniform_big_m_is_still_exact() {
    let space = MoleculeSpace::simple(3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for kind in [LayerKind::Gcn, LayerKind::Sage] {
        let model = RandomModelSpec::uniform(kind, 14, 2, 4)
            .sample(&mut rng)
            .unwrap();
        let enc = encode(
            &model,
            &EncodeConfig {
                bound_source: BoundSource::Uniform(1e3),
                fix_activations: false,
                ..EncodeConfig::variable(space.clone())
            },
        )
        .unwrap();
        for _ in 0..3 {
            let mol = random_molecule(&space, &mut rng).unwrap();
            let want = forward(&model, &mol.to_graph_input(&space)).unwrap();
            let r = solve(&enc.frozen_molecule(&mol).unwrap(), &no_presolve()).unwrap();
            assert_eq!(r.status, SolveStatus::Optimal);
            assert!((r.objective().unwrap() - want).abs() < 1e-6, "{kind:?}");
        }
    }
}

#[test]
fn free_search_matches_enumeration_without_presolve() {
    let space = MoleculeSpace::simple(2).unwrap();
    for kind in [LayerKind::Gcn, LayerKind::Sage] {
        for seed in 0..2u64 {
            let model = RandomModelSpec::uniform(kind, 14, 1, 8)
                .sample(&mut ChaCha8Rng::seed_from_u64(40 + seed))
                .unwrap();
            let best = enumerate(&model, &space, 1e6).unwrap()[0].1;
            let enc = encode(&model, &EncodeConfig::variable(space.clone())).unwrap();
            let r = solve(&enc.milp, &no_presolve()).unwrap();
            assert_eq!(r.status, SolveStatus::Optimal);
            let obj = r.objective().unwrap();
            assert!((obj - best).abs() < 1e-6, "{kind:?} {obj} vs {best}");
            let mol = enc.decode_molecule(r.incumbent.as_ref().unwrap()).unwrap();
            let value = forward(&model, &mol.to_graph_input(&space)).unwrap();
            assert!((value - obj).abs() < 1e-6);
        }
    }
}
