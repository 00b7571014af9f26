//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test --release --test acceptance`.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use gnnopt::encode::{encode, DegreeLookup, EncodeConfig, Encoding};
use gnnopt::fbbt::{mlp_bounds, Bounds};
use gnnopt::ga::{run_ga, GaConfig};
use gnnopt::milp::{constraint_stats, LinExpr, MilpModel, ObjSense};
use gnnopt::model::{
    forward, forward_trace, Activation, GnnModel, Layer, LayerKind, Matrix, RandomModelSpec,
};
use gnnopt::molecule::{
    canonical_classes, emit_input_constraints, enumerate, enumerate_structures, random_molecule,
    Atom, BondClasses, Molecule, MoleculeSpace,
};
use gnnopt::solver::{certify, lp_relax, solve, LpOutcome, SolveResult, SolveStatus, SolverConfig};
use gnnopt::verify::{verify, VerifyConfig};

type Outcome = Result<String, String>;

const ENUMERATION_LIMIT: f64 = 1e7;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn graph_model(rng: &mut ChaCha8Rng, kind: LayerKind) -> GnnModel {
    let layers = rng.gen_range(1..=2);
    let widths: Vec<usize> = (0..layers).map(|_| rng.gen_range(1..=16)).collect();
    let head: Vec<usize> = (0..rng.gen_range(0..=1))
        .map(|_| rng.gen_range(1..=16))
        .collect();
    RandomModelSpec {
        graph_kinds: vec![kind; layers],
        graph_widths: widths,
        ..RandomModelSpec::uniform(kind, 14, layers, 1)
    }
    .with_head(head)
    .sample(rng)
    .unwrap()
}

fn dense_model(rng: &mut ChaCha8Rng) -> GnnModel {
    let input = rng.gen_range(1..=16);
    let mut width = input;
    let mut layers = Vec::new();
    for _ in 0..rng.gen_range(1..=2) {
        let out = rng.gen_range(1..=16);
        layers.push(Layer::Dense {
            weight: random_matrix(rng, out, width, 1.0),
            bias: (0..out).map(|_| rng.gen_range(-1.0..=1.0)).collect(),
            activation: Activation::Relu,
        });
        width = out;
    }
    layers.push(Layer::Dense {
        weight: random_matrix(rng, 1, width, 1.0),
        bias: vec![rng.gen_range(-1.0..=1.0)],
        activation: Activation::None,
    });
    GnnModel::new(input, 4, 0.0, 1.0, layers).unwrap()
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, s: f64) -> Matrix {
    Matrix::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-s..=s)).collect(),
    )
    .unwrap()
}

fn exactness() -> Outcome {
    const MODELS: usize = 50;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = [0.0f64; 4];
    let names = ["mlp", "gcn-fixed", "gcn-variable", "sage-variable"];
    for m in 0..MODELS {
        let cfg = VerifyConfig {
            trials: 2,
            seed: m as u64,
            ..VerifyConfig::default()
        };
        let space = MoleculeSpace::simple(rng.gen_range(2..=4)).unwrap();

        let mlp = dense_model(&mut rng);
        let r = verify(&mlp, None, &cfg).map_err(|e| e.to_string())?;
        ensure(r.passed(), || format!("mlp model {m}: {:?}", r.checks))?;
        worst[0] = worst[0].max(r.max_deviation());

        let gcn = graph_model(&mut rng, LayerKind::Gcn);
        let r = verify(&gcn, Some(&space), &cfg).map_err(|e| e.to_string())?;
        for c in &r.checks {
            ensure(c.passed(), || format!("gcn model {m}: {}", c.summary()))?;
            let slot = if c.encoder == "fixed" { 1 } else { 2 };
            worst[slot] = worst[slot].max(c.max_deviation);
        }

        let sage = graph_model(&mut rng, LayerKind::Sage);
        let r = verify(&sage, Some(&space), &cfg).map_err(|e| e.to_string())?;
        for c in &r.checks {
            ensure(c.passed(), || format!("sage model {m}: {}", c.summary()))?;
        }
        worst[3] = worst[3].max(r.max_deviation());
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(600), || {
        format!("took {elapsed:?}, budget 600 s")
    })?;
    let devs: Vec<String> = names
        .iter()
        .zip(worst)
        .map(|(n, d)| format!("{n}={d:.1e}"))
        .collect();
    Ok(format!(
        "{MODELS} models per encoder, max deviation {} in {:.1} s",
        devs.join(" "),
        elapsed.as_secs_f64()
    ))
}

/// Optimal solves collected for the certificate criterion.
struct Solved {
    milp: MilpModel,
    result: SolveResult,
}

fn solve_space(model: &GnnModel, space: &MoleculeSpace) -> Result<(Encoding, SolveResult), String> {
    let enc = encode(model, &EncodeConfig::variable(space.clone())).map_err(|e| e.to_string())?;
    let r = solve(&enc.milp, &SolverConfig::default()).map_err(|e| e.to_string())?;
    Ok((enc, r))
}

fn oracle_equivalence(solved: &mut Vec<Solved>) -> Outcome {
    let start = Instant::now();
    let mut cases = 0;
    let mut nodes = 0;
    for n in [2, 3] {
        let space = MoleculeSpace::simple(n).unwrap();
        for kind in [LayerKind::Sage, LayerKind::Gcn] {
            for seed in 0..3u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let model = RandomModelSpec::uniform(kind, 14, 1, 8)
                    .sample(&mut rng)
                    .unwrap();
                let best =
                    enumerate(&model, &space, ENUMERATION_LIMIT).map_err(|e| e.to_string())?[0].1;
                let (enc, r) = solve_space(&model, &space)?;
                let tag = format!("n={n} {kind:?} seed={seed}");
                ensure(r.status == SolveStatus::Optimal, || {
                    format!("{tag}: status {}", r.status)
                })?;
                let obj = r.objective().unwrap();
                ensure((obj - best).abs() <= 1e-6, || {
                    format!("{tag}: milp {obj} vs enumerator {best}")
                })?;
                let mol = enc
                    .decode_molecule(r.incumbent.as_ref().unwrap())
                    .map_err(|e| e.to_string())?;
                ensure(mol.is_feasible(&space), || {
                    format!("{tag}: decoded {} is infeasible", mol.describe())
                })?;
                let value = forward(&model, &mol.to_graph_input(&space)).unwrap();
                ensure((value - obj).abs() <= 1e-6, || {
                    format!("{tag}: decoded molecule predicts {value}, optimum {obj}")
                })?;
                cases += 1;
                nodes += r.node_count;
                solved.push(Solved {
                    milp: enc.milp,
                    result: r,
                });
            }
        }
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(900), || {
        format!("took {elapsed:?}, budget 15 min")
    })?;
    Ok(format!(
        "{cases} models match the enumerator, {nodes} nodes, {:.1} s",
        elapsed.as_secs_f64()
    ))
}

fn fbbt_validity() -> Outcome {
    const SAMPLES: usize = 10_000;
    let space = MoleculeSpace::simple(4).unwrap();
    let mut checked = 0usize;
    for (idx, (kind, layers)) in [
        (LayerKind::Gcn, 1),
        (LayerKind::Gcn, 2),
        (LayerKind::Sage, 1),
        (LayerKind::Sage, 2),
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + idx as u64);
        let model = RandomModelSpec::uniform(kind, 14, layers, 8)
            .with_head(vec![6])
            .sample(&mut rng)
            .unwrap();
        let enc =
            encode(&model, &EncodeConfig::variable(space.clone())).map_err(|e| e.to_string())?;
        let table = &enc.bounds;
        for s in 0..SAMPLES {
            let mol = random_molecule(&space, &mut rng).ok_or("sampler failed")?;
            let trace = forward_trace(&model, &mol.to_graph_input(&space)).unwrap();
            for (k, rows) in trace.pre_activations.iter().enumerate() {
                let pre = &table.layers[k].pre;
                for row in rows {
                    ensure(pre.contains(row, 1e-9), || {
                        format!("{kind:?}x{layers} sample {s} layer {k}: {row:?} outside {pre:?}")
                    })?;
                    checked += row.len();
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let mut worst = 0.0f64;
    for layer in 0..100 {
        let rows = rng.gen_range(1..=8);
        let cols = rng.gen_range(1..=8);
        let w = random_matrix(&mut rng, rows, cols, 2.0);
        let b: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let lo: Vec<f64> = (0..cols).map(|_| rng.gen_range(-2.0..=1.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|l| l + rng.gen_range(0.0..=2.0)).collect();
        let first = rng.gen_bool(0.5);
        let input = Bounds::new(lo.clone(), hi.clone());
        let got = mlp_bounds(&w, Some(&b), &input, first);
        // the LP sees the box the layer actually reads
        let clamp = |v: f64| if first { v } else { v.max(0.0) };
        for r in 0..rows {
            for sense in [ObjSense::Maximize, ObjSense::Minimize] {
                let mut m = MilpModel::new();
                let x: Vec<_> = (0..cols)
                    .map(|j| {
                        m.add_continuous(format!("x{j}"), clamp(lo[j]), clamp(hi[j]))
                            .unwrap()
                    })
                    .collect();
                m.set_objective(
                    sense,
                    &LinExpr::from_terms(x.iter().copied().zip(w.row(r).iter().copied())),
                    0.0,
                );
                let LpOutcome::Optimal { objective, .. } =
                    lp_relax(&m).map_err(|e| e.to_string())?
                else {
                    return Err(format!("layer {layer} row {r}: box LP not optimal"));
                };
                let want = objective + b[r];
                let have = match sense {
                    ObjSense::Maximize => got.upper[r],
                    ObjSense::Minimize => got.lower[r],
                };
                worst = worst.max((want - have).abs());
                ensure((want - have).abs() <= 1e-8, || {
                    format!("layer {layer} row {r} {sense:?}: interval {have} vs LP {want}")
                })?;
            }
        }
    }
    Ok(format!(
        "{checked} Monte-Carlo pre-activations inside [L, U]; 100 dense layers match the box LP (max diff {worst:.1e})"
    ))
}

fn degree_lookup() -> Outcome {
    let g = DegreeLookup::new(4);
    ensure(g.len() == 25, || format!("{} entries", g.len()))?;
    for a in 0..5 {
        for b in 0..5 {
            let p = a * 5 + b;
            let want = if a == 0 || b == 0 {
                0.0
            } else {
                1.0 / ((a * b) as f64).sqrt()
            };
            ensure(g.index(a, b) == p && g.get(p) == want, || {
                format!(
                    "entry ({a}, {b}) = {} at {}, want {want} at {p}",
                    g.get(p),
                    g.index(a, b)
                )
            })?;
        }
    }
    Ok("25 entries exact, zero where a degree is 0".into())
}

fn constraint_growth() -> Outcome {
    let space = MoleculeSpace::simple(4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let stats = |model: &GnnModel| -> Result<_, String> {
        let enc =
            encode(model, &EncodeConfig::variable(space.clone())).map_err(|e| e.to_string())?;
        Ok((constraint_stats(&enc.milp), enc.milp))
    };
    // support rows gated by the second layer's input width
    let mut sup = Vec::new();
    for width in [4, 8, 16] {
        let model = RandomModelSpec::uniform(LayerKind::Sage, 14, 2, width)
            .sample(&mut rng)
            .unwrap();
        let (all, milp) = stats(&model)?;
        let second = milp
            .constraints()
            .iter()
            .filter(|c| c.name.starts_with("sup_1_"))
            .count();
        sup.push((width, second, all.get("sup").copied().unwrap_or(0)));
    }
    for pair in sup.windows(2) {
        ensure(pair[1].1 == 2 * pair[0].1 && pair[0].1 > 0, || {
            format!("sup rows of layer 1: {sup:?}")
        })?;
    }

    const DEGREE_FAMILIES: [&str; 12] = [
        "deg", "pidx", "cidx", "csum", "sil", "shat", "shatsum", "cand", "cmarg", "dsplit",
        "dtake", "dmerge",
    ];
    let mut counts = Vec::new();
    for layers in 1..=3 {
        let model = RandomModelSpec::uniform(LayerKind::Gcn, 14, layers, 4)
            .sample(&mut rng)
            .unwrap();
        let (all, _) = stats(&model)?;
        let c: Vec<usize> = DEGREE_FAMILIES
            .iter()
            .map(|f| all.get(*f).copied().unwrap_or(0))
            .collect();
        counts.push(c);
    }
    ensure(counts.iter().all(|c| c == &counts[0]), || {
        format!("degree families per layer count: {counts:?}")
    })?;
    let total: usize = counts[0].iter().sum();
    ensure(total > 0, || "no degree rows emitted".into())?;
    Ok(format!(
        "layer-1 sup rows {:?} for widths 4/8/16; {total} degree/lookup rows for 1, 2 and 3 GCN layers",
        sup.iter().map(|s| s.1).collect::<Vec<_>>()
    ))
}

/// Every one-hot assignment of atom, neighbour-count and hydrogen fields over
/// every adjacency: the input constraints must accept exactly those whose
/// fields describe a feasible molecule.
fn soundness_on(n: usize) -> Result<(usize, usize), String> {
    let space = MoleculeSpace::simple(n).unwrap();
    let mut milp = MilpModel::new();
    let vars = emit_input_constraints(&mut milp, &space).map_err(|e| e.to_string())?;
    let pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |l| (i, l)))
        .collect();
    let width = space.feature_width();
    ensure(milp.num_vars() == pairs.len() + n * width, || {
        format!("unexpected auxiliary variables: {}", milp.num_vars())
    })?;
    // per node: atom (4) x neighbour count (5) x hydrogens (5)
    let per_node: usize = 4 * 5 * 5;
    let labelings = per_node.pow(n as u32);
    let total = labelings << pairs.len();
    let (accepted, agree) = (0..total)
        .into_par_iter()
        .map(|code| {
            let mask = code & ((1 << pairs.len()) - 1);
            let mut rest = code >> pairs.len();
            let mut values = vec![0.0; milp.num_vars()];
            let mut orders = vec![0u8; n * n];
            for (k, &(i, l)) in pairs.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    values[vars.adjacency(i, l).unwrap().0] = 1.0;
                    orders[i * n + l] = 1;
                    orders[l * n + i] = 1;
                }
            }
            let mut atoms = Vec::with_capacity(n);
            let mut hydrogens = Vec::with_capacity(n);
            let mut rows = Vec::with_capacity(n);
            for i in 0..n {
                let digit = rest % per_node;
                rest /= per_node;
                let (a, nb, h) = (digit / 25, digit / 5 % 5, digit % 5);
                let mut row = vec![0.0; width];
                row[a] = 1.0;
                row[4 + nb] = 1.0;
                row[9 + h] = 1.0;
                for (f, &v) in row.iter().enumerate() {
                    values[vars.feature(i, f).0] = v;
                }
                atoms.push(Atom::ALL[a]);
                hydrogens.push(h as u8);
                rows.push(row);
            }
            let milp_ok = milp.check(&values, 1e-9, 1e-9).is_ok();
            let mol = Molecule::from_parts(atoms, orders, hydrogens);
            let direct =
                mol.is_feasible(&space) && (0..n).all(|i| mol.node_features(&space, i) == rows[i]);
            (usize::from(milp_ok), usize::from(milp_ok == direct))
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    ensure(agree == total, || {
        format!("n={n}: {} of {total} assignments disagree", total - agree)
    })?;
    let labeled = enumerate_structures(&space, ENUMERATION_LIMIT)
        .map_err(|e| e.to_string())?
        .len();
    ensure(accepted == labeled, || {
        format!("n={n}: MILP accepts {accepted}, enumerator lists {labeled}")
    })?;
    Ok((total, accepted))
}

fn molecule_soundness() -> Outcome {
    let space = MoleculeSpace::simple(2).unwrap();
    let all = enumerate_structures(&space, ENUMERATION_LIMIT).map_err(|e| e.to_string())?;
    let classes = canonical_classes(&all);
    ensure(classes.len() == 10, || {
        format!("{} classes for n=2", classes.len())
    })?;
    ensure(
        classes
            .iter()
            .all(|m| m.edge_count() == 1 && m.is_feasible(&space)),
        || "an n=2 class is not a bonded pair".into(),
    )?;
    let (t2, a2) = soundness_on(2)?;
    let (t3, a3) = soundness_on(3)?;
    Ok(format!(
        "n=2 gives 10 atom pairs ({} labeled); MILP and direct predicate agree on {t2} (n=2, {a2} feasible) and {t3} (n=3, {a3} feasible) assignments",
        all.len()
    ))
}

fn acyclicity(solved: &mut Vec<Solved>) -> Outcome {
    let space = MoleculeSpace::new(4, &Atom::ALL, BondClasses::SINGLE, true).unwrap();
    let mut incumbents = 0;
    for seed in 0..2u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let model = RandomModelSpec::uniform(LayerKind::Sage, 14, 1, 4)
            .sample(&mut rng)
            .unwrap();
        let (enc, r) = solve_space(&model, &space)?;
        ensure(r.status == SolveStatus::Optimal, || {
            format!("seed {seed}: status {}", r.status)
        })?;
        for entry in &r.incumbent_pool {
            let mol = enc
                .decode_molecule(&entry.assignment)
                .map_err(|e| e.to_string())?;
            ensure(mol.edge_count() == 3 && mol.is_connected(), || {
                format!("seed {seed}: incumbent {} is not a tree", mol.describe())
            })?;
            incumbents += 1;
        }
        solved.push(Solved {
            milp: enc.milp,
            result: r,
        });
    }
    Ok(format!("{incumbents} incumbents, all trees with 3 edges"))
}

fn certificates(solved: &[Solved]) -> Outcome {
    let cfg = SolverConfig::default();
    for (k, s) in solved.iter().enumerate() {
        if s.result.status != SolveStatus::Optimal {
            continue;
        }
        let c = certify(&s.milp, &s.result, &cfg).map_err(|e| e.to_string())?;
        ensure(c.holds(), || {
            format!("solve {k}: cutoff {} re-solve is {}", c.cutoff, c.status)
        })?;
        let again = solve(&s.milp, &cfg).map_err(|e| e.to_string())?;
        ensure(
            again.node_count == s.result.node_count && again.incumbent == s.result.incumbent,
            || {
                format!(
                    "solve {k}: replay {} nodes vs {}",
                    again.node_count, s.result.node_count
                )
            },
        )?;
    }
    Ok(format!(
        "{} optimal results certified and replayed identically",
        solved.len()
    ))
}

fn ga_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let model = RandomModelSpec::uniform(LayerKind::Sage, 14, 1, 8)
        .sample(&mut rng)
        .unwrap();
    let space = MoleculeSpace::simple(2).unwrap();
    let best = enumerate(&model, &space, ENUMERATION_LIMIT).map_err(|e| e.to_string())?[0].1;
    let (_, r) = solve_space(&model, &space)?;
    let milp = r.objective().ok_or("n=2 MILP has no incumbent")?;
    let runs: Vec<Option<f64>> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let cfg = GaConfig {
                seed,
                ..GaConfig::default()
            };
            run_ga(&model, &space, &cfg).unwrap().best().map(|b| b.1)
        })
        .collect();
    let matched = runs
        .iter()
        .filter(|v| v.is_some_and(|v| (v - best).abs() <= 1e-6))
        .count();
    ensure(runs.iter().flatten().all(|&v| v <= milp + 1e-6), || {
        format!("GA exceeded the MILP optimum {milp}: {runs:?}")
    })?;
    ensure(matched >= 18, || {
        format!("{matched}/20 runs matched {best}")
    })?;

    let space = MoleculeSpace::simple(3).unwrap();
    let (_, r) = solve_space(&model, &space)?;
    let milp3 = r.objective().ok_or("n=3 MILP has no incumbent")?;
    let cfg = GaConfig {
        generations: 1000,
        ..GaConfig::default()
    };
    let ga = run_ga(&model, &space, &cfg).map_err(|e| e.to_string())?;
    let ga_best = ga.best().map(|b| b.1);
    ensure(ga_best.map_or(true, |v| v <= milp3 + 1e-6), || {
        format!("n=3 GA {ga_best:?} exceeds MILP {milp3}")
    })?;
    let hit = ga
        .history
        .iter()
        .find(|h| h.best_value.is_some_and(|v| v >= milp3 - 1e-6));
    let n3 = match hit {
        Some(h) => format!(
            "n=3 GA reached the MILP optimum at generation {} after {:.3} s (MILP {:.3} s)",
            h.generation,
            h.elapsed.as_secs_f64(),
            r.elapsed.as_secs_f64()
        ),
        None => format!(
            "n=3 GA best {ga_best:?} below MILP {milp3} after {} generations",
            ga.generations_run
        ),
    };
    Ok(format!(
        "n=2: {matched}/20 seeds match the enumerator; {n3}"
    ))
}

fn denormalization() -> Outcome {
    let model = RandomModelSpec::uniform(LayerKind::Sage, 14, 1, 2)
        .sample(&mut ChaCha8Rng::seed_from_u64(0))
        .unwrap()
        .with_target(312.64, 62.98)
        .unwrap();
    for obj in [-1.5, 0.0, 0.63, 2.25] {
        let want = 312.64 + 62.98 * obj;
        ensure(model.denormalize(obj) == want, || {
            format!(
                "denormalize({obj}) = {}, want {want}",
                model.denormalize(obj)
            )
        })?;
    }
    // butanone, C4H8O: normalised prediction 0.63, reported 352.59 K
    let kelvin = model.denormalize(0.63);
    ensure((kelvin - 352.59).abs() <= 0.5, || {
        format!("butanone maps to {kelvin} K")
    })?;
    Ok(format!("butanone 0.63 -> {kelvin:.2} K (reported 352.59)"))
}

fn main() -> ExitCode {
    let mut solved = Vec::new();
    let mut failed = 0;
    let mut run = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail} [{secs:.1} s]"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} [{secs:.1} s]");
            }
        }
    };
    run("exactness", &mut exactness);
    run("oracle-equivalence", &mut || {
        oracle_equivalence(&mut solved)
    });
    run("fbbt-validity", &mut fbbt_validity);
    run("degree-lookup", &mut degree_lookup);
    run("constraint-growth", &mut constraint_growth);
    run("molecule-soundness", &mut molecule_soundness);
    run("acyclicity", &mut || acyclicity(&mut solved));
    run("certificate", &mut || certificates(&solved));
    run("ga-sanity", &mut ga_sanity);
    run("denormalization", &mut denormalization);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
