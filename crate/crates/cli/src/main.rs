use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use gnnopt::encode::{encode, BoundSource, EncodeConfig, Encoding};
use gnnopt::fbbt::Bounds;
use gnnopt::ga::{run_ga, GaConfig};
use gnnopt::milp::{
    constraint_stats, read_lp, read_mps, write_lp, write_mps, write_solution, MilpModel,
};
use gnnopt::model::{forward, load_graph, load_model, Architecture, GnnModel};
use gnnopt::molecule::{canonical_classes, enumerate, Atom, BondClasses, Molecule, MoleculeSpace};
use gnnopt::solver::{certify, solve, Branching, SolveStatus, SolverConfig};
use gnnopt::verify::{verify, VerifyConfig};

#[derive(Parser)]
#[command(
    name = "gnnopt",
    version,
    about = "Optimise over trained graph neural networks with MILP"
)]
struct Cli {
    /// Seed for every randomised step.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for reports and artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the MILP of a model as an LP or MPS file.
    Encode(EncodeArgs),
    /// Print the interval bounds of every layer.
    Bounds(ModelArgs),
    /// Solve the MILP and report the optimal molecule.
    Solve(SolveArgs),
    /// Score every feasible molecule by brute force.
    Enumerate(EnumerateArgs),
    /// Run the genetic algorithm baseline.
    Ga(GaArgs),
    /// Check that frozen-input MILPs reproduce the forward pass.
    Verify(VerifyArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ArchArg {
    Gcn,
    Sage,
    Mlp,
}

#[derive(Args)]
struct ModelArgs {
    /// Weights file (JSON).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Expected architecture; the command fails if the weights differ.
    #[arg(long, value_enum)]
    arch: Option<ArchArg>,
    /// Heavy atoms per molecule.
    #[arg(short, long, default_value_t = 4)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "C,O,F,Cl")]
    atoms: Vec<String>,
    /// `single`, `double`, `triple` or `double+triple`.
    #[arg(long, default_value = "single")]
    bonds: String,
    /// Restrict to trees (n - 1 bonds).
    #[arg(long)]
    acyclic: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Lp,
    Mps,
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Encode over this fixed graph (JSON) instead of the molecule space.
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lp")]
    format: Format,
    /// Output file; a `.mps` extension selects MPS. Overrides `--format`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use this big-M for every neuron instead of interval bounds.
    #[arg(long)]
    uniform_big_m: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    MostFractional,
    Pseudocost,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Solve this LP or MPS file instead of encoding a model.
    #[arg(long, conflicts_with = "model")]
    lp: Option<PathBuf>,
    #[arg(long)]
    time_limit: Option<f64>,
    /// Relative optimality gap.
    #[arg(long, default_value_t = 1e-6)]
    gap: f64,
    /// Improving incumbents to list, most recent first.
    #[arg(long, default_value_t = 1)]
    pool: usize,
    #[arg(long)]
    node_limit: Option<usize>,
    #[arg(long, value_enum, default_value = "most-fractional")]
    branching: BranchArg,
    /// Re-solve with the objective cut off above the optimum; must be infeasible.
    #[arg(long)]
    certify: bool,
    #[arg(long)]
    no_presolve: bool,
}

#[derive(Args)]
struct EnumerateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Refuse spaces with more candidate structures than this.
    #[arg(long, default_value_t = 5e6)]
    limit: f64,
    /// Molecules to list.
    #[arg(long, default_value_t = 5)]
    top: usize,
}

#[derive(Args)]
struct GaArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 50)]
    population: usize,
    #[arg(long, default_value_t = 200)]
    generations: usize,
    #[arg(long, default_value_t = 0.9)]
    crossover_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    mutation_rate: f64,
    #[arg(long, default_value_t = 3)]
    tournament_size: usize,
    #[arg(long)]
    time_limit: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    penalty: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// Negative control: replace every big-M by a tiny constant.
    #[arg(long)]
    corrupt_big_m: bool,
}

struct Loaded {
    model: GnnModel,
    sha256: String,
}

fn sha256_of(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl ModelArgs {
    fn load(&self) -> Result<Loaded> {
        let Some(path) = &self.model else {
            bail!("--model is required");
        };
        let sha256 = sha256_of(path)?;
        let model = load_model(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(want) = self.arch {
            let found = model.architecture();
            let ok = matches!(
                (want, found),
                (ArchArg::Gcn, Architecture::Gcn)
                    | (ArchArg::Sage, Architecture::Sage)
                    | (ArchArg::Mlp, Architecture::Mlp)
            );
            if !ok {
                bail!("--arch {want:?} but the weights describe {found:?}");
            }
        }
        Ok(Loaded { model, sha256 })
    }

    fn space(&self) -> Result<MoleculeSpace> {
        let atoms = self
            .atoms
            .iter()
            .map(|a| a.parse::<Atom>())
            .collect::<Result<Vec<_>, _>>()?;
        let bonds: BondClasses = self.bonds.parse()?;
        Ok(MoleculeSpace::new(self.n, &atoms, bonds, self.acyclic)?)
    }

    fn echo(&self) -> Value {
        json!({
            "model": self.model.as_ref().map(|p| p.display().to_string()),
            "arch": self.arch.map(|a| format!("{a:?}").to_lowercase()),
            "n": self.n,
            "atoms": self.atoms,
            "bonds": self.bonds,
            "acyclic": self.acyclic,
        })
    }

    /// Encoder configuration: the molecule space for graph models, the unit
    /// box for dense ones.
    fn encode_config(&self, model: &GnnModel) -> Result<EncodeConfig> {
        Ok(if model.pool_index().is_some() {
            EncodeConfig::variable(self.space()?)
        } else {
            EncodeConfig::vector(Bounds::unit(model.input_width()))
        })
    }
}

struct Ctx {
    seed: u64,
    out_dir: PathBuf,
}

impl Ctx {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write_report(
        &self,
        command: &str,
        config: Value,
        sha256: &str,
        results: Value,
    ) -> Result<PathBuf> {
        let report = json!({
            "command": command,
            "config": config,
            "seed": self.seed,
            "model_sha256": sha256,
            "results": results,
        });
        let path = self.path(&format!("{command}_report.json"));
        fs::write(&path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn molecule_json(m: &Molecule, model: &GnnModel, value: f64) -> Value {
    json!({
        "formula": m.formula(),
        "atoms": m.atoms().iter().map(|a| a.symbol()).collect::<Vec<_>>(),
        "hydrogens": m.hydrogens(),
        "bonds": m.bonds(),
        "value": value,
        "denormalized": model.denormalize(value),
    })
}

fn print_molecule(m: &Molecule, model: &GnnModel, value: f64) {
    print!("{}", m.describe());
    println!(
        "value {value:.6} denormalized {:.2}",
        model.denormalize(value)
    );
}

fn cmd_encode(ctx: &Ctx, a: &EncodeArgs) -> Result<bool> {
    let loaded = a.model.load()?;
    let mut cfg = match &a.graph {
        Some(path) => EncodeConfig::fixed(load_graph(path)?),
        None => a.model.encode_config(&loaded.model)?,
    };
    if let Some(m) = a.uniform_big_m {
        cfg.bound_source = BoundSource::Uniform(m);
    }
    let enc = encode(&loaded.model, &cfg)?;
    let format = match &a.out {
        Some(p) if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("mps")) => Format::Mps,
        Some(_) => Format::Lp,
        None => a.format,
    };
    let path = match (&a.out, format) {
        (Some(p), _) => p.clone(),
        (None, Format::Lp) => ctx.path("model.lp"),
        (None, Format::Mps) => ctx.path("model.mps"),
    };
    match format {
        Format::Lp => write_lp(&enc.milp, &path)?,
        Format::Mps => write_mps(&enc.milp, &path)?,
    }
    let stats = constraint_stats(&enc.milp);
    println!(
        "wrote {} ({} variables, {} binaries, {} constraints)",
        path.display(),
        enc.milp.num_vars(),
        enc.milp.binaries().count(),
        enc.milp.num_constraints()
    );
    for (family, count) in &stats {
        println!("family {family} {count}");
    }
    let results = json!({
        "file": path.display().to_string(),
        "variables": enc.milp.num_vars(),
        "binaries": enc.milp.binaries().count(),
        "constraints": enc.milp.num_constraints(),
        "families": stats,
        "fixed_activations": enc.fixed.len(),
    });
    let mut config = a.model.echo();
    config["graph"] = json!(a.graph.as_ref().map(|p| p.display().to_string()));
    config["uniform_big_m"] = json!(a.uniform_big_m);
    config["out"] = json!(path.display().to_string());
    ctx.write_report("encode", config, &loaded.sha256, results)?;
    println!(
        "RESULT encode status=OK constraints={}",
        enc.milp.num_constraints()
    );
    Ok(true)
}

fn cmd_bounds(ctx: &Ctx, a: &ModelArgs) -> Result<bool> {
    let loaded = a.load()?;
    let enc = encode(&loaded.model, &a.encode_config(&loaded.model)?)?;
    let mut layers = Vec::new();
    for (k, l) in enc.bounds.layers.iter().enumerate() {
        println!("layer {k} {:?}", l.kind);
        for j in 0..l.pre.width() {
            println!("  {j}: [{:.6}, {:.6}]", l.pre.lower[j], l.pre.upper[j]);
        }
        layers.push(json!({
            "layer": k,
            "kind": format!("{:?}", l.kind),
            "lower": l.pre.lower,
            "upper": l.pre.upper,
        }));
    }
    let fixed: Vec<Value> = enc
        .fixed
        .iter()
        .map(|((k, i, j), on)| json!({"layer": k, "node": i, "feature": j, "active": on}))
        .collect();
    println!("fixed activations {}", fixed.len());
    let results = json!({"layers": layers, "fixed_activations": fixed});
    ctx.write_report("bounds", a.echo(), &loaded.sha256, results)?;
    println!(
        "RESULT bounds status=OK layers={} fixed={}",
        layers.len(),
        fixed.len()
    );
    Ok(true)
}

fn solved_molecule(
    enc: &Encoding,
    model: &GnnModel,
    assignment: &gnnopt::Assignment,
) -> Result<Option<Value>> {
    let Some(space) = enc.space() else {
        return Ok(None);
    };
    let m = enc.decode_molecule(assignment)?;
    let check = forward(model, &m.to_graph_input(space))?;
    print_molecule(&m, model, check);
    let mut v = molecule_json(&m, model, check);
    v["feasible"] = json!(m.is_feasible(space));
    Ok(Some(v))
}

fn read_milp(path: &Path) -> Result<MilpModel> {
    let mps = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("mps"));
    let m = if mps { read_mps(path) } else { read_lp(path) };
    m.with_context(|| format!("reading {}", path.display()))
}

fn cmd_solve(ctx: &Ctx, a: &SolveArgs) -> Result<bool> {
    let (milp, enc, loaded, sha256) = match &a.lp {
        Some(path) => (read_milp(path)?, None, None, sha256_of(path)?),
        None => {
            let loaded = a.model.load()?;
            let enc = encode(&loaded.model, &a.model.encode_config(&loaded.model)?)?;
            let sha = loaded.sha256.clone();
            (enc.milp.clone(), Some(enc), Some(loaded), sha)
        }
    };
    let model = loaded.as_ref().map(|l| &l.model);
    let denormalize = |v: f64| model.map_or(v, |m| m.denormalize(v));
    let cfg = SolverConfig {
        time_limit: a.time_limit.map(Duration::from_secs_f64),
        node_limit: a.node_limit,
        rel_gap: a.gap,
        branching: match a.branching {
            BranchArg::MostFractional => Branching::MostFractional,
            BranchArg::Pseudocost => Branching::Pseudocost,
        },
        presolve: !a.no_presolve,
        ..SolverConfig::default()
    };
    let r = solve(&milp, &cfg)?;
    println!(
        "status {} nodes {} lps {} time {:.3}s gap {:.3e}",
        r.status,
        r.node_count,
        r.lp_count,
        r.elapsed.as_secs_f64(),
        r.gap
    );
    let mut results = json!({
        "status": r.status.to_string(),
        "objective": r.objective(),
        "denormalized": r.objective().map(denormalize),
        "best_bound": r.best_bound,
        "gap": r.gap,
        "nodes": r.node_count,
        "lps": r.lp_count,
        "seconds": r.elapsed.as_secs_f64(),
    });
    let mut ok = r.status == SolveStatus::Optimal;
    if let Some(inc) = &r.incumbent {
        write_solution(&milp, inc, ctx.path("solution.sol"))?;
        if let (Some(enc), Some(model)) = (&enc, model) {
            results["molecule"] = json!(solved_molecule(enc, model, inc)?);
        }
        if enc.as_ref().and_then(Encoding::space).is_none() {
            println!(
                "value {:.6} denormalized {:.2}",
                inc.objective_value,
                denormalize(inc.objective_value)
            );
        }
    }
    let mut pool = Vec::new();
    for (rank, entry) in r.incumbent_pool.iter().rev().take(a.pool).enumerate() {
        let value = entry.assignment.objective_value;
        let mut item = json!({
            "rank": rank,
            "value": value,
            "denormalized": denormalize(value),
            "node": entry.node,
            "seconds": entry.elapsed.as_secs_f64(),
            "gap": entry.gap,
        });
        if let (Some(enc), Some(model), Some(space)) =
            (&enc, model, enc.as_ref().and_then(Encoding::space))
        {
            let m = enc.decode_molecule(&entry.assignment)?;
            if rank > 0 {
                println!("pool {rank}");
                print_molecule(&m, model, value);
            }
            item["molecule"] = molecule_json(&m, model, value);
            item["molecule"]["feasible"] = json!(m.is_feasible(space));
        }
        pool.push(item);
    }
    results["pool"] = json!(pool);
    if a.certify && r.status == SolveStatus::Optimal {
        let cert = certify(&milp, &r, &cfg)?;
        println!(
            "certificate cutoff {:.9} status {}",
            cert.cutoff, cert.status
        );
        results["certificate"] = json!({
            "cutoff": cert.cutoff,
            "status": cert.status.to_string(),
            "holds": cert.holds(),
        });
        ok &= cert.holds();
    }
    let mut config = a.model.echo();
    config["lp"] = json!(a.lp.as_ref().map(|p| p.display().to_string()));
    config["time_limit"] = json!(a.time_limit);
    config["node_limit"] = json!(a.node_limit);
    config["gap"] = json!(a.gap);
    config["pool"] = json!(a.pool);
    config["certify"] = json!(a.certify);
    config["presolve"] = json!(!a.no_presolve);
    ctx.write_report("solve", config, &sha256, results)?;
    println!(
        "RESULT solve status={} objective={} {}",
        r.status,
        r.objective().map_or("none".into(), |v| format!("{v:.9}")),
        if ok { "PASS" } else { "FAIL" }
    );
    Ok(ok)
}

fn cmd_enumerate(ctx: &Ctx, a: &EnumerateArgs) -> Result<bool> {
    let loaded = a.model.load()?;
    let model = &loaded.model;
    let space = a.model.space()?;
    let scored = enumerate(model, &space, a.limit)?;
    println!("{} feasible molecules", scored.len());
    let top: Vec<Value> = scored
        .iter()
        .take(a.top)
        .enumerate()
        .map(|(rank, (m, v))| {
            println!("rank {rank}");
            print_molecule(m, model, *v);
            molecule_json(m, model, *v)
        })
        .collect();
    let molecules: Vec<Molecule> = scored.iter().map(|(m, _)| m.clone()).collect();
    let classes = canonical_classes(&molecules).len();
    println!("{classes} classes up to relabeling");
    let results = json!({"count": scored.len(), "classes": classes, "top": top});
    let mut config = a.model.echo();
    config["limit"] = json!(a.limit);
    ctx.write_report("enumerate", config, &loaded.sha256, results)?;
    match scored.first() {
        Some((_, v)) => println!("RESULT enumerate count={} best={v:.9}", scored.len()),
        None => println!("RESULT enumerate count=0"),
    }
    Ok(true)
}

fn cmd_ga(ctx: &Ctx, a: &GaArgs) -> Result<bool> {
    let loaded = a.model.load()?;
    let model = &loaded.model;
    let space = a.model.space()?;
    let cfg = GaConfig {
        population: a.population,
        generations: a.generations,
        crossover_rate: a.crossover_rate,
        mutation_rate: a.mutation_rate,
        tournament_size: a.tournament_size,
        seed: ctx.seed,
        time_limit_s: a.time_limit,
        infeasibility_penalty_weight: a.penalty,
    };
    let r = run_ga(model, &space, &cfg)?;
    let history = ctx.path("ga_history.csv");
    fs::write(&history, r.history_csv())
        .with_context(|| format!("writing {}", history.display()))?;
    println!(
        "generations {} evaluations {} history {}",
        r.generations_run,
        r.evaluations,
        history.display()
    );
    let best = r.best().map(|(m, v)| {
        print_molecule(m, model, v);
        molecule_json(m, model, v)
    });
    let results = json!({
        "outcome": if best.is_some() { "FOUND" } else { "NO_FEASIBLE" },
        "best": best,
        "generations_run": r.generations_run,
        "evaluations": r.evaluations,
        "history": history.display().to_string(),
    });
    let mut config = a.model.echo();
    config["ga"] = json!({
        "population": cfg.population,
        "generations": cfg.generations,
        "crossover_rate": cfg.crossover_rate,
        "mutation_rate": cfg.mutation_rate,
        "tournament_size": cfg.tournament_size,
        "time_limit_s": cfg.time_limit_s,
        "infeasibility_penalty_weight": cfg.infeasibility_penalty_weight,
    });
    ctx.write_report("ga", config, &loaded.sha256, results)?;
    match r.best() {
        Some((_, v)) => println!("RESULT ga outcome=FOUND best={v:.9}"),
        None => println!("RESULT ga outcome=NO_FEASIBLE"),
    }
    Ok(r.best().is_some())
}

fn cmd_verify(ctx: &Ctx, a: &VerifyArgs) -> Result<bool> {
    let loaded = a.model.load()?;
    let model = &loaded.model;
    let space = match model.pool_index() {
        Some(_) => Some(a.model.space()?),
        None => None,
    };
    let cfg = VerifyConfig {
        trials: a.trials,
        seed: ctx.seed,
        tolerance: a.tolerance,
        corrupt_big_m: a.corrupt_big_m,
        ..VerifyConfig::default()
    };
    let report = verify(model, space.as_ref(), &cfg)?;
    for check in &report.checks {
        println!("{}", check.summary());
        if let Some(m) = &check.mismatch {
            let path = ctx.path(&format!("mismatch_{}.json", check.encoder));
            fs::write(&path, serde_json::to_string_pretty(&m.input)?)?;
            println!(
                "  trial {} status {} milp {:?} forward {} input {}",
                m.trial,
                m.status,
                m.milp,
                m.forward,
                path.display()
            );
        }
    }
    let mut config = a.model.echo();
    config["trials"] = json!(a.trials);
    config["tolerance"] = json!(a.tolerance);
    config["corrupt_big_m"] = json!(a.corrupt_big_m);
    ctx.write_report(
        "verify",
        config,
        &loaded.sha256,
        serde_json::to_value(&report)?,
    )?;
    Ok(report.passed())
}

fn run(cli: Cli) -> Result<bool> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()?;
    }
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let ctx = Ctx {
        seed: cli.seed,
        out_dir: cli.out_dir,
    };
    match &cli.command {
        Command::Encode(a) => cmd_encode(&ctx, a),
        Command::Bounds(a) => cmd_bounds(&ctx, a),
        Command::Solve(a) => cmd_solve(&ctx, a),
        Command::Enumerate(a) => cmd_enumerate(&ctx, a),
        Command::Ga(a) => cmd_ga(&ctx, a),
        Command::Verify(a) => cmd_verify(&ctx, a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
