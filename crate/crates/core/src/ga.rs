//! Genetic algorithm over bit-string molecules, scored by the forward pass.
//!
//! A chromosome concatenates the upper-triangle adjacency, the optional
//! double/triple bond bits per pair, and per node an atom one-hot and a
//! hydrogen-count one-hot. Every bit-string decodes; broken one-hots and
//! violated feasibility rules are counted and penalised.

use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{forward, GnnModel, ModelError};
use crate::molecule::{Atom, Molecule, MoleculeSpace, MAX_COUNT};

#[derive(Debug, Error)]
pub enum GaError {
    #[error("invalid GA configuration: {0}")]
    Config(String),
    #[error("molecule does not fit the chromosome layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    /// Individuals per generation; must be even.
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-bit flip probability of pair bits; one-hot fields move their bit
    /// with this rate times their length.
    pub mutation_rate: f64,
    pub tournament_size: usize,
    pub seed: u64,
    pub time_limit_s: Option<f64>,
    /// Fitness of an infeasible individual is minus this times its number of
    /// violated rules.
    pub infeasibility_penalty_weight: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 50,
            generations: 200,
            crossover_rate: 0.9,
            mutation_rate: 0.05,
            tournament_size: 3,
            seed: 0,
            time_limit_s: None,
            infeasibility_penalty_weight: 10.0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), GaError> {
        if self.population == 0 || self.population % 2 != 0 {
            return Err(GaError::Config(format!(
                "population must be positive and even, got {}",
                self.population
            )));
        }
        for (name, r) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(GaError::Config(format!(
                    "{name} must lie in [0, 1], got {r}"
                )));
            }
        }
        if self.tournament_size == 0 {
            return Err(GaError::Config("tournament_size must be positive".into()));
        }
        if !(self.infeasibility_penalty_weight >= 0.0
            && self.infeasibility_penalty_weight.is_finite())
        {
            return Err(GaError::Config(
                "penalty weight must be finite and nonnegative".into(),
            ));
        }
        if let Some(t) = self.time_limit_s {
            if !(t > 0.0) {
                return Err(GaError::Config(format!(
                    "time limit must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Bit positions of a chromosome for one molecule space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    n: usize,
    pairs: Vec<(usize, usize)>,
    atoms: Vec<Atom>,
    double: bool,
    triple: bool,
}

const HYDROGEN_BITS: usize = MAX_COUNT + 1;

impl Layout {
    pub fn new(space: &MoleculeSpace) -> Self {
        let n = space.n_nodes();
        Self {
            n,
            pairs: (0..n)
                .flat_map(|i| (i + 1..n).map(move |l| (i, l)))
                .collect(),
            atoms: space.atoms().to_vec(),
            double: space.bonds().double,
            triple: space.bonds().triple,
        }
    }

    fn bond_bits(&self) -> usize {
        usize::from(self.double) + usize::from(self.triple)
    }

    fn node_bits(&self) -> usize {
        self.atoms.len() + HYDROGEN_BITS
    }

    fn node_offset(&self, i: usize) -> usize {
        self.pairs.len() * (1 + self.bond_bits()) + i * self.node_bits()
    }

    pub fn len(&self) -> usize {
        self.node_offset(self.n)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn encode(&self, molecule: &Molecule) -> Result<Vec<bool>, GaError> {
        if molecule.n_nodes() != self.n {
            return Err(GaError::Layout(format!(
                "{} atoms for a {}-node layout",
                molecule.n_nodes(),
                self.n
            )));
        }
        let mut bits = vec![false; self.len()];
        let np = self.pairs.len();
        for (k, &(i, l)) in self.pairs.iter().enumerate() {
            let o = molecule.order(i, l);
            bits[k] = o > 0;
            let mut slot = np;
            if self.double {
                bits[slot + k] = o == 2;
                slot += np;
            } else if o == 2 {
                return Err(GaError::Layout(
                    "double bond without double-bond bits".into(),
                ));
            }
            if self.triple {
                bits[slot + k] = o == 3;
            } else if o == 3 {
                return Err(GaError::Layout(
                    "triple bond without triple-bond bits".into(),
                ));
            }
        }
        for i in 0..self.n {
            let base = self.node_offset(i);
            let a = self
                .atoms
                .iter()
                .position(|&a| a == molecule.atoms()[i])
                .ok_or_else(|| {
                    GaError::Layout(format!("atom {} outside the alphabet", molecule.atoms()[i]))
                })?;
            bits[base + a] = true;
            let h = usize::from(molecule.hydrogens()[i]);
            if h >= HYDROGEN_BITS {
                return Err(GaError::Layout(format!("{h} hydrogens on atom {i}")));
            }
            bits[base + self.atoms.len() + h] = true;
        }
        Ok(bits)
    }

    /// Random chromosome with uniform adjacency bits, no bond-class bits and
    /// a valid one-hot in every node field.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<bool> {
        let mut bits = vec![false; self.len()];
        for bit in bits.iter_mut().take(self.pairs.len()) {
            *bit = rng.gen_bool(0.5);
        }
        for i in 0..self.n {
            let base = self.node_offset(i);
            bits[base + rng.gen_range(0..self.atoms.len())] = true;
            bits[base + self.atoms.len() + rng.gen_range(0..HYDROGEN_BITS)] = true;
        }
        bits
    }

    /// String mutation. Pair bits flip independently with probability
    /// `rate`; each atom and hydrogen field is hit with probability
    /// `rate * field length` and then moves its first set bit (or a random
    /// one) to another random position of the field.
    pub fn mutate<R: Rng + ?Sized>(&self, bits: &mut [bool], rate: f64, rng: &mut R) {
        let pair_bits = self.node_offset(0);
        for bit in bits.iter_mut().take(pair_bits) {
            if rng.gen_bool(rate) {
                *bit = !*bit;
            }
        }
        for i in 0..self.n {
            let base = self.node_offset(i);
            let na = self.atoms.len();
            for (start, len) in [(base, na), (base + na, HYDROGEN_BITS)] {
                if len < 2 || !rng.gen_bool((rate * len as f64).min(1.0)) {
                    continue;
                }
                let field = &mut bits[start..start + len];
                let from = field
                    .iter()
                    .position(|&b| b)
                    .unwrap_or_else(|| rng.gen_range(0..len));
                let to = (from + rng.gen_range(1..len)) % len;
                field.swap(from, to);
            }
        }
    }

    /// The molecule a bit-string describes, and the number of chromosome
    /// level rules it breaks (non one-hot fields, bond bits without a bond,
    /// both bond classes on one pair). Broken fields decode to their first
    /// set bit, or the first option when none is set.
    pub fn decode(&self, bits: &[bool]) -> (Molecule, usize) {
        assert_eq!(bits.len(), self.len());
        let n = self.n;
        let np = self.pairs.len();
        let mut broken = 0;
        let mut orders = vec![0u8; n * n];
        for (k, &(i, l)) in self.pairs.iter().enumerate() {
            let mut slot = np;
            let db = self.double && {
                let b = bits[slot + k];
                slot += np;
                b
            };
            let tb = self.triple && bits[slot + k];
            let o = if !bits[k] {
                broken += usize::from(db) + usize::from(tb);
                0
            } else {
                if db && tb {
                    broken += 1;
                }
                if tb {
                    3
                } else if db {
                    2
                } else {
                    1
                }
            };
            orders[i * n + l] = o;
            orders[l * n + i] = o;
        }
        let mut onehot = |field: &[bool]| -> usize {
            let set = field.iter().filter(|&&b| b).count();
            if set != 1 {
                broken += 1;
            }
            field.iter().position(|&b| b).unwrap_or(0)
        };
        let mut atoms = Vec::with_capacity(n);
        let mut hydrogens = Vec::with_capacity(n);
        for i in 0..n {
            let base = self.node_offset(i);
            let na = self.atoms.len();
            atoms.push(self.atoms[onehot(&bits[base..base + na])]);
            let h = onehot(&bits[base + na..base + na + HYDROGEN_BITS]);
            hydrogens.push(h as u8);
        }
        (Molecule::from_parts(atoms, orders, hydrogens), broken)
    }
}

/// Best feasible value found up to a generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub generation: usize,
    pub elapsed: Duration,
    pub best_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GaOutcome {
    Found {
        molecule: Molecule,
        value: f64,
    },
    /// No individual satisfied every rule within the limits.
    NoFeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaResult {
    pub outcome: GaOutcome,
    pub history: Vec<HistoryEntry>,
    pub generations_run: usize,
    pub evaluations: usize,
}

impl GaResult {
    pub fn best(&self) -> Option<(&Molecule, f64)> {
        match &self.outcome {
            GaOutcome::Found { molecule, value } => Some((molecule, *value)),
            GaOutcome::NoFeasible => None,
        }
    }

    /// History as `generation,seconds,best_value` lines with a header.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("generation,seconds,best_value\n");
        for h in &self.history {
            let v = h.best_value.map_or(String::new(), |v| format!("{v:?}"));
            out.push_str(&format!(
                "{},{:.6},{}\n",
                h.generation,
                h.elapsed.as_secs_f64(),
                v
            ));
        }
        out
    }
}

/// Fitness of one chromosome: the forward value when feasible, otherwise
/// `-penalty * violations`. Also returns the decoded molecule if feasible.
fn fitness(
    model: &GnnModel,
    space: &MoleculeSpace,
    layout: &Layout,
    bits: &[bool],
    penalty: f64,
) -> Result<(f64, Option<Molecule>), ModelError> {
    let (mol, broken) = layout.decode(bits);
    let violations = broken + mol.violations(space).len();
    if violations > 0 {
        return Ok((-penalty * violations as f64, None));
    }
    let v = forward(model, &mol.to_graph_input(space))?;
    Ok((v, Some(mol)))
}

pub fn run_ga(
    model: &GnnModel,
    space: &MoleculeSpace,
    cfg: &GaConfig,
) -> Result<GaResult, GaError> {
    run_ga_seeded(model, space, cfg, &[])
}

/// Runs the GA with `seeds` placed at the front of the initial population;
/// the rest is random.
pub fn run_ga_seeded(
    model: &GnnModel,
    space: &MoleculeSpace,
    cfg: &GaConfig,
    seeds: &[Molecule],
) -> Result<GaResult, GaError> {
    cfg.validate()?;
    if seeds.len() > cfg.population {
        return Err(GaError::Config(format!(
            "{} seeds exceed the population of {}",
            seeds.len(),
            cfg.population
        )));
    }
    let start = Instant::now();
    let layout = Layout::new(space);
    let len = layout.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut pop: Vec<Vec<bool>> = seeds
        .iter()
        .map(|m| layout.encode(m))
        .collect::<Result<_, _>>()?;
    while pop.len() < cfg.population {
        pop.push(layout.random(&mut rng));
    }

    let mut best: Option<(Molecule, f64)> = None;
    let mut history = Vec::with_capacity(cfg.generations + 1);
    let mut evaluations = 0;
    let mut generation = 0;
    loop {
        let scored: Vec<(f64, Option<Molecule>)> = pop
            .par_iter()
            .map(|bits| {
                fitness(
                    model,
                    space,
                    &layout,
                    bits,
                    cfg.infeasibility_penalty_weight,
                )
            })
            .collect::<Result<_, _>>()?;
        evaluations += scored.len();
        for (f, mol) in &scored {
            if let Some(m) = mol {
                if best.as_ref().is_none_or(|(_, b)| *f > *b) {
                    best = Some((m.clone(), *f));
                }
            }
        }
        history.push(HistoryEntry {
            generation,
            elapsed: start.elapsed(),
            best_value: best.as_ref().map(|b| b.1),
        });
        let out_of_time = cfg
            .time_limit_s
            .is_some_and(|t| start.elapsed().as_secs_f64() >= t);
        if generation == cfg.generations || out_of_time {
            break;
        }
        generation += 1;

        let fit: Vec<f64> = scored.iter().map(|s| s.0).collect();
        let elite = (0..fit.len()).fold(0, |b, k| if fit[k] > fit[b] { k } else { b });
        let mut next = Vec::with_capacity(cfg.population);
        next.push(pop[elite].clone());
        while next.len() < cfg.population {
            let a = tournament(&fit, cfg.tournament_size, &mut rng);
            let b = tournament(&fit, cfg.tournament_size, &mut rng);
            let (mut c1, mut c2) = (pop[a].clone(), pop[b].clone());
            if len > 1 && rng.gen_bool(cfg.crossover_rate) {
                let cut = rng.gen_range(1..len);
                for k in cut..len {
                    std::mem::swap(&mut c1[k], &mut c2[k]);
                }
            }
            for child in [&mut c1, &mut c2] {
                layout.mutate(child, cfg.mutation_rate, &mut rng);
            }
            next.push(c1);
            if next.len() < cfg.population {
                next.push(c2);
            }
        }
        pop = next;
    }

    let outcome = match best {
        Some((molecule, value)) => GaOutcome::Found { molecule, value },
        None => GaOutcome::NoFeasible,
    };
    Ok(GaResult {
        outcome,
        history,
        generations_run: generation,
        evaluations,
    })
}

/// Index of the fittest of `size` uniformly drawn individuals; ties go to
/// the earliest draw.
fn tournament<R: Rng + ?Sized>(fit: &[f64], size: usize, rng: &mut R) -> usize {
    let mut best = rng.gen_range(0..fit.len());
    for _ in 1..size {
        let k = rng.gen_range(0..fit.len());
        if fit[k] > fit[best] {
            best = k;
        }
    }
    best
}
