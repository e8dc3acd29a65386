//! Evolution strategy over the finite genome spaces.
//!
//! Each generation is ranked by WER (ties: fewer parameters, then lower PER).
//! The top elite fraction survives unchanged; the parent pool is the elites
//! plus a random sample of the rest; children come from uniform crossover
//! followed by per-gene mutation. Fitness results are cached by genome.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lexicon::{build_vocabularies, split_train_test, Lexicon, LexiconError, Vocab};
use crate::models::{
    AnyGenome, Architecture, CnnGenome, Genome, Seq2SeqModel, TransformerGenome, DEFAULT_MAX_LEN,
};
use crate::training::{
    derive_seed, evaluate_disjoint, train, TrainConfig, TrainError, DEFAULT_LEARNING_RATE,
};

const DUPLICATE_REROLLS: usize = 20;
const BREED_STREAM: u64 = 0xE5;
const HOLDOUT_STREAM: u64 = 0x40;

#[derive(Debug, thiserror::Error)]
pub enum EsError {
    #[error("invalid evolution configuration: {0}")]
    Config(String),
    #[error("cannot breed a {0} genome with a {1} genome")]
    Breed(Architecture, Architecture),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsConfig {
    pub population_size: usize,
    pub generations: usize,
    pub elite_fraction: f64,
    pub lessfit_parent_prob: f64,
    pub mutation_prob_per_gene: f64,
    pub fitness_epochs: usize,
    pub fitness_holdout: usize,
    pub train_cap: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub max_len: usize,
    pub early_stopping: bool,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            population_size: 10,
            generations: 10,
            elite_fraction: 0.4,
            lessfit_parent_prob: 0.1,
            mutation_prob_per_gene: 0.1,
            fitness_epochs: 20,
            fitness_holdout: 500,
            train_cap: 150_000,
            seed: 0,
            learning_rate: DEFAULT_LEARNING_RATE,
            max_len: DEFAULT_MAX_LEN,
            early_stopping: true,
        }
    }
}

impl EsConfig {
    pub fn validate(&self) -> Result<(), EsError> {
        let bad = |m: String| Err(EsError::Config(m));
        if self.population_size < 2 {
            return bad(format!("population {} is below 2", self.population_size));
        }
        if self.generations == 0 {
            return bad("at least one generation is required".into());
        }
        for (name, v) in [
            ("elite_fraction", self.elite_fraction),
            ("lessfit_parent_prob", self.lessfit_parent_prob),
            ("mutation_prob_per_gene", self.mutation_prob_per_gene),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} = {v} outside (0, 1)"));
            }
        }
        if self.fitness_holdout == 0 || self.fitness_holdout >= self.train_cap {
            return bad(format!(
                "holdout {} must be in 1..train_cap",
                self.fitness_holdout
            ));
        }
        if self.fitness_epochs == 0 {
            return bad("fitness_epochs must be at least 1".into());
        }
        Ok(())
    }

    /// Number of genomes kept unchanged each generation.
    pub fn elite_count(&self) -> usize {
        ((self.elite_fraction * self.population_size as f64).ceil() as usize)
            .clamp(1, self.population_size)
    }
}

/// Outcome of one fitness evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fitness {
    pub wer: f64,
    pub per: f64,
    pub param_count: usize,
    pub diverged: bool,
    pub note: Option<String>,
}

impl Fitness {
    pub fn worst(param_count: usize, diverged: bool, note: String) -> Self {
        Self {
            wer: 100.0,
            per: 100.0,
            param_count,
            diverged,
            note: Some(note),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedGenome {
    pub genome: AnyGenome,
    pub fitness_wer: f64,
    pub fitness_per: f64,
    pub param_count: usize,
    pub generation_born: usize,
    pub diverged: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub note: Option<String>,
}

/// Ranking order: lower WER, then fewer parameters, then lower PER.
pub fn compare_fitness(a: &EvaluatedGenome, b: &EvaluatedGenome) -> Ordering {
    a.fitness_wer
        .total_cmp(&b.fitness_wer)
        .then(a.param_count.cmp(&b.param_count))
        .then(a.fitness_per.total_cmp(&b.fitness_per))
}

/// One line of the generation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub generation: usize,
    pub slot: usize,
    pub cached: bool,
    #[serde(flatten)]
    pub evaluated: EvaluatedGenome,
}

#[derive(Debug, Clone)]
pub struct EsOutcome {
    pub best: EvaluatedGenome,
    pub log: Vec<LogEntry>,
    /// Best WER seen up to and including each generation.
    pub best_so_far: Vec<f64>,
    /// Members of each generation, in slot order.
    pub populations: Vec<Vec<AnyGenome>>,
}

pub fn write_log_jsonl<W: Write>(mut w: W, log: &[LogEntry]) -> Result<(), EsError> {
    for entry in log {
        serde_json::to_writer(&mut w, entry)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn random_genome<G: Genome, R: Rng>(rng: &mut R) -> G {
    loop {
        let ix: Vec<usize> = G::domain_sizes()
            .iter()
            .map(|&n| rng.random_range(0..n))
            .collect();
        if let Ok(g) = G::from_gene_indices(&ix) {
            return g;
        }
    }
}

/// `population_size` uniformly drawn genomes; a duplicate is redrawn up to
/// 20 times before being accepted.
pub fn init_population<G: Genome, R: Rng>(cfg: &EsConfig, rng: &mut R) -> Vec<G> {
    let mut pop: Vec<G> = Vec::with_capacity(cfg.population_size);
    while pop.len() < cfg.population_size {
        let mut g = random_genome::<G, R>(rng);
        for _ in 0..DUPLICATE_REROLLS {
            if !pop.contains(&g) {
                break;
            }
            g = random_genome::<G, R>(rng);
        }
        pop.push(g);
    }
    pop
}

/// Uniform crossover, then each gene moves to a different value of its
/// domain with probability `mutation_prob`.
pub fn breed<G: Genome, R: Rng>(a: &G, b: &G, mutation_prob: f64, rng: &mut R) -> G {
    let (ia, ib) = (a.gene_indices(), b.gene_indices());
    loop {
        let ix: Vec<usize> = G::domain_sizes()
            .iter()
            .enumerate()
            .map(|(k, &n)| {
                let mut v = if rng.random_bool(0.5) { ia[k] } else { ib[k] };
                if n > 1 && rng.random_bool(mutation_prob) {
                    let shift = rng.random_range(1..n);
                    v = (v + shift) % n;
                }
                v
            })
            .collect();
        if let Ok(child) = G::from_gene_indices(&ix) {
            return child;
        }
    }
}

/// `breed` for architecture-erased genomes.
pub fn breed_any<R: Rng>(
    a: &AnyGenome,
    b: &AnyGenome,
    mutation_prob: f64,
    rng: &mut R,
) -> Result<AnyGenome, EsError> {
    match (a, b) {
        (AnyGenome::Cnn(x), AnyGenome::Cnn(y)) => {
            Ok(AnyGenome::Cnn(breed(x, y, mutation_prob, rng)))
        }
        (AnyGenome::Transformer(x), AnyGenome::Transformer(y)) => {
            Ok(AnyGenome::Transformer(breed(x, y, mutation_prob, rng)))
        }
        _ => Err(EsError::Breed(a.architecture(), b.architecture())),
    }
}

/// Seed handed to the fitness evaluation in `slot` of `generation`.
pub fn slot_seed(run_seed: u64, generation: usize, slot: usize) -> u64 {
    derive_seed(derive_seed(run_seed, generation as u64), slot as u64)
}

/// Runs the strategy with an arbitrary fitness function. Uncached fitness
/// evaluations within a generation run in parallel.
pub fn run_es<G, F>(cfg: &EsConfig, fitness: F) -> Result<EsOutcome, EsError>
where
    G: Genome,
    F: Fn(&G, u64) -> Fitness + Sync,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, BREED_STREAM));
    let mut population: Vec<G> = init_population(cfg, &mut rng);
    let mut cache: HashMap<G, EvaluatedGenome> = HashMap::new();
    let mut log = Vec::with_capacity(cfg.population_size * cfg.generations);
    let mut best: Option<EvaluatedGenome> = None;
    let mut best_so_far = Vec::with_capacity(cfg.generations);
    let mut populations = Vec::with_capacity(cfg.generations);
    let elites = cfg.elite_count();

    for generation in 0..cfg.generations {
        let mut pending: Vec<(usize, G)> = Vec::new();
        let mut queued = HashSet::new();
        for (slot, g) in population.iter().enumerate() {
            if !cache.contains_key(g) && queued.insert(g.clone()) {
                pending.push((slot, g.clone()));
            }
        }
        let fresh: Vec<(G, Fitness)> = pending
            .par_iter()
            .map(|(slot, g)| {
                let f = fitness(g, slot_seed(cfg.seed, generation, *slot));
                (g.clone(), f)
            })
            .collect();
        let fresh_set: HashSet<G> = fresh.iter().map(|(g, _)| g.clone()).collect();
        for (g, f) in fresh {
            if let Some(note) = &f.note {
                log::warn!("generation {generation}: {:?}: {note}", g);
            }
            cache.insert(
                g.clone(),
                EvaluatedGenome {
                    genome: g.into_any(),
                    fitness_wer: f.wer,
                    fitness_per: f.per,
                    param_count: f.param_count,
                    generation_born: generation,
                    diverged: f.diverged,
                    note: f.note,
                },
            );
        }

        let mut first_use = HashSet::new();
        let mut ranked: Vec<(usize, &EvaluatedGenome)> = Vec::with_capacity(population.len());
        for (slot, g) in population.iter().enumerate() {
            let e = &cache[g];
            let cached = !(fresh_set.contains(g) && first_use.insert(g.clone()));
            log.push(LogEntry {
                generation,
                slot,
                cached,
                evaluated: e.clone(),
            });
            ranked.push((slot, e));
        }
        ranked.sort_by(|a, b| compare_fitness(a.1, b.1).then(a.0.cmp(&b.0)));
        let leader = ranked[0].1;
        if best
            .as_ref()
            .is_none_or(|b| compare_fitness(leader, b) == Ordering::Less)
        {
            best = Some(leader.clone());
        }
        best_so_far.push(best.as_ref().map(|b| b.fitness_wer).expect("set above"));
        populations.push(population.iter().cloned().map(G::into_any).collect());
        log::info!(
            "generation {generation}: best WER {:.2} (run best {:.2})",
            leader.fitness_wer,
            best_so_far[generation]
        );

        if generation + 1 == cfg.generations {
            break;
        }
        let order: Vec<usize> = ranked.iter().map(|(slot, _)| *slot).collect();
        let mut next: Vec<G> = order[..elites]
            .iter()
            .map(|&s| population[s].clone())
            .collect();
        let mut pool = next.clone();
        for &s in &order[elites..] {
            if rng.random_bool(cfg.lessfit_parent_prob) {
                pool.push(population[s].clone());
            }
        }
        while next.len() < cfg.population_size {
            let mut child = spawn(&pool, cfg.mutation_prob_per_gene, &mut rng);
            for _ in 0..DUPLICATE_REROLLS {
                if !next.contains(&child) && !cache.contains_key(&child) {
                    break;
                }
                child = spawn(&pool, cfg.mutation_prob_per_gene, &mut rng);
            }
            next.push(child);
        }
        population = next;
    }

    Ok(EsOutcome {
        best: best.expect("at least one generation"),
        log,
        best_so_far,
        populations,
    })
}

/// Breeds two distinct pool members (one parent only when the pool is a
/// single genome).
fn spawn<G: Genome, R: Rng>(pool: &[G], mutation_prob: f64, rng: &mut R) -> G {
    let mut pair = pool.choose_multiple(rng, 2);
    let a = pair.next().expect("pool holds the elites");
    let b = pair.next().unwrap_or(a);
    breed(a, b, mutation_prob, rng)
}

/// Fitness by training: a capped lexicon with a fixed holdout shared by
/// every genome of the run.
pub struct TrainingFitness {
    train: Lexicon,
    holdout: Lexicon,
    graphemes: Vocab,
    phonemes: Vocab,
    cfg: EsConfig,
}

impl TrainingFitness {
    pub fn new(lexicon: &Lexicon, cfg: &EsConfig) -> Result<Self, EsError> {
        cfg.validate()?;
        let capped = lexicon.truncated(cfg.train_cap);
        if cfg.fitness_holdout >= capped.len() {
            return Err(EsError::Config(format!(
                "holdout of {} needs a lexicon larger than {} entries",
                cfg.fitness_holdout,
                capped.len()
            )));
        }
        let (graphemes, phonemes) = build_vocabularies(&capped)?;
        let fraction = cfg.fitness_holdout as f64 / capped.len() as f64;
        let (train, holdout) =
            split_train_test(&capped, fraction, derive_seed(cfg.seed, HOLDOUT_STREAM))?;
        Ok(Self {
            train,
            holdout,
            graphemes,
            phonemes,
            cfg: cfg.clone(),
        })
    }

    pub fn holdout(&self) -> &Lexicon {
        &self.holdout
    }

    pub fn train_set(&self) -> &Lexicon {
        &self.train
    }

    pub fn evaluate(&self, genome: AnyGenome, seed: u64) -> Fitness {
        let mut model = match Seq2SeqModel::new(
            genome,
            self.graphemes.clone(),
            self.phonemes.clone(),
            self.cfg.max_len,
            seed,
        ) {
            Ok(m) => m,
            Err(e) => return Fitness::worst(0, false, e.to_string()),
        };
        let params = model.param_count();
        let tcfg = TrainConfig {
            max_epochs: self.cfg.fitness_epochs,
            learning_rate: self.cfg.learning_rate,
            seed,
            early_stopping: self.cfg.early_stopping,
            ..TrainConfig::default()
        };
        match train(&mut model, &self.train, &tcfg) {
            Ok(_) => {}
            Err(e @ TrainError::Diverged { .. }) => {
                return Fitness::worst(params, true, e.to_string())
            }
            Err(e) => return Fitness::worst(params, false, e.to_string()),
        }
        match evaluate_disjoint(&model, &self.holdout, &self.train) {
            Ok(r) => Fitness {
                wer: r.wer,
                per: r.per,
                param_count: params,
                diverged: false,
                note: None,
            },
            Err(e) => Fitness::worst(params, false, e.to_string()),
        }
    }
}

/// Evolution with training-based fitness for one architecture.
pub fn evolve(
    lexicon: &Lexicon,
    architecture: Architecture,
    cfg: &EsConfig,
) -> Result<EsOutcome, EsError> {
    let fit = TrainingFitness::new(lexicon, cfg)?;
    match architecture {
        Architecture::Cnn => {
            run_es::<CnnGenome, _>(cfg, |g, seed| fit.evaluate(AnyGenome::Cnn(*g), seed))
        }
        Architecture::Transformer => run_es::<TransformerGenome, _>(cfg, |g, seed| {
            fit.evaluate(AnyGenome::Transformer(*g), seed)
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig<G: Genome>(g: &G, _: u64) -> Fitness {
        let s: usize = g.gene_indices().iter().sum();
        Fitness {
            wer: s as f64,
            per: 0.0,
            param_count: 0,
            diverged: false,
            note: None,
        }
    }

    #[test]
    fn config_checks() {
        assert!(EsConfig::default().validate().is_ok());
        assert_eq!(EsConfig::default().elite_count(), 4);
        let c = EsConfig {
            population_size: 1,
            ..EsConfig::default()
        };
        assert!(c.validate().is_err());
        let c = EsConfig {
            fitness_holdout: 200_000,
            ..EsConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn population_is_seeded_and_distinct() {
        let cfg = EsConfig::default();
        let a: Vec<CnnGenome> = init_population(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b: Vec<CnnGenome> = init_population(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 10);
    }

    #[test]
    fn breeding_closure_and_forced_mutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g: CnnGenome = random_genome(&mut rng);
        for _ in 0..50 {
            assert_eq!(breed(&g, &g, 0.0, &mut rng), g);
            let child = breed(&g, &g, 1.0, &mut rng);
            for (x, y) in child.gene_indices().iter().zip(g.gene_indices()) {
                assert_ne!(*x, y);
            }
        }
    }

    #[test]
    fn breed_any_rejects_mixed_architectures() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let c = AnyGenome::Cnn(random_genome(&mut rng));
        let t = AnyGenome::Transformer(random_genome(&mut rng));
        assert!(matches!(
            breed_any(&c, &t, 0.1, &mut rng),
            Err(EsError::Breed(..))
        ));
        assert!(breed_any(&c, &c, 0.1, &mut rng).is_ok());
    }

    #[test]
    fn log_accounting_and_elitism() {
        let cfg = EsConfig {
            seed: 5,
            ..EsConfig::default()
        };
        let out = run_es::<CnnGenome, _>(&cfg, rig).unwrap();
        assert_eq!(out.log.len(), 100);
        assert!(out.best_so_far.windows(2).all(|w| w[1] <= w[0]));
        for (t, pair) in out.populations.windows(2).enumerate() {
            let best = out
                .log
                .iter()
                .filter(|e| e.generation == t)
                .min_by(|a, b| compare_fitness(&a.evaluated, &b.evaluated))
                .unwrap();
            assert!(pair[1].contains(&best.evaluated.genome));
        }
        let mut buf = Vec::new();
        write_log_jsonl(&mut buf, &out.log).unwrap();
        assert_eq!(buf.iter().filter(|&&b| b == b'\n').count(), 100);
        let first: serde_json::Value =
            serde_json::from_slice(buf.split(|&b| b == b'\n').next().unwrap()).unwrap();
        assert_eq!(first["genome"]["architecture"], "cnn");
    }

    #[test]
    fn slot_seeds_differ() {
        assert_ne!(slot_seed(1, 0, 0), slot_seed(1, 0, 1));
        assert_ne!(slot_seed(1, 0, 1), slot_seed(1, 1, 0));
    }
}
