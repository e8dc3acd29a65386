use std::collections::HashSet;

use phonostudio::evolution::{
    breed, breed_any, init_population, run_es, slot_seed, EsConfig, Fitness, TrainingFitness,
};
use phonostudio::lexicon::build_vocabularies;
use phonostudio::lexicon::toy::toy_lexicon;
use phonostudio::models::genome::LAYER_COUNTS;
use phonostudio::models::{AnyGenome, CnnGenome, Genome, Seq2SeqModel, TransformerGenome};
use phonostudio::training::evaluate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn separable<G: Genome>(g: &G, _: u64) -> Fitness {
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
fn first_gene_is_uniform_at_init() {
    let cfg = EsConfig::default();
    let mut counts = [0usize; 3];
    for seed in 0..100 {
        let pop: Vec<CnnGenome> = init_population(&cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        for g in pop {
            counts[LAYER_COUNTS
                .iter()
                .position(|&n| n == g.g1_enc_layers)
                .unwrap()] += 1;
        }
    }
    let expected = 1000.0 / 3.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // Critical value of chi-square with 2 degrees of freedom at alpha = 0.01.
    assert!(chi2 < 9.210, "{counts:?} chi2 {chi2}");
}

fn domain_scan<G: Genome>() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let sizes = G::domain_sizes();
    let parent = |rng: &mut ChaCha8Rng| phonostudio::evolution::random_genome::<G, _>(rng);
    for _ in 0..10_000 {
        let (a, b) = (parent(&mut rng), parent(&mut rng));
        let p = rng.random_range(0.0..1.0);
        let child = breed(&a, &b, p, &mut rng);
        let idx = child.gene_indices();
        assert!(idx.iter().zip(sizes).all(|(&i, &n)| i < n));
        assert_eq!(G::from_gene_indices(&idx).unwrap(), child);
    }
}

#[test]
fn children_stay_inside_the_gene_domains() {
    domain_scan::<CnnGenome>();
    domain_scan::<TransformerGenome>();
}

#[test]
fn breeding_closure_and_forced_mutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..200 {
        let g: CnnGenome = phonostudio::evolution::random_genome(&mut rng);
        assert_eq!(breed(&g, &g, 0.0, &mut rng), g);
        let m = breed(&g, &g, 1.0, &mut rng);
        for ((a, b), n) in g
            .gene_indices()
            .iter()
            .zip(m.gene_indices())
            .zip(CnnGenome::domain_sizes())
        {
            assert!(*n < 2 || *a != b);
        }
    }
    let c = AnyGenome::Cnn(CnnGenome::from_gene_indices(&[0; 9]).unwrap());
    let t = AnyGenome::Transformer(TransformerGenome::from_gene_indices(&[0; 7]).unwrap());
    assert!(breed_any(&c, &t, 0.1, &mut rng).is_err());
}

#[test]
fn best_so_far_never_increases_and_elites_survive() {
    let cfg = EsConfig::default();
    for seed in 0..10 {
        let out = run_es::<CnnGenome, _>(
            &EsConfig {
                seed,
                ..cfg.clone()
            },
            separable,
        )
        .unwrap();
        assert!(out.best_so_far.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(out.log.len(), cfg.population_size * cfg.generations);
        for g in 0..cfg.generations - 1 {
            let mut ranked: Vec<_> = out.log.iter().filter(|e| e.generation == g).collect();
            ranked.sort_by(|a, b| {
                a.evaluated
                    .fitness_wer
                    .total_cmp(&b.evaluated.fitness_wer)
                    .then(a.slot.cmp(&b.slot))
            });
            let next: HashSet<&AnyGenome> = out.populations[g + 1].iter().collect();
            for e in &ranked[..cfg.elite_count()] {
                assert!(next.contains(&e.evaluated.genome));
            }
        }
        let again = run_es::<CnnGenome, _>(
            &EsConfig {
                seed,
                ..cfg.clone()
            },
            separable,
        )
        .unwrap();
        assert_eq!(again.populations, out.populations);
    }
}

#[test]
fn slot_seeds_are_distinct_within_a_run() {
    let seeds: HashSet<u64> = (0..10)
        .flat_map(|g| (0..10).map(move |s| slot_seed(42, g, s)))
        .collect();
    assert_eq!(seeds.len(), 100);
}

fn fitness_setup() -> (phonostudio::lexicon::Lexicon, EsConfig) {
    let cfg = EsConfig {
        fitness_holdout: 40,
        fitness_epochs: 15,
        seed: 3,
        early_stopping: false,
        ..EsConfig::default()
    };
    (toy_lexicon(200, 10, 21), cfg)
}

#[test]
fn holdout_is_fixed_per_run_and_disjoint_from_training() {
    let (lex, cfg) = fitness_setup();
    let a = TrainingFitness::new(&lex, &cfg).unwrap();
    let b = TrainingFitness::new(&lex, &cfg).unwrap();
    assert_eq!(a.holdout().entries(), b.holdout().entries());
    assert_eq!(a.holdout().len(), 40);
    let train: HashSet<&str> = a
        .train_set()
        .entries()
        .iter()
        .map(|e| e.word.as_str())
        .collect();
    assert!(a
        .holdout()
        .entries()
        .iter()
        .all(|e| !train.contains(e.word.as_str())));
}

#[test]
fn trained_fitness_beats_untrained_and_is_deterministic() {
    let (lex, cfg) = fitness_setup();
    let fit = TrainingFitness::new(&lex, &cfg).unwrap();
    let genome =
        AnyGenome::Cnn(CnnGenome::from_gene_indices(&[0, 1, 0, 1, 0, 1, 0, 1, 0]).unwrap());
    let trained = fit.evaluate(genome.clone(), 9);
    assert_eq!(fit.evaluate(genome.clone(), 9), trained);

    let capped = lex.truncated(cfg.train_cap);
    let (g, p) = build_vocabularies(&capped).unwrap();
    let untrained = Seq2SeqModel::new(genome, g, p, cfg.max_len, 9).unwrap();
    let baseline = evaluate(&untrained, fit.holdout()).unwrap();
    assert!(
        trained.wer < baseline.wer,
        "trained {} vs untrained {}",
        trained.wer,
        baseline.wer
    );
    assert!(!trained.diverged);
}

#[test]
fn diverging_training_scores_worst_fitness() {
    let (lex, cfg) = fitness_setup();
    let cfg = EsConfig {
        learning_rate: 1e300,
        fitness_epochs: 3,
        ..cfg
    };
    let fit = TrainingFitness::new(&lex, &cfg).unwrap();
    let genome =
        AnyGenome::Cnn(CnnGenome::from_gene_indices(&[0, 0, 0, 0, 0, 0, 1, 1, 0]).unwrap());
    let f = fit.evaluate(genome, 1);
    assert_eq!(f.wer, 100.0);
    assert!(f.diverged);
    assert!(f.note.is_some());
}
