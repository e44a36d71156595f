//! Genetic search over back-end dilation rates.
//!
//! A chromosome is the list of dilation rates of the back-end layers. Each
//! generation every member is scored (lower is better), the best
//! `max(2, round(retain·population))` survive as parents, and the rest of the
//! next population is bred from them by uniform crossover followed by an
//! occasional mutation. Survivors are scored again in the next generation,
//! carrying whatever state the evaluator keeps for them (trained weights,
//! for the training evaluator).

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{init_weights_with, make_desk_config, InitScheme, ModelWeights, DESK_BACK_END_DEPTH};
use crate::rng::{self, derive_seed, Rng};
use crate::training::{train, validate, Sample, TrainConfig};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Chromosome {
    pub genes: Vec<usize>,
}

impl Chromosome {
    pub fn new(genes: Vec<usize>) -> Self {
        Chromosome { genes }
    }

    /// Genes joined with `-`, as written to `ga_log.csv`.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self.genes.iter().map(usize::to_string).collect();
        parts.join("-")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub generations: usize,
    pub population: usize,
    pub retain_rate: f64,
    /// Probability that a bred child is mutated.
    pub mutation_rate: f64,
    /// Fraction of genes redrawn when a child mutates (rounded up).
    pub mutation_fraction: f64,
    /// Allowed dilation rates.
    pub rates: Vec<usize>,
    pub gene_count: usize,
    pub epochs_per_candidate: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub init: InitScheme,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            generations: 7,
            population: 7,
            retain_rate: 0.4,
            mutation_rate: 0.2,
            mutation_fraction: 0.2,
            rates: vec![2, 3, 4, 5],
            gene_count: DESK_BACK_END_DEPTH,
            epochs_per_candidate: 20,
            batch_size: 8,
            learning_rate: 1e-5,
            init: InitScheme::default(),
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.retain_rate > 0.0 && self.retain_rate < 1.0) {
            return Err(Error::invalid("retain rate", "must lie strictly between 0 and 1"));
        }
        if !(0.0..=1.0).contains(&self.mutation_rate) || !(0.0..=1.0).contains(&self.mutation_fraction) {
            return Err(Error::invalid("mutation", "rate and fraction must lie in [0, 1]"));
        }
        if self.rates.is_empty() || self.rates.contains(&0) {
            return Err(Error::invalid("rate list", "must be non-empty with rates of at least 1"));
        }
        if self.population < 2 {
            return Err(Error::invalid("population", "must be at least 2"));
        }
        if self.generations == 0 || self.gene_count == 0 {
            return Err(Error::invalid("ga config", "generations and gene count must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size", "must be at least 1"));
        }
        Ok(())
    }

    /// Survivors per generation: `max(2, round(retain·population))`, capped at
    /// the population.
    pub fn parent_count(&self) -> usize {
        ((self.retain_rate * self.population as f64).round() as usize)
            .max(2)
            .min(self.population)
    }

    /// Seed for member `candidate` of generation `generation` (both 0-based).
    pub fn candidate_seed(&self, generation: usize, candidate: usize) -> u64 {
        derive_seed(self.seed, "candidate", &[generation as u64, candidate as u64])
    }
}

/// Scores chromosomes; lower is better. `state` is what the evaluator
/// returned for the same member in the previous generation, if it survived.
pub trait FitnessEvaluator {
    type State;

    fn evaluate(&self, chromosome: &Chromosome, state: Option<Self::State>, seed: u64) -> Result<(f64, Self::State)>;
}

/// Stateless fitness from a plain function.
pub struct FnFitness<F>(pub F);

impl<F: Fn(&Chromosome) -> f64> FitnessEvaluator for FnFitness<F> {
    type State = ();

    fn evaluate(&self, chromosome: &Chromosome, _: Option<()>, _: u64) -> Result<(f64, ())> {
        Ok(((self.0)(chromosome), ()))
    }
}

/// Fitness = validation MAE of the desk network with the chromosome's rates
/// after a short training run. Survivors continue from their weights.
pub struct TrainingFitness<'a> {
    pub train_set: &'a [Sample],
    pub val_set: &'a [Sample],
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub init: InitScheme,
}

impl<'a> TrainingFitness<'a> {
    pub fn new(config: &GaConfig, train_set: &'a [Sample], val_set: &'a [Sample]) -> Self {
        TrainingFitness {
            train_set,
            val_set,
            epochs: config.epochs_per_candidate,
            batch_size: config.batch_size,
            learning_rate: config.learning_rate,
            init: config.init,
        }
    }
}

impl FitnessEvaluator for TrainingFitness<'_> {
    type State = ModelWeights;

    fn evaluate(&self, chromosome: &Chromosome, state: Option<ModelWeights>, seed: u64) -> Result<(f64, ModelWeights)> {
        let config = make_desk_config(&chromosome.genes)?;
        let mut weights = state.unwrap_or_else(|| init_weights_with(&config, seed, self.init));
        if self.epochs > 0 {
            let tc = TrainConfig {
                learning_rate: self.learning_rate,
                epochs: self.epochs,
                batch_size: self.batch_size,
                seed,
                shuffle: true,
            };
            weights = train(&config, weights, self.train_set, self.val_set, &tc)?.0;
        }
        let mae = validate(&config, &weights, self.val_set)?.mae;
        Ok((mae, weights))
    }
}

/// Trains a fresh network for `chromosome` as member `candidate` of
/// generation `generation` and returns its validation MAE.
pub fn evaluate_fitness(
    chromosome: &Chromosome,
    train_set: &[Sample],
    val_set: &[Sample],
    config: &GaConfig,
    generation: usize,
    candidate: usize,
) -> Result<f64> {
    let evaluator = TrainingFitness::new(config, train_set, val_set);
    let (mae, _) = evaluator.evaluate(chromosome, None, config.candidate_seed(generation, candidate))?;
    Ok(sanitize(mae))
}

fn sanitize(score: f64) -> f64 {
    if score.is_nan() {
        f64::INFINITY
    } else {
        score
    }
}

fn draw_gene(rates: &[usize], rng: &mut Rng) -> usize {
    rates[rng.random_range(0..rates.len())]
}

pub fn init_population(config: &GaConfig) -> Result<Vec<Chromosome>> {
    config.validate()?;
    let mut rng = rng::stream(config.seed, "population", &[]);
    Ok((0..config.population)
        .map(|_| Chromosome::new((0..config.gene_count).map(|_| draw_gene(&config.rates, &mut rng)).collect()))
        .collect())
}

/// Indices of the `count` lowest scores, best first; ties go to the lower
/// index and NaN ranks last.
pub fn select_parents(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| sanitize(scores[a]).total_cmp(&sanitize(scores[b])).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// `needed` children, each taking every gene from one of two distinct
/// randomly chosen parents with equal probability.
pub fn crossover_breed(parents: &[Chromosome], needed: usize, rng: &mut Rng) -> Result<Vec<Chromosome>> {
    if parents.len() < 2 {
        return Err(Error::invalid("crossover", format!("needs at least 2 parents, got {}", parents.len())));
    }
    Ok((0..needed)
        .map(|_| {
            let a = rng.random_range(0..parents.len());
            let mut b = rng.random_range(0..parents.len() - 1);
            if b >= a {
                b += 1;
            }
            let genes = parents[a]
                .genes
                .iter()
                .zip(&parents[b].genes)
                .map(|(&x, &y)| if rng.random::<bool>() { x } else { y })
                .collect();
            Chromosome::new(genes)
        })
        .collect())
}

/// With probability `rate`, redraws `⌈fraction·n⌉` distinct, uniformly chosen
/// genes from `rates`.
pub fn mutate(child: Chromosome, rate: f64, fraction: f64, rates: &[usize], rng: &mut Rng) -> Chromosome {
    if rng.random::<f64>() >= rate {
        return child;
    }
    let n = child.genes.len();
    let count = ((fraction * n as f64).ceil() as usize).min(n);
    let mut genes = child.genes;
    for pos in sample(rng, n, count) {
        genes[pos] = draw_gene(rates, rng);
    }
    Chromosome::new(genes)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationLog {
    /// 1-based.
    pub generation: usize,
    /// Every member with its score, in population order.
    pub candidates: Vec<(Chromosome, f64)>,
    /// Population indices of the survivors, best first.
    pub parents: Vec<usize>,
    pub children: Vec<Chromosome>,
}

impl GenerationLog {
    pub fn best(&self) -> (usize, f64) {
        let i = select_parents(&self.candidates.iter().map(|c| c.1).collect::<Vec<_>>(), 1)[0];
        (i, self.candidates[i].1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaOutcome {
    pub best: Chromosome,
    pub best_score: f64,
    pub logs: Vec<GenerationLog>,
}

/// Runs the search and returns the best member of the final generation.
pub fn run_ga<E: FitnessEvaluator>(evaluator: &E, config: &GaConfig) -> Result<GaOutcome> {
    run_ga_with(evaluator, config, |_| {})
}

/// [`run_ga`], calling `on_generation` after each generation.
pub fn run_ga_with<E: FitnessEvaluator>(
    evaluator: &E,
    config: &GaConfig,
    mut on_generation: impl FnMut(&GenerationLog),
) -> Result<GaOutcome> {
    config.validate()?;
    let n_parents = config.parent_count();
    let mut members: Vec<(Chromosome, Option<E::State>)> =
        init_population(config)?.into_iter().map(|c| (c, None)).collect();
    let mut logs = Vec::with_capacity(config.generations);

    for generation in 0..config.generations {
        let mut scored = Vec::with_capacity(members.len());
        for (i, (chromosome, state)) in members.into_iter().enumerate() {
            let (score, state) = evaluator.evaluate(&chromosome, state, config.candidate_seed(generation, i))?;
            scored.push((chromosome, sanitize(score), state));
        }
        let scores: Vec<f64> = scored.iter().map(|s| s.1).collect();
        let parent_idx = select_parents(&scores, n_parents);

        let mut rng = rng::stream(config.seed, "breed", &[generation as u64]);
        let parent_genes: Vec<Chromosome> = parent_idx.iter().map(|&i| scored[i].0.clone()).collect();
        let children: Vec<Chromosome> = crossover_breed(&parent_genes, config.population - n_parents, &mut rng)?
            .into_iter()
            .map(|c| mutate(c, config.mutation_rate, config.mutation_fraction, &config.rates, &mut rng))
            .collect();

        let log = GenerationLog {
            generation: generation + 1,
            candidates: scored.iter().map(|s| (s.0.clone(), s.1)).collect(),
            parents: parent_idx.clone(),
            children: children.clone(),
        };
        on_generation(&log);
        logs.push(log);

        if generation + 1 == config.generations {
            break;
        }
        let mut slots: Vec<Option<(Chromosome, f64, E::State)>> = scored.into_iter().map(Some).collect();
        members = parent_idx
            .iter()
            .map(|&i| {
                let (c, _, s) = slots[i].take().expect("parent indices are distinct");
                (c, Some(s))
            })
            .chain(children.into_iter().map(|c| (c, None)))
            .collect();
    }

    let last = logs.last().expect("at least one generation");
    let (i, best_score) = last.best();
    Ok(GaOutcome {
        best: last.candidates[i].0.clone(),
        best_score,
        logs,
    })
}

pub const GA_LOG_HEADER: &str = "generation,candidate,genes,val_mae";

pub fn encode_ga_log(logs: &[GenerationLog]) -> String {
    let mut out = format!("{GA_LOG_HEADER}\n");
    for log in logs {
        for (i, (c, score)) in log.candidates.iter().enumerate() {
            writeln!(out, "{},{},{},{:?}", log.generation, i, c.label(), score).expect("writing to a String cannot fail");
        }
    }
    out
}

/// One row of a GA log.
#[derive(Clone, Debug, PartialEq)]
pub struct GaLogRow {
    pub generation: usize,
    pub candidate: usize,
    pub chromosome: Chromosome,
    pub val_mae: f64,
}

pub fn decode_ga_log(text: &str) -> Result<Vec<GaLogRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(GA_LOG_HEADER) {
        return Err(Error::format("GA log", "missing header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |what: &str| Error::format("GA log", format!("row {}: {what}", i + 1));
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let genes = fields[2]
            .split('-')
            .map(|g| g.parse::<usize>().map_err(|_| bad("bad gene")))
            .collect::<Result<Vec<_>>>()?;
        rows.push(GaLogRow {
            generation: fields[0].parse().map_err(|_| bad("bad generation"))?,
            candidate: fields[1].parse().map_err(|_| bad("bad candidate"))?,
            chromosome: Chromosome::new(genes),
            val_mae: fields[3].parse().map_err(|_| bad("bad score"))?,
        });
    }
    Ok(rows)
}

pub fn write_ga_log(path: impl AsRef<Path>, logs: &[GenerationLog]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ga_log(logs)).map_err(|e| Error::from(e).at(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub genes: Vec<usize>,
    pub val_mae: f64,
    pub generation: usize,
}

pub fn write_best_json(path: impl AsRef<Path>, outcome: &GaOutcome) -> Result<()> {
    let path = path.as_ref();
    let record = BestRecord {
        genes: outcome.best.genes.clone(),
        val_mae: outcome.best_score,
        generation: outcome.logs.len(),
    };
    let text = serde_json::to_string_pretty(&record).expect("best record serializes");
    std::fs::write(path, text + "\n").map_err(|e| Error::from(e).at(path))
}
