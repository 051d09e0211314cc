use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{argmin, evaluate_all, Agent, Bounds, RunBudget, RunOutput};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    /// Fraction of the population chosen as parents each generation.
    #[serde(default = "default_selection")]
    pub p_s: f64,
    /// Probability that a parent pair is recombined instead of copied.
    #[serde(default = "default_crossover")]
    pub p_c: f64,
    /// Probability that an offspring receives noise in one gene.
    #[serde(default = "default_mutation")]
    pub p_m: f64,
    /// Standard deviation of the mutation noise. `None` uses a tenth of each
    /// dimension's width.
    #[serde(default)]
    pub mutation_sigma: Option<f64>,
}

fn default_selection() -> f64 {
    0.75
}

fn default_crossover() -> f64 {
    0.5
}

fn default_mutation() -> f64 {
    0.25
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            p_s: default_selection(),
            p_c: default_crossover(),
            p_m: default_mutation(),
            mutation_sigma: None,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_s > 0.0 && self.p_s <= 1.0) {
            return Err(Error::Config(format!("p_s must lie in (0, 1], got {}", self.p_s)));
        }
        for (name, p) in [("p_c", self.p_c), ("p_m", self.p_m)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if let Some(s) = self.mutation_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config(format!("mutation_sigma must be finite and non-negative, got {s}")));
            }
        }
        Ok(())
    }

    fn sigmas(&self, bounds: &Bounds) -> Vec<f64> {
        match self.mutation_sigma {
            Some(s) => vec![s; bounds.dim()],
            None => bounds
                .lower()
                .iter()
                .zip(bounds.upper())
                .map(|(l, u)| (u - l) / 10.0)
                .collect(),
        }
    }
}

/// Parent pool by rank-weighted roulette without replacement.
///
/// The best of `m` individuals carries weight `m`, the worst weight 1. The
/// pool has `round(p_s * m)` members, minus the worst of them when that count
/// is odd. Returned indices are in draw order; consecutive entries pair up.
pub fn ga_select<R: Rng + ?Sized>(fitness: &[f64], p_s: f64, rng: &mut R) -> Result<Vec<usize>> {
    let m = fitness.len();
    let drawn = ((p_s * m as f64).round() as usize).min(m);
    let size = drawn - drawn % 2;
    if size < 2 {
        return Err(Error::Config(format!(
            "selection proportion {p_s} of {m} individuals leaves fewer than 2 parents"
        )));
    }

    let mut by_rank: Vec<usize> = (0..m).collect();
    by_rank.sort_by(|&a, &b| fitness[a].total_cmp(&fitness[b]));
    let mut weights: Vec<f64> = (0..m).map(|r| (m - r) as f64).collect();
    let mut chosen: Vec<usize> = Vec::with_capacity(drawn);
    while chosen.len() < drawn {
        let total: f64 = weights.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = None;
        for (r, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            pick = Some(r);
            if u < *w {
                break;
            }
            u -= w;
        }
        let r = pick.expect("at least one unselected individual remains");
        weights[r] = 0.0;
        chosen.push(r);
    }
    if chosen.len() > size {
        // drop the worst-ranked draw so parents pair up
        let worst = chosen
            .iter()
            .enumerate()
            .max_by_key(|(_, &r)| r)
            .map(|(i, _)| i)
            .unwrap();
        chosen.remove(worst);
    }
    Ok(chosen.into_iter().map(|r| by_rank[r]).collect())
}

/// Uniform crossover with probability `p_c`: every gene of the first child comes
/// from either parent with equal odds and the second child takes the other one.
pub fn ga_crossover<R: Rng + ?Sized>(a: &[f64], b: &[f64], p_c: f64, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(a.len(), b.len());
    if !rng.random_bool(p_c) {
        return (a.to_vec(), b.to_vec());
    }
    let mut child_a = Vec::with_capacity(a.len());
    let mut child_b = Vec::with_capacity(b.len());
    for (&x, &y) in a.iter().zip(b) {
        if rng.random_bool(0.5) {
            child_a.push(x);
            child_b.push(y);
        } else {
            child_a.push(y);
            child_b.push(x);
        }
    }
    (child_a, child_b)
}

/// With probability `p_m`, adds `N(0, sigma[d]^2)` noise to one uniformly chosen
/// gene `d` and clips it back into the bounds.
pub fn ga_mutate<R: Rng + ?Sized>(individual: &[f64], p_m: f64, sigma: &[f64], bounds: &Bounds, rng: &mut R) -> Vec<f64> {
    let mut out = individual.to_vec();
    if out.is_empty() || !rng.random_bool(p_m) {
        return out;
    }
    let d = rng.random_range(0..out.len());
    let s = sigma[d];
    if s > 0.0 {
        let noise = Normal::new(0.0, s).expect("sigma is finite and positive").sample(rng);
        out[d] = (out[d] + noise).clamp(bounds.lower()[d], bounds.upper()[d]);
    }
    out
}

pub(super) fn run<F, R, O>(
    fitness: &F,
    bounds: &Bounds,
    cfg: &GaConfig,
    budget: RunBudget,
    agents: Vec<Agent>,
    rng: &mut R,
    mut observer: O,
) -> Result<RunOutput>
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: Rng + ?Sized,
    O: FnMut(&[Agent]),
{
    let sigmas = cfg.sigmas(bounds);
    let mut population = agents;
    {
        let positions: Vec<&[f64]> = population.iter().map(|a| a.position.as_slice()).collect();
        let values = evaluate_all(fitness, &positions)?;
        for (a, v) in population.iter_mut().zip(values) {
            a.observe(v);
        }
    }
    let mut evaluations = population.len();
    sort_by_fitness(&mut population);
    let initial_best_fitness = population[0].fitness;
    let mut trace = Vec::with_capacity(budget.iterations);

    for _ in 0..budget.iterations {
        let fit: Vec<f64> = population.iter().map(|a| a.fitness).collect();
        let pool = ga_select(&fit, cfg.p_s, rng)?;
        let mut offspring: Vec<Agent> = Vec::with_capacity(pool.len());
        for pair in pool.chunks_exact(2) {
            let (x, y) = ga_crossover(&population[pair[0]].position, &population[pair[1]].position, cfg.p_c, rng);
            offspring.push(Agent::at(ga_mutate(&x, cfg.p_m, &sigmas, bounds, rng)));
            offspring.push(Agent::at(ga_mutate(&y, cfg.p_m, &sigmas, bounds, rng)));
        }
        let positions: Vec<&[f64]> = offspring.iter().map(|a| a.position.as_slice()).collect();
        let values = evaluate_all(fitness, &positions)?;
        for (a, v) in offspring.iter_mut().zip(values) {
            a.observe(v);
        }
        evaluations += offspring.len();

        // parents and offspring compete; the best m survive, so the elite is never lost
        population.extend(offspring);
        sort_by_fitness(&mut population);
        population.truncate(budget.agents);
        trace.push(population[0].fitness);
        observer(&population);
    }
    let lead = argmin(population.iter().map(|a| a.fitness));
    Ok(RunOutput {
        best_position: population[lead].position.clone(),
        best_fitness: population[lead].fitness,
        initial_best_fitness,
        trace,
        evaluations,
    })
}

/// Stable, so earlier (older) individuals win ties.
fn sort_by_fitness(agents: &mut [Agent]) {
    agents.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
}
