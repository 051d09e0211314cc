//! Population-based derivative-free search over a box.
//!
//! Everything minimizes. Fitness functions only need to be `Fn(&[f64]) -> f64 + Sync`;
//! each iteration evaluates its population in parallel on the current rayon pool,
//! while every random draw happens on the coordinating thread so the outcome does
//! not depend on worker count or evaluation order.

mod ga;
mod pso;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ga::{ga_crossover, ga_mutate, ga_select, GaConfig};
pub use pso::{draw_coefficients, pso_position_update, pso_velocity_update, Coefficients, PsoConfig};

/// Per-dimension closed interval `[lower[d], upper[d]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension(format!(
                "{} lower bounds but {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        if lower.is_empty() {
            return Err(Error::Config("search space has no dimensions".into()));
        }
        for (d, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !l.is_finite() || !u.is_finite() || l > u {
                return Err(Error::Config(format!("invalid bounds [{l}, {u}] in dimension {d}")));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The same interval in every one of `dim` dimensions.
    pub fn uniform(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| if l == u { l } else { rng.random_range(l..=u) })
            .collect()
    }
}

/// A search agent. `velocity` stays zero for the genetic algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub fitness: f64,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

impl Agent {
    pub fn at(position: Vec<f64>) -> Self {
        let n = position.len();
        Self {
            best_position: position.clone(),
            position,
            velocity: vec![0.0; n],
            fitness: f64::INFINITY,
            best_fitness: f64::INFINITY,
        }
    }

    /// Records a new fitness and keeps the personal best on strict improvement.
    pub fn observe(&mut self, fitness: f64) {
        self.fitness = fitness;
        if fitness < self.best_fitness {
            self.best_fitness = fitness;
            self.best_position.clone_from(&self.position);
        }
    }
}

/// Number of agents and number of iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunBudget {
    pub agents: usize,
    pub iterations: usize,
}

impl RunBudget {
    pub const ALPHA: RunBudget = RunBudget {
        agents: 10,
        iterations: 5,
    };
    pub const BETA: RunBudget = RunBudget {
        agents: 50,
        iterations: 25,
    };
    pub const GAMMA: RunBudget = RunBudget {
        agents: 100,
        iterations: 50,
    };

    pub fn preset(name: &str) -> Option<RunBudget> {
        match name.to_ascii_lowercase().as_str() {
            "alpha" => Some(Self::ALPHA),
            "beta" => Some(Self::BETA),
            "gamma" => Some(Self::GAMMA),
            _ => None,
        }
    }

    pub fn preset_name(&self) -> Option<&'static str> {
        match *self {
            Self::ALPHA => Some("alpha"),
            Self::BETA => Some("beta"),
            Self::GAMMA => Some("gamma"),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents < 2 {
            return Err(Error::Config(format!("need at least 2 agents, got {}", self.agents)));
        }
        if self.iterations < 1 {
            return Err(Error::Config("need at least 1 iteration".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Algorithm {
    Ga(GaConfig),
    Pso(PsoConfig),
}

impl Algorithm {
    pub fn ga() -> Self {
        Algorithm::Ga(GaConfig::default())
    }

    pub fn pso() -> Self {
        Algorithm::Pso(PsoConfig::default())
    }

    pub fn short_name(&self) -> &'static str {
        match self {
            Algorithm::Ga(_) => "GA",
            Algorithm::Pso(_) => "PSO",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Algorithm::Ga(c) => c.validate(),
            Algorithm::Pso(c) => c.validate(),
        }
    }
}

/// `m` agents drawn uniformly inside `bounds`; agent 0 sits on `anchor` when given.
pub fn init_population(bounds: &Bounds, m: usize, seed: u64, anchor: Option<&[f64]>) -> Result<Vec<Agent>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_population_with(bounds, m, &mut rng, anchor)
}

pub fn init_population_with<R: Rng + ?Sized>(
    bounds: &Bounds,
    m: usize,
    rng: &mut R,
    anchor: Option<&[f64]>,
) -> Result<Vec<Agent>> {
    if m < 2 {
        return Err(Error::Config(format!("need at least 2 agents, got {m}")));
    }
    if let Some(a) = anchor {
        if a.len() != bounds.dim() {
            return Err(Error::Dimension(format!(
                "anchor has {} entries for a {}-dimensional space",
                a.len(),
                bounds.dim()
            )));
        }
        if !bounds.contains(a) {
            return Err(Error::Config("anchor lies outside the search bounds".into()));
        }
    }
    let mut agents: Vec<Agent> = (0..m).map(|_| Agent::at(bounds.sample(rng))).collect();
    if let Some(a) = anchor {
        agents[0] = Agent::at(a.to_vec());
    }
    Ok(agents)
}

/// Evaluates every position in parallel; results keep input order.
pub(crate) fn evaluate_all<F>(fitness: &F, positions: &[&[f64]]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values: Vec<f64> = positions.par_iter().map(|x| fitness(x)).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            value: values[i],
            position: positions[i].to_vec(),
        });
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub algorithm: Algorithm,
    pub budget: RunBudget,
    pub seed: u64,
    pub anchored: bool,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    /// Best fitness in the initial population.
    pub initial_best_fitness: f64,
    /// Best-so-far fitness after each iteration.
    pub trace: Vec<f64>,
    pub evaluations: usize,
}

/// Runs the chosen meta-heuristic and returns the best position ever evaluated.
pub fn optimize<F>(
    fitness: &F,
    bounds: &Bounds,
    algorithm: &Algorithm,
    budget: RunBudget,
    seed: u64,
    anchor: Option<&[f64]>,
) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    optimize_observed(fitness, bounds, algorithm, budget, seed, anchor, |_| {})
}

/// Like [`optimize`], calling `observer` with the population after every iteration.
pub fn optimize_observed<F, O>(
    fitness: &F,
    bounds: &Bounds,
    algorithm: &Algorithm,
    budget: RunBudget,
    seed: u64,
    anchor: Option<&[f64]>,
    observer: O,
) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
    O: FnMut(&[Agent]),
{
    algorithm.validate()?;
    budget.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let agents = init_population_with(bounds, budget.agents, &mut rng, anchor)?;
    let run = match algorithm {
        Algorithm::Pso(cfg) => pso::run(fitness, bounds, cfg, budget, agents, &mut rng, observer)?,
        Algorithm::Ga(cfg) => ga::run(fitness, bounds, cfg, budget, agents, &mut rng, observer)?,
    };
    Ok(OptimizationResult {
        algorithm: algorithm.clone(),
        budget,
        seed,
        anchored: anchor.is_some(),
        best_position: run.best_position,
        best_fitness: run.best_fitness,
        initial_best_fitness: run.initial_best_fitness,
        trace: run.trace,
        evaluations: run.evaluations,
    })
}

pub(crate) struct RunOutput {
    best_position: Vec<f64>,
    best_fitness: f64,
    initial_best_fitness: f64,
    trace: Vec<f64>,
    evaluations: usize,
}

/// Index of the smallest value; ties go to the lowest index.
pub(crate) fn argmin(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v < best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_box_puts_everyone_at_origin() {
        let b = Bounds::uniform(3, 0.0, 0.0).unwrap();
        let agents = init_population(&b, 5, 1, None).unwrap();
        assert!(agents.iter().all(|a| a.position == vec![0.0; 3] && a.velocity == vec![0.0; 3]));
    }

    #[test]
    fn anchor_is_agent_zero() {
        let b = Bounds::uniform(2, -1.0, 1.0).unwrap();
        let theta = [0.25, -0.75];
        let agents = init_population(&b, 4, 1, Some(&theta)).unwrap();
        assert_eq!(agents[0].position, theta.to_vec());
        assert!(agents.iter().all(|a| b.contains(&a.position)));
    }

    #[test]
    fn sampling_mean_is_centered() {
        let b = Bounds::uniform(3, -1.0, 1.0).unwrap();
        let agents = init_population(&b, 100, 13, None).unwrap();
        for d in 0..3 {
            let mean = agents.iter().map(|a| a.position[d]).sum::<f64>() / 100.0;
            assert!(mean.abs() < 0.1, "dimension {d} mean {mean}");
        }
    }

    #[test]
    fn population_errors() {
        let b = Bounds::uniform(2, -1.0, 1.0).unwrap();
        assert!(matches!(init_population(&b, 1, 0, None), Err(Error::Config(_))));
        assert!(init_population(&b, 3, 0, Some(&[2.0, 0.0])).is_err());
        assert!(Bounds::new(vec![1.0], vec![0.0]).is_err());
        assert!(Bounds::new(vec![0.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn presets() {
        assert_eq!(RunBudget::preset("alpha"), Some(RunBudget { agents: 10, iterations: 5 }));
        assert_eq!(RunBudget::preset("beta"), Some(RunBudget { agents: 50, iterations: 25 }));
        assert_eq!(RunBudget::preset("gamma"), Some(RunBudget { agents: 100, iterations: 50 }));
        assert_eq!(RunBudget::GAMMA.preset_name(), Some("gamma"));
        assert_eq!(RunBudget::preset("delta"), None);
    }

    #[test]
    fn non_finite_fitness_reports_position() {
        let b = Bounds::uniform(2, 1.0, 1.0).unwrap();
        let err = optimize(&|_: &[f64]| f64::NAN, &b, &Algorithm::pso(), RunBudget::ALPHA, 0, None).unwrap_err();
        match err {
            Error::Evaluation { position, .. } => assert_eq!(position, vec![1.0, 1.0]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn constant_fitness_is_flat() {
        let b = Bounds::uniform(3, -1.0, 1.0).unwrap();
        for alg in [Algorithm::ga(), Algorithm::pso()] {
            let r = optimize(&|_: &[f64]| 2.5, &b, &alg, RunBudget::ALPHA, 4, None).unwrap();
            assert_eq!(r.best_fitness, 2.5);
            assert!(r.trace.iter().all(|&v| v == 2.5));
        }
    }
}
