use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmin, evaluate_all, Agent, Bounds, RunBudget, RunOutput};
use crate::error::{Error, Result};

/// Velocity update weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsoConfig {
    /// Inertia weight `w`.
    #[serde(default = "default_w")]
    pub w: f64,
    /// Weight on the pull toward the agent's own best position.
    #[serde(default = "default_c")]
    pub c1: f64,
    /// Weight on the pull toward the swarm's best position.
    #[serde(default = "default_c")]
    pub c2: f64,
    /// Draw `r1`, `r2` per dimension instead of once per update.
    #[serde(default)]
    pub per_dimension_random: bool,
}

fn default_w() -> f64 {
    0.7
}

fn default_c() -> f64 {
    1.7
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            w: default_w(),
            c1: default_c(),
            c2: default_c(),
            per_dimension_random: false,
        }
    }
}

impl PsoConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w", self.w), ("c1", self.c1), ("c2", self.c2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("PSO {name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// The random factors of one velocity update.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    Shared { r1: f64, r2: f64 },
    PerDimension { r1: Vec<f64>, r2: Vec<f64> },
}

impl Coefficients {
    fn get(&self, d: usize) -> (f64, f64) {
        match self {
            Coefficients::Shared { r1, r2 } => (*r1, *r2),
            Coefficients::PerDimension { r1, r2 } => (r1[d], r2[d]),
        }
    }
}

pub fn draw_coefficients<R: Rng + ?Sized>(cfg: &PsoConfig, dim: usize, rng: &mut R) -> Coefficients {
    if cfg.per_dimension_random {
        let r1 = (0..dim).map(|_| rng.random::<f64>()).collect();
        let r2 = (0..dim).map(|_| rng.random::<f64>()).collect();
        Coefficients::PerDimension { r1, r2 }
    } else {
        Coefficients::Shared {
            r1: rng.random(),
            r2: rng.random(),
        }
    }
}

/// `v' = w v + c1 r1 (x* - x) + c2 r2 (g - x)`.
pub fn pso_velocity_update(
    agent: &Agent,
    global_best: &[f64],
    cfg: &PsoConfig,
    coeffs: &Coefficients,
) -> Result<Vec<f64>> {
    let n = agent.position.len();
    if agent.velocity.len() != n || agent.best_position.len() != n || global_best.len() != n {
        return Err(Error::Dimension("agent vectors and global best disagree in length".into()));
    }
    if let Coefficients::PerDimension { r1, r2 } = coeffs {
        if r1.len() != n || r2.len() != n {
            return Err(Error::Dimension("per-dimension coefficients have the wrong length".into()));
        }
    }
    Ok((0..n)
        .map(|d| {
            let (r1, r2) = coeffs.get(d);
            let x = agent.position[d];
            cfg.w * agent.velocity[d] + cfg.c1 * r1 * (agent.best_position[d] - x) + cfg.c2 * r2 * (global_best[d] - x)
        })
        .collect())
}

/// `x' = clip(x + v)` using the agent's current (already updated) velocity.
pub fn pso_position_update(agent: &Agent, bounds: &Bounds) -> Vec<f64> {
    let mut next: Vec<f64> = agent.position.iter().zip(&agent.velocity).map(|(x, v)| x + v).collect();
    bounds.clip(&mut next);
    next
}

pub(super) fn run<F, R, O>(
    fitness: &F,
    bounds: &Bounds,
    cfg: &PsoConfig,
    budget: RunBudget,
    mut agents: Vec<Agent>,
    rng: &mut R,
    mut observer: O,
) -> Result<RunOutput>
where
    F: Fn(&[f64]) -> f64 + Sync,
    R: Rng + ?Sized,
    O: FnMut(&[Agent]),
{
    let evaluate = |agents: &mut [Agent]| -> Result<()> {
        let positions: Vec<&[f64]> = agents.iter().map(|a| a.position.as_slice()).collect();
        let values = evaluate_all(fitness, &positions)?;
        for (a, v) in agents.iter_mut().zip(values) {
            a.observe(v);
        }
        Ok(())
    };

    evaluate(&mut agents)?;
    let mut evaluations = agents.len();
    let lead = argmin(agents.iter().map(|a| a.best_fitness));
    let mut best_position = agents[lead].best_position.clone();
    let mut best_fitness = agents[lead].best_fitness;
    let initial_best_fitness = best_fitness;
    let mut trace = Vec::with_capacity(budget.iterations);

    for _ in 0..budget.iterations {
        for agent in agents.iter_mut() {
            let coeffs = draw_coefficients(cfg, bounds.dim(), rng);
            agent.velocity = pso_velocity_update(agent, &best_position, cfg, &coeffs)?;
            agent.position = pso_position_update(agent, bounds);
        }
        evaluate(&mut agents)?;
        evaluations += agents.len();
        let lead = argmin(agents.iter().map(|a| a.best_fitness));
        if agents[lead].best_fitness < best_fitness {
            best_fitness = agents[lead].best_fitness;
            best_position.clone_from(&agents[lead].best_position);
        }
        trace.push(best_fitness);
        observer(&agents);
    }
    Ok(RunOutput {
        best_position,
        best_fitness,
        initial_best_fitness,
        trace,
        evaluations,
    })
}
