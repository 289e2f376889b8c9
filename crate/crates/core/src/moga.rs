//! Real-coded NSGA-II: fast non-dominated sorting, crowding distance,
//! simulated binary crossover and polynomial mutation, driven by a
//! hypervolume-stagnation stopping rule.
//!
//! All randomness comes from one ChaCha8 stream owned by the run loop.
//! Offspring are evaluated in parallel and joined by index, so results do
//! not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::Gains;
use crate::pareto::{extract_front_with_genomes, hypervolume_2d, reference_point, ParetoFront};
use crate::rollout::ObjectiveVector;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MogaError {
    #[error("invalid GA configuration: {0}")]
    InvalidConfig(String),
    #[error("individual {0} has not been evaluated")]
    Unevaluated(usize),
}

/// Normalized decision vector, every gene in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub genes: Vec<f64>,
}

impl Genome {
    pub fn new(genes: Vec<f64>) -> Self {
        Self { genes }
    }

    fn random(n: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { genes: (0..n).map(|_| rng.random::<f64>()).collect() }
    }

    /// Log-linear decoding: genes `[kp_1..kp_n, kd_1..kd_n]` map each to
    /// `10^(log10(lo) + g·(log10(hi) − log10(lo)))`.
    pub fn decode(&self, bounds: &GainBounds) -> Gains {
        let n = self.genes.len() / 2;
        let map = |g: f64, [lo, hi]: [f64; 2]| {
            let (a, b) = (lo.log10(), hi.log10());
            10f64.powf(a + g.clamp(0.0, 1.0) * (b - a))
        };
        Gains {
            kp: self.genes[..n].iter().map(|&g| map(g, bounds.kp)).collect(),
            kd: self.genes[n..].iter().map(|&g| map(g, bounds.kd)).collect(),
        }
    }

    /// Inverse of [`Genome::decode`] for gains inside the bounds.
    pub fn encode(gains: &Gains, bounds: &GainBounds) -> Self {
        let unmap = |k: f64, [lo, hi]: [f64; 2]| {
            let (a, b) = (lo.log10(), hi.log10());
            ((k.log10() - a) / (b - a)).clamp(0.0, 1.0)
        };
        Self {
            genes: gains
                .kp
                .iter()
                .map(|&k| unmap(k, bounds.kp))
                .chain(gains.kd.iter().map(|&k| unmap(k, bounds.kd)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainBounds {
    pub kp: [f64; 2],
    pub kd: [f64; 2],
}

impl Default for GainBounds {
    fn default() -> Self {
        Self { kp: [1.0, 1e3], kd: [1e-2, 1e2] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    pub objectives: Option<ObjectiveVector>,
    pub rank: usize,
    pub crowding: f64,
}

impl Individual {
    pub fn new(genome: Genome) -> Self {
        Self { genome, objectives: None, rank: usize::MAX, crowding: 0.0 }
    }

    pub fn evaluated(genome: Genome, objectives: ObjectiveVector) -> Self {
        Self { genome, objectives: Some(objectives), rank: usize::MAX, crowding: 0.0 }
    }
}

fn default_population_size() -> usize {
    30
}
fn default_max_generations() -> usize {
    100
}
fn default_crossover_probability() -> f64 {
    0.9
}
fn default_sbx_eta() -> f64 {
    15.0
}
fn default_mutation_eta() -> f64 {
    20.0
}
fn default_convergence_window() -> usize {
    10
}
fn default_convergence_epsilon() -> f64 {
    1e-3
}
fn default_rng_seed() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    #[serde(default = "default_population_size")]
    pub population_size: usize,
    #[serde(default = "default_max_generations")]
    pub max_generations: usize,
    #[serde(default = "default_crossover_probability")]
    pub crossover_probability: f64,
    #[serde(default = "default_sbx_eta")]
    pub sbx_eta: f64,
    /// Per-gene mutation probability; `None` means `1 / num_genes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_probability: Option<f64>,
    #[serde(default = "default_mutation_eta")]
    pub mutation_eta: f64,
    #[serde(default)]
    pub gain_bounds: GainBounds,
    #[serde(default = "default_convergence_window")]
    pub convergence_window: usize,
    #[serde(default = "default_convergence_epsilon")]
    pub convergence_epsilon: f64,
    #[serde(default = "default_rng_seed")]
    pub rng_seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: default_population_size(),
            max_generations: default_max_generations(),
            crossover_probability: default_crossover_probability(),
            sbx_eta: default_sbx_eta(),
            mutation_probability: None,
            mutation_eta: default_mutation_eta(),
            gain_bounds: GainBounds::default(),
            convergence_window: default_convergence_window(),
            convergence_epsilon: default_convergence_epsilon(),
            rng_seed: default_rng_seed(),
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<(), MogaError> {
        let bad = |m: String| Err(MogaError::InvalidConfig(m));
        if self.population_size < 4 || !self.population_size.is_multiple_of(2) {
            return bad(format!("population_size must be even and >= 4, got {}", self.population_size));
        }
        let probs = [Some(self.crossover_probability), self.mutation_probability];
        if probs.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if self.sbx_eta.is_nan() || self.mutation_eta.is_nan() || self.sbx_eta < 0.0 || self.mutation_eta < 0.0 {
            return bad("distribution indices must be >= 0".into());
        }
        for (name, [lo, hi]) in [("kp", self.gain_bounds.kp), ("kd", self.gain_bounds.kd)] {
            if !(lo > 0.0 && hi > lo && hi.is_finite()) {
                return bad(format!("{name} bounds must satisfy 0 < lo < hi, got [{lo}, {hi}]"));
            }
        }
        if self.convergence_window == 0 || self.convergence_epsilon.is_nan() || self.convergence_epsilon < 0.0 {
            return bad("convergence window must be >= 1 and epsilon >= 0".into());
        }
        Ok(())
    }

    pub fn mutation_probability_for(&self, num_genes: usize) -> f64 {
        self.mutation_probability.unwrap_or(1.0 / num_genes.max(1) as f64)
    }
}

/// Pareto dominance for minimization.
pub fn dominates(a: &ObjectiveVector, b: &ObjectiveVector) -> bool {
    a.f_acc <= b.f_acc && a.f_t <= b.f_t && (a.f_acc < b.f_acc || a.f_t < b.f_t)
}

/// Deb's fast non-dominated sort on raw objective vectors. Each front lists
/// indices in ascending order.
pub fn sort_fronts(objectives: &[ObjectiveVector]) -> Vec<Vec<usize>> {
    let n = objectives.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    let mut current = Vec::new();
    for p in 0..n {
        for q in 0..n {
            if dominates(&objectives[p], &objectives[q]) {
                dominated_by[p].push(q);
            } else if dominates(&objectives[q], &objectives[p]) {
                domination_count[p] += 1;
            }
        }
        if domination_count[p] == 0 {
            current.push(p);
        }
    }
    let mut fronts = Vec::new();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Sorts an evaluated population into fronts and writes each member's rank.
pub fn fast_nondominated_sort(population: &mut [Individual]) -> Result<Vec<Vec<usize>>, MogaError> {
    let objectives = population
        .iter()
        .enumerate()
        .map(|(i, ind)| ind.objectives.ok_or(MogaError::Unevaluated(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let fronts = sort_fronts(&objectives);
    for (rank, front) in fronts.iter().enumerate() {
        for &i in front {
            population[i].rank = rank;
        }
    }
    Ok(fronts)
}

/// Crowding distance of each member of one front.
pub fn crowding_distance(front: &[ObjectiveVector]) -> Vec<f64> {
    let n = front.len();
    let mut distance = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let getters: [fn(&ObjectiveVector) -> f64; 2] = [|v| v.f_acc, |v| v.f_t];
    for get in getters {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            get(&front[a])
                .total_cmp(&get(&front[b]))
                .then(front[a].f_acc.total_cmp(&front[b].f_acc))
                .then(front[a].f_t.total_cmp(&front[b].f_t))
                .then(a.cmp(&b))
        });
        let lo = get(&front[order[0]]);
        let hi = get(&front[order[n - 1]]);
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range > 0.0 {
            for k in 1..n - 1 {
                distance[order[k]] += (get(&front[order[k + 1]]) - get(&front[order[k - 1]])) / range;
            }
        }
    }
    distance
}

/// Spread factor of SBX for a uniform draw `u` in `[0, 1)`.
fn sbx_beta(u: f64, eta: f64) -> f64 {
    if u <= 0.5 {
        (2.0 * u).powf(1.0 / (eta + 1.0))
    } else {
        (1.0 / (2.0 * (1.0 - u))).powf(1.0 / (eta + 1.0))
    }
}

/// SBX children of one gene pair before clipping; they always sum to `x1 + x2`.
pub fn sbx_gene_pair(x1: f64, x2: f64, u: f64, eta: f64) -> (f64, f64) {
    let beta = sbx_beta(u, eta);
    (
        0.5 * ((1.0 + beta) * x1 + (1.0 - beta) * x2),
        0.5 * ((1.0 - beta) * x1 + (1.0 + beta) * x2),
    )
}

/// Simulated binary crossover applied to every gene with probability
/// `probability` per pair; children are clipped to `[0, 1]`.
pub fn sbx_crossover<R: Rng>(
    p1: &Genome,
    p2: &Genome,
    eta: f64,
    probability: f64,
    rng: &mut R,
) -> (Genome, Genome) {
    let mut c1 = p1.clone();
    let mut c2 = p2.clone();
    if rng.random::<f64>() >= probability {
        return (c1, c2);
    }
    for i in 0..p1.genes.len() {
        let u = rng.random::<f64>();
        if p1.genes[i] == p2.genes[i] {
            continue;
        }
        let (a, b) = sbx_gene_pair(p1.genes[i], p2.genes[i], u, eta);
        c1.genes[i] = a.clamp(0.0, 1.0);
        c2.genes[i] = b.clamp(0.0, 1.0);
    }
    (c1, c2)
}

/// Bounded polynomial mutation on `[0, 1]`; each gene mutates with probability `pm`.
pub fn polynomial_mutation<R: Rng>(g: &Genome, eta: f64, pm: f64, rng: &mut R) -> Genome {
    let mut out = g.clone();
    let power = 1.0 / (eta + 1.0);
    for x in out.genes.iter_mut() {
        if rng.random::<f64>() >= pm {
            continue;
        }
        let u = rng.random::<f64>();
        let (d1, d2) = (*x, 1.0 - *x);
        let dq = if u < 0.5 {
            let v = 2.0 * u + (1.0 - 2.0 * u) * (1.0 - d1).powf(eta + 1.0);
            v.powf(power) - 1.0
        } else {
            let v = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0 - d2).powf(eta + 1.0);
            1.0 - v.powf(power)
        };
        *x = (*x + dq).clamp(0.0, 1.0);
    }
    out
}

/// True once the last `window` hypervolumes vary by at most
/// `epsilon · max(|last|, 1e-12)`.
pub fn convergence_check(history: &[f64], window: usize, epsilon: f64) -> bool {
    if window == 0 || history.len() < window {
        return false;
    }
    let tail = &history[history.len() - window..];
    let max = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let last = *tail.last().unwrap();
    max - min <= epsilon * last.abs().max(1e-12)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub generation: usize,
    pub evaluations: usize,
    pub front_size: usize,
    pub hypervolume: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaResult {
    /// Non-dominated set of every feasible point evaluated during the run.
    pub front: ParetoFront,
    pub evaluations_used: usize,
    /// Hypervolume of every non-dominated point found so far, one entry per
    /// generation (generation 0 included), against [`GaResult::reference`].
    pub hv_history: Vec<f64>,
    pub converged_at_generation: Option<usize>,
    pub generations_run: usize,
    /// In-run reference point: worst initial objectives scaled by 1.1.
    pub reference: ObjectiveVector,
    /// Size of the population's first front after each generation.
    pub front_sizes: Vec<usize>,
}

fn crowded_better<R: Rng>(a: &Individual, b: &Individual, rng: &mut R) -> bool {
    if a.rank != b.rank {
        return a.rank < b.rank;
    }
    if a.crowding != b.crowding {
        return a.crowding > b.crowding;
    }
    rng.random_bool(0.5)
}

fn tournament<'a, R: Rng>(pop: &'a [Individual], rng: &mut R) -> &'a Individual {
    let a = &pop[rng.random_range(0..pop.len())];
    let b = &pop[rng.random_range(0..pop.len())];
    if crowded_better(a, b, rng) {
        a
    } else {
        b
    }
}

/// Writes rank and crowding distance for every member.
fn assign_rank_and_crowding(pop: &mut [Individual]) -> Result<Vec<Vec<usize>>, MogaError> {
    let fronts = fast_nondominated_sort(pop)?;
    for front in &fronts {
        let objs: Vec<_> = front.iter().map(|&i| pop[i].objectives.unwrap()).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&objs)) {
            pop[i].crowding = d;
        }
    }
    Ok(fronts)
}

/// Elitist truncation of parents plus offspring down to `size` members.
fn environmental_selection(mut combined: Vec<Individual>, size: usize) -> Result<Vec<Individual>, MogaError> {
    let fronts = assign_rank_and_crowding(&mut combined)?;
    let mut chosen: Vec<usize> = Vec::with_capacity(size);
    for front in fronts {
        if chosen.len() + front.len() <= size {
            chosen.extend(front);
        } else {
            let mut last = front;
            last.sort_by(|&a, &b| combined[b].crowding.total_cmp(&combined[a].crowding).then(a.cmp(&b)));
            chosen.extend(last.into_iter().take(size - chosen.len()));
        }
        if chosen.len() == size {
            break;
        }
    }
    let mut slots: Vec<Option<Individual>> = combined.into_iter().map(Some).collect();
    let mut next: Vec<Individual> = chosen.into_iter().map(|i| slots[i].take().unwrap()).collect();
    assign_rank_and_crowding(&mut next)?;
    Ok(next)
}

fn evaluate_all<E>(genomes: &[Genome], evaluator: &E) -> Vec<ObjectiveVector>
where
    E: Fn(&Genome) -> ObjectiveVector + Sync,
{
    genomes.par_iter().map(evaluator).collect()
}

/// NSGA-II over genomes of `num_genes` genes. `progress` sees one report per
/// generation, generation 0 being the random initial population.
pub fn nsga2_run<E, P>(evaluator: &E, num_genes: usize, config: &GaConfig, mut progress: P) -> Result<GaResult, MogaError>
where
    E: Fn(&Genome) -> ObjectiveVector + Sync,
    P: FnMut(&GenerationReport),
{
    config.validate()?;
    if num_genes == 0 {
        return Err(MogaError::InvalidConfig("genome must have at least one gene".into()));
    }
    let size = config.population_size;
    let pm = config.mutation_probability_for(num_genes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let genomes: Vec<Genome> = (0..size).map(|_| Genome::random(num_genes, &mut rng)).collect();
    let objectives = evaluate_all(&genomes, evaluator);
    let mut evaluations = size;
    let reference = reference_point([objectives.as_slice()]).unwrap_or(ObjectiveVector::PENALTY);

    let mut archive = ParetoFront::default();
    absorb(&mut archive, &objectives, &genomes);
    let mut hv_history = vec![hypervolume_2d(&archive.points, reference)];

    let mut population: Vec<Individual> =
        genomes.into_iter().zip(objectives).map(|(g, o)| Individual::evaluated(g, o)).collect();
    let fronts = assign_rank_and_crowding(&mut population)?;
    let mut front_sizes = vec![fronts[0].len()];
    progress(&GenerationReport {
        generation: 0,
        evaluations,
        front_size: fronts[0].len(),
        hypervolume: hv_history[0],
    });

    let mut generation = 0;
    let mut converged_at = None;
    while generation < config.max_generations {
        if convergence_check(&hv_history, config.convergence_window, config.convergence_epsilon) {
            converged_at = Some(generation);
            break;
        }
        generation += 1;

        let mut offspring = Vec::with_capacity(size);
        while offspring.len() < size {
            let p1 = tournament(&population, &mut rng).genome.clone();
            let p2 = tournament(&population, &mut rng).genome.clone();
            let (c1, c2) = sbx_crossover(&p1, &p2, config.sbx_eta, config.crossover_probability, &mut rng);
            offspring.push(polynomial_mutation(&c1, config.mutation_eta, pm, &mut rng));
            offspring.push(polynomial_mutation(&c2, config.mutation_eta, pm, &mut rng));
        }
        let child_objectives = evaluate_all(&offspring, evaluator);
        evaluations += size;

        absorb(&mut archive, &child_objectives, &offspring);
        hv_history.push(hypervolume_2d(&archive.points, reference));

        let mut combined = population;
        combined.extend(offspring.into_iter().zip(child_objectives).map(|(g, o)| Individual::evaluated(g, o)));
        population = environmental_selection(combined, size)?;

        let first = population.iter().filter(|i| i.rank == 0).count();
        front_sizes.push(first);
        progress(&GenerationReport {
            generation,
            evaluations,
            front_size: first,
            hypervolume: *hv_history.last().unwrap(),
        });
    }
    if converged_at.is_none() && convergence_check(&hv_history, config.convergence_window, config.convergence_epsilon) {
        converged_at = Some(generation);
    }

    Ok(GaResult {
        front: archive,
        evaluations_used: evaluations,
        hv_history,
        converged_at_generation: converged_at,
        generations_run: generation,
        reference,
        front_sizes,
    })
}

/// Merges feasible (finite, non-penalty) evaluations into the archive and
/// keeps only its non-dominated members.
fn absorb(archive: &mut ParetoFront, objectives: &[ObjectiveVector], genomes: &[Genome]) {
    let mut points = std::mem::take(&mut archive.points);
    let mut kept = archive.genomes.take().unwrap_or_default();
    for (o, g) in objectives.iter().zip(genomes) {
        if !o.is_penalty() && o.f_acc.is_finite() && o.f_t.is_finite() {
            points.push(*o);
            kept.push(g.clone());
        }
    }
    *archive = extract_front_with_genomes(&points, &kept);
}

/// NSGA-II over PD gains of an `n_joints` arm: genomes are decoded with the
/// configured bounds before every call to `evaluator`.
pub fn tune_gains<E, P>(evaluator: &E, n_joints: usize, config: &GaConfig, progress: P) -> Result<GaResult, MogaError>
where
    E: Fn(&Gains) -> ObjectiveVector + Sync,
    P: FnMut(&GenerationReport),
{
    let bounds = config.gain_bounds;
    let by_genome = |g: &Genome| evaluator(&g.decode(&bounds));
    nsga2_run(&by_genome, 2 * n_joints, config, progress)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    fn ov(a: f64, b: f64) -> ObjectiveVector {
        ObjectiveVector::new(a, b)
    }

    /// Pairwise-dominance peeling used as an oracle for the sort.
    fn brute_fronts(objs: &[ObjectiveVector]) -> Vec<Vec<usize>> {
        let mut remaining: Vec<usize> = (0..objs.len()).collect();
        let mut fronts = Vec::new();
        while !remaining.is_empty() {
            let front: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| !remaining.iter().any(|&j| dominates(&objs[j], &objs[i])))
                .collect();
            remaining.retain(|i| !front.contains(i));
            fronts.push(front);
        }
        fronts
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&ov(1.0, 2.0), &ov(2.0, 3.0)));
        assert!(!dominates(&ov(1.0, 3.0), &ov(3.0, 1.0)));
        assert!(!dominates(&ov(3.0, 1.0), &ov(1.0, 3.0)));
        assert!(!dominates(&ov(1.0, 2.0), &ov(1.0, 2.0)));
        assert!(dominates(&ov(1.0, 2.0), &ov(1.0, 3.0)));
    }

    #[test]
    fn sort_examples() {
        assert_eq!(sort_fronts(&[ov(1.0, 1.0); 4]), vec![vec![0, 1, 2, 3]]);
        assert_eq!(
            sort_fronts(&[ov(3.0, 3.0), ov(1.0, 1.0), ov(2.0, 2.0)]),
            vec![vec![1], vec![2], vec![0]]
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let objs: Vec<_> = (0..50).map(|_| ov(rng.random(), rng.random())).collect();
        assert_eq!(sort_fronts(&objs), brute_fronts(&objs));
    }

    #[test]
    fn sort_writes_ranks_and_rejects_unevaluated() {
        let mut pop = vec![
            Individual::evaluated(Genome::new(vec![0.0]), ov(2.0, 2.0)),
            Individual::evaluated(Genome::new(vec![0.0]), ov(1.0, 1.0)),
        ];
        fast_nondominated_sort(&mut pop).unwrap();
        assert_eq!((pop[0].rank, pop[1].rank), (1, 0));
        pop.push(Individual::new(Genome::new(vec![0.5])));
        assert_eq!(fast_nondominated_sort(&mut pop), Err(MogaError::Unevaluated(2)));
    }

    #[test]
    fn crowding_examples() {
        assert!(crowding_distance(&[ov(0.0, 1.0), ov(1.0, 0.0)]).iter().all(|d| d.is_infinite()));
        assert!(crowding_distance(&[ov(0.0, 1.0)])[0].is_infinite());
        let d = crowding_distance(&[ov(0.0, 2.0), ov(1.0, 1.0), ov(2.0, 0.0)]);
        assert!(d[0].is_infinite() && d[2].is_infinite());
        assert_eq!(d[1], 2.0);
        // Zero-range objective contributes nothing to interior members.
        let d = crowding_distance(&[ov(0.0, 1.0), ov(1.0, 1.0), ov(3.0, 1.0)]);
        assert_eq!(d[1], 1.0);
    }

    #[test]
    fn crowding_is_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let front: Vec<_> = (0..12).map(|_| ov(rng.random(), rng.random())).collect();
        let d = crowding_distance(&front);
        let perm: Vec<usize> = vec![5, 0, 11, 3, 7, 1, 9, 2, 10, 4, 8, 6];
        let permuted: Vec<_> = perm.iter().map(|&i| front[i]).collect();
        let dp = crowding_distance(&permuted);
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(dp[k], d[i]);
        }
    }

    #[test]
    fn sbx_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = Genome::new(vec![0.3, 0.7, 0.1]);
        let (c1, c2) = sbx_crossover(&p, &p, 15.0, 1.0, &mut rng);
        assert_eq!((c1, c2), (p.clone(), p.clone()));
        for u in [0.0, 0.1, 0.5, 0.77, 0.999] {
            let (a, b) = sbx_gene_pair(0.2, 0.9, u, 15.0);
            assert!((a + b - 1.1).abs() < 1e-14);
        }
        let q = Genome::new(vec![0.9, 0.2, 0.5]);
        let run = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            sbx_crossover(&p, &q, 2.0, 1.0, &mut r)
        };
        assert_eq!(run(4), run(4));
        // Probability zero copies the parents.
        assert_eq!(sbx_crossover(&p, &q, 2.0, 0.0, &mut rng), (p.clone(), q.clone()));
    }

    #[test]
    fn mutation_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Genome::new(vec![0.0, 0.5, 1.0]);
        assert_eq!(polynomial_mutation(&g, 20.0, 0.0, &mut rng), g);
        for _ in 0..100_000 {
            let m = polynomial_mutation(&g, 1.0, 1.0, &mut rng);
            assert!(m.genes.iter().all(|x| (0.0..=1.0).contains(x)));
        }
        let run = |seed| polynomial_mutation(&g, 20.0, 0.5, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(run(2), run(2));
    }

    #[test]
    fn convergence_examples() {
        assert!(!convergence_check(&[1.0, 2.0, 3.0], 10, 1e-3));
        assert!(convergence_check(&[4.0; 10], 10, 1e-3));
        let mut h: Vec<f64> = (0..20).map(|i| i as f64).collect();
        h.extend((0..10).map(|i| 100.0 * (1.0 + 1e-4 * (i % 2) as f64)));
        assert!(convergence_check(&h, 10, 1e-3));
        // A single jump inside the window prevents convergence.
        h.push(101.0);
        assert!(!convergence_check(&h, 10, 1e-3));
        assert!(!convergence_check(&[], 1, 1e-3));
    }

    #[test]
    fn gain_decoding_is_log_linear() {
        let b = GainBounds::default();
        let g = Genome::new(vec![0.0, 1.0, 0.5, 0.5]).decode(&b);
        assert!((g.kp[0] - 1.0).abs() < 1e-12 && (g.kp[1] - 1000.0).abs() < 1e-9);
        assert!((g.kd[0] - 1.0).abs() < 1e-12 && (g.kd[1] - 1.0).abs() < 1e-12);
        let back = Genome::encode(&g, &b);
        for (x, y) in back.genes.iter().zip([0.0, 1.0, 0.5, 0.5]) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig::default().validate().is_ok());
        for bad in [
            GaConfig { population_size: 7, ..GaConfig::default() },
            GaConfig { population_size: 2, ..GaConfig::default() },
            GaConfig { crossover_probability: 1.5, ..GaConfig::default() },
            GaConfig { mutation_probability: Some(-0.1), ..GaConfig::default() },
            GaConfig { gain_bounds: GainBounds { kp: [10.0, 1.0], kd: [0.1, 1.0] }, ..GaConfig::default() },
        ] {
            assert!(matches!(bad.validate(), Err(MogaError::InvalidConfig(_))));
        }
    }

    fn schaffer(g: &Genome) -> ObjectiveVector {
        let x = 4.0 * g.genes[0] - 1.0;
        ov(x * x, (x - 2.0).powi(2))
    }

    #[test]
    fn run_bookkeeping_and_determinism() {
        let config = GaConfig { population_size: 12, max_generations: 15, rng_seed: 3, ..GaConfig::default() };
        let mut reports = Vec::new();
        let a = nsga2_run(&schaffer, 1, &config, |r| reports.push(r.clone())).unwrap();
        let b = nsga2_run(&schaffer, 1, &config, |_| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.evaluations_used, 12 * (a.generations_run + 1));
        assert_eq!(reports.len(), a.generations_run + 1);
        assert_eq!(a.hv_history.len(), a.generations_run + 1);
        assert!(a.hv_history.windows(2).all(|w| w[1] >= w[0]));
        assert!(crate::pareto::is_mutually_nondominated(&a.front.points));
        assert_eq!(a.front.genomes.as_ref().unwrap().len(), a.front.len());
    }

    #[test]
    fn penalties_never_reach_the_front() {
        let evaluator = |g: &Genome| {
            if g.genes[0] > 0.5 {
                ObjectiveVector::PENALTY
            } else {
                schaffer(g)
            }
        };
        let config = GaConfig { population_size: 10, max_generations: 10, ..GaConfig::default() };
        let r = nsga2_run(&evaluator, 1, &config, |_| {}).unwrap();
        assert!(!r.front.is_empty());
        assert!(r.front.points.iter().all(|p| !p.is_penalty()));
        assert!(r.reference.f_acc < 1e6);
    }

    #[test]
    fn invalid_config_is_reported() {
        let config = GaConfig { population_size: 5, ..GaConfig::default() };
        assert!(nsga2_run(&schaffer, 1, &config, |_| {}).is_err());
    }

    proptest! {
        #[test]
        fn sort_matches_oracle_with_ties(raw in prop::collection::vec((0u8..6, 0u8..6), 1..50)) {
            let objs: Vec<_> = raw.iter().map(|&(a, b)| ov(a as f64, b as f64)).collect();
            let fronts = sort_fronts(&objs);
            prop_assert_eq!(&fronts, &brute_fronts(&objs));
            let mut seen: Vec<usize> = fronts.concat();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..objs.len()).collect::<Vec<_>>());
        }
    }
}
