//! NSGA-II over field-inclusion genomes, with constrained dominance and an
//! archive of every feasible evaluation.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evaluate::{EvalContext, Evaluation, Gene};
use super::SchemabootError;
use crate::schema::{Schema, Tier};

/// `a` dominates `b` under maximization on every axis.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x >= y) && a.iter().zip(b).any(|(x, y)| x > y)
}

/// Fronts of a population, best first, by plain Pareto dominance.
pub fn non_dominated_sort(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    sort_by_relation(points.len(), |a, b| dominates(&points[a], &points[b]))
}

fn sort_by_relation(n: usize, dom: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let mut dominated_by = vec![0usize; n];
    let mut dominating: Vec<Vec<usize>> = vec![Vec::new(); n];
    for a in 0..n {
        for b in 0..n {
            if a != b && dom(a, b) {
                dominating[a].push(b);
                dominated_by[b] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| dominated_by[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &a in &current {
            for &b in &dominating[a] {
                dominated_by[b] -= 1;
                if dominated_by[b] == 0 {
                    next.push(b);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of a front.
pub fn crowding_distance(front: &[Vec<f64>]) -> Vec<f64> {
    let n = front.len();
    let mut dist = vec![0.0; n];
    if n == 0 {
        return dist;
    }
    let m = front[0].len();
    for k in 0..m {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| front[a][k].total_cmp(&front[b][k]).then(a.cmp(&b)));
        let (lo, hi) = (front[order[0]][k], front[order[n - 1]][k]);
        dist[order[0]] = f64::INFINITY;
        dist[order[n - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for w in 1..n.saturating_sub(1) {
            let gap = front[order[w + 1]][k] - front[order[w - 1]][k];
            dist[order[w]] += gap / span;
        }
    }
    dist
}

/// Constrained dominance: feasible beats infeasible, less violation beats
/// more, and Pareto dominance decides between feasible solutions.
pub fn constrained_dominates(a: &Evaluation, b: &Evaluation) -> bool {
    match (a.feasible(), b.feasible()) {
        (true, false) => true,
        (false, true) => false,
        (false, false) => a.violation < b.violation,
        (true, true) => dominates(&a.objectives, &b.objectives),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Nsga2Params {
    pub pop_size: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability; `None` means 1 / pool size.
    pub mutation_rate: Option<f64>,
    pub rng_seed: u64,
    /// Subgroups a tier may be split into (0 keeps fields directly under
    /// the tier group).
    pub max_groups: usize,
}

impl Default for Nsga2Params {
    fn default() -> Self {
        Nsga2Params {
            pop_size: 32,
            generations: 30,
            crossover_rate: 0.9,
            mutation_rate: None,
            rng_seed: 0,
            max_groups: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Genome {
    pub include: Vec<bool>,
    /// 0 fast, 1 sem, 2 detail.
    pub tier: Vec<u8>,
    pub group: Vec<u8>,
}

const TIERS: [Tier; 3] = [Tier::Fast, Tier::Sem, Tier::Detail];

fn tier_code(t: Tier) -> u8 {
    TIERS.iter().position(|x| *x == t).unwrap() as u8
}

impl Genome {
    pub fn genes(&self) -> Vec<Gene> {
        (0..self.include.len())
            .filter(|&i| self.include[i])
            .map(|i| (i, TIERS[self.tier[i] as usize % 3], self.group[i] as usize))
            .collect()
    }

    /// The genome of an explicit schema over `pool` (fields outside the pool
    /// are ignored).
    pub fn of_schema(schema: &Schema, pool: &[crate::schema::FieldSpec]) -> Genome {
        let mut g = Genome { include: vec![false; pool.len()], tier: vec![0; pool.len()], group: vec![0; pool.len()] };
        for (i, p) in pool.iter().enumerate() {
            if let Some(f) = schema.field(&p.name) {
                g.include[i] = true;
                g.tier[i] = tier_code(f.tier);
            } else {
                g.tier[i] = tier_code(p.tier);
            }
        }
        g
    }

    fn random(n: usize, max_groups: usize, rng: &mut ChaCha8Rng) -> Genome {
        Genome {
            include: (0..n).map(|_| rng.gen_bool(0.5)).collect(),
            tier: (0..n).map(|_| rng.gen_range(0..3)).collect(),
            group: (0..n).map(|_| rng.gen_range(0..=max_groups) as u8).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontMember {
    pub schema: Schema,
    pub objectives: [f64; 3],
    pub quality_report: crate::schemaboot::QualityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ParetoFront {
    pub members: Vec<FrontMember>,
}

impl ParetoFront {
    pub fn objective_vectors(&self) -> Vec<[f64; 3]> {
        self.members.iter().map(|m| m.objectives).collect()
    }

    /// Pairwise non-dominance, checked by brute force.
    pub fn is_non_dominated(&self) -> bool {
        let v = self.objective_vectors();
        v.iter().all(|a| v.iter().all(|b| !dominates(b, a)))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable") + "\n"
    }
}

/// Non-dominated feasible evaluations, one per (field, tier) set, ordered
/// by descending quality then schema id.
fn front_of(evals: impl IntoIterator<Item = (Vec<Gene>, Evaluation)>) -> ParetoFront {
    let mut by_fields: BTreeMap<Vec<(usize, Tier)>, (Vec<Gene>, Evaluation)> = BTreeMap::new();
    for (genes, e) in evals {
        if !e.feasible() {
            continue;
        }
        let key: Vec<(usize, Tier)> = genes.iter().map(|g| (g.0, g.1)).collect();
        match by_fields.get(&key) {
            Some((g, _)) if *g <= genes => {}
            _ => {
                by_fields.insert(key, (genes, e));
            }
        }
    }
    let all: Vec<Evaluation> = by_fields.into_values().map(|(_, e)| e).collect();
    let mut members: Vec<FrontMember> = all
        .iter()
        .filter(|a| !all.iter().any(|b| dominates(&b.objectives, &a.objectives)))
        .map(|e| FrontMember {
            schema: e.schema.clone(),
            objectives: e.objectives,
            quality_report: e.report.clone().expect("feasible evaluations carry reports"),
        })
        .collect();
    members.sort_by(|a, b| b.objectives[0].total_cmp(&a.objectives[0]).then(a.schema.schema_id.cmp(&b.schema.schema_id)));
    ParetoFront { members }
}

fn no_feasible(evals: &[(Vec<Gene>, Evaluation)]) -> SchemabootError {
    let best = evals.iter().min_by(|a, b| a.1.violation.total_cmp(&b.1.violation).then(a.0.cmp(&b.0)));
    SchemabootError::NoFeasibleSchema { reasons: best.map(|b| b.1.reasons.clone()).unwrap_or_default() }
}

/// Front of every (non-empty) inclusion mask and tier assignment, groups
/// fixed at 0. Exponential; meant for small pools.
pub fn exhaustive_front(ctx: &EvalContext) -> Result<ParetoFront, SchemabootError> {
    let n = ctx.pool.len();
    let mut all = Vec::new();
    for mask in 1u64..(1u64 << n) {
        let idx: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let combos = 3usize.pow(idx.len() as u32);
        for mut c in 0..combos {
            let genes: Vec<Gene> = idx
                .iter()
                .map(|&i| {
                    let t = TIERS[c % 3];
                    c /= 3;
                    (i, t, 0)
                })
                .collect();
            let e = ctx.evaluate(&genes)?;
            all.push((genes, e));
        }
    }
    let front = front_of(all.iter().cloned());
    if front.members.is_empty() {
        return Err(no_feasible(&all));
    }
    Ok(front)
}

const NOVELTY_RETRIES: usize = 8;

fn field_key(genes: &[Gene]) -> Vec<(usize, Tier)> {
    genes.iter().map(|g| (g.0, g.1)).collect()
}

struct Individual {
    genome: Genome,
    eval: Evaluation,
}

fn evaluate_all(ctx: &EvalContext, genomes: Vec<Genome>) -> Result<Vec<Individual>, SchemabootError> {
    genomes
        .into_par_iter()
        .map(|g| {
            let eval = ctx.evaluate(&g.genes())?;
            Ok(Individual { genome: g, eval })
        })
        .collect()
}

/// Rank (front index) and crowding distance of each individual.
fn rank_and_crowd(pop: &[Individual]) -> (Vec<Vec<usize>>, Vec<usize>, Vec<f64>) {
    let fronts = sort_by_relation(pop.len(), |a, b| constrained_dominates(&pop[a].eval, &pop[b].eval));
    let mut rank = vec![0; pop.len()];
    let mut crowd = vec![0.0; pop.len()];
    for (r, f) in fronts.iter().enumerate() {
        let objs: Vec<Vec<f64>> = f.iter().map(|&i| pop[i].eval.objectives.to_vec()).collect();
        for (&i, d) in f.iter().zip(crowding_distance(&objs)) {
            rank[i] = r;
            crowd[i] = d;
        }
    }
    (fronts, rank, crowd)
}

fn better(a: usize, b: usize, rank: &[usize], crowd: &[f64]) -> bool {
    match rank[a].cmp(&rank[b]) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => crowd[a] > crowd[b] || (crowd[a] == crowd[b] && a < b),
    }
}

pub fn nsga2_optimize(
    ctx: &EvalContext,
    seeds: &[Genome],
    params: &Nsga2Params,
) -> Result<ParetoFront, SchemabootError> {
    if params.pop_size < 4 || params.pop_size % 2 == 1 {
        return Err(SchemabootError::InvalidParams(format!("pop_size {} must be even and at least 4", params.pop_size)));
    }
    if params.generations == 0 {
        return Err(SchemabootError::InvalidParams("generations must be at least 1".into()));
    }
    let n = ctx.pool.len();
    if n == 0 {
        return Err(SchemabootError::EmptyPool);
    }
    let mutation = params.mutation_rate.unwrap_or(1.0 / n as f64).clamp(0.0, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut seen: BTreeMap<Vec<(usize, Tier)>, ()> = BTreeMap::new();
    let mut archive: Vec<(Vec<Gene>, Evaluation)> = Vec::new();
    let mut archived: BTreeMap<Vec<Gene>, ()> = BTreeMap::new();

    let mut initial: Vec<Genome> = Vec::new();
    for s in seeds {
        if initial.len() < params.pop_size && !initial.contains(s) {
            initial.push(s.clone());
        }
    }
    while initial.len() < params.pop_size {
        initial.push(Genome::random(n, params.max_groups, &mut rng));
    }
    let mut pop = evaluate_all(ctx, initial)?;
    for ind in &pop {
        seen.insert(field_key(&ind.genome.genes()), ());
        if archived.insert(ind.genome.genes(), ()).is_none() {
            archive.push((ind.genome.genes(), ind.eval.clone()));
        }
    }

    for _ in 0..params.generations {
        let (_, rank, crowd) = rank_and_crowd(&pop);
        let tournament = |rng: &mut ChaCha8Rng| {
            let a = rng.gen_range(0..pop.len());
            let b = rng.gen_range(0..pop.len());
            if better(a, b, &rank, &crowd) {
                a
            } else {
                b
            }
        };
        let mut children = Vec::with_capacity(params.pop_size);
        while children.len() < params.pop_size {
            let p1 = pop[tournament(&mut rng)].genome.clone();
            let p2 = pop[tournament(&mut rng)].genome.clone();
            let (mut c1, mut c2) = (p1.clone(), p2.clone());
            if rng.gen_bool(params.crossover_rate.clamp(0.0, 1.0)) {
                for i in 0..n {
                    if rng.gen_bool(0.5) {
                        std::mem::swap(&mut c1.include[i], &mut c2.include[i]);
                        std::mem::swap(&mut c1.tier[i], &mut c2.tier[i]);
                        std::mem::swap(&mut c1.group[i], &mut c2.group[i]);
                    }
                }
            }
            for c in [c1, c2] {
                let mut c = c;
                // retry with stronger mutation to avoid re-evaluating known field sets
                for attempt in 0..NOVELTY_RETRIES {
                    let mut m = c.clone();
                    let rate = (mutation * (attempt + 1) as f64).min(1.0);
                    mutate(&mut m, rate, params.max_groups, &mut rng);
                    let known = seen.contains_key(&field_key(&m.genes()));
                    if !known || attempt + 1 == NOVELTY_RETRIES {
                        c = m;
                        break;
                    }
                }
                children.push(c);
            }
        }
        let offspring = evaluate_all(ctx, children)?;
        for ind in &offspring {
            seen.insert(field_key(&ind.genome.genes()), ());
            if archived.insert(ind.genome.genes(), ()).is_none() {
                archive.push((ind.genome.genes(), ind.eval.clone()));
            }
        }
        pop.extend(offspring);
        let (fronts, _, _) = rank_and_crowd(&pop);
        let mut keep: Vec<usize> = Vec::with_capacity(params.pop_size);
        for f in fronts {
            if keep.len() + f.len() <= params.pop_size {
                keep.extend(f);
                continue;
            }
            let objs: Vec<Vec<f64>> = f.iter().map(|&i| pop[i].eval.objectives.to_vec()).collect();
            let d = crowding_distance(&objs);
            let mut order: Vec<usize> = (0..f.len()).collect();
            order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(f[a].cmp(&f[b])));
            keep.extend(order.into_iter().take(params.pop_size - keep.len()).map(|j| f[j]));
            break;
        }
        keep.sort_unstable();
        let mut slots: Vec<Option<Individual>> = pop.into_iter().map(Some).collect();
        pop = keep.into_iter().map(|i| slots[i].take().expect("kept once")).collect();
    }

    let front = front_of(archive.iter().cloned());
    if front.members.is_empty() {
        return Err(no_feasible(&archive));
    }
    Ok(front)
}

fn mutate(g: &mut Genome, rate: f64, max_groups: usize, rng: &mut ChaCha8Rng) {
    for i in 0..g.include.len() {
        if rng.gen_bool(rate) {
            match rng.gen_range(0..3) {
                0 => g.include[i] = !g.include[i],
                1 => g.tier[i] = (g.tier[i] + rng.gen_range(1..3)) % 3,
                _ => g.group[i] = rng.gen_range(0..=max_groups) as u8,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarWeights {
    pub q: f64,
    pub t: f64,
    pub s: f64,
}

impl Default for ScalarWeights {
    fn default() -> Self {
        ScalarWeights { q: 0.6, t: 0.2, s: 0.2 }
    }
}

/// Scalarization score of each member after per-objective min-max
/// normalization of the (maximized) objectives.
pub fn scalarize(objectives: &[[f64; 3]], w: &ScalarWeights) -> Vec<f64> {
    let weights = [w.q, w.t, w.s];
    let mut score = vec![0.0; objectives.len()];
    for k in 0..3 {
        let lo = objectives.iter().map(|o| o[k]).fold(f64::INFINITY, f64::min);
        let hi = objectives.iter().map(|o| o[k]).fold(f64::NEG_INFINITY, f64::max);
        for (s, o) in score.iter_mut().zip(objectives) {
            let norm = if hi > lo { (o[k] - lo) / (hi - lo) } else { 0.0 };
            *s += weights[k] * norm;
        }
    }
    score
}

/// Index of the selected front member: best scalarization, then fewer
/// fields, then smaller schema id.
pub fn select_index(front: &ParetoFront, w: &ScalarWeights) -> Option<usize> {
    let scores = scalarize(&front.objective_vectors(), w);
    (0..front.members.len()).min_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(front.members[a].schema.fields.len().cmp(&front.members[b].schema.fields.len()))
            .then(front.members[a].schema.schema_id.cmp(&front.members[b].schema.schema_id))
    })
}

pub fn select_schema(front: &ParetoFront, w: &ScalarWeights) -> Option<Schema> {
    select_index(front, w).map(|i| front.members[i].schema.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorting_small_cases() {
        assert_eq!(non_dominated_sort(&[vec![1.0, 1.0, 1.0], vec![0.0, 0.0, 0.0]]), vec![vec![0], vec![1]]);
        let flat = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(non_dominated_sort(&flat), vec![vec![0, 1, 2]]);
    }

    fn brute_fronts(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
        let mut left: Vec<usize> = (0..points.len()).collect();
        let mut out = Vec::new();
        while !left.is_empty() {
            let front: Vec<usize> = left
                .iter()
                .copied()
                .filter(|&a| !left.iter().any(|&b| {
                    points[b].iter().zip(&points[a]).all(|(x, y)| x >= y) && points[b] != points[a]
                }))
                .collect();
            left.retain(|i| !front.contains(i));
            out.push(front);
        }
        out
    }

    #[test]
    fn sorting_matches_brute_force() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pts: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.gen_range(0..5) as f64).collect()).collect();
            assert_eq!(non_dominated_sort(&pts), brute_fronts(&pts), "seed {seed}");
        }
    }

    #[test]
    fn crowding_cases() {
        assert!(crowding_distance(&[vec![0.0, 1.0], vec![1.0, 0.0]]).iter().all(|d| d.is_infinite()));
        // one axis varies evenly, the others are constant: the middle point
        // spans the full range once per varying axis
        let line = vec![vec![0.0, 5.0, 5.0], vec![1.0, 5.0, 5.0], vec![2.0, 5.0, 5.0]];
        assert_eq!(crowding_distance(&line)[1], 1.0);
        let diag = vec![vec![0.0, 2.0, 0.0], vec![1.0, 1.0, 1.0], vec![2.0, 0.0, 2.0]];
        assert_eq!(crowding_distance(&diag)[1], 3.0);
        let dup = vec![vec![0.0], vec![1.0], vec![1.0], vec![1.0], vec![2.0]];
        let d = crowding_distance(&dup);
        assert!(d[1..4].iter().all(|x| x.is_finite()));
        assert_eq!(d[2], 0.0);
    }

    fn member(id: &str, fields: usize, o: [f64; 3]) -> FrontMember {
        let specs = (0..fields)
            .map(|i| crate::schema::FieldSpec::new(&format!("f{i}"), crate::schema::ValueType::Number, Tier::Fast))
            .collect();
        let schema = Schema::tiered(id, crate::schema::Granularity::Evolved, specs);
        let report = crate::schemaboot::metrics::quality(
            &Default::default(),
            Default::default(),
            -o[1],
            -o[2],
            vec![],
        )
        .unwrap();
        FrontMember { schema, objectives: o, quality_report: report }
    }

    #[test]
    fn selection() {
        let single = ParetoFront { members: vec![member("a", 1, [0.5, -1.0, -0.1])] };
        assert_eq!(select_index(&single, &ScalarWeights::default()), Some(0));

        // normalized: a = (1, 0, 0) -> 0.6; b = (0.5, 0.5, 1) -> 0.6;
        // c = (0, 1, 0.5) -> 0.3. a and b tie; b has fewer fields.
        let front = ParetoFront {
            members: vec![
                member("a", 3, [0.9, -3.0, -0.3]),
                member("b", 2, [0.8, -2.0, -0.1]),
                member("c", 1, [0.7, -1.0, -0.2]),
            ],
        };
        let s = scalarize(&front.objective_vectors(), &ScalarWeights::default());
        assert!((s[0] - 0.6).abs() < 1e-12 && (s[1] - 0.6).abs() < 1e-12 && (s[2] - 0.3).abs() < 1e-12);
        assert_eq!(select_index(&front, &ScalarWeights::default()), Some(1));

        // rescaling an objective's raw range does not move the argmax
        let w = ScalarWeights { q: 0.5, t: 0.3, s: 0.2 };
        let scaled = ParetoFront {
            members: front
                .members
                .iter()
                .map(|m| member(&m.schema.schema_id, m.schema.fields.len(), [m.objectives[0] * 10.0, m.objectives[1] * 0.01, m.objectives[2]]))
                .collect(),
        };
        assert_eq!(select_index(&front, &w), select_index(&scaled, &w));

        let best = ParetoFront {
            members: vec![member("x", 2, [0.9, -1.0, -0.1]), member("y", 1, [0.5, -2.0, -0.2])],
        };
        assert_eq!(select_index(&best, &ScalarWeights { q: 0.1, t: 0.1, s: 0.8 }), Some(0));
    }
}
