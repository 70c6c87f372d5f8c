//! Small mined field pool for comparing NSGA-II against exhaustive
//! enumeration. Shared by the core tests and the acceptance suite.

#![allow(dead_code)]

use strata::annotator::ExtractorRegistry;
use strata::corpus::{cluster_corpus, Corpus, Document, KMeansParams};
use strata::schemaboot::{exhaustive_front, mine_pool, nsga2_optimize, profile_pool, EvalContext, EvalSettings, MiningParams, Nsga2Params};
use strata::schema::FeasibilityLimits;

pub fn corpus() -> Corpus {
    let courts = ["High Court", "District Court", "Federal Court"];
    let topics = ["tax appeal of a trust", "merger approval dispute", "family property settlement", "criminal sentencing review"];
    let docs = (0..30)
        .map(|i| {
            let mut t = format!("Court: {}. ", courts[i % 3]);
            if i % 4 != 0 {
                t += &format!("Amount: ${},000. ", 10 + i * 7);
            }
            t += &format!("Topic: {}. ", topics[i % 4]);
            if i % 3 == 0 {
                t += &format!("Judge: Justice Number{} Smith. ", i % 5);
            }
            t += "The parties filed submissions and the matter proceeded to a hearing before the bench.";
            Document::new(format!("doc{i:02}"), t)
        })
        .collect();
    Corpus::from_documents(docs).unwrap()
}

pub fn context(limits: FeasibilityLimits) -> EvalContext {
    let c = corpus();
    let mut pool = mine_pool(c.docs(), 100, &MiningParams::default());
    pool.retain(|m| m.spec.name != "named_entities");
    let pool = profile_pool(&pool, c.docs(), true);
    assert_eq!(pool.len(), 4, "{:?}", pool.iter().map(|m| &m.spec.name).collect::<Vec<_>>());
    let labels = cluster_corpus(&c, 3, 1, KMeansParams::default()).unwrap().labels;
    let settings = EvalSettings {
        limits,
        history: vec!["cases in the high court".into(), "amount above 50000".into()],
        ..EvalSettings::default()
    };
    EvalContext::new(pool.into_iter().map(|m| m.spec).collect(), c.docs().to_vec(), labels, &ExtractorRegistry::default(), settings)
        .unwrap()
}

pub fn sorted(v: Vec<[f64; 3]>) -> Vec<[f64; 3]> {
    let mut v = v;
    v.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    v.dedup();
    v
}

/// Compare the NSGA-II front for `seed` with the enumerated front.
pub fn front_matches(ctx: &EvalContext, want: &[[f64; 3]], seed: u64) -> Result<(), String> {
    let params = Nsga2Params { pop_size: 16, generations: 25, rng_seed: seed, ..Nsga2Params::default() };
    let front = nsga2_optimize(ctx, &[], &params).map_err(|e| e.to_string())?;
    if !front.is_non_dominated() {
        return Err(format!("seed {seed}: front has dominated members"));
    }
    let got = sorted(front.objective_vectors());
    if got != want {
        return Err(format!("seed {seed}: {} members, enumeration has {}", got.len(), want.len()));
    }
    for m in &front.members {
        if m.quality_report.store_size_ratio > ctx.settings.limits.storage_ratio_rho || m.schema.hierarchy.depth() > 4 {
            return Err(format!("seed {seed}: infeasible member {}", m.schema.schema_id));
        }
    }
    Ok(())
}

/// The enumerated front with relaxed storage, as sorted objective vectors.
pub fn truth() -> (EvalContext, Vec<[f64; 3]>) {
    let ctx = context(FeasibilityLimits { storage_ratio_rho: 1.0, ..FeasibilityLimits::default() });
    let truth = exhaustive_front(&ctx).expect("enumeration");
    assert!(truth.is_non_dominated());
    let want = sorted(truth.objective_vectors());
    (ctx, want)
}
