//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

#[path = "../../core/tests/support/nsga_case.rs"]
mod nsga_case;
#[path = "../../core/tests/support/prf_oracle.rs"]
mod prf_oracle;
#[path = "../../core/tests/support/ssr_gen.rs"]
mod ssr_gen;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use strata::annotator::{run_annotation, ExtractorRegistry};
use strata::corpus::{sha256_hex, Corpus, Document};
use strata::index::{build_store, AnnotationStore, FastPredicate, OpenOptions, SemMatch};
use strata::schema::{FeasibilityLimits, Schema, Tier, ValueType};
use strata::schemaboot::{estimate_costs, fleiss_kappa, information_gain_table};
use strata::ssr::{execute, parse_query, plan};
use strata::synth::{latency_corpus, planted_corpus};
use strata::value::Literal;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn cli(args: &[&str]) -> Result<String, String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = strata_cli::run_cli(std::iter::once("strata").chain(args.iter().copied()), &mut out, &mut err);
    if code != 0 {
        return Err(format!("`strata {}` exited {code}: {}", args.join(" "), String::from_utf8_lossy(&err)));
    }
    Ok(String::from_utf8_lossy(&out).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

fn retrieval_oracle() -> Outcome {
    let started = Instant::now();
    let mut non_empty = 0;
    for seed in 0..500 {
        let case = ssr_gen::case(seed);
        let (_, rows) = ssr_gen::check(&case)?;
        non_empty += usize::from(rows > 0);
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1} s"))?;
    Ok(format!("500/500 pairs equal the full scan ({non_empty} non-empty), {secs:.1} s"))
}

fn latency_structure() -> Outcome {
    let (corpus, schema) = latency_corpus(11, 1000, 50);
    let batch = run_annotation(&corpus, &schema, &ExtractorRegistry::default(), 4).map_err(|e| e.to_string())?;
    let store = build_store(&batch, &schema, &corpus, "").map_err(|e| e.to_string())?;
    let q = r"SELECT doc_id FROM store WHERE region = 'north' AND EXTRACT(y, 'regex:(\d+) years') AND EXTRACT(m, 'contains:merger')";
    let st = parse_query(q).map_err(|e| e.to_string())?;
    let pl = plan(&st.select, &store).map_err(|e| e.to_string())?;
    let (table, prof) = execute(&pl, &store).map_err(|e| e.to_string())?;
    let k = pl.extract_count();
    ensure(prof.candidate_count == 50, || format!("n = {}", prof.candidate_count))?;
    ensure(prof.extract_invocations == 50 * k, || format!("{} invocations for k = {k}", prof.extract_invocations))?;
    ensure(table.len() == 50, || format!("{} rows", table.len()))?;
    Ok(format!("n = 50, extract_invocations = {} = 50 x {k}", prof.extract_invocations))
}

fn nsga_front() -> Outcome {
    let started = Instant::now();
    let (ctx, want) = nsga_case::truth();
    for seed in 0..20 {
        nsga_case::front_matches(&ctx, &want, seed)?;
    }
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1} s"))?;
    Ok(format!("20/20 seeds reproduce the {}-member enumerated front, {secs:.1} s", want.len()))
}

fn induce_constraints() -> Outcome {
    let demo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/demo/corpus.jsonl");
    let corpus = strata::corpus::load_corpus(&demo).map_err(|e| e.to_string())?;
    let limits = FeasibilityLimits::default();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut worst = (0usize, 0usize, 0.0f64, 0.0f64);
    for seed in 0..10u64 {
        let out = dir.path().join(format!("s{seed}"));
        cli(&["--seed", &seed.to_string(), "induce", "--corpus", p(&demo), "--out", p(&out)])?;
        let text = fs::read_to_string(out.join("schema.json")).map_err(|e| e.to_string())?;
        let schema = Schema::from_json(&text).map_err(|e| e.to_string())?;
        let (depth, branching) = (schema.hierarchy.depth(), schema.hierarchy.branching_factor());
        let (t, ratio) = estimate_costs(&schema, &corpus, &ExtractorRegistry::default()).map_err(|e| e.to_string())?;
        ensure(depth <= limits.max_depth && branching <= limits.max_branching, || {
            format!("seed {seed}: depth {depth}, branching {branching}")
        })?;
        ensure(t <= limits.t_max_seconds && ratio <= limits.storage_ratio_rho, || {
            format!("seed {seed}: t_annot {t:.6} s, ratio {ratio:.4}")
        })?;
        worst = (worst.0.max(depth), worst.1.max(branching), worst.2.max(t), worst.3.max(ratio));
    }
    Ok(format!(
        "10/10 runs feasible; max depth {}, branching {}, t_annot {:.6} s, ratio {:.4}",
        worst.0, worst.1, worst.2, worst.3
    ))
}

fn metric_fidelity() -> Outcome {
    for seed in 0..100 {
        prf_oracle::check(&prf_oracle::case(seed), 1e-12).map_err(|e| format!("tuple_prf seed {seed}: {e}"))?;
    }
    // Reference values from hand arithmetic over the category counts.
    let big = vec![
        vec![0, 0, 0, 0, 14],
        vec![0, 2, 6, 4, 2],
        vec![0, 0, 3, 5, 6],
        vec![0, 3, 9, 2, 0],
        vec![2, 2, 8, 1, 1],
        vec![7, 7, 0, 0, 0],
        vec![3, 2, 6, 3, 0],
        vec![2, 5, 3, 2, 2],
        vec![6, 5, 2, 1, 0],
        vec![0, 2, 2, 3, 7],
    ];
    let kappa: [(Vec<Vec<usize>>, f64); 5] = [
        (big, 0.20993070442195524),
        (vec![vec![3, 0], vec![2, 1], vec![1, 2], vec![0, 3]], 1.0 / 3.0),
        (vec![vec![3, 0], vec![3, 0], vec![0, 3], vec![0, 3]], 1.0),
        (vec![vec![2, 1], vec![1, 2], vec![2, 1], vec![1, 2]], -1.0 / 3.0),
        (vec![vec![4, 0, 0], vec![2, 2, 0], vec![1, 1, 2], vec![0, 0, 4], vec![3, 1, 0]], 11.0 / 31.0),
    ];
    for (i, (t, want)) in kappa.iter().enumerate() {
        let k = fleiss_kappa(t).map_err(|e| e.to_string())?.kappa;
        ensure((k - want).abs() <= 1e-9, || format!("kappa table {i}: {k} vs {want}"))?;
    }
    // Rows are bins, columns labels. IG = H(labels) - sum over bins of p(b) H(labels | b).
    let ig: [(Vec<Vec<usize>>, f64); 5] = [
        (vec![vec![2, 0], vec![0, 2]], 1.0),
        (vec![vec![2, 1], vec![0, 1]], 0.31127812445913283),
        (vec![vec![1, 1], vec![1, 1]], 0.0),
        (vec![vec![3, 0, 0], vec![1, 2, 0], vec![0, 1, 3]], 0.9709505944546685),
        (vec![vec![5, 1], vec![2, 2], vec![0, 3], vec![1, 0]], 0.42093281247067116),
    ];
    for (i, (t, want)) in ig.iter().enumerate() {
        let (got, _) = information_gain_table(t);
        ensure((got - want).abs() <= 1e-9, || format!("IG table {i}: {got} vs {want}"))?;
    }
    Ok("tuple_prf 100/100 to 1e-12, Fleiss kappa 5/5 and IG 5/5 to 1e-9".into())
}

fn dir_hash(dir: &Path) -> Result<String, String> {
    let mut names: Vec<_> = fs::read_dir(dir).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let mut all = Vec::new();
    for n in names {
        all.extend_from_slice(n.to_string_lossy().as_bytes());
        all.push(0);
        all.extend(fs::read(dir.join(&n)).map_err(|e| e.to_string())?);
        all.push(0);
    }
    Ok(sha256_hex(&all))
}

struct BenchRuns {
    _dir: tempfile::TempDir,
    runs: Vec<std::path::PathBuf>,
    first_seconds: f64,
}

fn bench_runs() -> Result<BenchRuns, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    cli(&["--seed", "42", "synth", "--out", p(&data), "--docs", "200"])?;
    let mut runs = Vec::new();
    let mut first_seconds = 0.0;
    for i in 0..2 {
        let out = dir.path().join(format!("run{i}"));
        let started = Instant::now();
        cli(&[
            "--seed", "42", "bench", "--corpus", p(&data.join("corpus.jsonl")), "--gold", p(&data.join("gold")),
            "--out", p(&out),
        ])?;
        if i == 0 {
            first_seconds = started.elapsed().as_secs_f64();
        }
        runs.push(out);
    }
    Ok(BenchRuns { _dir: dir, runs, first_seconds })
}

fn planted_benchmark(b: &BenchRuns) -> Outcome {
    let gold = planted_corpus(42, 200).gold;
    let kinds = ["join", "script"].map(|k| gold.queries.iter().filter(|q| q.id.contains(k)).count());
    ensure(gold.queries.len() == 20 && kinds == [1, 1], || format!("gold has {} queries", gold.queries.len()))?;
    let text = fs::read_to_string(b.runs[0].join("report.json")).map_err(|e| e.to_string())?;
    let r: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let (f1, sf1, comp) =
        (r["macro_f1"].as_f64().unwrap_or(0.0), r["schema_f1"].as_f64().unwrap_or(0.0), r["completion"]["value"].as_f64().unwrap_or(0.0));
    ensure(f1 >= 0.95, || format!("macro-F1 {f1}"))?;
    ensure(sf1 >= 0.8, || format!("schema_f1 {sf1}"))?;
    ensure(comp == 1.0, || format!("completion {comp}"))?;
    ensure(b.first_seconds < 120.0, || format!("took {:.1} s", b.first_seconds))?;
    Ok(format!("macro-F1 {f1:.4}, schema_f1 {sf1:.4}, completion {comp}, {:.1} s", b.first_seconds))
}

fn determinism(b: &BenchRuns) -> Outcome {
    for f in ["schema.json", "report.json"] {
        let a = fs::read(b.runs[0].join(f)).map_err(|e| e.to_string())?;
        let c = fs::read(b.runs[1].join(f)).map_err(|e| e.to_string())?;
        ensure(a == c, || format!("{f} differs"))?;
    }
    let (h0, h1) = (dir_hash(&b.runs[0].join("store"))?, dir_hash(&b.runs[1].join("store"))?);
    ensure(h0 == h1, || format!("store hashes {h0} vs {h1}"))?;
    Ok(format!("schema.json, report.json and store {} identical", &h0[..12]))
}

fn same_lookups(a: &AnnotationStore, b: &AnnotationStore) -> Result<usize, String> {
    ensure(a.doc_ids() == b.doc_ids(), || "doc ids differ".into())?;
    let mut checked = 0;
    for f in a.schema().fields.clone() {
        for row in 0..a.len() as u32 {
            ensure(a.field_values(row, &f.name) == b.field_values(row, &f.name), || format!("{} row {row}", f.name))?;
            for v in a.field_values(row, &f.name) {
                let (x, y) = match f.tier {
                    Tier::Fast => {
                        let lit = match v.parse::<f64>() {
                            Ok(n) if f.value_type == ValueType::Number => Literal::Num(n),
                            _ => Literal::Str(v.clone()),
                        };
                        let pred = FastPredicate::In(vec![lit]);
                        (a.lookup_fast(&f.name, &pred), b.lookup_fast(&f.name, &pred))
                    }
                    Tier::Sem => {
                        let m = SemMatch::Equals(v.clone());
                        (a.lookup_sem(&f.name, &m), b.lookup_sem(&f.name, &m))
                    }
                    // detail fields are scanned, not indexed; value equality above covers them
                    Tier::Detail => continue,
                };
                let (x, y) = (x.map_err(|e| e.to_string())?, y.map_err(|e| e.to_string())?);
                ensure(x == y, || format!("lookup {} = {v:?} differs", f.name))?;
                checked += 1;
            }
        }
    }
    Ok(checked)
}

fn persist_roundtrip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lookups = 0;
    for seed in 0..50u64 {
        let case = ssr_gen::case(10_000 + seed);
        let path = dir.path().join(format!("s{seed}"));
        case.store.persist(&path).map_err(|e| e.to_string())?;
        let mut back = AnnotationStore::open(&path, &OpenOptions::default()).map_err(|e| e.to_string())?;
        let corpus = Corpus::from_documents(case.docs.iter().map(|d| Document::new(d.id.clone(), d.text.clone())).collect())
            .map_err(|e| e.to_string())?;
        back.attach_texts(&corpus);
        lookups += same_lookups(&case.store, &back).map_err(|e| format!("seed {seed}: {e}"))?;
        let st = parse_query(&case.query).map_err(|e| e.to_string())?;
        let run = |s: &AnnotationStore| plan(&st.select, s).and_then(|p| execute(&p, s)).map(|(t, _)| t.tuples());
        ensure(run(&case.store).map_err(|e| e.to_string())? == run(&back).map_err(|e| e.to_string())?, || {
            format!("seed {seed}: query results differ after reopen")
        })?;
    }
    Ok(format!("50/50 stores reopen with identical values, {lookups} lookups and query results"))
}

fn main() {
    let mut failed = 0;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(msg) => println!("PASS  {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}: {msg}");
            }
        }
    };
    report("retrieval equals full-scan oracle", &mut retrieval_oracle);
    report("latency model n and extract invocations", &mut latency_structure);
    report("NSGA-II front equals brute force", &mut nsga_front);
    report("induced schemas respect constraints", &mut induce_constraints);
    report("metric fidelity", &mut metric_fidelity);
    match bench_runs() {
        Ok(b) => {
            report("planted end-to-end benchmark", &mut || planted_benchmark(&b));
            report("pipeline determinism", &mut || determinism(&b));
        }
        Err(e) => {
            report("planted end-to-end benchmark", &mut || Err(e.clone()));
            report("pipeline determinism", &mut || Err(e.clone()));
        }
    }
    report("persist and open preserve lookups", &mut persist_roundtrip);
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
