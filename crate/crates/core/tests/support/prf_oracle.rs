//! Random (T, GT) tuple multisets and an independent sort-merge
//! intersection oracle for tuple precision and recall.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use strata::eval::Expected;
use strata::ssr::table::Column;
use strata::ssr::{Cell, ColumnKind, ResultTable};

pub struct PrfCase {
    pub result: ResultTable,
    pub expected: Expected,
    pub returned: Vec<Vec<i64>>,
    pub gold: Vec<Vec<i64>>,
}

/// Rows of small integers so duplicates and overlaps are common.
pub fn case(seed: u64) -> PrfCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = rng.gen_range(1..=3);
    let rows = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<i64>> {
        (0..n).map(|_| (0..width).map(|_| rng.gen_range(0..3)).collect()).collect()
    };
    let nt = rng.gen_range(0..12);
    let ng = rng.gen_range(0..12);
    let returned = rows(nt, &mut rng);
    let gold = rows(ng, &mut rng);
    let names: Vec<String> = (0..width).map(|i| format!("c{i}")).collect();
    let cells = |r: &Vec<Vec<i64>>| r.iter().map(|row| row.iter().map(|&v| Cell::Number(v as f64)).collect()).collect();
    let result = ResultTable {
        columns: names.iter().map(|n| Column { name: n.clone(), kind: ColumnKind::Dynamic }).collect(),
        rows: cells(&returned),
        provenance: vec![Vec::new(); returned.len()],
    };
    let expected = Expected::new(names, cells(&gold)).unwrap();
    PrfCase { result, expected, returned, gold }
}

/// Size of the multiset intersection by merging sorted copies.
pub fn intersection(a: &[Vec<i64>], b: &[Vec<i64>]) -> usize {
    let (mut a, mut b) = (a.to_vec(), b.to_vec());
    a.sort();
    b.sort();
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

/// Reference (p, r, f1) with the empty-result conventions.
pub fn oracle(c: &PrfCase) -> (f64, f64, f64) {
    let (nt, ng) = (c.returned.len(), c.gold.len());
    if nt == 0 {
        return if ng == 0 { (1.0, 1.0, 1.0) } else { (1.0, 0.0, 0.0) };
    }
    let hit = intersection(&c.returned, &c.gold) as f64;
    let p = hit / nt as f64;
    let r = if ng == 0 { 1.0 } else { hit / ng as f64 };
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f1)
}

/// Compare `tuple_prf` with the oracle to `tol`.
pub fn check(c: &PrfCase, tol: f64) -> Result<(), String> {
    let got = strata::eval::tuple_prf(&c.result, &c.expected).map_err(|e| e.to_string())?;
    let want = oracle(c);
    let diff = (got.p - want.0).abs().max((got.r - want.1).abs()).max((got.f1 - want.2).abs());
    if diff > tol {
        return Err(format!("got ({}, {}, {}), want {want:?}", got.p, got.r, got.f1));
    }
    Ok(())
}
