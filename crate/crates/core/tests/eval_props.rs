mod support {
    pub mod prf_oracle;
}

use proptest::prelude::*;
use strata::eval::{completion, tuple_prf, Expected};
use strata::schema::{FieldSpec, Granularity, Schema, Tier, ValueType};
use strata::ssr::parse_script;
use support::prf_oracle::{case, check};

#[test]
fn tuple_prf_matches_multiset_oracle() {
    for seed in 0..500 {
        check(&case(seed), 1e-12).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

proptest! {
    #[test]
    fn prf_is_row_permutation_invariant(seed in 0u64..10_000, rot in 0usize..12) {
        let c = case(seed);
        let base = tuple_prf(&c.result, &c.expected).unwrap();
        let mut result = c.result.clone();
        let n = result.rows.len();
        if n > 0 {
            result.rows.rotate_left(rot % n);
        }
        let mut rows = c.expected.rows.clone();
        rows.reverse();
        let expected = Expected::new(c.expected.columns.clone(), rows).unwrap();
        prop_assert_eq!(tuple_prf(&result, &expected).unwrap(), base);
    }

    #[test]
    fn f1_is_harmonic_mean(seed in 0u64..10_000) {
        let c = case(seed);
        let m = tuple_prf(&c.result, &c.expected).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.p) && (0.0..=1.0).contains(&m.r));
        if m.p + m.r > 0.0 {
            prop_assert!((m.f1 - 2.0 * m.p * m.r / (m.p + m.r)).abs() < 1e-15);
        } else {
            prop_assert_eq!(m.f1, 0.0);
        }
    }

    #[test]
    fn completion_is_monotone(mask in 0u8..32, extra in 0usize..5) {
        let names = ["court", "topic", "amount", "doc_type", "judge"];
        let fields = |m: u8| -> Vec<FieldSpec> {
            names.iter().enumerate().filter(|(i, _)| m & (1 << i) != 0)
                .map(|(_, n)| FieldSpec::new(n, ValueType::String, Tier::Sem)).collect()
        };
        let queries = [
            parse_script("SELECT court, judge FROM store WHERE topic = 'x'").unwrap(),
            parse_script("SELECT doc_id FROM store WHERE amount > 3 AND EXTRACT(y, 'contains:z')").unwrap(),
        ];
        let small = Schema::tiered("a", Granularity::Lite, fields(mask));
        let large = Schema::tiered("b", Granularity::Lite, fields(mask | (1 << extra)));
        prop_assert!(completion(&large, &queries).value >= completion(&small, &queries).value);
    }
}
