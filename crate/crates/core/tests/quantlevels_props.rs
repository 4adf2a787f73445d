mod common;

use common::{pow2, random_level_set, random_value, scan_quantize};
use inqkit::{LevelSet, QuantCode};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn level_set() -> impl Strategy<Value = LevelSet> {
    (2u32..=16).prop_flat_map(|b| {
        let lo = (LevelSet::exponent_count(b) - 1 - 32768).max(-140);
        (Just(b), lo..=127i32).prop_map(|(b, n1)| LevelSet::new(b, n1).unwrap())
    })
}

fn finite_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        any::<f32>().prop_filter("finite", |v| v.is_finite()),
        -8.0f32..8.0,
        Just(0.0f32),
        Just(-0.0f32),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn matches_interval_scan(ls in level_set(), w in finite_f32()) {
        let q = ls.quantize(w).unwrap();
        prop_assert_eq!(q as f64, scan_quantize(w, ls.n1(), ls.n2()));
    }

    #[test]
    fn idempotent(ls in level_set(), w in finite_f32()) {
        let q = ls.quantize(w).unwrap();
        prop_assert_eq!(ls.quantize(q).unwrap().to_bits(), q.to_bits());
    }

    #[test]
    fn sign_equivariant(ls in level_set(), w in finite_f32()) {
        let a = ls.quantize(w).unwrap();
        let b = ls.quantize(-w).unwrap();
        prop_assert_eq!(a, -b);
    }

    #[test]
    fn monotone_in_magnitude(ls in level_set(), a in finite_f32(), b in finite_f32()) {
        let (small, large) = if a.abs() <= b.abs() { (a, b) } else { (b, a) };
        prop_assert!(ls.quantize(small).unwrap().abs() <= ls.quantize(large).unwrap().abs());
    }

    #[test]
    fn output_range(ls in level_set(), w in finite_f32()) {
        let q = ls.quantize(w).unwrap().abs() as f64;
        prop_assert!(q == 0.0 || (pow2(ls.n2()) <= q && q <= pow2(ls.n1())));
        if q != 0.0 {
            // a single power of two
            prop_assert_eq!(q.to_bits() & ((1u64 << 52) - 1), 0);
        }
    }

    #[test]
    fn code_budget(ls in level_set()) {
        let k = ls.n1() - ls.n2() + 1;
        prop_assert_eq!(k, (1i32 << (ls.bit_width() - 1)) - 1);
    }

    #[test]
    fn encode_decode_bijection(ls in level_set(), w in finite_f32()) {
        let q = ls.quantize(w).unwrap();
        let code = ls.encode(q).unwrap();
        prop_assert_eq!(ls.decode(code).unwrap().to_bits(), q.to_bits());
        let bits = code.to_bits(ls.bit_width());
        prop_assert!(bits < (1u32 << ls.bit_width()));
        prop_assert_eq!(QuantCode::from_bits(bits, ls.bit_width()), Some(code));
    }
}

#[test]
fn every_code_decodes_to_a_distinct_level() {
    for b in 2..=10 {
        let ls = LevelSet::new(b, 100).unwrap();
        let mut seen = std::collections::HashSet::new();
        for bits in 0..(1u32 << b) {
            let Some(code) = QuantCode::from_bits(bits, b) else {
                // only the negative zero pattern is unused
                assert_eq!(bits, 1 << (b - 1));
                continue;
            };
            if !code.is_zero() && ls.exponent_of(code).unwrap() < -149 {
                // below the f32 range: never produced by quantize
                assert!(ls.decode(code).is_err());
                continue;
            }
            let v = ls.decode(code).unwrap();
            assert!(seen.insert(v.to_bits()), "b={b} bits={bits:b}");
            assert_eq!(ls.encode(v).unwrap(), code);
        }
        let representable = (ls.n2().max(-149)..=ls.n1()).count();
        assert_eq!(seen.len(), 1 + 2 * representable);
        if b <= 8 {
            assert_eq!(seen.len(), (1 << b) - 1);
        }
    }
}

#[test]
fn non_levels_rejected() {
    let ls = LevelSet::new(3, 0).unwrap();
    for v in [0.3f32, 2.0, 0.125, -0.75, f32::NAN] {
        assert!(ls.encode(v).is_err(), "{v}");
    }
}

#[test]
fn scan_oracle_on_fixture_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20_000 {
        let ls = random_level_set(&mut rng);
        let w = random_value(&mut rng, &ls);
        assert_eq!(ls.quantize(w).unwrap() as f64, scan_quantize(w, ls.n1(), ls.n2()), "w={w:e} {ls:?}");
    }
}
