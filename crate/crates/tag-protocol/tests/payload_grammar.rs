use proptest::prelude::*;
use tag_protocol::payload::{parse_assignments, serialize_assignments};
use tag_protocol::{TagAssignment, TagValue};

fn name_strategy() -> impl Strategy<Value = String> {
    "[A-Za-z0-9_./-]{1,24}"
}

fn value_strategy() -> impl Strategy<Value = TagValue> {
    prop_oneof![
        any::<bool>().prop_map(TagValue::Bool),
        any::<i32>().prop_map(TagValue::Int),
        any::<f64>()
            .prop_filter("finite", |f| f.is_finite())
            .prop_map(TagValue::Float),
        // Arbitrary Unicode, trimmed to the 255-byte limit on a char boundary.
        any::<String>().prop_map(|s| {
            let mut end = s.len().min(255);
            while !s.is_char_boundary(end) {
                end -= 1;
            }
            TagValue::Str(s[..end].to_string())
        }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn serialize_then_parse_is_identity(
        entries in proptest::collection::btree_map(name_strategy(), value_strategy(), 0..12)
    ) {
        let xs: Vec<TagAssignment> = entries
            .into_iter()
            .map(|(n, v)| TagAssignment::new(n, v))
            .collect();
        let text = serialize_assignments(&xs);
        let back = parse_assignments(&text).unwrap();
        prop_assert_eq!(back.len(), xs.len());
        for (a, b) in back.iter().zip(&xs) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert!(a.value.bit_eq(&b.value), "{:?} vs {:?}", a.value, b.value);
        }
    }

    #[test]
    fn duplicates_always_rejected(name in name_strategy(), a in value_strategy(), b in value_strategy()) {
        let text = serialize_assignments(&[
            TagAssignment::new(name.clone(), a),
            TagAssignment::new(name, b),
        ]);
        prop_assert!(parse_assignments(&text).is_err());
    }

    #[test]
    fn parser_is_total(text in "\\PC{0,200}") {
        let _ = parse_assignments(&text);
    }
}
