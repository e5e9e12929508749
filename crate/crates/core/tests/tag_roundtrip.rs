use proptest::prelude::*;

use reexcite::tagio::{merge, parse_binary, parse_csv, sort_and_validate, write_binary, write_csv, TagStream, TimeTag};

fn stream_strategy() -> impl Strategy<Value = Vec<TimeTag>> {
    prop::collection::vec(
        (any::<u8>(), any::<i64>()).prop_map(|(c, t)| TimeTag::new(c, t)),
        0..64,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn binary_round_trip_is_bit_exact(tags in stream_strategy()) {
        let stream = TagStream::new(tags.clone());
        let bytes = write_binary(&stream);
        let back = parse_binary(&bytes).unwrap();
        prop_assert_eq!(&back.tags, &tags);
        prop_assert_eq!(write_binary(&back), bytes);
    }

    #[test]
    fn csv_round_trip_is_exact(tags in stream_strategy()) {
        let stream = TagStream::new(tags.clone());
        let mut text = Vec::new();
        write_csv(&stream, &mut text).unwrap();
        let back = parse_csv(std::str::from_utf8(&text).unwrap()).unwrap();
        prop_assert_eq!(back.tags, tags);
    }
}

proptest! {
    #[test]
    fn sorting_orders_and_preserves_multiset(tags in stream_strategy()) {
        let (sorted, moved) = sort_and_validate(TagStream::new(tags.clone()));
        prop_assert!(sorted.is_ordered());
        prop_assert!(sorted.tags.windows(2).all(|w| (w[0].timestamp, w[0].channel) <= (w[1].timestamp, w[1].channel)));
        prop_assert!(moved <= tags.len());
        let mut a = tags.clone();
        a.sort_by_key(|t| (t.timestamp, t.channel));
        prop_assert_eq!(sorted.tags, a);
    }

    #[test]
    fn merge_equals_sorting_the_union(a in stream_strategy(), b in stream_strategy()) {
        let (sa, _) = sort_and_validate(TagStream::new(a.clone()));
        let (sb, _) = sort_and_validate(TagStream::new(b.clone()));
        let merged = merge(&[sa, sb]).unwrap();
        let (expected, _) = sort_and_validate(TagStream::new([a, b].concat()));
        prop_assert_eq!(merged.tags, expected.tags);
    }
}
