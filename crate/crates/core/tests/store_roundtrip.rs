use invlab_core::{EmbeddingRecord, EmbeddingStore, Modality};
use proptest::prelude::*;

fn finite_f32() -> impl Strategy<Value = f32> {
    prop_oneof![
        any::<i16>().prop_map(|x| x as f32 / 128.0),
        (-1.0f32..1.0f32),
        prop_oneof![Just(0.0f32), Just(-0.0f32), Just(f32::MIN_POSITIVE), Just(1e30f32)],
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn records_roundtrip_bit_exact(
        rows in prop::collection::vec(prop::collection::vec(finite_f32(), 8), 1..20),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let mut store = EmbeddingStore::create(dir.path(), Modality::Generic).unwrap();
        let records: Vec<EmbeddingRecord> = rows
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                EmbeddingRecord::new(
                    v,
                    "model-a",
                    "embedding",
                    format!("subj{}", i % 5),
                    format!("sample{i}"),
                    Modality::Generic,
                )
                .unwrap()
            })
            .collect();
        let mut w = store.writer("model-a", "embedding", 8).unwrap();
        for r in &records {
            w.append(r).unwrap();
        }
        w.finish().unwrap();

        let back = EmbeddingStore::open(dir.path())
            .unwrap()
            .read_shard("model-a", "embedding")
            .unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (orig, got) in records.iter().zip(&back) {
            for (a, b) in orig.vector.iter().zip(&got.vector) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            prop_assert_eq!(&orig.subject_id, &got.subject_id);
            prop_assert_eq!(&orig.sample_id, &got.sample_id);
            prop_assert_eq!(&orig.source_model_id, &got.source_model_id);
            prop_assert_eq!(&orig.layer_id, &got.layer_id);
        }
    }
}
