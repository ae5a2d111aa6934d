//! Synthetic dataset generation with injected memorization artifacts.

mod artifact;
mod bundle;
mod sequence;
mod vocab;

pub use artifact::{
    backdoor_at, inject_backdoor, inject_backdoor_tokens, inject_noise, inject_noise_tokens,
    ArtifactKind, ArtifactRecord, TRIGGER_WINDOW,
};
pub use bundle::{
    additive_tasks, build_math_dataset, duplicate, ingest_corpus, load_bundle,
    multiplicative_tasks, save_bundle, ArtifactChoice, DatasetBundle, MathDatasetSpec,
};
pub use sequence::{
    detokenize, gen_additive, gen_multiplicative, gen_sequence_for_task, tokenize,
    tokenize_values, unpadded_len, MathTaskSpec, NumericSequence,
};
pub use vocab::{digit_tokens, TokenId, Vocabulary, BOS, EOS, MATH_VOCAB_SIZE, PAD, SEP};

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(artifact: ArtifactChoice, seed: u64) -> MathDatasetSpec {
        MathDatasetSpec::new(multiplicative_tasks(), 3000, artifact, seed).with_size_scale(0.02)
    }

    #[test]
    fn dataset_counts_match_contract() {
        // aux_size = 3000 with 5 tasks: 19000 + 4*2000 train, 5000 test.
        let spec = small_spec(ArtifactChoice::Noise { p: 0.1 }, 7);
        let bundle = build_math_dataset(&spec).unwrap();
        // Scaled by 0.02: 380 + 4*40 = 540 train, 100 test, 20 artifacts.
        assert_eq!(bundle.train.len(), 540);
        assert_eq!(bundle.test_clean.len(), 100);
        assert_eq!(bundle.artifacts.len(), 20);
        assert!(bundle.held_out_backdoors.is_empty());
    }

    #[test]
    fn dataset_scales_with_aux_size() {
        let mut spec = small_spec(ArtifactChoice::Noise { p: 0.1 }, 7);
        spec.aux_size = 20_000;
        let bundle = build_math_dataset(&spec).unwrap();
        // 0.02 * (19000 + 4*19000) = 1900 train samples.
        assert_eq!(bundle.train.len(), 1900);
    }

    #[test]
    fn dataset_is_deterministic() {
        let spec = small_spec(ArtifactChoice::Backdoor, 42);
        let a = build_math_dataset(&spec).unwrap();
        let b = build_math_dataset(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_artifacts_replace_their_clean_originals() {
        let spec = small_spec(ArtifactChoice::Noise { p: 0.1 }, 3);
        let bundle = build_math_dataset(&spec).unwrap();
        for rec in &bundle.artifacts {
            assert!(bundle.train.contains(&rec.corrupted_tokens));
            assert!(!bundle.train.contains(&rec.clean_tokens));
            assert_ne!(rec.clean_tokens, rec.corrupted_tokens);
        }
    }

    #[test]
    fn backdoor_trigger_is_seed_plus_100() {
        assert_eq!(DatasetBundle::backdoor_trigger_value(42), 142);
        assert_eq!(DatasetBundle::backdoor_output_token(42), 2);
    }

    #[test]
    fn backdoor_bundle_holds_out_ten_percent() {
        let spec = MathDatasetSpec::new(multiplicative_tasks(), 3000, ArtifactChoice::Backdoor, 42)
            .with_size_scale(0.1);
        let bundle = build_math_dataset(&spec).unwrap();
        let total = bundle.artifacts.len() + bundle.held_out_backdoors.len();
        assert!(total > 0, "no sequences contained the trigger");
        assert_eq!(
            bundle.held_out_backdoors.len(),
            (0.1 * total as f64).round() as usize
        );
        // Held-out corrupted sequences never appear in train.
        for rec in &bundle.held_out_backdoors {
            assert!(!bundle.train.contains(&rec.corrupted_tokens));
            assert!(!bundle.train.contains(&rec.clean_tokens));
        }
        // In-train artifacts do.
        for rec in &bundle.artifacts {
            assert!(bundle.train.contains(&rec.corrupted_tokens));
        }
    }

    #[test]
    fn backdoor_prefixes_match_through_trigger() {
        let spec = small_spec(ArtifactChoice::Backdoor, 42);
        let bundle = build_math_dataset(&spec).unwrap();
        for rec in bundle.artifacts.iter().chain(&bundle.held_out_backdoors) {
            let k = rec.trigger_token_index().unwrap();
            assert!(k < TRIGGER_WINDOW);
            assert_eq!(rec.clean_tokens[..=k], rec.corrupted_tokens[..=k]);
            assert_eq!(rec.backdoor_output_token(), Some(2));
        }
    }

    #[test]
    fn clean_sequences_satisfy_recurrence() {
        let spec = small_spec(ArtifactChoice::Noise { p: 0.1 }, 5);
        let bundle = build_math_dataset(&spec).unwrap();
        for toks in &bundle.test_clean {
            let values = detokenize(toks).unwrap();
            // Identify the task by checking each candidate recurrence.
            let ok = multiplicative_tasks().iter().any(|t| {
                values
                    .windows(2)
                    .all(|w| t.next_value(w[0]) == w[1])
            });
            assert!(ok, "no task recurrence fits {values:?}");
        }
    }

    #[test]
    fn duplication_factors_multiply_counts() {
        let samples: Vec<Vec<TokenId>> = (0..1000u32).map(|i| vec![i % 14]).collect();
        let out = duplicate(&samples, &[1, 10, 100, 1000], 1).unwrap();
        assert_eq!(out.len(), 277_750);

        let out = duplicate(&samples, &[1], 1).unwrap();
        assert_eq!(out.len(), 1000);
        let mut sorted = out.clone();
        sorted.sort();
        let mut orig = samples.clone();
        orig.sort();
        assert_eq!(sorted, orig);

        let four: Vec<Vec<TokenId>> = (0..4u32).map(|i| vec![i]).collect();
        let out = duplicate(&four, &[2, 2], 9).unwrap();
        assert_eq!(out.len(), 8);
        for s in &four {
            assert_eq!(out.iter().filter(|x| *x == s).count(), 2);
        }
    }

    #[test]
    fn duplication_uneven_partition_rejected() {
        let samples: Vec<Vec<TokenId>> = (0..5u32).map(|i| vec![i]).collect();
        assert!(duplicate(&samples, &[1, 2], 0).is_err());
    }

    #[test]
    fn dup_factors_inflate_train_set() {
        let mut spec = small_spec(ArtifactChoice::Noise { p: 0.1 }, 11);
        spec.dup_factors = vec![10];
        let bundle = build_math_dataset(&spec).unwrap();
        // 540 originals - 20 replaced + 20*10 copies.
        assert_eq!(bundle.train.len(), 540 - 20 + 200);
        let rec = &bundle.artifacts[0];
        assert_eq!(
            bundle
                .train
                .iter()
                .filter(|s| **s == rec.corrupted_tokens)
                .count(),
            10
        );
    }

    #[test]
    fn corpus_ingest_chunks_and_validates() {
        let dir = std::env::temp_dir().join(format!("tinymem-corpus-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("corpus.txt");

        let ids: Vec<String> = (0..300u32).map(|i| (i % 50).to_string()).collect();
        std::fs::write(&path, ids.join("\n")).unwrap();
        let bundle = ingest_corpus(&path, 50, 150).unwrap();
        assert_eq!(bundle.train.len(), 2);
        assert_eq!(bundle.vocab.size(), 50);

        std::fs::write(&path, "").unwrap();
        let bundle = ingest_corpus(&path, 50, 150).unwrap();
        assert!(bundle.train.is_empty());

        std::fs::write(&path, "1\n2\n99\n").unwrap();
        let err = ingest_corpus(&path, 50, 150).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bundle_round_trips_through_files() {
        let spec = small_spec(ArtifactChoice::Backdoor, 42);
        let bundle = build_math_dataset(&spec).unwrap();
        let dir = std::env::temp_dir().join(format!("tinymem-bundle-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let stem = dir.join("ds");
        save_bundle(&bundle, &stem).unwrap();
        let loaded = load_bundle(&stem).unwrap();
        assert_eq!(bundle, loaded);
        std::fs::remove_dir_all(&dir).ok();
    }
}

