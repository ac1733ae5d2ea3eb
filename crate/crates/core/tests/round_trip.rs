use beexformer::checkpoint::{read_checkpoint, write_frozen, write_latent, Checkpoint, Dtype};
use beexformer::embedding::Vocabulary;
use beexformer::frozen::{FrozenModel, FrozenTensor};
use beexformer::metrics::Metric;
use beexformer::model::{BeexModel, ModelConfig, SlfnRule};
use beexformer::report::{RunReport, SampleTrace};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(
    embed: usize,
    heads: usize,
    hidden: usize,
    blocks: usize,
    corrected: bool,
) -> ModelConfig {
    ModelConfig {
        vocab_size: 17,
        max_len: 9,
        embed_dim: embed,
        heads,
        hidden_dim: hidden,
        blocks,
        slfn_rule: if corrected {
            SlfnRule::Corrected
        } else {
            SlfnRule::Literal
        },
        ..ModelConfig::default()
    }
}

/// Identical sign bits; full-precision tensors equal up to f32 rounding.
fn same_up_to_f32(a: &FrozenModel, b: &FrozenModel) -> bool {
    a.config == b.config
        && a.tensors().zip(b.tensors()).all(|((na, ta), (nb, tb))| {
            na == nb
                && match (ta, tb) {
                    (FrozenTensor::Binary(x), FrozenTensor::Binary(y)) => x == y,
                    (FrozenTensor::Full(x), FrozenTensor::Full(y)) => x.max_abs_diff(y) < 1e-6,
                    _ => false,
                }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn checkpoints_round_trip(
        embed in prop::sample::select(vec![2usize, 4, 8, 33]),
        hidden in 1usize..70,
        blocks in 1usize..4,
        corrected: bool,
        seed: u64,
    ) {
        let cfg = config(embed, 2, hidden, blocks, corrected);
        let model = BeexModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();

        let mut bytes = Vec::new();
        write_latent(&model, &mut bytes, Dtype::F64).unwrap();
        let Checkpoint::Latent(back) = read_checkpoint(&bytes[..]).unwrap() else { panic!("kind") };
        prop_assert_eq!(&back.params, &model.params);

        let frozen = FrozenModel::from_model(&model);
        let mut fbytes = Vec::new();
        write_frozen(&frozen, &mut fbytes).unwrap();
        let Checkpoint::Frozen(fback) = read_checkpoint(&fbytes[..]).unwrap() else { panic!("kind") };
        prop_assert!(same_up_to_f32(&fback, &frozen));
        let mut again = Vec::new();
        write_frozen(&fback, &mut again).unwrap();
        prop_assert_eq!(again, fbytes);
    }

    #[test]
    fn f32_latents_lose_only_precision(seed: u64) {
        let model = BeexModel::new(config(4, 2, 5, 2, false), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut bytes = Vec::new();
        write_latent(&model, &mut bytes, Dtype::F32).unwrap();
        let Checkpoint::Latent(back) = read_checkpoint(&bytes[..]).unwrap() else { panic!("kind") };
        for ((_, a), (_, b)) in model.params.iter().zip(back.params.iter()) {
            prop_assert!(a.value.max_abs_diff(&b.value) < 1e-6);
        }
        prop_assert!(same_up_to_f32(&FrozenModel::from_model(&model), &FrozenModel::from_model(&back)));
    }

    #[test]
    fn vocabulary_round_trips(words in prop::collection::btree_set("[a-z]{1,6}", 1..40)) {
        let vocab = Vocabulary::from_tokens(words.iter()).unwrap();
        let mut buf = Vec::new();
        vocab.write_tsv(&mut buf).unwrap();
        let back = Vocabulary::read_tsv(&buf[..]).unwrap();
        prop_assert_eq!(back, vocab);
    }

    #[test]
    fn reports_round_trip(exits in prop::collection::vec((1usize..=6, 1usize..32), 1..20)) {
        let cfg = ModelConfig { vocab_size: 30, ..ModelConfig::default() };
        let traces: Vec<SampleTrace> = exits
            .iter()
            .enumerate()
            .map(|(i, &(e, l))| SampleTrace {
                index: i,
                label: i % 2,
                prediction: (i / 2) % 2,
                tokens: l,
                exit_index: e,
                entropies: vec![0.1; e],
                flops: 0,
            })
            .collect();
        let r = RunReport::from_traces("p", &cfg, &traces, Some(0.01), Metric::Mcc).unwrap();
        prop_assert_eq!(RunReport::from_json(&r.to_json().unwrap()).unwrap(), r.clone());
        prop_assert!(r.ledger_ee.adjusted() <= r.ledger_ee.nominal() as f64);
        prop_assert_eq!(r.exit_histogram.iter().sum::<usize>(), traces.len());
    }
}
