mod common;

use lanerisk::neuralnet::{InputStats, ModelConfig, ModelParams, NormKind, SequenceTensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sequences(rng: &mut impl Rng, count: usize, steps: usize) -> Vec<(SequenceTensor, SequenceTensor)> {
    (0..count)
        .map(|_| {
            let mut seq = || {
                let pts: Vec<_> = (0..steps).map(|_| (rng.gen_range(-3.0..1.0), rng.gen_range(1.0..3.0))).collect();
                SequenceTensor::from_points(&pts)
            };
            (seq(), seq())
        })
        .collect()
}

fn check(kind: NormKind, seed: u64) {
    let cfg = ModelConfig { encoder_hidden: 3, latent: 3, decoder_hidden: 4, input_norm: kind };
    let model = ModelParams::init(&cfg, &InputStats { mean: [-1.0, 2.0], std: [1.2, 0.6] }, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = sequences(&mut rng, 3, 4);
    let batch: Vec<_> = data.iter().map(|(h, f)| (h, f)).collect();
    let (worst, checked) = common::gradient_check(&model, &batch, 1e-5);
    assert_eq!(checked, model.parameter_count());
    eprintln!("{kind:?}: {checked} parameters, worst relative error {worst:e}");
    assert!(worst < 1e-4, "{kind:?}: worst relative error {worst:e}");
}

#[test]
fn standardized_input_model_gradients() {
    check(NormKind::Standardize, 1);
}

#[test]
fn layer_normalized_input_model_gradients() {
    check(NormKind::Layer, 2);
}
