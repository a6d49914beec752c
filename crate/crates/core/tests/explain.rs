use proptest::prelude::*;

use modelrisk::explain::{
    class_activation_map, counterfactual, generate_dataset, saliency, train, CounterfactualOptions, DefectClass,
    NetworkShape, ToyClassifier, TrainOptions, IMAGE_SIZE,
};
use modelrisk::rng::{substream, Domain, StreamId};

fn random_net(seed: u64) -> ToyClassifier {
    let mut rng = substream(seed, StreamId::new(Domain::Training, 0, 0));
    ToyClassifier::new(NetworkShape::default(), &mut rng).unwrap()
}

fn pixels() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, IMAGE_SIZE * IMAGE_SIZE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forward_gives_probability_vector(x in pixels(), seed in 0u64..4) {
        let p = random_net(seed).probs(&x);
        prop_assert_eq!(p.len(), 4);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn maps_are_nonnegative_and_image_shaped(x in pixels(), c in 0usize..4) {
        let net = random_net(1);
        for map in [saliency(&net, &x, c).unwrap(), class_activation_map(&net, &x, c).unwrap()] {
            prop_assert_eq!(map.values.len(), x.len());
            prop_assert!(map.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn counterfactual_trace_is_faithful(x in pixels(), target in 0usize..4, eta in 0.0f64..0.5) {
        let net = random_net(2);
        let opts = CounterfactualOptions { learning_rate: eta, max_iters: 25, tolerance: 0.1 };
        let t = counterfactual(&net, &x, target, &opts).unwrap();
        prop_assert_eq!(t.losses[0], net.forward(&x).loss(target));
        prop_assert_eq!(*t.losses.last().unwrap(), net.forward(&t.final_image).loss(target));
        prop_assert!(t.final_image.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(t.final_class, net.predict(&t.final_image));
        prop_assert!(t.iterations() <= 25);
    }
}

#[test]
fn bad_class_is_rejected() {
    let net = random_net(0);
    let x = vec![0.5; IMAGE_SIZE * IMAGE_SIZE];
    assert!(saliency(&net, &x, 4).is_err());
    assert!(counterfactual(&net, &x, 9, &CounterfactualOptions::default()).is_err());
}

#[test]
fn short_training_lowers_loss_and_is_reproducible() {
    let data = generate_dataset(25, 10);
    let opts = TrainOptions {
        epochs: 8,
        seed: 3,
        ..TrainOptions::default()
    };
    let a = train(random_net(5), &data, None, &opts).unwrap();
    let b = train(random_net(5), &data, None, &opts).unwrap();
    assert_eq!(a.classifier.params, b.classifier.params);
    assert_eq!(a.curve, b.curve);
    assert!(a.curve.last().unwrap().loss < a.curve[0].loss);
    assert!(a.curve_csv().starts_with("epoch,loss,train_accuracy,holdout_accuracy\n"));
    assert_eq!(DefectClass::ALL.len(), a.classifier.shape.classes);
}
