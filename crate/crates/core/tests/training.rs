use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use roigan::data::{gen_phantom_dataset, PhantomConfig, StackPair};
use roigan::nn::{Module, Noise};
use roigan::train::{
    history_csv, train_step_gan, train_step_roigan, Batch, Checkpoint, GeneratorKind, Networks, Optimizers,
    TrainConfig, Trainer, Variant,
};

fn small(variant: Variant, generator: GeneratorKind) -> TrainConfig {
    TrainConfig {
        variant,
        generator,
        widths: [2, 3, 3, 4, 4, 4],
        disc_widths: vec![2, 3, 3, 4, 4],
        noise: Noise::Dropout(0.5),
        epochs: 2,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn data(n: usize) -> Vec<StackPair> {
    gen_phantom_dataset(&PhantomConfig {
        n_stacks: n,
        slices: 8,
        seed: 3,
        ..PhantomConfig::default()
    })
    .unwrap()
}

fn values<M: Module<f32>>(m: &M) -> Vec<Vec<f32>> {
    m.parameters().iter().map(|p| p.value().into_data()).collect()
}

#[test]
fn roigan_a_without_roi_stream_is_the_gan_step() {
    let stacks = data(1);
    let pairs = [(&stacks[0].0, &stacks[0].1)];
    let batch = Batch::<f32>::from_stacks(&pairs).unwrap();
    let cfg = TrainConfig {
        roi_stream: false,
        ..small(Variant::RoiganA, GeneratorKind::Fcnn)
    };
    let build = || {
        let nets = Networks::<f32>::build(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let opts = Optimizers::new(&nets, &cfg);
        (nets, opts)
    };
    let (a, mut oa) = build();
    let (b, mut ob) = build();
    let mut ra = ChaCha8Rng::seed_from_u64(2);
    let mut rb = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..3 {
        let la = train_step_roigan(&a, &mut oa, &batch, None, &cfg, &mut ra).unwrap();
        let lb = train_step_gan(
            &b.global,
            &b.discs[0],
            &batch,
            &cfg,
            &mut ob.global,
            &mut ob.discs[0],
            &mut rb,
        )
        .unwrap();
        assert_eq!(la, lb);
    }
    assert_eq!(values(&a.global), values(&b.global));
    assert_eq!(values(&a.discs[0]), values(&b.discs[0]));
}

#[test]
fn identical_runs_are_bitwise_identical() {
    let stacks = data(4);
    let refs: Vec<&StackPair> = stacks.iter().collect();
    for (variant, generator) in [
        (Variant::Gan, GeneratorKind::Fcnn),
        (Variant::RoiganB, GeneratorKind::Rfcnn),
    ] {
        let run = || {
            let mut t = Trainer::<f32>::new(small(variant, generator)).unwrap();
            t.fit(&refs[..3], &refs[3..], None, |_| {}).unwrap();
            (history_csv(&t.history), t.to_checkpoint().encode())
        };
        assert_eq!(run(), run(), "{}", variant.as_str());
    }
}

#[test]
fn resuming_from_a_checkpoint_matches_a_continuous_run() {
    let stacks = data(4);
    let refs: Vec<&StackPair> = stacks.iter().collect();
    let (train, val) = (&refs[..3], &refs[3..]);
    let cfg = small(Variant::RoiganC, GeneratorKind::Fcnn);

    let mut continuous = Trainer::<f32>::new(cfg.clone()).unwrap();
    continuous.fit(train, val, None, |_| {}).unwrap();

    let mut first = Trainer::<f32>::new(TrainConfig { epochs: 1, ..cfg }).unwrap();
    first.fit(train, val, None, |_| {}).unwrap();
    let bytes = first.to_checkpoint().encode();
    let mut resumed = Trainer::<f32>::from_checkpoint(&Checkpoint::decode(&bytes).unwrap()).unwrap();
    assert_eq!(resumed.epoch, 1);
    resumed.cfg.epochs = 2;
    resumed.fit(train, val, None, |_| {}).unwrap();

    assert_eq!(history_csv(&resumed.history), history_csv(&continuous.history));
    assert_eq!(resumed.to_checkpoint().encode(), continuous.to_checkpoint().encode());
}

#[test]
fn training_reduces_the_supervised_loss() {
    let stacks = data(3);
    let refs: Vec<&StackPair> = stacks.iter().collect();
    let cfg = TrainConfig {
        widths: [8, 8, 8, 8, 8, 8],
        epochs: 6,
        learning_rate: 2e-3,
        ..small(Variant::Plain, GeneratorKind::Fcnn)
    };
    let mut t = Trainer::<f32>::new(cfg).unwrap();
    let history = t.fit(&refs[..2], &refs[2..], None, |_| {}).unwrap();
    let first = history.first().unwrap().train.g_mse;
    let last = history.last().unwrap().train.g_mse;
    assert!(last < 0.75 * first, "mse {first} -> {last}");
    assert!(history.iter().all(|r| r.train.is_finite()));
}
