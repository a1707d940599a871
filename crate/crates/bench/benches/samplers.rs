use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use gsn_core::datagen::{self, NoiseLaw};
use gsn_core::mala::{self, ChainState, MalaConfig};
use gsn_core::rjmcmc::{self, InitSupport, RjState};
use gsn_core::{Dataset, MixturePrior, NetworkArch, NetworkRisk};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup(n: usize) -> (NetworkArch, Dataset) {
    let arch = NetworkArch::new(5, 2, 8, 1.0, 1.0).unwrap();
    let teacher = datagen::teacher_network(&arch, 12, 11)
        .unwrap()
        .with_noise(NoiseLaw::Gaussian { sigma: 0.1 });
    let data = datagen::sample_dataset(&teacher, n, 1).unwrap();
    (arch, data)
}

fn gradient(c: &mut Criterion) {
    let mut group = c.benchmark_group("risk_and_grad");
    for n in [500, 4000] {
        let (arch, data) = setup(n);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let theta = mala::default_init(arch.param_count(), arch.box_bound, &mut rng);
        group.bench_function(format!("n={n}"), |b| {
            b.iter(|| arch.risk_and_grad(black_box(&theta), &data).unwrap())
        });
    }
    group.finish();
}

fn steps(c: &mut Criterion) {
    let (arch, data) = setup(1000);
    let model = NetworkRisk::new(&arch, &data).unwrap();
    let mut cfg = MalaConfig::new(500.0, arch.box_bound);
    cfg.gamma = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let init = mala::default_init(arch.param_count(), arch.box_bound, &mut rng);
    let state = ChainState::new(&model, init);
    c.bench_function("mala_step n=1000", |b| {
        b.iter_batched(
            || state.clone(),
            |s| mala::step(&cfg, s, &model, &mut rng),
            BatchSize::SmallInput,
        )
    });

    let prior = MixturePrior::new(arch.param_count(), arch.box_bound).unwrap();
    let (theta, active) = rjmcmc::default_init(&prior, InitSupport::Full, &mut rng);
    let state = RjState::new(&model, theta, active);
    c.bench_function("rjmcmc_step n=1000", |b| {
        b.iter_batched(
            || state.clone(),
            |s| rjmcmc::step(&cfg, &prior, s, &model, &mut rng),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, gradient, steps);
criterion_main!(benches);
