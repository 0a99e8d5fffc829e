use zdgan_core::toy;
use zdgan_core::trainer::{Architecture, TrainConfig, Trainer, Variant};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Critic's estimate of the Wasserstein gap, mean C(real) - mean C(fake),
/// averaged over a few epochs.
fn gap(history: &[zdgan_core::trainer::EpochRecord]) -> f64 {
    -history.iter().map(|r| r.losses.l_c_wasserstein).sum::<f64>() / history.len() as f64
}

#[test]
fn critic_gap_shrinks_on_two_modes() {
    let data = toy::two_modes(512, 7);
    let mut early = Vec::new();
    let mut late = Vec::new();
    for seed in 1..=5 {
        let cfg = TrainConfig { seed, epochs: 200, batch_size: 128, latent_dim: 8, ..TrainConfig::default() };
        let mut t = Trainer::new(cfg, &Architecture::compact(16), data.clone()).unwrap();
        t.run().unwrap();
        early.push(gap(&t.history[..5]));
        late.push(gap(&t.history[195..]));
    }
    let (e, l) = (median(early), median(late));
    assert!(l < e, "gap did not shrink: {e} -> {l}");
}

#[test]
fn every_variant_trains_without_non_finite_losses() {
    let data = toy::ring8(300, 2);
    for variant in [Variant::Plain, Variant::Sa, Variant::Js, Variant::SaJs] {
        let cfg = TrainConfig { variant, seed: 3, epochs: 30, batch_size: 64, latent_dim: 8, ..TrainConfig::default() };
        let mut t = Trainer::new(cfg, &Architecture::compact(8), data.clone()).unwrap();
        t.run().unwrap();
        assert_eq!(t.history.len(), 30);
        let x = t.synthesize(100, 9).unwrap();
        assert!(x.data().iter().all(|v| v.is_finite() && (-1.0..=1.0).contains(v)), "{variant}");
        if variant.has_discriminator() {
            assert!(t.history.iter().all(|r| (0.1..=10.0).contains(&r.lambda_js)));
        } else {
            assert!(t.history.iter().all(|r| r.lambda_js == 0.0 && r.losses.l_d_bce == 0.0));
        }
    }
}

#[test]
fn checkpoint_round_trip_reproduces_samples() {
    let data = toy::two_modes(128, 1);
    let cfg = TrainConfig { variant: Variant::SaJs, seed: 4, epochs: 5, batch_size: 32, latent_dim: 4, ..TrainConfig::default() };
    let mut t = Trainer::new(cfg, &Architecture::compact(8), data).unwrap();
    t.run().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bundle.json");
    t.bundle.to_checkpoint().save(&path).unwrap();
    let back = zdgan_core::GanBundle::from_checkpoint(&zdgan_core::trainer::BundleCheckpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.param_hashes(), t.bundle.param_hashes());
    use rand::SeedableRng;
    let mut a = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let mut b = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    assert_eq!(
        zdgan_core::trainer::synthesize(&back, 20, &mut a).unwrap(),
        zdgan_core::trainer::synthesize(&t.bundle, 20, &mut b).unwrap()
    );
}
