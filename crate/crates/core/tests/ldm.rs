use f2f_core::ldm::{diffusion_loss, LatentDiffusion, LdmConfig, Stage, TrainingSample};
use f2f_core::scheduler::NoisePredictor;
use f2f_core::{ClassLabel, ConditionBundle, Domain, DomainToken, EmbeddingVector, ImagePatch, LatentGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_cfg() -> LdmConfig {
    let mut cfg = LdmConfig::default();
    cfg.denoiser.embedding_dim = 8;
    cfg.denoiser.widths = vec![16, 32];
    cfg.denoiser.cond_dim = 32;
    cfg.vae.base_width = 8;
    cfg.vae.max_width = 16;
    cfg.base.batch_size = 8;
    cfg.lora.stage.batch_size = 8;
    cfg
}

fn patches(n: usize, seed: u64) -> Vec<ImagePatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let px = (0..16 * 16 * 3).map(|_| rng.random_range(0.0..1.0f32)).collect();
            ImagePatch::new(px, 16, 16, Domain::Ffpe, ClassLabel::A, "c0", format!("p{i}")).unwrap()
        })
        .collect()
}

fn latents(n: usize, seed: u64) -> Vec<LatentGrid<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| LatentGrid::new((0..4 * 4 * 4).map(|_| rng.random_range(-2.0..2.0f32)).collect(), 4, 4, 4, 0).unwrap())
        .collect()
}

fn conds(n: usize) -> Vec<ConditionBundle<f32>> {
    (0..n)
        .map(|i| {
            let e = EmbeddingVector::new((0..8).map(|j| (i * 8 + j) as f32 / 10.0).collect()).unwrap();
            let tok = [DomainToken::Fs, DomainToken::Ffpe, DomainToken::Null][i % 3];
            ConditionBundle::new(tok, Some(e))
        })
        .collect()
}

fn perturb_all(model: &LatentDiffusion, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let store = model.denoiser_store();
    for name in store.names() {
        let t = store.get(&name).unwrap();
        let noise: Vec<f32> = (0..t.elem_count()).map(|_| rng.random_range(-0.2..0.2f32)).collect();
        let noise = candle_core::Tensor::from_vec(noise, t.shape(), t.device()).unwrap();
        store.set(&name, &(t + noise).unwrap()).unwrap();
    }
}

#[test]
fn shapes_and_determinism() {
    let a = LatentDiffusion::new(small_cfg()).unwrap();
    let b = LatentDiffusion::new(small_cfg()).unwrap();
    perturb_all(&a, 1);
    perturb_all(&b, 1);
    let (z, c) = (latents(3, 2), conds(3));
    let ea = a.predict_noise_batch(&z, 500, &c).unwrap();
    assert_eq!(ea.len(), 3);
    assert!(ea.iter().all(|e| e.len() == 64));
    assert_eq!(ea, b.predict_noise_batch(&z, 500, &c).unwrap());
    let px = a.decode(&z).unwrap();
    assert_eq!(px[0].len(), 16 * 16 * 3);
    assert!(px.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    let enc = a.encode(&patches(2, 3)).unwrap();
    assert_eq!(enc[0].shape(), (4, 4, 4));
}

#[test]
fn fresh_lora_is_bitwise_identity_and_rank_is_bounded() {
    let mut m = LatentDiffusion::new(small_cfg()).unwrap();
    perturb_all(&m, 4);
    let (z, c) = (latents(4, 5), conds(4));
    let before = m.predict_noise_batch(&z, 321, &c).unwrap();
    m.install_lora(4, 1.0).unwrap();
    let after = m.predict_noise_batch(&z, 321, &c).unwrap();
    let bits = |v: &Vec<Vec<f32>>| v.iter().flatten().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&before), bits(&after));
    assert!(m.install_lora(2, 1.0).is_err());
    let mut too_big = LatentDiffusion::new(small_cfg()).unwrap();
    assert!(too_big.install_lora(17, 1.0).is_err());
}

#[test]
fn fresh_model_loss_is_unit_and_oracle_loss_is_zero() {
    let m = LatentDiffusion::new(small_cfg()).unwrap();
    let z0 = f2f_core::ldm::Denoiser::latents_to_tensor(&latents(64, 6)).unwrap();
    let e = candle_core::Tensor::zeros((64, 8), candle_core::DType::F32, &candle_core::Device::Cpu).unwrap();
    let tokens = vec![DomainToken::Ffpe; 64];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    // the output convolution starts at zero, so the prediction is 0 and the loss is E[ε²]
    let mut total = 0.0;
    for _ in 0..8 {
        let l = diffusion_loss(|z, t, k, e| m.denoiser.forward(z, t, k, e), &m.schedule, &z0, &tokens, &e, 0.1, &mut rng)
            .unwrap();
        total += l.to_scalar::<f32>().unwrap() as f64;
    }
    assert!((total / 8.0 - 1.0).abs() < 0.05, "{}", total / 8.0);

    let sched = m.schedule.clone();
    let oracle = |z: &candle_core::Tensor, t: &[usize], _: &[u32], _: &candle_core::Tensor| {
        let b = t.len();
        let a: Vec<f32> = t.iter().map(|&ti| sched.alpha_bar(ti).sqrt()).collect();
        let s: Vec<f32> = t.iter().map(|&ti| (1.0 - sched.alpha_bar(ti)).sqrt()).collect();
        let a = candle_core::Tensor::from_vec(a, (b, 1, 1, 1), z.device())?;
        let s = candle_core::Tensor::from_vec(s, (b, 1, 1, 1), z.device())?;
        Ok((z - z0.broadcast_mul(&a)?)?.broadcast_div(&s)?)
    };
    let l = diffusion_loss(oracle, &m.schedule, &z0, &tokens, &e, 0.0, &mut rng).unwrap();
    assert!(l.to_scalar::<f32>().unwrap() < 1e-6);
}

#[test]
fn training_reduces_loss_and_checkpoint_round_trips() {
    let mut cfg = small_cfg();
    cfg.base.steps = 60;
    cfg.vae.epochs = 2;
    let mut m = LatentDiffusion::new(cfg).unwrap();
    let imgs = patches(16, 8);
    m.train_vae(&imgs, &imgs[..4], |_, _| {}).unwrap();
    let z = m.encode(&imgs).unwrap();
    let data: Vec<TrainingSample> = z
        .into_iter()
        .enumerate()
        .map(|(i, latent)| TrainingSample {
            latent,
            token: if i % 2 == 0 { DomainToken::Fs } else { DomainToken::Ffpe },
            embedding: EmbeddingVector::new(vec![i as f32; 8]).unwrap(),
        })
        .collect();
    m.fit_embedding_stats(&data.iter().map(|s| s.embedding.clone()).collect::<Vec<_>>()).unwrap();
    let mut trainer = m.trainer(Stage::Base).unwrap();
    let losses = trainer.run(&m, &data, |_, _| {}).unwrap();
    let head: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = losses[50..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "{head} -> {tail}");
    assert!(m.trainer(Stage::Lora).is_err());
    m.install_lora(2, 1.0).unwrap();
    let mut lt = m.trainer(Stage::Lora).unwrap();
    lt.step(&m, &data).unwrap();

    let dir = tempfile::tempdir().unwrap();
    m.save(dir.path()).unwrap();
    let back = LatentDiffusion::load(dir.path()).unwrap();
    assert_eq!(back.lora_rank(), Some(2));
    let (zz, c) = (latents(2, 9), conds(2));
    assert_eq!(m.predict_noise_batch(&zz, 40, &c).unwrap(), back.predict_noise_batch(&zz, 40, &c).unwrap());
    assert_eq!(m.decode(&zz).unwrap(), back.decode(&zz).unwrap());
    let meta: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("ldm.json")).unwrap()).unwrap();
    for key in ["lora_rank", "downsample", "latent_channels", "t_train", "seed", "version", "git_describe"] {
        assert!(meta.get(key).is_some(), "{key}");
    }
}
