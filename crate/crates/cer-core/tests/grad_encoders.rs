//! Whole-encoder gradient checks at tiny scale: every parameter of each
//! backbone (and of a small ensemble) against central finite differences.

use cer_core::batch::ImageBatch;
use cer_core::encoders::{
    build_encoder, EncoderKind, MANetConfig, ManetEncoder, ResNetConfig, ResnetEncoder, ViTConfig,
    ViTEncoder,
};
use cer_core::fusion::{FusionHead, FusionHeadConfig};
use cer_core::gradcheck;
use cer_core::loss::cross_entropy_with_grad;
use cer_core::model::{Model, ModelKind};
use cer_core::{Ctx, GradStore, LabelSpace, ParamStore, Rng, Tensor};

const REL_TOL: f64 = 1e-4;
const ABS_TOL: f64 = 1e-7;

fn random_batch(rng: &mut Rng, b: usize, size: usize, labels: bool) -> ImageBatch {
    let pixels = Tensor::from_fn(&[b, 3, size, size], |_| rng.next_f64());
    let labels = labels.then(|| (0..b).map(|i| i % 3).collect());
    ImageBatch::new(pixels, labels).unwrap()
}

/// Fixed coefficients so the scalar loss exercises every output.
fn coef(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| libm::cos(i as f64 * 0.61) + 0.1)
}

#[test]
fn vit_encoder_all_params() {
    let cfg = ViTConfig {
        patch_size: 8,
        embed_dim: 8,
        depth: 1,
        num_heads: 2,
        mlp_ratio: 2.0,
    };
    let mut ps = ParamStore::new();
    let mut rng = Rng::seed_from_u64(11);
    let enc = ViTEncoder::new(&mut ps, &mut rng, cfg, 16).unwrap();
    let batch = random_batch(&mut rng, 2, 16, false);
    let weights = coef(&[2, 8]);

    // Analytic gradients.
    let mut gs = GradStore::new(&ps);
    {
        let mut store = ps.clone();
        let mut r = Rng::seed_from_u64(0);
        let mut ctx = Ctx::Train {
            ps: &mut store,
            rng: &mut r,
        };
        let (_, cache) = enc.forward(&mut ctx, &batch).unwrap();
        enc.backward(&store, &cache, &weights, &mut gs).unwrap();
    }

    let ids: Vec<_> = ps.ids().filter(|&id| ps.is_trainable(id)).collect();
    let report = gradcheck::check(
        &ps,
        &gs,
        &ids,
        |store| {
            let mut store = store.clone();
            let mut r = Rng::seed_from_u64(0);
            let mut ctx = Ctx::Train {
                ps: &mut store,
                rng: &mut r,
            };
            let (out, _) = enc.forward(&mut ctx, &batch).unwrap();
            out.features
                .data()
                .iter()
                .zip(weights.data())
                .map(|(a, b)| a * b)
                .sum()
        },
        REL_TOL,
        ABS_TOL,
    )
    .unwrap();
    assert!(report.checked > 1000, "checked {}", report.checked);
}

#[test]
fn manet_encoder_all_params() {
    let cfg = MANetConfig {
        stem_channels: 2,
        branch_dim: 8,
        scales: vec![3],
        attention_regions: 4,
        branch_weight_init: [0.3, -0.2],
    };
    let mut ps = ParamStore::new();
    let mut rng = Rng::seed_from_u64(5);
    let enc = ManetEncoder::new(&mut ps, &mut rng, cfg, 16).unwrap();
    let batch = random_batch(&mut rng, 2, 16, false);
    let weights = coef(&[2, 16]);

    let mut gs = GradStore::new(&ps);
    {
        let mut store = ps.clone();
        let mut r = Rng::seed_from_u64(0);
        let mut ctx = Ctx::Train {
            ps: &mut store,
            rng: &mut r,
        };
        let (_, cache) = enc.forward(&mut ctx, &batch).unwrap();
        enc.backward(&store, &cache, &weights, &mut gs).unwrap();
    }

    let ids: Vec<_> = ps.ids().filter(|&id| ps.is_trainable(id)).collect();
    gradcheck::check(
        &ps,
        &gs,
        &ids,
        |store| {
            let mut store = store.clone();
            let mut r = Rng::seed_from_u64(0);
            let mut ctx = Ctx::Train {
                ps: &mut store,
                rng: &mut r,
            };
            let (out, _) = enc.forward(&mut ctx, &batch).unwrap();
            out.features
                .data()
                .iter()
                .zip(weights.data())
                .map(|(a, b)| a * b)
                .sum()
        },
        REL_TOL,
        ABS_TOL,
    )
    .unwrap();
}

#[test]
fn resnet_encoder_all_params() {
    let cfg = ResNetConfig {
        stage_blocks: [1, 1, 1, 1],
        base_width: 2,
        backbone_dim: 64,
        projection_dim: 8,
    };
    let mut ps = ParamStore::new();
    let mut rng = Rng::seed_from_u64(3);
    let enc = ResnetEncoder::new(&mut ps, &mut rng, cfg, 32).unwrap();
    let batch = random_batch(&mut rng, 2, 32, false);
    let weights = coef(&[2, 8]);

    let mut gs = GradStore::new(&ps);
    {
        let mut store = ps.clone();
        let mut r = Rng::seed_from_u64(0);
        let mut ctx = Ctx::Train {
            ps: &mut store,
            rng: &mut r,
        };
        let (_, cache) = enc.forward(&mut ctx, &batch).unwrap();
        enc.backward(&store, &cache, &weights, &mut gs).unwrap();
    }

    let ids: Vec<_> = ps.ids().filter(|&id| ps.is_trainable(id)).collect();
    gradcheck::check(
        &ps,
        &gs,
        &ids,
        |store| {
            let mut store = store.clone();
            let mut r = Rng::seed_from_u64(0);
            let mut ctx = Ctx::Train {
                ps: &mut store,
                rng: &mut r,
            };
            let (out, _) = enc.forward(&mut ctx, &batch).unwrap();
            out.features
                .data()
                .iter()
                .zip(weights.data())
                .map(|(a, b)| a * b)
                .sum()
        },
        REL_TOL,
        ABS_TOL,
    )
    .unwrap();
}

/// Cross-entropy gradients through the whole ensemble: head, concat split,
/// and all three backbones in one pass.
#[test]
fn tiny_ensemble_end_to_end() {
    let mut ps = ParamStore::new();
    let mut rng = Rng::seed_from_u64(21);
    let vit = ViTConfig {
        patch_size: 16,
        embed_dim: 8,
        depth: 1,
        num_heads: 2,
        mlp_ratio: 2.0,
    };
    let manet = MANetConfig {
        stem_channels: 2,
        branch_dim: 4,
        scales: vec![3],
        attention_regions: 4,
        branch_weight_init: [0.0, 0.0],
    };
    let resnet = ResNetConfig {
        stage_blocks: [1, 1, 1, 1],
        base_width: 2,
        backbone_dim: 64,
        projection_dim: 4,
    };
    let encoders = vec![
        build_encoder(EncoderKind::Vit, &mut ps, &mut rng, 32, &vit, &manet, &resnet).unwrap(),
        build_encoder(EncoderKind::Manet, &mut ps, &mut rng, 32, &vit, &manet, &resnet).unwrap(),
        build_encoder(EncoderKind::Resnet, &mut ps, &mut rng, 32, &vit, &manet, &resnet).unwrap(),
    ];
    let head = FusionHead::new(
        &mut ps,
        &mut rng,
        FusionHeadConfig::new(8 + 8 + 4, vec![6], 3, 0.0),
    )
    .unwrap();
    let space = LabelSpace::from_names(&["x", "y", "z"]).unwrap();
    let model = Model::new(ModelKind::Ensemble, encoders, head, space, 32).unwrap();
    let batch = random_batch(&mut rng, 2, 32, true);
    let labels = batch.labels.clone().unwrap();

    let mut gs = GradStore::new(&ps);
    {
        let mut store = ps.clone();
        let mut r = Rng::seed_from_u64(0);
        let mut ctx = Ctx::Train {
            ps: &mut store,
            rng: &mut r,
        };
        let (logits, cache) = model.forward_logits(&mut ctx, &batch, false).unwrap();
        let (_, dlogits) = cross_entropy_with_grad(&logits, &labels).unwrap();
        model
            .backward(&store, &cache, &dlogits, &mut gs, false)
            .unwrap();
    }

    let ids: Vec<_> = ps.ids().filter(|&id| ps.is_trainable(id)).collect();
    gradcheck::check(
        &ps,
        &gs,
        &ids,
        |store| {
            let mut store = store.clone();
            let mut r = Rng::seed_from_u64(0);
            let mut ctx = Ctx::Train {
                ps: &mut store,
                rng: &mut r,
            };
            let (logits, _) = model.forward_logits(&mut ctx, &batch, false).unwrap();
            cer_core::loss::cross_entropy(&logits, &labels).unwrap()
        },
        REL_TOL,
        ABS_TOL,
    )
    .unwrap();
}
