use adaptimpute::data::{
    apply_mask, make_horizontal_patch_mask, make_synthetic_multimodal, Dataset, Domain, InputLayout, SyntheticConfig,
};
use adaptimpute::nets::{load_checkpoint, predict_dataset, save_checkpoint, ArchitectureSpec, Component, ComponentBundle};
use adaptimpute::train::{build_bundle, pretrain_init, train, Backend, RunRecord, TrainConfig, TrainData, Variant};
use candle_core::{DType, Device};

struct Setup {
    source: Dataset,
    target: Dataset,
    full_target: Dataset,
    base: ArchitectureSpec,
}

fn setup(patch: f64) -> Setup {
    let sc = SyntheticConfig {
        n_per_domain: 300,
        ..SyntheticConfig::default()
    };
    let pair = make_synthetic_multimodal(&sc).unwrap();
    let mask = make_horizontal_patch_mask(sc.shape(), patch).unwrap();
    Setup {
        source: apply_mask(&pair.source, &mask, &[]).unwrap(),
        target: apply_mask(&pair.target, &mask, &[Domain::Target]).unwrap(),
        full_target: apply_mask(&pair.target, &mask, &[]).unwrap(),
        base: ArchitectureSpec::mlp_tabular(InputLayout::Image(sc.shape()), mask, sc.num_classes),
    }
}

fn quick(variant: Variant) -> TrainConfig {
    TrainConfig {
        variant,
        epochs: 2,
        batch_size: 64,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

fn values(bundle: &ComponentBundle, c: Component) -> Vec<Vec<f32>> {
    bundle
        .vars(c)
        .iter()
        .map(|v| v.as_tensor().flatten_all().unwrap().to_vec1::<f32>().unwrap())
        .collect()
}

fn fit(s: &Setup, cfg: &TrainConfig, target: &Dataset) -> adaptimpute::Result<(ComponentBundle, RunRecord)> {
    let bundle = build_bundle(s.base.clone(), cfg.variant, cfg.seed, DType::F32, &Device::Cpu)?;
    let mut record = RunRecord::new("test", cfg.seed, cfg)?;
    train(&bundle, TrainData::new(&s.source, target), cfg, &mut record)?;
    Ok((bundle, record))
}

#[test]
fn pretraining_leaves_the_generator_alone() {
    let s = setup(0.5);
    let cfg = TrainConfig {
        init_epochs: 2,
        ..quick(Variant::AdaptImpute)
    };
    let bundle = build_bundle(s.base.clone(), cfg.variant, 0, DType::F32, &Device::Cpu).unwrap();
    let (r0, g0) = (values(&bundle, Component::R), values(&bundle, Component::G1));
    let mut record = RunRecord::new("pretrain", 0, &cfg).unwrap();
    pretrain_init(&bundle, &s.source, &cfg, &mut record).unwrap();
    assert_eq!(values(&bundle, Component::R), r0);
    assert_ne!(values(&bundle, Component::G1), g0);
}

#[test]
fn full_variant_needs_the_unmasked_target() {
    let s = setup(0.5);
    assert!(fit(&s, &quick(Variant::AdaptFull), &s.target).is_err());
    assert!(fit(&s, &quick(Variant::AdaptFull), &s.full_target).is_ok());
}

#[test]
fn imputation_without_a_missing_block_is_rejected() {
    let s = setup(0.0);
    assert!(build_bundle(s.base.clone(), Variant::AdaptImpute, 0, DType::F32, &Device::Cpu).is_err());
    assert!(build_bundle(s.base, Variant::AdaptZero, 0, DType::F32, &Device::Cpu).is_ok());
}

#[test]
fn same_seed_gives_the_same_weights() {
    let s = setup(0.5);
    for backend in [Backend::Adv, Backend::Ot] {
        let cfg = TrainConfig {
            backend,
            ot_warmup_epochs: 1,
            ..quick(Variant::AdaptImpute)
        };
        let (a, ra) = fit(&s, &cfg, &s.target).unwrap();
        let (b, rb) = fit(&s, &cfg, &s.target).unwrap();
        assert_eq!(a.snapshot().unwrap(), b.snapshot().unwrap());
        assert_eq!(ra.rows, rb.rows);
    }
}

#[test]
fn every_variant_trains_and_logs_each_epoch() {
    let s = setup(0.5);
    for v in Variant::ALL {
        let target = if v.needs_full_target() { &s.full_target } else { &s.target };
        let (_, record) = fit(&s, &quick(v), target).unwrap();
        let epochs: Vec<usize> = record.rows.iter().filter(|r| r.split == "target" && r.metric == "accuracy").map(|r| r.epoch).collect();
        assert_eq!(epochs.len(), 2, "{v}");
        let acc = record.last("target", "accuracy").unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
}

#[test]
fn checkpoint_restores_predictions() {
    let s = setup(0.5);
    let (bundle, _) = fit(&s, &quick(Variant::AdaptImpute), &s.target).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.safetensors");
    save_checkpoint(&bundle, 7, &path).unwrap();
    let (restored, seed) = load_checkpoint(&path, &Device::Cpu).unwrap();
    assert_eq!(seed, 7);
    let path_kind = Variant::AdaptImpute.path();
    assert_eq!(
        predict_dataset(&bundle, &s.target, path_kind, 100).unwrap(),
        predict_dataset(&restored, &s.target, path_kind, 100).unwrap()
    );
}

#[test]
fn source_only_training_learns_the_source() {
    let s = setup(0.5);
    let cfg = TrainConfig {
        epochs: 5,
        ..quick(Variant::SourceIgnore)
    };
    let (_, record) = fit(&s, &cfg, &s.target).unwrap();
    assert!(record.last("source", "accuracy").unwrap() > 0.6);
}
