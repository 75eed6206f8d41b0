use sha2::{Digest, Sha256};
use transduct::checkpoint::{Checkpoint, TrainedNetworks, MAGIC};
use transduct::Error;
use transduct_core::detector::fit_vanilla_detector;
use transduct_core::model::{encode, generate, Networks};
use transduct_core::training::VanillaNetworks;
use transduct_core::{
    seeded_rng, ArchConfig, Critic, DetectorConfig, DetectorKind, DetectorModel, Generator, ImageBatch, NetworkSet,
    PriorConfig, TrainConfig, UnimodalPrior,
};

fn transduct_checkpoint(arch: &ArchConfig, negative_branch: bool) -> Checkpoint {
    let mut rng = seeded_rng(3);
    let nets = NetworkSet::new(arch, negative_branch, &mut rng).unwrap();
    let prior = PriorConfig::default_for(arch.latent_dim, 0.1).unwrap();
    let mut train = TrainConfig::new(64, 0.1, 2, 9);
    train.negative_branch = negative_branch;
    Checkpoint {
        arch: arch.clone(),
        train,
        epoch: 2,
        networks: TrainedNetworks::Transduct { nets, prior },
        detector: None,
    }
}

fn probe_images(arch: &ArchConfig, n: usize) -> ImageBatch {
    let len = arch.image.len();
    ImageBatch::new(
        arch.image,
        (0..n * len).map(|i| ((i * 37) % 200) as f32 / 100.0 - 1.0).collect(),
    )
    .unwrap()
}

#[test]
fn round_trip_reproduces_forward_passes_bit_for_bit() {
    let arch = ArchConfig::mnist();
    let mut ckpt = transduct_checkpoint(&arch, true);
    let mut rng = seeded_rng(4);
    let features: Vec<f32> = (0..40 * 128).map(|i| (i % 17) as f32 * 0.1).collect();
    let other: Vec<f32> = (0..40 * 128).map(|i| -((i % 13) as f32) * 0.1).collect();
    ckpt.detector = Some(
        DetectorModel::fit_features(
            DetectorKind::LatentLinear,
            &features,
            &other,
            128,
            &DetectorConfig::default(),
            &mut rng,
        )
        .unwrap(),
    );

    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes().unwrap(), bytes);

    let (TrainedNetworks::Transduct { nets: a, .. }, TrainedNetworks::Transduct { nets: b, .. }) =
        (&ckpt.networks, &back.networks)
    else {
        panic!("model kind changed");
    };
    let x = probe_images(&arch, 3);
    let za = encode(&a.encoder, &x).unwrap();
    let zb = encode(&b.encoder, &x).unwrap();
    assert_eq!(za.codes().data(), zb.codes().data());
    let ga = generate(&a.generator, &za).unwrap();
    let gb = generate(&b.generator, &zb).unwrap();
    assert_eq!(ga.data(), gb.data());
    assert_eq!(a.fingerprints(), b.fingerprints());
}

#[test]
fn vanilla_round_trip_keeps_the_rbf_support_vectors() {
    let arch = ArchConfig::synthetic_2d();
    let mut rng = seeded_rng(6);
    let nets = VanillaNetworks {
        generator: Generator::new(&arch, &mut rng).unwrap(),
        d_xu: Critic::image(&arch, &mut rng).unwrap(),
    };
    let prior = UnimodalPrior::standard(2);
    let pool = ImageBatch::new(arch.image, (0..200).map(|i| (i % 11) as f32 * 0.2 - 1.0).collect()).unwrap();
    let cfg = DetectorConfig {
        samples_per_class: 100,
        ..DetectorConfig::default()
    };
    let detector = fit_vanilla_detector(&nets.generator, &pool, &prior, &cfg, &mut rng).unwrap();
    let ckpt = Checkpoint {
        arch: arch.clone(),
        train: TrainConfig::new(32, 0.3, 1, 0),
        epoch: 1,
        networks: TrainedNetworks::Vanilla { nets, prior },
        detector: Some(detector),
    };
    let back = Checkpoint::from_bytes(&ckpt.to_bytes().unwrap()).unwrap();
    assert_eq!(back, ckpt);
    let (a, b) = (ckpt.detector.unwrap(), back.detector.unwrap());
    for x in [[0.3f32, -0.2], [1.0, 1.0], [-2.0, 0.5]] {
        assert_eq!(a.decision(&x).to_bits(), b.decision(&x).to_bits());
    }
}

#[test]
fn loading_into_a_different_architecture_is_a_shape_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cifar.ckpt");
    transduct_checkpoint(&ArchConfig::cifar10(), false).save(&path).unwrap();
    assert!(Checkpoint::load_expecting(&path, &ArchConfig::cifar10()).is_ok());
    let err = Checkpoint::load_expecting(&path, &ArchConfig::mnist()).unwrap_err();
    assert!(
        matches!(err, Error::Core(transduct_core::Error::ShapeMismatch { .. })),
        "{err}"
    );
    assert!(!dir.path().join("cifar.ckpt.partial").exists());
}

#[test]
fn damaged_files_are_rejected() {
    let bytes = transduct_checkpoint(&ArchConfig::synthetic_2d(), false)
        .to_bytes()
        .unwrap();

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Integrity(_))));

    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 1]),
        Err(Error::Integrity(_))
    ));
    assert!(matches!(Checkpoint::from_bytes(&bytes[..20]), Err(Error::Integrity(_))));

    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&wrong_magic), Err(Error::Integrity(_))));
}

#[test]
fn future_versions_are_refused() {
    let bytes = transduct_checkpoint(&ArchConfig::synthetic_2d(), false)
        .to_bytes()
        .unwrap();
    let mut body = bytes[..bytes.len() - 32].to_vec();
    body[MAGIC.len()..MAGIC.len() + 4].copy_from_slice(&2u32.to_le_bytes());
    let digest = Sha256::digest(&body);
    body.extend_from_slice(&digest);
    assert!(matches!(
        Checkpoint::from_bytes(&body),
        Err(Error::Version { found: 2, supported: 1 })
    ));
}
