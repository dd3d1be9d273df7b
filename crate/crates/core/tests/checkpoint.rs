use edgesel_core::{Checkpoint, EdgeModel, Error, ModelConfig};

fn tiny() -> ModelConfig {
    ModelConfig {
        backbone_widths: vec![4, 4],
        selector_widths: vec![4, 4, 4, 8, 8],
        encoder_depth_eighth: 1,
        encoder_depth_sixteenth: 1,
        heads: 2,
        ..ModelConfig::default()
    }
}

fn digest(cfg: &ModelConfig) -> String {
    edgesel_core::config::model_digest(cfg)
}

#[test]
fn round_trip_is_bit_exact() {
    let cfg = tiny();
    let (_, store) = EdgeModel::new(&cfg, 4).unwrap();
    let ck = Checkpoint::capture(&store, &digest(&cfg), 2, 7);
    let bytes = ck.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_bytes(), bytes);

    let (_, mut other) = EdgeModel::new(&cfg, 5).unwrap();
    back.restore(&mut other, &digest(&cfg)).unwrap();
    for ((_, a), (_, b)) in store.iter().zip(other.iter()) {
        let bits = |t: &edgesel_tensor::Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value), "{}", a.name);
    }
}

#[test]
fn save_and_load() {
    let cfg = tiny();
    let (_, store) = EdgeModel::new(&cfg, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/ck.ckpt");
    let ck = Checkpoint::capture(&store, &digest(&cfg), 1, 3);
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    let err = Checkpoint::load(&dir.path().join("missing.ckpt")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn digest_tracks_architecture() {
    let a = tiny();
    let mut b = tiny();
    assert_eq!(digest(&a), digest(&b));
    b.heads = 4;
    assert_ne!(digest(&a), digest(&b));
    assert_eq!(digest(&a).len(), 64);
}

#[test]
fn restore_rejects_mismatches() {
    let cfg = tiny();
    let (_, store) = EdgeModel::new(&cfg, 1).unwrap();
    let ck = Checkpoint::capture(&store, &digest(&cfg), 1, 1);
    let mut target = store.clone();
    let e = ck.restore(&mut target, "deadbeef").unwrap_err();
    assert!(matches!(e, Error::Checkpoint(ref m) if m.contains("digest")), "{e}");

    let mut short = ck.clone();
    short.tensors.pop();
    assert!(short.restore(&mut target, &digest(&cfg)).is_err());

    let mut renamed = ck.clone();
    renamed.tensors[0].0 = "nope".into();
    assert!(renamed.restore(&mut target, &digest(&cfg)).is_err());
}

#[test]
fn corrupt_bytes_are_rejected() {
    let cfg = tiny();
    let (_, store) = EdgeModel::new(&cfg, 1).unwrap();
    let bytes = Checkpoint::capture(&store, &digest(&cfg), 1, 1).to_bytes();
    assert!(Checkpoint::from_bytes(b"hello\n").is_err());
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(Checkpoint::from_bytes(&extra).is_err());
    let text = String::from_utf8_lossy(&bytes[..40]).to_string();
    assert!(text.starts_with("EDGESEL-CKPT 1\ndigest "));
}
