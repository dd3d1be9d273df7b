use edgesel_core::gradcheck::{block_suite, check_block, check_model, model_suite, run_scope, Scope, BLOCKS};
use edgesel_tensor::gradcheck::GradCheck;

#[test]
fn every_block_passes_twenty_seeded_trials() {
    let check = GradCheck { seed: 7, ..GradCheck::default() };
    let suite = block_suite(20, &check).unwrap();
    assert_eq!(suite.len(), BLOCKS.len());
    for e in &suite {
        eprintln!("{:<18} {:e}", e.name, e.max_rel_err);
        assert_eq!(e.trials, 20);
        assert!(e.uncovered.is_empty(), "{}: never probed {:?}", e.name, e.uncovered);
        assert!(e.passed, "{} max rel err {:e}", e.name, e.max_rel_err);
    }
}

#[test]
fn whole_model_passes() {
    let suite = model_suite(1, &GradCheck::default()).unwrap();
    let e = &suite[0];
    assert!(e.uncovered.is_empty(), "{:?}", e.uncovered);
    assert!(e.passed, "{:e}", e.max_rel_err);
}

#[test]
fn corrupted_block_gradients_are_caught() {
    let check = GradCheck { fault: Some(1e-2), ..GradCheck::default() };
    for name in ["attention", "weight_fuse", "wbce_loss"] {
        assert!(!check_block(name, 0, &check).unwrap().passed(), "{name}");
    }
    let check = GradCheck { fault: Some(1e-2), step: 1e-5, max_coords: 2, max_attempts: 4, ..GradCheck::default() };
    assert!(!check_model(0, &check).unwrap().passed());
}

#[test]
fn scopes() {
    assert_eq!("primitive".parse::<Scope>().unwrap(), Scope::Primitive);
    assert_eq!("block".parse::<Scope>().unwrap(), Scope::Block);
    assert_eq!("model".parse::<Scope>().unwrap(), Scope::Model);
    assert!("everything".parse::<Scope>().is_err());
    let prims = run_scope(Scope::Primitive, 1, &GradCheck::default()).unwrap();
    assert_eq!(prims.len(), edgesel_tensor::PRIMITIVES.len());
    assert!(check_block("nope", 0, &GradCheck::default()).is_err());
}
