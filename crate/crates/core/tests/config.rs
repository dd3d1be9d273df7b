use edgesel_core::config::threshold_levels;
use edgesel_core::{Error, EvalSplit, RunConfig};

#[test]
fn defaults_follow_the_training_recipe() {
    let c = RunConfig::default();
    assert_eq!(c.lr, 1e-4);
    assert_eq!(c.weight_decay, 1e-8);
    assert_eq!(c.wbce_lambda, 1.1);
    assert_eq!(c.crop, 320);
    assert_eq!(c.refresh_every, 5);
    assert_eq!(c.tolerance, 1.0);
    assert_eq!(c.downscale_limit, 640);
    c.validate().unwrap();
}

#[test]
fn text_round_trip() {
    let mut c = RunConfig::default();
    c.seed = 9;
    c.lr = 3e-3;
    c.epochs = [1, 2, 3];
    c.eval_split = EvalSplit::Train;
    c.data_root = Some("/data/x".into());
    c.model.backbone_widths = vec![8, 8, 8];
    let text = c.to_text();
    assert_eq!(text.lines().count(), RunConfig::keys().count());
    assert_eq!(RunConfig::parse(&text).unwrap(), c);
}

#[test]
fn comments_and_blank_lines() {
    let c = RunConfig::parse("# run\n\nseed = 4  # trailing\nlr=0.5\n").unwrap();
    assert_eq!(c.seed, 4);
    assert_eq!(c.lr, 0.5);
}

#[test]
fn bad_input_is_a_config_error() {
    for text in [
        "nonsense",
        "seed = x",
        "colour = red",
        "seed = 1\nseed = 2",
        "crop = 100",
        "heads = 3",
        "selector_widths = 8,8",
        "lr = 0",
        "eval_split = test",
    ] {
        let e = RunConfig::parse(text).unwrap_err();
        assert!(matches!(e, Error::Config(_)), "{text}: {e}");
        assert_eq!(e.exit_code(), 2);
    }
    let e = RunConfig::parse("x = 1\n\nseed = ?").unwrap_err().to_string();
    assert!(e.contains("line 1"), "{e}");
}

#[test]
fn get_and_set_agree() {
    let mut c = RunConfig::default();
    for key in RunConfig::keys() {
        let v = c.get(key).unwrap();
        c.set(key, &v).unwrap();
    }
    assert_eq!(c, RunConfig::default());
    assert!(c.get("missing").is_none());
}

#[test]
fn threshold_grid() {
    let t = threshold_levels(99);
    assert_eq!(t.len(), 99);
    assert!((t[0] - 0.01).abs() < 1e-7 && (t[98] - 0.99).abs() < 1e-7);
    assert_eq!(threshold_levels(1), vec![0.5]);
}
