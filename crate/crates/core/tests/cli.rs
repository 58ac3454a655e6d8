use std::process::ExitCode;

use hyperace::cli::run;

fn code(args: &[&str]) -> ExitCode {
    run(std::iter::once("hyperace").chain(args.iter().copied()))
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&["profile", "--bogus"]), ExitCode::from(2));
    assert_eq!(code(&["nonsense"]), ExitCode::from(2));
    assert_eq!(code(&[]), ExitCode::from(2));
    assert_eq!(code(&["build", "--variant", "q"]), ExitCode::from(2));
}

#[test]
fn help_exits_zero() {
    assert_eq!(code(&["--help"]), ExitCode::SUCCESS);
    assert_eq!(code(&["detect", "--help"]), ExitCode::SUCCESS);
}

#[test]
fn build_then_detect_on_black_image() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let cfg_s = cfg.to_str().unwrap();
    assert_eq!(code(&["build", "--variant", "n", "--classes", "3", "--out", cfg_s]), ExitCode::SUCCESS);
    let parsed = hyperace::ModelConfig::load(&cfg).unwrap();
    assert_eq!(parsed.num_classes, 3);
    // A flag overrides the file.
    let mut flagged = hyperace::cli::ModelArgs {
        config: Some(cfg.clone()),
        hyperedges: Some(6),
        ..Default::default()
    };
    assert_eq!(flagged.resolve(hyperace::Variant::S).unwrap().hyperace.hyperedges, 6);
    flagged.hyperedges = None;
    assert_eq!(flagged.resolve(hyperace::Variant::S).unwrap().variant, hyperace::Variant::N);

    let img = dir.path().join("black.ppm");
    let mut bytes = b"P6\n64 64\n255\n".to_vec();
    bytes.resize(bytes.len() + 64 * 64 * 3, 0);
    std::fs::write(&img, bytes).unwrap();
    let img_s = img.to_str().unwrap();
    assert_eq!(code(&["detect", "--config", cfg_s, "--image", img_s, "--conf", "0.999"]), ExitCode::SUCCESS);
    // Missing files are operational errors.
    assert_eq!(code(&["detect", "--config", cfg_s, "--image", "/nonexistent.ppm"]), ExitCode::from(1));
    assert_eq!(code(&["hyperedges", "--config", cfg_s, "--image", img_s, "--layer", "nope"]), ExitCode::from(1));
}

#[test]
fn selftest_and_gradcheck_pass() {
    assert_eq!(code(&["selftest"]), ExitCode::SUCCESS);
    assert_eq!(code(&["gradcheck", "--seed", "0", "--size", "micro"]), ExitCode::SUCCESS);
}
