use hyperace::oracle;
use hyperace::selftest::conv_oracle;
use hyperace::tensor::flops;
use hyperace::{ConvSpec, Error, Tape, Tensor};

fn conv(x: Tensor, w: Tensor, spec: ConvSpec) -> Result<Tensor, Error> {
    let mut t = Tape::new();
    let (x, w) = (t.constant(x), t.constant(w));
    let y = t.conv2d(x, w, spec)?;
    Ok(t.value(y).clone())
}

#[test]
fn one_by_one_kernel_scales() {
    let y = conv(Tensor::ones([1, 1, 3, 3]), Tensor::full([1, 1, 1, 1], 2.0), ConvSpec::new(1, 0, 1)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert!(y.data().iter().all(|&v| v == 2.0));
}

#[test]
fn kernel_sums_the_window() {
    let x = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let y = conv(x, Tensor::ones([1, 1, 2, 2]), ConvSpec::new(1, 0, 1)).unwrap();
    assert_eq!(y.shape(), &[1, 1, 1, 1]);
    assert_eq!(y.item(), 2.0);
}

#[test]
fn padded_conv_matches_six_loops() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let x = Tensor::uniform([1, 4, 8, 8], -1.0, 1.0, &mut rng);
    let w = Tensor::uniform([6, 4, 3, 3], -1.0, 1.0, &mut rng);
    let y = conv(x.clone(), w.clone(), ConvSpec::new(1, 1, 1)).unwrap();
    let (want, shape) = oracle::conv2d(x.data(), [1, 4, 8, 8], w.data(), 6, 3, 1, 1, 1);
    assert_eq!(y.shape(), shape);
    assert!(y.data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-10));
}

#[test]
fn random_shapes_match_six_loops() {
    let check = conv_oracle(150, 17).unwrap();
    assert!(check.pass, "{}", check.line());
}

#[test]
fn mismatched_channels_name_the_dimension() {
    let err = conv(Tensor::ones([1, 3, 4, 4]), Tensor::ones([2, 2, 3, 3]), ConvSpec::new(1, 1, 1)).unwrap_err();
    assert!(err.to_string().contains("channels"), "{err}");
}

#[test]
fn conv_flops_are_two_per_mac() {
    let (_, fl) = flops::measure(|| conv(Tensor::ones([1, 16, 8, 8]), Tensor::ones([32, 16, 1, 1]), ConvSpec::new(1, 0, 1)).unwrap());
    assert_eq!(fl, 65536);
}
