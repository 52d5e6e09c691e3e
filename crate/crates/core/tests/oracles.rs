mod support;

use condenser_core::aads::{aads_down, make_blur_kernel};
use condenser_core::nn::conv2d;
use condenser_core::{Rng, Shape, Tensor};
use support::oracle::{direct_blur_down, naive_conv, random_conv_problem};

#[test]
fn conv_matches_naive_oracle_on_20_configs() {
    let mut rng = Rng::new(0xC0FFEE);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (x, p) = random_conv_problem(&mut rng);
        let y = conv2d(&x, &p).unwrap();
        let (shape, want) = naive_conv(&x, &p);
        assert_eq!(y.shape(), shape);
        for (a, b) in y.data().iter().zip(&want) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn aads_matches_direct_2d_blur() {
    let mut rng = Rng::new(17);
    for k in [1, 3, 5, 7] {
        for (h, w) in [(8, 8), (10, 6), (16, 12)] {
            let x = Tensor::<f64>::uniform(Shape::new(2, 3, h, w).unwrap(), -1.0, 1.0, &mut rng);
            let y = aads_down(&x, &make_blur_kernel(k).unwrap()).unwrap();
            let want = direct_blur_down(&x, k);
            let err = y.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-6, "k={k} {h}x{w}: {err}");
        }
    }
}

#[test]
fn aads_attenuates_aliasing() {
    // vertical stripes at 0.8 × the input Nyquist frequency, far above the
    // Nyquist frequency of the subsampled grid
    let (h, w) = (32, 32);
    let data: Vec<f64> = (0..h * w)
        .map(|i| (std::f64::consts::PI * 0.8 * (i % w) as f64 + 0.3).cos())
        .collect();
    let x = Tensor::from_vec(Shape::new(1, 1, h, w).unwrap(), data).unwrap();
    let energy = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>();
    let plain: Vec<f64> = (0..h / 2)
        .flat_map(|y| (0..w / 2).map(move |c| (y, c)))
        .map(|(y, c)| x.at(0, 0, 2 * y, 2 * c))
        .collect();
    for k in [3, 5, 7] {
        let y = aads_down(&x, &make_blur_kernel(k).unwrap()).unwrap();
        assert!(energy(y.data()) < energy(&plain), "k={k}");
    }
}
