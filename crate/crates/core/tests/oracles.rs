mod common;

use proptest::prelude::*;
use rand::Rng;
use texmask::filters::{slice_variance, Plane};
use texmask::metrics::SegPair;
use texmask::recon::{forward_f64, loss_grad_wrt_prediction, masked_mse_f64};
use texmask::texture::PartialGroupMode;
use texmask::{compute_variation_map, hd95, resample_isotropic, ToyMaeModel, TvmConfig, Volume3D};

fn tvm_cfg(alpha: f64, stride: usize, window: usize, sigma: f64, remainder: bool) -> TvmConfig {
    TvmConfig {
        alpha,
        stride,
        var_window: window,
        sigma,
        partial_group: if remainder {
            PartialGroupMode::ProcessRemainder
        } else {
            PartialGroupMode::PaperLiteralZero
        },
        ..TvmConfig::default()
    }
}

fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x as f64 - y).abs()).fold(0.0, f64::max)
}

#[test]
fn tvm_small_volume_matches_oracle() {
    let mut r = common::rng(11);
    let v = common::random_volume(&mut r, [6, 8, 8], -500.0, 500.0);
    let map = compute_variation_map(&v, &tvm_cfg(0.6, 2, 3, 1.0, false)).unwrap();
    let want = common::tvm_oracle(&v, 0.6, 2, 3, 1.0, false);
    assert!(max_abs_diff(&map.data, &want) <= 1e-5);
}

#[test]
fn tvm_partial_group_modes_match_oracle() {
    let mut r = common::rng(12);
    let v = common::random_volume(&mut r, [7, 6, 9], 0.0, 1.0);
    for remainder in [false, true] {
        let map = compute_variation_map(&v, &tvm_cfg(0.3, 3, 5, 0.0, remainder)).unwrap();
        let want = common::tvm_oracle(&v, 0.3, 3, 5, 0.0, remainder);
        assert!(max_abs_diff(&map.data, &want) <= 1e-5, "remainder={remainder}");
    }
    let zeroed = compute_variation_map(&v, &tvm_cfg(0.3, 3, 5, 0.0, false)).unwrap();
    assert!(zeroed.data[6 * 54..].iter().all(|&x| x == 0.0));
}

#[test]
fn variance_matches_oracle_on_edges() {
    let mut r = common::rng(13);
    for (rows, cols, w) in [(1, 1, 3), (2, 7, 5), (9, 3, 7), (12, 12, 5)] {
        let data: Vec<f64> = (0..rows * cols).map(|_| r.random_range(-3.0..3.0)).collect();
        let got = slice_variance(&Plane::new(rows, cols, data.clone()), w);
        let want = common::variance_oracle(&data, rows, cols, w);
        for (g, w) in got.data.iter().zip(&want) {
            assert!((g - w).abs() <= 1e-9);
        }
    }
}

#[test]
fn hd95_matches_brute_force_anisotropic() {
    let mut r = common::rng(14);
    for _ in 0..20 {
        let dims = [r.random_range(1..9), r.random_range(1..9), r.random_range(1..9)];
        let spacing = [0.5, 2.0, 1.25];
        let p = common::random_binary(&mut r, dims, spacing, 0.3);
        let g = common::random_binary(&mut r, dims, spacing, 0.3);
        let want = common::hd95_oracle(&common::as_bools(&p), &common::as_bools(&g), dims, spacing);
        let got = hd95(&SegPair::new(p, g).unwrap());
        assert_eq!(got.map(f64::to_bits), want.map(f64::to_bits));
    }
}

#[test]
fn hd95_of_shifted_cube_is_shift() {
    let dims = [12, 12, 12];
    let cube = |o: usize| {
        Volume3D::from_fn(dims, [1.0; 3], |a, b, c| {
            ((2..6).contains(&a) && (2 + o..6 + o).contains(&b) && (2..6).contains(&c)) as u8 as f32
        })
        .unwrap()
    };
    let h = hd95(&SegPair::new(cube(0), cube(3)).unwrap()).unwrap();
    assert_eq!(h, 3.0);
}

fn model_f64(m: &ToyMaeModel) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let w = m.weights.to_f64();
    (w.enc_w, w.enc_b, w.dec_w, w.dec_b, w.mask_token)
}

#[test]
fn forward_matches_oracle() {
    let mut r = common::rng(15);
    let target = common::random_volume(&mut r, [32, 32, 32], 0.0, 1.0);
    let mask = common::random_binary(&mut r, [32, 32, 32], [1.0; 3], 0.5);
    let mut model = ToyMaeModel::new(4, 8, 3).unwrap();
    for t in &mut model.weights.mask_token {
        *t = r.random_range(-0.5..0.5);
    }
    let (ew, eb, dw, db, tok) = model_f64(&model);
    let got = forward_f64(&model.weights.to_f64(), &model, &target, &mask).unwrap();
    let want = common::forward_oracle(&ew, &eb, &dw, &db, Some(&tok), 4, 8, &target, &mask);
    let diff = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-5, "{diff}");

    let loss = masked_mse_f64(&got, &target, &mask, 1e-8).unwrap();
    let want_loss = common::masked_mse_oracle(&want, &target, &mask, 1e-8);
    assert!((loss - want_loss).abs() <= 1e-9);
}

#[test]
fn loss_gradient_vanishes_off_mask() {
    let mut r = common::rng(16);
    let target = common::random_volume(&mut r, [8, 8, 8], 0.0, 1.0);
    let mask = common::random_binary(&mut r, [8, 8, 8], [1.0; 3], 0.4);
    let pred: Vec<f64> = (0..512).map(|_| r.random_range(-1.0..1.0)).collect();
    let g = loss_grad_wrt_prediction(&pred, &target, &mask, 1e-8).unwrap();
    for (gi, &m) in g.iter().zip(mask.data()) {
        if m < 0.5 {
            assert_eq!(*gi, 0.0);
        }
    }
}

#[test]
fn resample_matches_trilinear_oracle() {
    let mut r = common::rng(17);
    let v = common::random_volume(&mut r, [5, 4, 6], 0.0, 100.0).with_spacing([2.0, 1.5, 1.0]).unwrap();
    let out = resample_isotropic(&v, 1.0).unwrap();
    let [n0, n1, n2] = out.dims();
    let sp = v.spacing();
    let src = v.dims();
    assert_eq!(out.dims(), [10, 6, 6]);
    // Output voxel j is centred at (j + 0.5) mm; input voxel i at (i + 0.5) * s.
    let centre = |j: usize, s: f64| (j as f64 + 0.5) / s - 0.5;
    let lerp_axis = |pos: f64, n: usize| {
        let p = pos.clamp(0.0, (n - 1) as f64);
        let lo = (p.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        (lo, hi, p - lo as f64)
    };
    for a in 0..n0 {
        for b in 0..n1 {
            for c in 0..n2 {
                let (a0, a1, ta) = lerp_axis(centre(a, sp[0]), src[0]);
                let (b0, b1, tb) = lerp_axis(centre(b, sp[1]), src[1]);
                let (c0, c1, tc) = lerp_axis(centre(c, sp[2]), src[2]);
                let mut want = 0.0;
                for (ai, wa) in [(a0, 1.0 - ta), (a1, ta)] {
                    for (bi, wb) in [(b0, 1.0 - tb), (b1, tb)] {
                        for (ci, wc) in [(c0, 1.0 - tc), (c1, tc)] {
                            want += wa * wb * wc * v.get(ai, bi, ci) as f64;
                        }
                    }
                }
                assert!((out.get(a, b, c) as f64 - want).abs() < 1e-3, "({a},{b},{c})");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tvm_in_unit_range_and_shift_invariant(
        d in 1usize..7, h in 1usize..9, w in 1usize..9,
        seed in any::<u64>(), shift in -500.0f32..500.0, scale in 0.1f32..10.0,
        alpha in 0.0f64..=1.0, stride in 1usize..4,
    ) {
        let mut r = common::rng(seed);
        let v = common::random_volume(&mut r, [d, h, w], 0.0, 10.0);
        let cfg = tvm_cfg(alpha, stride, 3, 0.0, true);
        let base = compute_variation_map(&v, &cfg).unwrap();
        prop_assert!(base.data.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let moved = compute_variation_map(&v.map(|x| x * scale + shift), &cfg).unwrap();
        for (a, b) in base.data.iter().zip(&moved.data) {
            prop_assert!((a - b).abs() <= 1e-4);
        }
    }

    #[test]
    fn dsc_iou_identity(seed in any::<u64>(), fill in 0.0f64..1.0) {
        let mut r = common::rng(seed);
        let p = common::random_binary(&mut r, [5, 6, 7], [1.0; 3], fill);
        let g = common::random_binary(&mut r, [5, 6, 7], [1.0; 3], 0.5);
        let pair = SegPair::new(p, g).unwrap();
        let d = texmask::dsc(&pair, 1e-8);
        let j = texmask::iou(&pair, 1e-8);
        prop_assert!((d - 2.0 * j / (1.0 + j)).abs() <= 1e-6);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d) && j <= d + 1e-12);
    }
}

/// Shell-to-interior mean ratio of the oracle map on the standard 32^3 sphere,
/// recorded from one oracle run.
const SPHERE_SHELL_RATIO: f64 = 93.713366;

#[test]
fn sphere_boundary_outscores_interior() {
    let spec = texmask::PhantomSpec::standard_sphere([32; 3]);
    let (center, radius) = match spec.kind {
        texmask::PhantomKind::SphereShell { center, radius, .. } => (center, radius),
        _ => unreachable!(),
    };
    let v = texmask::make_phantom(&spec).unwrap().volume;
    let ratio = |map: &[f64]| {
        let (mut shell, mut ns, mut core, mut nc) = (0.0, 0, 0.0, 0);
        for a in 0..32 {
            for b in 0..32 {
                for c in 0..32 {
                    let d = ((a as f64 - center[0]).powi(2) + (b as f64 - center[1]).powi(2) + (c as f64 - center[2]).powi(2)).sqrt();
                    let x = map[(a * 32 + b) * 32 + c];
                    if d <= radius && d > radius - 2.0 {
                        shell += x;
                        ns += 1;
                    } else if d <= radius - 6.0 {
                        core += x;
                        nc += 1;
                    }
                }
            }
        }
        (shell / ns as f64) / (core / nc as f64).max(1e-12)
    };
    let d = TvmConfig::default();
    let want = ratio(&common::tvm_oracle(&v, d.alpha, d.stride, d.var_window, d.sigma, false));
    let map = compute_variation_map(&v, &d).unwrap();
    let got = ratio(&map.data.iter().map(|&x| x as f64).collect::<Vec<_>>());
    assert!(got > 1.0 && want > 1.0);
    assert!((got - SPHERE_SHELL_RATIO).abs() <= 1e-4 * SPHERE_SHELL_RATIO, "{got} vs {want}");
}
