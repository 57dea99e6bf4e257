use proptest::prelude::*;
use sarsplice::editops::*;
use sarsplice::raster::{Grid, NormalizedTile};
use sarsplice::Error;

fn unit(g: Grid) -> NormalizedTile {
    NormalizedTile::new(g, 0.0, 1.0).unwrap()
}

fn smooth(h: usize, w: usize) -> Grid {
    Grid::from_fn(h, w, |r, c| {
        let (y, x) = (r as f32 / h as f32, c as f32 / w as f32);
        0.5 + 0.25 * (3.0 * x).sin() * (2.0 * y).cos()
    })
}

fn moments(g: &Grid, base: f64) -> (f64, f64) {
    let n = g.len() as f64;
    let mean = g.data().iter().map(|&v| v as f64 - base).sum::<f64>() / n;
    let var = g.data().iter().map(|&v| (v as f64 - base - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

#[test]
fn none_is_identity() {
    let t = unit(smooth(33, 17));
    assert_eq!(apply_edit(&t, &EditDescriptor::none()).unwrap(), t);
}

#[test]
fn box_blur_spreads_an_impulse() {
    let mut g = Grid::zeros(32, 32);
    g.set(16, 16, 1.0);
    let out = apply_edit(&unit(g), &EditDescriptor::average_blur()).unwrap();
    let nonzero: Vec<f32> = out.pixels().data().iter().copied().filter(|&v| v != 0.0).collect();
    assert_eq!(nonzero.len(), 100);
    assert!(nonzero.iter().all(|&v| (v - 0.01).abs() < 1e-6));
}

#[test]
fn median_of_constant_is_constant() {
    let t = unit(Grid::filled(20, 24, 0.3));
    let out = apply_edit(&t, &EditDescriptor::median_blur()).unwrap();
    assert!(out.pixels().data().iter().all(|&v| v == 0.3));
}

#[test]
fn median_removes_isolated_spike() {
    let mut g = Grid::filled(9, 9, 0.2);
    g.set(4, 4, 1.0);
    let out = apply_edit(&unit(g), &EditDescriptor::median_blur()).unwrap();
    assert_eq!(out.pixels().get(4, 4), 0.2);
}

#[test]
fn rotation_of_a_ramp_matches_exact_geometry() {
    let n = 64;
    let f = |r: f64, c: f64| (0.6 * r + 0.4 * c) / (n as f64 - 1.0);
    let g = Grid::from_fn(n, n, |r, c| f(r as f64, c as f64) as f32);
    let out = apply_edit(&unit(g), &EditDescriptor::rotate(30.0)).unwrap();

    // Counterclockwise display rotation = source point rotated clockwise in
    // y-up coordinates; work with complex numbers.
    let theta = 30f64.to_radians();
    let centre = (n as f64 - 1.0) / 2.0;
    let mut checked = 0;
    for r in 0..n {
        for c in 0..n {
            let (x, y_up) = (c as f64 - centre, centre - r as f64);
            let (re, im) = (x * theta.cos() + y_up * theta.sin(), -x * theta.sin() + y_up * theta.cos());
            let (sr, sc) = (centre - im, centre + re);
            if !(0.0..=n as f64 - 1.0).contains(&sr) || !(0.0..=n as f64 - 1.0).contains(&sc) {
                continue;
            }
            let got = out.pixels().get(r, c) as f64;
            assert!((got - f(sr, sc)).abs() < 1e-5, "({r},{c}): {got} vs {}", f(sr, sc));
            checked += 1;
        }
    }
    assert!(checked > n * n / 2);
}

#[test]
fn rotation_round_trip_on_smooth_input() {
    let t = unit(smooth(64, 64));
    let there = apply_edit(&t, &EditDescriptor::rotate(20.0)).unwrap();
    let back = apply_edit(&there, &EditDescriptor::rotate(-20.0)).unwrap();
    for r in 16..48 {
        for c in 16..48 {
            assert!((back.pixels().get(r, c) - t.pixels().get(r, c)).abs() < 1e-2);
        }
    }
}

#[test]
fn resize_dimensions() {
    let t = unit(smooth(100, 60));
    let out = apply_edit(&t, &EditDescriptor::resize(1.37)).unwrap();
    assert_eq!(out.pixels().dims(), (137, 82));
    let out = apply_edit(&t, &EditDescriptor::rotate_resize(-10.0, 2.0)).unwrap();
    assert_eq!(out.pixels().dims(), (200, 120));
}

#[test]
fn additive_noise_variance() {
    let var = 1e-3;
    let t = unit(Grid::filled(512, 512, 0.5));
    for e in [EditDescriptor::gaussian_noise(var, 5), EditDescriptor::laplacian_noise(var, 5)] {
        let out = apply_edit(&t, &e).unwrap();
        let (mean, v) = moments(out.pixels(), 0.5);
        assert!(mean.abs() < 1e-3, "{}: mean {mean}", e.kind);
        assert!((v / var - 1.0).abs() < 0.05, "{}: var {v}", e.kind);
    }
    let out = apply_edit(&t, &EditDescriptor::speckle_noise(var, 5)).unwrap();
    let (_, v) = moments(out.pixels(), 0.5);
    assert!((v / (0.25 * var) - 1.0).abs() < 0.05, "speckle var {v}");
}

#[test]
fn speckle_keeps_zero() {
    let t = unit(Grid::zeros(16, 16));
    let out = apply_edit(&t, &EditDescriptor::speckle_noise(0.5, 1)).unwrap();
    assert!(out.pixels().data().iter().all(|&v| v == 0.0));
}

#[test]
fn seeded_edits_are_deterministic() {
    let t = unit(smooth(40, 40));
    let e = EditDescriptor::gaussian_noise(0.01, 77);
    assert_eq!(apply_edit(&t, &e).unwrap(), apply_edit(&t, &e).unwrap());
    let other = apply_edit(&t, &EditDescriptor::gaussian_noise(0.01, 78)).unwrap();
    assert_ne!(apply_edit(&t, &e).unwrap(), other);
}

#[test]
fn scale_is_carried_through() {
    let t = NormalizedTile::new(smooth(16, 16), 2.0, 9.0).unwrap();
    let out = apply_edit(&t, &EditDescriptor::average_blur()).unwrap();
    assert_eq!(out.scale(), (2.0, 9.0));
}

#[test]
fn dispatch_and_validation_errors() {
    let t = unit(smooth(16, 16));
    let unknown = EditDescriptor {
        kind: "swirl".into(),
        params: Default::default(),
        seed: 0,
    };
    assert!(matches!(apply_edit(&t, &unknown), Err(Error::Dispatch(_))));
    for bad in [
        EditDescriptor::rotate(60.0),
        EditDescriptor::resize(1.0),
        EditDescriptor::resize(3.0),
        EditDescriptor::gaussian_noise(-1.0, 0),
        EditDescriptor::new(EditKind::MedianBlur, &[("kernel", 4.0)], 0),
        EditDescriptor::new(EditKind::AverageBlur, &[("kernel", 0.0)], 0),
        EditDescriptor::new(EditKind::Rotate, &[("angle", 5.0), ("factor", 1.5)], 0),
        EditDescriptor::new(EditKind::Rotate, &[], 0),
    ] {
        assert!(matches!(apply_edit(&t, &bad), Err(Error::Validation(_))), "{bad:?}");
    }
}

#[test]
fn kinds_round_trip_through_names() {
    for k in EditKind::ALL {
        assert_eq!(k.as_str().parse::<EditKind>().unwrap(), k);
    }
}

fn edit_strategy() -> impl Strategy<Value = EditDescriptor> {
    prop_oneof![
        (-45.0f64..45.0).prop_map(EditDescriptor::rotate),
        (1.01f64..2.5).prop_map(EditDescriptor::resize),
        ((-45.0f64..45.0), (1.01f64..2.5)).prop_map(|(a, f)| EditDescriptor::rotate_resize(a, f)),
        ((0.0f64..0.5), any::<u64>()).prop_map(|(v, s)| EditDescriptor::gaussian_noise(v, s)),
        ((0.0f64..0.5), any::<u64>()).prop_map(|(v, s)| EditDescriptor::laplacian_noise(v, s)),
        ((0.0f64..0.5), any::<u64>()).prop_map(|(v, s)| EditDescriptor::speckle_noise(v, s)),
        Just(EditDescriptor::average_blur()),
        Just(EditDescriptor::median_blur()),
        Just(EditDescriptor::none()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outputs_stay_in_unit_range(
        h in 4usize..24,
        w in 4usize..24,
        seed in any::<u64>(),
        e in edit_strategy(),
    ) {
        let g = Grid::from_fn(h, w, |r, c| {
            let x = (seed ^ ((r * 31 + c) as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)) >> 40;
            (x % 1000) as f32 / 999.0
        });
        let out = apply_edit(&unit(g), &e).unwrap();
        prop_assert!(out.pixels().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
