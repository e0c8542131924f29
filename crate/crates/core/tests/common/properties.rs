//! Invariants checked on random inputs. Each entry runs a deterministic
//! proptest runner and returns the first counterexample as text.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use vidphys::autodiff::{Tape, Tensor};
use vidphys::dynamics::rhs_spring;
use vidphys::harness::metrics::{iou, psnr, PSNR_CAP};
use vidphys::losses::{mask_bce, occupancy_regularizer, photometric_mse};
use vidphys::renderer::{blend, layered_opacity};
use vidphys::training::{frame_curriculum, lr_schedule};

pub type Property = (&'static str, fn() -> Result<(), String>);

const CASES: u32 = 256;

fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let config = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn unit_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n)
}

pub fn all() -> Vec<Property> {
    vec![
        ("photometric loss is zero at a perfect fit", photometric_zero),
        ("regularizer peaks at 0.25 for opacity 0.5", regularizer_peak),
        ("mask BCE is ln 2 at opacity 0.5", bce_half),
        ("blending is a convex combination", blend_convex),
        ("layered opacity is the maximum", layering_max),
        ("frame curriculum is monotone and bounded", curriculum),
        ("learning-rate schedule values", schedule),
        ("spring forces are equal and opposite", spring_third_law),
        ("spring force vanishes at separation 2l", spring_rest),
        ("IoU identities", iou_identities),
        ("PSNR identities", psnr_identities),
    ]
}

fn photometric_zero() -> Result<(), String> {
    run((unit_values(12), 1e-3f64..0.5), |(v, d)| {
        let tape = Tape::inference();
        let target = Tensor::matrix(4, 3, v.clone()).unwrap();
        let pred = tape.constant(target.clone());
        prop_assert_eq!(photometric_mse(pred, &target).unwrap().item(), 0.0);
        let mut shifted = v;
        shifted[5] += d;
        let pred = tape.constant(Tensor::matrix(4, 3, shifted).unwrap());
        prop_assert!(photometric_mse(pred, &target).unwrap().item() > 0.0);
        Ok(())
    })
}

fn regularizer_peak() -> Result<(), String> {
    run(unit_values(9), |o| {
        let tape = Tape::inference();
        let r = occupancy_regularizer(tape.column(o)).unwrap().item();
        prop_assert!((0.0..=0.25).contains(&r));
        let half = occupancy_regularizer(tape.column(vec![0.5; 9])).unwrap().item();
        prop_assert_eq!(half, 0.25);
        Ok(())
    })
}

fn bce_half() -> Result<(), String> {
    run(prop::collection::vec(any::<bool>(), 1..20), |m| {
        let tape = Tape::inference();
        let n = m.len();
        let target = Tensor::matrix(n, 1, m.iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let v = mask_bce(tape.column(vec![0.5; n]), &target).unwrap().item();
        prop_assert!((v - std::f64::consts::LN_2).abs() < 1e-12, "{}", v);
        Ok(())
    })
}

fn blend_convex() -> Result<(), String> {
    run((unit_values(15), unit_values(15), unit_values(5)), |(bg, obj, o)| {
        let tape = Tape::inference();
        let c = blend(
            tape.constant(Tensor::matrix(5, 3, bg.clone()).unwrap()),
            tape.constant(Tensor::matrix(5, 3, obj.clone()).unwrap()),
            tape.column(o.clone()),
        )
        .unwrap()
        .values();
        for i in 0..15 {
            let (lo, hi) = (bg[i].min(obj[i]), bg[i].max(obj[i]));
            prop_assert!(c[i] >= lo - 1e-15 && c[i] <= hi + 1e-15);
            let expect = (1.0 - o[i / 3]) * bg[i] + o[i / 3] * obj[i];
            prop_assert!((c[i] - expect).abs() < 1e-15);
        }
        Ok(())
    })
}

fn layering_max() -> Result<(), String> {
    run((unit_values(6), unit_values(6)), |(a, b)| {
        let tape = Tape::inference();
        let (o, winner) = layered_opacity(&[tape.column(a.clone()), tape.column(b.clone())]).unwrap();
        let o = o.values();
        for i in 0..6 {
            prop_assert_eq!(o[i], a[i].max(b[i]));
            prop_assert_eq!(winner[i], usize::from(b[i] > a[i]));
        }
        Ok(())
    })
}

fn curriculum() -> Result<(), String> {
    run((1usize..10, 1usize..50, 1usize..30, 0usize..2000), |(n0, incr, total, count)| {
        let a = frame_curriculum(count, n0, incr, total);
        let b = frame_curriculum(count + 1, n0, incr, total);
        prop_assert!(b >= a && b <= a + 1);
        prop_assert!(a <= total);
        prop_assert_eq!(frame_curriculum(0, n0, incr, total), n0.min(total));
        Ok(())
    })
}

fn schedule() -> Result<(), String> {
    run((1e-5f64..1e-1, 0.5f64..1.0, 1.0f64..200.0, 0.0f64..2000.0), |(r0, beta, n, e)| {
        prop_assert_eq!(lr_schedule(0.0, r0, beta, n), r0);
        prop_assert!((lr_schedule(n, r0, beta, n) - r0 * beta).abs() <= 1e-15 * r0);
        prop_assert!(lr_schedule(e + 1.0, r0, beta, n) <= lr_schedule(e, r0, beta, n));
        Ok(())
    })
}

fn spring_state() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 8).prop_filter("separated masses", |z| (z[0] - z[2]).hypot(z[1] - z[3]) > 1e-3)
}

fn spring_third_law() -> Result<(), String> {
    run((spring_state(), 0.1f64..10.0, 0.05f64..0.5), |(z, k, l)| {
        let tape = Tape::inference();
        let zv: Vec<_> = z.iter().map(|&x| tape.scalar(x)).collect();
        let d: Vec<f64> = rhs_spring(&zv, tape.scalar(k), tape.scalar(l)).unwrap().iter().map(|v| v.item()).collect();
        prop_assert_eq!(&d[..4], &z[4..]);
        let scale = d[4].abs().max(d[5].abs()).max(1.0);
        prop_assert!((d[4] + d[6]).abs() <= 1e-12 * scale && (d[5] + d[7]).abs() <= 1e-12 * scale);
        Ok(())
    })
}

fn spring_rest() -> Result<(), String> {
    run(((-1.0f64..1.0), (-1.0f64..1.0), (0.0..std::f64::consts::TAU), 0.1f64..10.0, 0.05f64..0.5), |(x, y, a, k, l)| {
        let tape = Tape::inference();
        let (s, c) = a.sin_cos();
        let z = [x, y, x + 2.0 * l * c, y + 2.0 * l * s, 0.0, 0.0, 0.0, 0.0];
        let zv: Vec<_> = z.iter().map(|&v| tape.scalar(v)).collect();
        let d = rhs_spring(&zv, tape.scalar(k), tape.scalar(l)).unwrap();
        for f in &d[4..] {
            prop_assert!(f.item().abs() < 1e-12 * k, "{}", f.item());
        }
        Ok(())
    })
}

fn iou_identities() -> Result<(), String> {
    run((unit_values(30), unit_values(30)), |(a, b)| {
        let v = iou(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a).unwrap());
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let inverted: Vec<f64> = a.iter().map(|&x| if x >= 0.5 { 0.0 } else { 1.0 }).collect();
        let disjoint = iou(&a, &inverted).unwrap();
        prop_assert_eq!(disjoint, 0.0);
        Ok(())
    })
}

fn psnr_identities() -> Result<(), String> {
    run((unit_values(30), 1e-3f64..0.5), |(a, d)| {
        prop_assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let shifted: Vec<f64> = a.iter().map(|x| x + d).collect();
        let p = psnr(&a, &shifted).unwrap();
        prop_assert!((p + 20.0 * d.log10()).abs() < 1e-9, "{} vs {}", p, -20.0 * d.log10());
        prop_assert_eq!(p, psnr(&shifted, &a).unwrap());
        Ok(())
    })
}
