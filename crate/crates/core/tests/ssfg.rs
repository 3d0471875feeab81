use proptest::prelude::*;
use ssfg::autodiff::{ParamStore, Phase, Tape, Tensor};
use ssfg::rng::RngStream;
use ssfg::ssfg::{
    beta_sample, dropout_apply, sample_lambda, ssfg_apply, DropoutConfig, SsfgConfig, SsfgMode, SsfgSite,
};

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

#[test]
fn beta_one_is_uniform() {
    let mut rng = RngStream::new(1);
    let xs: Vec<f64> = (0..1_000_000).map(|_| beta_sample(1.0, &mut rng).unwrap()).collect();
    let (mean, var) = moments(&xs);
    assert!((mean - 0.5).abs() < 0.002, "{mean}");
    assert!((var - 1.0 / 12.0).abs() < 0.002, "{var}");
}

#[test]
fn beta_300_spread() {
    let mut rng = RngStream::new(2);
    let xs: Vec<f64> = (0..200_000).map(|_| beta_sample(300.0, &mut rng).unwrap()).collect();
    let sd = moments(&xs).1.sqrt();
    let analytic = (1.0f64 / (4.0 * 601.0)).sqrt();
    assert!((sd - analytic).abs() < 0.002, "{sd} vs {analytic}");
}

#[test]
fn beta_is_symmetric() {
    for (k, alpha) in [1.0, 5.0, 100.0].into_iter().enumerate() {
        let mut rng = RngStream::new(10 + k as u64);
        let below = (0..1_000_000).filter(|_| beta_sample(alpha, &mut rng).unwrap() < 0.5).count();
        let frac = below as f64 / 1e6;
        assert!((frac - 0.5).abs() < 0.002, "alpha {alpha}: {frac}");
    }
}

#[test]
fn lambda_at_alpha_one() {
    let mut rng = RngStream::new(3);
    let mut f = sample_lambda(1.0, 1_000_000, &mut rng).unwrap().factors;
    let mean_ln = f.iter().map(|v| v.ln()).sum::<f64>() / f.len() as f64;
    f.sort_by(f64::total_cmp);
    assert!(f[0] >= 0.5 && f[f.len() - 1] <= 2.0);
    let median = f[f.len() / 2];
    assert!((0.99..=1.01).contains(&median), "{median}");
    assert!(mean_ln.abs() <= 0.005, "{mean_ln}");
}

fn captured_site(mode: SsfgMode, seed: u64) -> (SsfgSite, std::rc::Rc<std::cell::RefCell<ssfg::ssfg::SiteLog>>) {
    let mut site = SsfgSite::new(SsfgConfig::new(2.0, mode).unwrap(), &RngStream::new(seed), "site");
    let log = site.record();
    (site, log)
}

#[test]
fn backward_scales_upstream_gradient_by_fresh_factors() {
    let x = Tensor::from_rows(&[&[2.0, 4.0], &[3.0, 6.0]]);
    for mode in [SsfgMode::Full, SsfgMode::BackwardOnly] {
        let (mut site, log) = captured_site(mode, 4);
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = ssfg_apply(&mut tape, xv, &mut site, Phase::Train).unwrap();
        let out = tape.value(y).clone();
        let s = tape.sum(y);
        tape.backward(s, &mut ParamStore::new()).unwrap();
        let log = log.borrow();
        let (fwd, bwd) = (&log.forward[0], &log.backward[0]);
        assert_eq!(out, x.scale_rows(fwd));
        assert_eq!(tape.grad(xv).unwrap(), &Tensor::ones(&[2, 2]).scale_rows(bwd));
        if mode == SsfgMode::BackwardOnly {
            assert_eq!(fwd, &vec![1.0, 1.0]);
            assert_eq!(out, x);
        } else {
            assert_ne!(fwd, bwd);
        }
    }
}

#[test]
fn infinite_alpha_matches_off_bitwise() {
    let mut rng = RngStream::new(5);
    let x = Tensor::matrix(4, 3, (0..12).map(|_| rng.normal()).collect()).unwrap();
    let up = Tensor::matrix(4, 3, (0..12).map(|_| rng.normal()).collect()).unwrap();
    let run = |cfg: SsfgConfig| {
        let mut site = SsfgSite::new(cfg, &RngStream::new(6), "s");
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = ssfg_apply(&mut tape, xv, &mut site, Phase::Train).unwrap();
        let u = tape.constant(up.clone());
        let p = tape.mul(y, u).unwrap();
        let s = tape.sum(p);
        tape.backward(s, &mut ParamStore::new()).unwrap();
        (tape.value(y).clone(), tape.grad(xv).unwrap().clone())
    };
    let inf = SsfgConfig::new(f64::INFINITY, SsfgMode::Full).unwrap();
    assert_eq!(run(inf), run(SsfgConfig::off()));
}

#[test]
fn eval_phase_does_not_advance_streams() {
    let x = Tensor::<f64>::from_rows(&[&[1.0], &[2.0], &[3.0]]);
    let (mut a, log_a) = captured_site(SsfgMode::Full, 7);
    let (mut b, log_b) = captured_site(SsfgMode::Full, 7);
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    for _ in 0..3 {
        ssfg_apply(&mut tape, xv, &mut a, Phase::Eval).unwrap();
    }
    ssfg_apply(&mut tape, xv, &mut a, Phase::Train).unwrap();
    ssfg_apply(&mut tape, xv, &mut b, Phase::Train).unwrap();
    assert_eq!(log_a.borrow().forward, log_b.borrow().forward);
}

#[test]
fn dropout_monte_carlo() {
    let mut rng = RngStream::new(8);
    let mut src = RngStream::new(9);
    let x = Tensor::matrix(1000, 100, (0..100_000).map(|_| src.uniform_range(0.5, 1.5)).collect()).unwrap();
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let y = dropout_apply(&mut tape, xv, DropoutConfig::new(0.5).unwrap(), Phase::Train, &mut rng).unwrap();
    let out = tape.value(y);
    let kept = out.data().iter().filter(|&&v| v != 0.0).count() as f64 / 1e5;
    assert!((kept - 0.5).abs() < 0.01, "{kept}");
    let ratio = out.sum() / x.sum();
    assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
}

proptest! {
    #[test]
    fn factors_stay_in_support(alpha in 0.05f64..500.0, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let f = sample_lambda(alpha, 64, &mut rng).unwrap().factors;
        prop_assert!(f.iter().all(|&v| (0.5..=2.0).contains(&v)));
    }

    #[test]
    fn eval_output_is_test_scale_times_input(scale in 0.1f64..3.0, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let x = Tensor::matrix(3, 2, (0..6).map(|_| rng.normal()).collect()).unwrap();
        let mut cfg = SsfgConfig::new(4.0, SsfgMode::Full).unwrap();
        cfg.test_scale = scale;
        let mut site = SsfgSite::new(cfg, &rng, "s");
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = ssfg_apply(&mut tape, xv, &mut site, Phase::Eval).unwrap();
        prop_assert_eq!(tape.value(y), &x.map(|v| scale * v));
    }
}
