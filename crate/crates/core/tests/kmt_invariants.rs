use rand::Rng;
use strongapprox::family::{Family, NoisePath};
use strongapprox::kmt::{
    build_blocks, clip, covariance_truncation_check, ell_k, m_dependent_value, nu_k, BlockOptions,
    KmtSchedule,
};
use strongapprox::observable::{Observable, PiecewisePolynomial};
use strongapprox::process::Process;
use strongapprox::rng::seed_stream;
use strongapprox::stats::batch_means;

fn quartic() -> Process {
    let obs = PiecewisePolynomial::polynomial(vec![0.0, 0.0, 0.0, 0.0, 10.0]);
    Process::centered(Family::doubling(), Observable::Piecewise(obs), 0).unwrap()
}

fn symbols(n: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed_stream(seed, 0);
    (0..n).map(|_| rng.random_range(0..2)).collect()
}

#[test]
fn older_noise_does_not_move_the_approximation() {
    let p = quartic();
    let (m, big_m) = (5, 4.0);
    let path = symbols(30, 1);
    let j = path.len();
    let base = m_dependent_value(
        &p,
        big_m,
        &NoisePath::Symbols(path[j - m - 1..].to_vec()),
        &BlockOptions::default(),
        0,
    )
    .unwrap();
    for s in 2..12 {
        let mut other = symbols(j - m - 1, s);
        other.extend_from_slice(&path[j - m - 1..]);
        let v = m_dependent_value(
            &p,
            big_m,
            &NoisePath::Symbols(other[j - m - 1..].to_vec()),
            &BlockOptions::default(),
            s,
        )
        .unwrap();
        assert!((v - base).abs() < 1e-10);
    }

    // brute force: fresh stationary start and older noise, same window
    let fam = p.family();
    let window = &path[j - m - 1..];
    let draws: Vec<f64> = (0..200_000u64)
        .map(|i| {
            let mut rng = seed_stream(99, i);
            let w0 = fam.sample_stationary(&mut rng);
            let mut noise: Vec<usize> = (0..20).map(|_| rng.random_range(0..2)).collect();
            noise.extend_from_slice(window);
            let xs = p.simulate_values(&w0, &NoisePath::Symbols(noise)).unwrap();
            clip(*xs.last().unwrap(), big_m).0
        })
        .collect();
    let est = batch_means(&draws);
    assert!(
        (est.mean - base).abs() < 4.0 * est.se + 1e-12,
        "{base} vs {est:?}"
    );
}

#[test]
fn clipped_centered_variables_are_bounded_and_centered() {
    let p = quartic();
    let s = KmtSchedule::new(3.0, 1.0, 6).unwrap();
    for k in [4, 5] {
        let b = build_blocks(&p, &s, k, 4000, Some(12), 7, &BlockOptions::default()).unwrap();
        let big_m = s.truncation(k);
        assert!(b.x.iter().flatten().all(|x| x.abs() <= 2.0 * big_m));
        for pos in 0..b.len {
            let col: Vec<f64> = b.x.iter().map(|r| r[pos]).collect();
            let e = batch_means(&col);
            assert!(e.mean.abs() < 4.0 * e.se, "k = {k}, position {pos}: {e:?}");
        }
    }
}

#[test]
fn block_variance_approaches_sigma2() {
    let obs = Observable::cosine();
    let p = Process::centered(Family::doubling(), obs, 0).unwrap();
    let s = KmtSchedule::new(3.0, 1.0, 8).unwrap();
    let nus: Vec<_> = (4..=8)
        .map(|k| {
            let b = build_blocks(
                &p,
                &s,
                k,
                20_000,
                Some(2 * s.block(k)),
                11,
                &BlockOptions::default(),
            )
            .unwrap();
            nu_k(&b).unwrap()
        })
        .collect();
    for w in nus.windows(2) {
        let slack = 3.0 * (w[0].se.powi(2) + w[1].se.powi(2)).sqrt();
        assert!(
            (w[1].mean - 0.5).abs() <= (w[0].mean - 0.5).abs() + slack,
            "{nus:?}"
        );
    }
    let last = nus.last().unwrap();
    assert!((last.mean - 0.5).abs() < 3.0 * last.se, "{last:?}");
}

#[test]
fn covariance_sums_track_the_clip_tail() {
    let p = quartic();
    let r = covariance_truncation_check(&p, 3.0, 4, 20_000, 5).unwrap();
    assert!(r.bound > 0.0);
    assert!(r.holds, "{r:?}");
    let r = covariance_truncation_check(&p, 100.0, 4, 20_000, 5).unwrap();
    assert_eq!(r.bound, 0.0);
    assert!(r.diff.mean.abs() < 1e-12, "{r:?}");
    assert!(r.holds);
}

#[test]
fn ell_values() {
    let v = ell_k(3, 4.0).unwrap();
    assert!((v - 3f64.powf(0.75) / 3f64.ln().sqrt()).abs() < 1e-12);
    assert!(ell_k(1, 4.0).is_err());
    assert!(ell_k(3, 2.0).is_err());
}
