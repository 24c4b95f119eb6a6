use crossmix_core::patterns::tabulate;
use crossmix_core::simulate::{default_sigma, simulate_replicate, PatternCell, ScenarioGroup};
use crossmix_core::{
    delta_variance, fit, interaction_contrast, simulate_dataset, FitOptions, GroupEffects, GroupingScheme,
    Method, PatternId, SimScenario,
};
use crossmix_core::Sequence;

fn complete_scenario(n_pairs: usize, seed: u64) -> SimScenario {
    let cells = Sequence::ALL.map(|s| PatternCell { pattern: PatternId::new(0).unwrap(), sequence: s, prob: 0.5 }).to_vec();
    SimScenario {
        scheme: GroupingScheme::single("all"),
        groups: vec![ScenarioGroup {
            label: "all".into(),
            prob: 1.0,
            effects: GroupEffects::from_array([10.0, 20.0, 30.0, 40.0, 2.0, -1.0, 3.0, 0.5]),
            cells,
        }],
        sigma: default_sigma(),
        n_pairs,
        seed,
    }
}

#[test]
fn sample_moments_converge_to_truth() {
    let scn = complete_scenario(10_000, 99);
    let records = simulate_dataset(&scn).unwrap();
    let n = records.len() as f64;
    for s in Sequence::ALL {
        let rows: Vec<[f64; 4]> = records
            .iter()
            .filter(|r| r.sequence() == s)
            .map(|r| std::array::from_fn(|k| r.values()[k].unwrap()))
            .collect();
        let m = rows.len() as f64;
        assert!((m / n - 0.5).abs() < 4.0 * (0.25 / n).sqrt());
        let truth = scn.groups[0].effects.mean(s);
        let mean: [f64; 4] = std::array::from_fn(|k| rows.iter().map(|r| r[k]).sum::<f64>() / m);
        for k in 0..4 {
            let se = (scn.sigma[(k, k)] / m).sqrt();
            assert!((mean[k] - truth[k]).abs() < 4.0 * se, "mean {k}: {} vs {}", mean[k], truth[k]);
        }
        for i in 0..4 {
            for j in 0..4 {
                let c = rows.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (m - 1.0);
                let se = ((scn.sigma[(i, i)] * scn.sigma[(j, j)] + scn.sigma[(i, j)].powi(2)) / m).sqrt();
                assert!((c - scn.sigma[(i, j)]).abs() < 4.5 * se, "cov {i}{j}: {c}");
            }
        }
    }
}

#[test]
fn pattern_frequencies_follow_scenario() {
    let mut scn = SimScenario::barge_like(5);
    scn.n_pairs = 10_000;
    let records = simulate_replicate(&scn, 3).unwrap();
    let counts = tabulate(&records, &scn.scheme);
    let n = records.len() as f64;
    let mut chi2 = 0.0;
    let mut cells = 0;
    for g in &scn.groups {
        for c in &g.cells {
            let expected = n * g.prob * c.prob;
            let observed = counts.by_pattern[c.pattern.index()][c.sequence.index()] as f64;
            chi2 += (observed - expected).powi(2) / expected;
            cells += 1;
        }
    }
    // 99.9% quantile of chi-square with 19 degrees of freedom is 43.82.
    assert_eq!(cells, 20);
    assert!(chi2 < 43.82, "chi-square {chi2}");
    let impossible: usize = PatternId::all()
        .filter(|p| scn.groups.iter().all(|g| g.cells.iter().all(|c| c.pattern != *p)))
        .map(|p| counts.pattern_total(p))
        .sum();
    assert_eq!(impossible, 0);
}

#[test]
fn replicates_are_reproducible_and_distinct() {
    let scn = SimScenario::barge_like(17);
    let a = simulate_replicate(&scn, 4).unwrap();
    let b = simulate_replicate(&scn, 4).unwrap();
    let c = simulate_replicate(&scn, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mut longer = scn.clone();
    longer.n_pairs = 300;
    let d = simulate_replicate(&longer, 4).unwrap();
    assert_eq!(&d[..200], &a[..]);
}

fn rmse(n_pairs: usize, reps: u64) -> (f64, f64) {
    let mut scn = SimScenario::barge_like(2024);
    scn.n_pairs = n_pairs;
    let truth = scn.truth_contrast(interaction_contrast());
    let opts = FitOptions { method: Method::Reml, ..FitOptions::default() };
    let (mut gamma_sq, mut sigma_sq) = (0.0, 0.0);
    let mut used = 0;
    for rep in 0..reps {
        let records = simulate_replicate(&scn, rep).unwrap();
        let f = fit(&records, &scn.scheme, &opts).unwrap();
        if !f.converged || f.groups.iter().any(|g| g.estimable.iter().any(|e| !e)) {
            continue;
        }
        let gamma = delta_variance(&f, interaction_contrast()).unwrap().gamma_hat;
        gamma_sq += (gamma - truth).powi(2);
        sigma_sq += (f.sigma() - scn.sigma).norm_squared() / scn.sigma.norm_squared();
        used += 1;
    }
    assert!(used as f64 >= 0.9 * reps as f64);
    ((gamma_sq / used as f64).sqrt(), (sigma_sq / used as f64).sqrt())
}

#[test]
fn estimates_are_consistent() {
    let (g200, s200) = rmse(200, 50);
    let (g2000, s2000) = rmse(2000, 50);
    // Root-n rates predict a ratio near √10 ≈ 3.16.
    assert!(g200 / g2000 > 2.0, "gamma rmse {g200} -> {g2000}");
    assert!(s200 / s2000 > 2.0, "sigma rmse {s200} -> {s2000}");
    assert!(s2000 < 0.1);
}

fn complete_case_sigma_error(n_pairs: usize, seed: u64) -> f64 {
    let scn = complete_scenario(n_pairs, seed);
    let records = simulate_dataset(&scn).unwrap();
    let resid: Vec<nalgebra::Vector4<f64>> = records
        .iter()
        .map(|r| {
            let m = scn.groups[0].effects.mean(r.sequence());
            nalgebra::Vector4::from_fn(|k, _| r.values()[k].unwrap() - m[k])
        })
        .collect();
    let s = resid.iter().map(|d| d * d.transpose()).sum::<nalgebra::Matrix4<f64>>() / resid.len() as f64;
    (s - scn.sigma).norm()
}

#[test]
fn complete_case_covariance_converges() {
    let median = |n: usize| {
        let mut e: Vec<f64> = (0..20).map(|seed| complete_case_sigma_error(n, seed)).collect();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (e[9] + e[10]) / 2.0
    };
    assert!(median(10_000) < median(100));
}

#[test]
fn equal_group_means_make_both_analyses_unbiased() {
    use crossmix_core::simulate::{run_calibration, CalibrationOptions};
    let scn = SimScenario::non_ignorable(0.0, 8);
    let opts = CalibrationOptions { compare_naive: true, ..CalibrationOptions::new(Method::Reml) };
    let rep = run_calibration(&scn, 200, &opts).unwrap();
    let naive = rep.naive.unwrap();
    assert!(rep.pattern_mixture.bias.abs() < 3.0 * rep.pattern_mixture.mc_se);
    assert!(naive.bias.abs() < 3.0 * naive.mc_se);
    assert!((rep.pattern_mixture.empirical_sd / naive.empirical_sd - 1.0).abs() < 0.25);
}
