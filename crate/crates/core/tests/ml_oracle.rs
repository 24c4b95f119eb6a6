//! The fitted ML optimum agrees with a derivative-free search over the full
//! (β, θ) space.

use crossmix_core::estimation::{ml_objective, ParameterVector, Problem};
use crossmix_core::{fit, FitOptions, GroupingScheme, MeanModel, Method, PairRecord, PatternId, Sequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, x0: &[f64], scale: f64, max_evals: usize) -> (Vec<f64>, f64) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale;
        simplex.push(v);
    }
    let mut vals: Vec<f64> = simplex.iter().map(|x| f(x)).collect();
    let mut evals = n + 1;
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        if (vals[n] - vals[0]).abs() < 1e-13 * vals[0].abs().max(1.0) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let towards = |t: f64| -> Vec<f64> { (0..n).map(|j| centroid[j] + t * (simplex[n][j] - centroid[j])).collect() };
        let xr = towards(-1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < vals[0] {
            let xe = towards(-2.0);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[n] = xe;
                vals[n] = fe;
            } else {
                simplex[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            simplex[n] = xr;
            vals[n] = fr;
        } else {
            let xc = if fr < vals[n] { towards(-0.5) } else { towards(0.5) };
            let fc = f(&xc);
            evals += 1;
            if fc < vals[n].min(fr) {
                simplex[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    simplex[i] = (0..n).map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j])).collect();
                    vals[i] = f(&simplex[i]);
                }
                evals += n;
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap()).unwrap();
    (simplex[best].clone(), vals[best])
}

fn instance(seed: u64) -> Vec<PairRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout: [(u8, usize); 5] = [(0, 8), (1, 3), (2, 3), (4, 3), (5, 3)];
    let mut records = Vec::new();
    for (p, count) in layout {
        for k in 0..count {
            let s = if k % 2 == 0 { Sequence::AB } else { Sequence::BA };
            let obs = PatternId::new(p).unwrap().mask(s).observed();
            let shared: f64 = rng.sample(StandardNormal);
            let y = std::array::from_fn(|i| {
                obs[i].then(|| 2.0 + i as f64 + shared + rng.sample::<f64, _>(StandardNormal))
            });
            records.push(PairRecord::new(format!("{}", records.len()), s, y).unwrap());
        }
    }
    records
}

#[test]
fn newton_ml_matches_nelder_mead() {
    let scheme = GroupingScheme::completers_dropout_pair();
    for seed in 0..20 {
        let records = instance(seed);
        let opts = FitOptions { method: Method::Ml, ..FitOptions::default() };
        let fitted = fit(&records, &scheme, &opts).unwrap();
        assert!(fitted.converged, "seed {seed}");
        assert!(fitted.groups.iter().all(|g| g.estimable.iter().all(|&e| e)));

        let problem = Problem::new(&records, &scheme, MeanModel::Crossover).unwrap();
        let n_groups = problem.groups().len();
        let negll = |x: &[f64]| -> f64 {
            let p = ParameterVector::from_flat(x, n_groups, 8);
            ml_objective(&problem, &p).map(|v| -v).unwrap_or(f64::INFINITY)
        };
        let mut x = vec![0.0; n_groups * 8 + 10];
        let mut best = f64::INFINITY;
        for _ in 0..40 {
            let (xn, v) = nelder_mead(&negll, &x, 0.5, 40_000);
            let improved = best - v;
            x = xn;
            best = v;
            if improved.abs() < 1e-10 {
                break;
            }
        }
        let ll = fitted.loglik;
        assert!(-best <= ll + 1e-9 * ll.abs(), "seed {seed}: search found {} above {ll}", -best);
        assert!((-best - ll).abs() < 1e-6, "seed {seed}: search {} vs fit {ll}", -best);
        let flat = fitted.params.to_flat();
        let p = ParameterVector::from_flat(&x, n_groups, 8);
        let (s_nm, s_fit) = (p.sigma(), fitted.sigma());
        for i in 0..4 {
            for j in 0..4 {
                assert!((s_nm[(i, j)] - s_fit[(i, j)]).abs() < 1e-4, "seed {seed}: sigma {i}{j}");
            }
        }
        for (a, b) in flat[..n_groups * 8].iter().zip(&x) {
            assert!((a - b).abs() < 1e-4, "seed {seed}: beta {a} vs {b}");
        }
    }
}
