use afeg::fit::{fit_parameters, local_conditional, pseudo_grad, pseudo_loglik, FitOptions};
use afeg::graph::{random_binary_covariates, random_tree, seeded_rng};
use afeg::{Graph, PairwiseModel};
use rand::seq::SliceRandom;

#[test]
fn gradient_matches_central_differences() {
    for seed in 0..5 {
        let g = random_tree(8, seed).with_covariates(random_binary_covariates(8, 2, seed)).unwrap();
        let model = PairwiseModel::random(g.clone(), seed + 100);
        let x = model.sample_realization(seed).unwrap();
        let (t1, t2) = (model.theta1().to_vec(), model.theta2().to_vec());
        let (g1, g2) = pseudo_grad(&t1, &t2, &g, &x).unwrap();
        let h = 1e-5;
        let f = |a: &[f64], b: &[f64]| pseudo_loglik(a, b, &g, &x).unwrap();
        for k in 0..t1.len() {
            let (mut up, mut down) = (t1.clone(), t1.clone());
            up[k] += h;
            down[k] -= h;
            let fd = (f(&up, &t2) - f(&down, &t2)) / (2.0 * h);
            assert!((fd - g1[k]).abs() <= 1e-5 * g1[k].abs().max(1.0));
        }
        for k in 0..t2.len() {
            let (mut up, mut down) = (t2.clone(), t2.clone());
            up[k] += h;
            down[k] -= h;
            let fd = (f(&t1, &up) - f(&t1, &down)) / (2.0 * h);
            assert!((fd - g2[k]).abs() <= 1e-5 * g2[k].abs().max(1.0));
        }
    }
}

#[test]
fn fitted_conditionals_track_the_generating_model() {
    let n = 200;
    let g = random_tree(n, 3).with_covariates(random_binary_covariates(n, 5, 4)).unwrap();
    let truth = PairwiseModel::random(g.clone(), 5);
    let x = truth.sample_realization(6).unwrap();
    let options = FitOptions { max_iters: 2000, grad_tolerance: 1e-6, ..FitOptions::default() };
    let fit = fit_parameters(&g, &x, &options).unwrap();
    let trace = &fit.diagnostics.objective_trace;
    assert!(trace.windows(2).all(|w| w[1] >= w[0]));
    let mean_gap: f64 = (0..n)
        .map(|i| {
            let a = local_conditional(&fit.theta1, &fit.theta2, &g, &x, i).unwrap();
            let b = local_conditional(truth.theta1(), truth.theta2(), &g, &x, i).unwrap();
            (a - b).abs()
        })
        .sum::<f64>()
        / n as f64;
    assert!(mean_gap <= 0.1, "mean gap {mean_gap}");
}

#[test]
fn converged_fit_has_small_gradient() {
    let g = random_tree(60, 1).with_covariates(random_binary_covariates(60, 1, 2)).unwrap();
    let x = PairwiseModel::random(g.clone(), 3).sample_realization(4).unwrap();
    let options = FitOptions { max_iters: 5000, grad_tolerance: 1e-5, l2: 0.05, ..FitOptions::default() };
    let fit = fit_parameters(&g, &x, &options).unwrap();
    assert!(fit.diagnostics.converged);
    assert!(fit.diagnostics.final_grad_norm <= 1e-5);
}

#[test]
fn pseudo_likelihood_ignores_node_numbering() {
    let n = 15;
    let g = random_tree(n, 9).with_covariates(random_binary_covariates(n, 2, 1)).unwrap();
    let model = PairwiseModel::random(g.clone(), 2);
    let x = model.sample_realization(3).unwrap();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded_rng(4));
    let edges: Vec<(usize, usize)> = g.edges().into_iter().map(|(a, b)| (perm[a], perm[b])).collect();
    let mut covariates = vec![Vec::new(); n];
    let mut y = vec![0; n];
    for i in 0..n {
        covariates[perm[i]] = g.covariates(i).to_vec();
        y[perm[i]] = x[i];
    }
    let permuted = Graph::new(n, &edges, covariates).unwrap();
    let a = pseudo_loglik(model.theta1(), model.theta2(), &g, &x).unwrap();
    let b = pseudo_loglik(model.theta1(), model.theta2(), &permuted, &y).unwrap();
    assert!((a - b).abs() < 1e-10);
}
