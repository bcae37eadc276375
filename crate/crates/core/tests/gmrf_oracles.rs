use carcopula::bundled::india_graph;
use carcopula::diagnostics::ks_statistic;
use carcopula::gmrf::{build_precision, conditional_from_precision, sample_gmrf, scaled_correlation};
use carcopula::ArealGraph;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

/// Random spanning tree plus extra edges.
fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> ArealGraph {
    let mut edges = Vec::new();
    for i in 2..=n {
        edges.push((rng.random_range(1..i), i));
    }
    for _ in 0..rng.random_range(0..=n) {
        let (i, j) = (rng.random_range(1..=n), rng.random_range(1..=n));
        if i != j && !edges.contains(&(i.min(j), i.max(j))) && !edges.contains(&(i.max(j), i.min(j))) {
            edges.push((i.min(j), i.max(j)));
        }
    }
    ArealGraph::from_edges(&edges, n).unwrap()
}

#[test]
fn india_delta_matches_dense_inverse() {
    let g = india_graph();
    let s = scaled_correlation(&g, 0.9).unwrap();
    let inv = g.car_kernel(0.9).try_inverse().unwrap();
    for i in 0..g.n() {
        assert!((s.delta[i] - inv[(i, i)]).abs() < 1e-10, "region {i}: {} vs {}", s.delta[i], inv[(i, i)]);
    }
}

#[test]
fn log_det_matches_dense_determinant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let n = rng.random_range(2..=34);
        let g = random_graph(&mut rng, n);
        let rho = rng.random_range(0.0..0.999);
        let sigma2 = rng.random_range(0.1..5.0);
        let p = build_precision(&g, rho, sigma2).unwrap();
        let dense = (g.car_kernel(rho) / sigma2).determinant().ln();
        assert!((p.log_det().unwrap() - dense).abs() < 1e-9 * (1.0 + dense.abs()), "n={n} rho={rho}");
    }
}

#[test]
fn sample_covariance_matches_inverse_precision() {
    let g = ArealGraph::ring(5).unwrap();
    let p = build_precision(&g, 0.7, 1.0).unwrap();
    let sigma = p.q.clone().try_inverse().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m = 100_000;
    let mean = vec![0.0; 5];
    let mut acc = DMatrix::<f64>::zeros(5, 5);
    for _ in 0..m {
        let x = sample_gmrf(&mut rng, &mean, p.cholesky().unwrap(), 1.0);
        for i in 0..5 {
            for j in 0..5 {
                acc[(i, j)] += x[i] * x[j];
            }
        }
    }
    for i in 0..5 {
        for j in 0..5 {
            let est = acc[(i, j)] / m as f64;
            let se = ((sigma[(i, i)] * sigma[(j, j)] + sigma[(i, j)].powi(2)) / m as f64).sqrt();
            assert!((est - sigma[(i, j)]).abs() < 4.0 * se, "({i},{j}): {est} vs {}", sigma[(i, j)]);
        }
    }
}

#[test]
fn unit_degree_independence_draws_are_standard_normal() {
    // connected graphs with unit degrees are single edges
    let g = ArealGraph::from_edges(&[(1, 2)], 2).unwrap();
    let p = build_precision(&g, 0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sample: Vec<f64> =
        (0..50_000).flat_map(|_| sample_gmrf(&mut rng, &[0.0; 2], p.cholesky().unwrap(), 1.0)).collect();
    let normal = Normal::standard();
    let d = ks_statistic(&sample, |x| normal.cdf(x));
    // 1% critical value
    assert!(d < 1.628 / (sample.len() as f64).sqrt(), "D = {d}");
}

fn dense_conditional(p: &DMatrix<f64>, missing: &[usize], observed: &[usize], x_obs: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let sigma = p.clone().try_inverse().unwrap();
    let s_mo = DMatrix::from_fn(missing.len(), observed.len(), |a, b| sigma[(missing[a], observed[b])]);
    let s_oo = DMatrix::from_fn(observed.len(), observed.len(), |a, b| sigma[(observed[a], observed[b])]);
    let s_mm = DMatrix::from_fn(missing.len(), missing.len(), |a, b| sigma[(missing[a], missing[b])]);
    let s_oo_inv = s_oo.try_inverse().unwrap();
    let mean = &s_mo * &s_oo_inv * nalgebra::DVector::from_column_slice(x_obs);
    let cov = s_mm - &s_mo * s_oo_inv * s_mo.transpose();
    (mean.iter().copied().collect(), cov)
}

#[test]
fn random_missing_sets_match_covariance_partition() {
    let g = india_graph();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let idx: Vec<usize> = (0..34).collect();
    for _ in 0..20 {
        let p = scaled_correlation(&g, rng.random_range(0.0..0.99)).unwrap().latent_precision;
        let mut perm = idx.clone();
        perm.shuffle(&mut rng);
        let mut missing = perm[..3].to_vec();
        missing.sort_unstable();
        let observed: Vec<usize> = idx.iter().copied().filter(|i| !missing.contains(i)).collect();
        let x: Vec<f64> = observed.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let c = conditional_from_precision(&p, &observed, &x).unwrap();
        let (mean, cov) = dense_conditional(&p, &missing, &observed, &x);
        assert_eq!(c.missing_idx, missing);
        for a in 0..3 {
            assert!((c.mean[a] - mean[a]).abs() < 1e-8);
            for b in 0..3 {
                assert!((c.covariance()[(a, b)] - cov[(a, b)]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn sequential_conditioning_equals_joint() {
    let g = india_graph();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..20 {
        let p = scaled_correlation(&g, rng.random_range(0.0..0.99)).unwrap().latent_precision;
        let x: Vec<f64> = (0..34).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut perm: Vec<usize> = (0..34).collect();
        perm.shuffle(&mut rng);
        let mut block_a = perm[..3].to_vec();
        let mut block_b = perm[3..7].to_vec();
        block_a.sort_unstable();
        block_b.sort_unstable();
        let observed: Vec<usize> = (0..34).filter(|i| !block_a.contains(i) && !block_b.contains(i)).collect();
        let obs_vals: Vec<f64> = observed.iter().map(|&i| x[i]).collect();

        // A | (O, B) directly
        let mut ob: Vec<usize> = observed.iter().chain(&block_b).copied().collect();
        ob.sort_unstable();
        let ob_vals: Vec<f64> = ob.iter().map(|&i| x[i]).collect();
        let direct = conditional_from_precision(&p, &ob, &ob_vals).unwrap();

        // (A, B) | O, then A | B within that conditional
        let first = conditional_from_precision(&p, &observed, &obs_vals).unwrap();
        let local_b: Vec<usize> = first.missing_idx.iter().enumerate().filter(|(_, i)| block_b.contains(i)).map(|(k, _)| k).collect();
        let local_a: Vec<usize> = first.missing_idx.iter().enumerate().filter(|(_, i)| block_a.contains(i)).map(|(k, _)| k).collect();
        let shifted: Vec<f64> = local_b.iter().map(|&k| x[first.missing_idx[k]] - first.mean[k]).collect();
        let second = conditional_from_precision(&first.precision, &local_b, &shifted).unwrap();
        assert_eq!(second.missing_idx, local_a);
        for (k, &la) in local_a.iter().enumerate() {
            assert!((second.mean[k] + first.mean[la] - direct.mean[k]).abs() < 1e-8);
            for (l, _) in local_a.iter().enumerate() {
                assert!((second.precision[(k, l)] - direct.precision[(k, l)]).abs() < 1e-8);
            }
        }
    }
}
