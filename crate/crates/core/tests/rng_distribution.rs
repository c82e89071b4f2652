use bridgeflow::RngStream;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Pearson goodness of fit of the normal generator on 20 equiprobable bins.
#[test]
fn normals_pass_a_chi_square_test() {
    let n = 100_000;
    let bins = 20;
    let standard = Normal::new(0.0, 1.0).unwrap();
    let edges: Vec<f64> = (1..bins).map(|k| standard.inverse_cdf(k as f64 / bins as f64)).collect();
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(1.0 - 0.001);
    for stream in 0..3 {
        let mut rng = RngStream::new(42, stream);
        let mut counts = vec![0usize; bins];
        for _ in 0..n {
            let x = rng.normal();
            counts[edges.partition_point(|&e| e < x)] += 1;
        }
        let expected = n as f64 / bins as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(stat < critical, "stream {stream}: chi2 = {stat:.2} >= {critical:.2}");
    }
}

#[test]
fn uniforms_pass_a_chi_square_test() {
    let n = 100_000;
    let bins = 20;
    let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(1.0 - 0.001);
    let mut rng = RngStream::new(5, 9);
    let mut counts = vec![0usize; bins];
    for _ in 0..n {
        counts[(rng.uniform() * bins as f64) as usize] += 1;
    }
    let expected = n as f64 / bins as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(stat < critical, "chi2 = {stat:.2}");
}
