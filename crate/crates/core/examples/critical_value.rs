//! Monte-Carlo critical value of the combined error functional, its
//! homogeneity in the covariance scale, and a brute-force check.

use didguard::inference::quantile_rank;
use didguard::{critical_value, NormOrder, SeverityParams, TimeLayout, ViolationMode};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> didguard::Result<()> {
    let layout = TimeLayout::from_lengths(2, 1)?;
    let params = SeverityParams::new(NormOrder::ONE, 1.0, ViolationMode::Iterative)?;
    let identity = DMatrix::<f64>::identity(2, 2);

    let f1 = critical_value(0.05, &identity, layout, &params, None, 42, 20_000)?;
    let f4 = critical_value(0.05, &(&identity * 4.0), layout, &params, None, 42, 20_000)?;
    println!("f(0.05, I)  = {f1:.6}");
    println!("f(0.05, 4I) = {f4:.6}  (ratio {:.12})", f4 / f1);

    // direct quantile of |Z1| + |Z2|
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 400_000;
    let mut v: Vec<f64> = (0..n)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            a.abs() + b.abs()
        })
        .collect();
    v.sort_by(f64::total_cmp);
    println!("brute force = {:.6}", v[quantile_rank(0.05, n) - 1]);
    Ok(())
}
