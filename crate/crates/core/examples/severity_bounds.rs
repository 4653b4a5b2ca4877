//! Severity measures, the bias constant kappa, and the worst-case
//! post-treatment violations that attain the bound.

use didguard::severity::induced_gap;
use didguard::{kappa, kappa_lin, severity, worst_case_post_violations, NormOrder, TimeLayout};

fn main() -> didguard::Result<()> {
    let pre = [0.4, -0.9, 0.3, 0.6];
    for p in [NormOrder::ONE, NormOrder::TWO, NormOrder::INFINITY] {
        println!("severity of {pre:?} at p = {p}: {:.4}", severity(&pre, p)?);
    }

    println!("\nkappa(T_post, p)");
    for t_post in [1, 2, 4, 8] {
        println!(
            "  T_post = {t_post}: p=1 {:>6.3}  p=2 {:>6.3}  p=inf {:>6.3}",
            kappa(t_post, NormOrder::ONE),
            kappa(t_post, NormOrder::TWO),
            kappa(t_post, NormOrder::INFINITY)
        );
    }

    // the bound |tau_ATT - tau_DD| <= kappa * S is attained
    let layout = TimeLayout::from_lengths(5, 4)?;
    let s_pre = 0.5;
    for p in [NormOrder::ONE, NormOrder::new(3.0)?, NormOrder::INFINITY] {
        let r = worst_case_post_violations(layout, p, s_pre)?;
        println!(
            "\np = {p}: worst-case post violations {r:.3?}\n  gap {:.6} = kappa * S_pre {:.6}",
            induced_gap(&r),
            kappa(4, p) * s_pre
        );
    }

    // a weighted estimand that emphasises late periods
    let weights = [0.1, 0.2, 0.3, 0.4];
    println!(
        "\nkappa for weights {weights:?} at p = 2: {:.4}",
        kappa_lin(&weights, NormOrder::TWO)
    );
    Ok(())
}
