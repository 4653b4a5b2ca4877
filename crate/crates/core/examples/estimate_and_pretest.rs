//! Cell-mean and fixed-effects estimates of the violation vector from a
//! small balanced panel, followed by the severity pretest.

use didguard::{
    estimate_theta_sample_means, estimate_theta_twfe, run_pretest, Dataset, Design, NormOrder, Observation,
    SeverityParams, TimeLayout, ViolationMode,
};

fn main() -> didguard::Result<()> {
    let layout = TimeLayout::new(5, 4)?;
    let mut rows = Vec::new();
    for unit in 0..30 {
        let treated = unit % 2 == 0;
        let level = (unit as f64 * 0.77).sin() * 3.0;
        for t in 1..=5u32 {
            let trend = 0.5 * f64::from(t);
            // treated units drift 0.2 per period before treatment, then jump by 1.5
            let drift = if treated { 0.2 * f64::from(t) } else { 0.0 };
            let effect = if treated && t >= 4 { 1.5 } else { 0.0 };
            let noise = ((unit * 13 + t as usize * 7) % 11) as f64 * 0.03;
            rows.push(Observation::new(t, treated, level + trend + drift + effect + noise).unit(format!("u{unit}")));
        }
    }
    let data = Dataset::new(rows, Design::Panel, layout)?;

    let means = estimate_theta_sample_means(&data)?;
    let twfe = estimate_theta_twfe(&data)?;
    println!("cell means : {:.4?}", means.values());
    println!("fixed eff. : {:.4?}", twfe.values());

    for m in [0.1, 0.5] {
        let params = SeverityParams::new(NormOrder::TWO, m, ViolationMode::Iterative)?;
        let verdict = run_pretest(&means, &params)?;
        println!(
            "M = {m}: S_pre = {:.4}, phi = {} ({})",
            verdict.s_pre_hat,
            verdict.phi,
            if verdict.rejects() {
                "extrapolation not warranted"
            } else {
                "extrapolation assumed"
            }
        );
    }
    Ok(())
}
