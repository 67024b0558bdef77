//! Coarse-step Heston call price against a fine-step, larger reference run.

use mpd_core::finance::{discounted_payoffs, HestonParams, OptionSpec};

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn coarse_price_matches_fine_reference() {
    let p = HestonParams::default();
    let option = OptionSpec { strike: 1.0, maturity: 1.0 };
    let coarse = discounted_payoffs(&p, p.x0, p.v0, 0.0, &option, 100, 100_000, 11).unwrap();
    let fine = discounted_payoffs(&p, p.x0, p.v0, 0.0, &option, 1000, 1_000_000, 12).unwrap();
    let (a, sa) = mean_se(&coarse);
    let (b, sb) = mean_se(&fine);
    let se = (sa * sa + sb * sb).sqrt();
    assert!((a - b).abs() < 3.0 * se, "coarse {a} fine {b} combined se {se}");
}
