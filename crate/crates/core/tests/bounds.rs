use curloop::sensitivity::{compute_kappa, compute_tau, margin_constants};
use curloop::RegularityConstants;
use proptest::prelude::*;

fn constants() -> impl Strategy<Value = RegularityConstants> {
    (0.1..5.0f64, 0.1..5.0f64, 0.1..5.0f64, 0.1..5.0f64, 0.0..2.0f64, 0.0..2.0f64, 0.1..3.0f64, 0.1..3.0f64, 1u32..16)
        .prop_map(|(gt, gp, lt, lp, et, ep, l, b, k)| RegularityConstants {
            gamma_theta: gt,
            gamma_phi: gp,
            l_theta: lt,
            l_phi: lp,
            eps_theta: et,
            eps_phi: ep,
            lipschitz_l: l,
            data_bound_b: b,
            curation_k: k,
        })
}

proptest! {
    #[test]
    fn kappa_is_monotone_in_each_eps(c in constants(), d in 0.0..1.0f64) {
        let k = compute_kappa(&c);
        prop_assert!(k >= 0.0);
        let kt = compute_kappa(&RegularityConstants { eps_theta: c.eps_theta + d, ..c });
        let kp = compute_kappa(&RegularityConstants { eps_phi: c.eps_phi + d, ..c });
        prop_assert!(kt >= k && kp >= k);
    }

    #[test]
    fn kappa_vanishes_without_sensitivity(c in constants()) {
        let k = compute_kappa(&RegularityConstants { eps_theta: 0.0, eps_phi: 0.0, ..c });
        prop_assert_eq!(k, 0.0);
    }

    #[test]
    fn tau_is_a_proper_fraction(c in constants()) {
        let t = compute_tau(&c).unwrap();
        prop_assert!(t.tau > 0.0 && t.tau < 1.0, "{t:?}");
        prop_assert!(t.tau <= t.tau1 && t.tau <= t.tau2);
        prop_assert!((t.tau + t.min_real_fraction - 1.0).abs() < 1e-15);
        let more = compute_tau(&RegularityConstants { curation_k: c.curation_k + 1, ..c }).unwrap();
        prop_assert!(more.tau <= t.tau);
    }

    #[test]
    fn margins_shrink_with_sensitivity(c in constants()) {
        let base = RegularityConstants { eps_theta: 0.0, eps_phi: 0.0, ..c };
        let (tp, tq) = margin_constants(&base).unwrap();
        prop_assert_eq!((tp, tq), (c.gamma_theta, c.gamma_phi));
        if let Ok((sp, sq)) = margin_constants(&c) {
            prop_assert!(sp <= tp && sq <= tq);
        }
    }
}

#[test]
fn kappa_is_infinite_past_strong_convexity() {
    assert!(compute_kappa(&RegularityConstants::symmetric(1.0, 1.0, 1.0)).is_infinite());
    assert!(margin_constants(&RegularityConstants::symmetric(1.0, 1.0, 1.0)).is_err());
}
