use iterec_core::agent::PolicyKind;
use iterec_core::pipeline::{run_all, Profile};

#[test]
fn tiny_run_reports_every_policy_consistently() {
    let out = run_all(&Profile::tiny(), 11, true).unwrap();
    let kinds: Vec<PolicyKind> = out.report.policies.iter().map(|p| p.policy).collect();
    assert_eq!(kinds, [PolicyKind::Rl, PolicyKind::NoExploration, PolicyKind::Lstm, PolicyKind::Random]);
    for p in &out.report.policies {
        let n = p.episode_len;
        assert!(p.episodes > 0);
        assert_eq!(p.hn_at_t.len(), n);
        assert_eq!(p.hp_at_t.len(), n);
        assert_eq!(p.mean_normalized_score.len(), n);
        assert!(p.hn_at_t.windows(2).all(|w| w[0] <= w[1]), "{:?}", p.policy);
        assert!(p.hp_at_t.windows(2).all(|w| w[0] <= w[1]), "{:?}", p.policy);
        assert_eq!(p.hn, p.hn_at_t[n - 1]);
        assert_eq!(p.hp, p.hp_at_t[n - 1]);
        assert!((0.0..=1.0).contains(&p.hn) && (0.0..=1.0).contains(&p.hp));
        assert!(p.mean_normalized_score.iter().all(|s| (0.0..=1.0).contains(s)));
        assert!(p.distinct_bottoms >= 1 && p.distinct_bottoms <= out.catalog.len());
    }
    assert!(out.rl_log.epochs.iter().all(|e| e.mean_loss.is_none_or(f64::is_finite)));
}

#[test]
fn same_seed_same_report() {
    let a = run_all(&Profile::tiny(), 4, false).unwrap();
    let b = run_all(&Profile::tiny(), 4, false).unwrap();
    assert_eq!(serde_json::to_string(&a.report).unwrap(), serde_json::to_string(&b.report).unwrap());
    assert_eq!(a.rl, b.rl);
}
