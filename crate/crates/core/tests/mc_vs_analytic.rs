//! Cross-checks between the simulator and the semi-analytic functionals in
//! regimes where the Monte Carlo estimate has usable variance.

use wpbc::analytic::{self, QuadSpec};
use wpbc::mc::{self, sample_scenario, trial_rng, InterferenceSources};
use wpbc::{ClusterModel, ModelConfig, SimConfig};

fn z(mc: f64, se: f64, an: f64, an_err: f64) -> f64 {
    (mc - an) / (se * se + an_err * an_err).sqrt().max(1e-300)
}

#[test]
fn intra_cluster_laplace_matches() {
    let cfg = ModelConfig::default();
    let sim = SimConfig::new(cfg)
        .with_window_radius(20.0)
        .with_trials(20_000)
        .with_seed(11)
        .with_sources(InterferenceSources::IntraOnly);
    let quad = QuadSpec::default();
    let s_values = [1.0, 10.0, 79.9];
    let est = mc::estimate_laplace_many(&sim, &s_values).unwrap();
    for (s, e) in s_values.iter().zip(est) {
        let a = analytic::charfun_intra(*s, &cfg, &quad).unwrap();
        let zs = z(e.value, e.std_error, a.value, a.error);
        assert!(zs.abs() < 4.0, "s = {s}: mc {} ± {}, analytic {}", e.value, e.std_error, a.value);
    }
}

#[test]
fn sparse_network_laplace_matches_at_bound_argument() {
    // With few PBs the low-interference events that dominate E[exp(-sI)]
    // are common enough to sample.
    let cfg = ModelConfig { lambda_p: 0.002, ..ModelConfig::default() };
    let radius = 30.0;
    let sim = SimConfig::new(cfg).with_window_radius(radius).with_trials(20_000).with_seed(5);
    let quad = QuadSpec::default().with_outer_radius(radius);
    let s_values = [1.0, cfg.bound_laplace_arg()];
    let est = mc::estimate_laplace_many(&sim, &s_values).unwrap();
    for (s, e) in s_values.iter().zip(est) {
        let a = analytic::laplace(*s, &cfg, &quad).unwrap();
        let zs = z(e.value, e.std_error, a.value, a.error);
        assert!(zs.abs() < 4.0, "s = {s}: mc {} ± {}, analytic {}", e.value, e.std_error, a.value);
    }
}

#[test]
fn fading_averaged_estimator_agrees_with_direct() {
    let cfg = ModelConfig::default();
    let sim = SimConfig::new(cfg).with_window_radius(25.0).with_trials(5_000).with_seed(3);
    let s_values = [0.5, 2.0];
    let direct = mc::estimate_laplace_many(&sim, &s_values).unwrap();
    let averaged = mc::estimate_laplace_fading_averaged(&sim, &s_values).unwrap();
    for (d, a) in direct.iter().zip(&averaged) {
        // Same geometry, so the estimators are correlated; the unpaired z is conservative.
        assert!(z(d.value, d.std_error, a.value, a.std_error).abs() < 4.0, "{d:?} vs {a:?}");
        assert!(a.std_error <= d.std_error * 1.05);
    }
}

#[test]
fn active_sets_are_nested_in_duty_cycle() {
    let base = ModelConfig::default();
    for trial in 0..50 {
        let draw = |d: f64| {
            let sim = SimConfig::new(ModelConfig { duty_cycle: d, ..base }).with_window_radius(20.0);
            sample_scenario(&sim, &mut trial_rng(9, trial)).unwrap()
        };
        let low = draw(0.3);
        let high = draw(0.7);
        assert_eq!(low.typical_node, high.typical_node);
        assert_eq!(low.receiver, high.receiver);
        for i in &low.interferers {
            assert!(
                high.interferers.iter().any(|j| j.location == i.location && j.fading == i.fading),
                "trial {trial}: interferer missing at the larger duty cycle"
            );
        }
        assert!(low.interferers.len() <= high.interferers.len());
    }
}

#[test]
fn lower_bound_holds_where_it_is_informative() {
    let configs = [
        ModelConfig {
            theta: 1e-4,
            lambda_p: 0.02,
            ..ModelConfig::default()
        },
        ModelConfig {
            theta: 1e-3,
            lambda_p: 0.01,
            cluster: ClusterModel::Matern { a: 6.0 },
            ..ModelConfig::default()
        },
    ];
    for cfg in configs {
        let sim = SimConfig::new(cfg).with_window_radius(40.0).with_trials(4_000).with_seed(21);
        let quad = QuadSpec::default().with_outer_radius(40.0);
        let bound = analytic::success_lower_bound(&cfg, &quad).unwrap();
        let est = mc::estimate_success(&sim).unwrap();
        assert!(bound.value > 1e-3, "bound uninformative: {}", bound.value);
        assert!(
            bound.value <= est.value + 3.0 * est.std_error + bound.error,
            "bound {} above estimate {} ± {}",
            bound.value,
            est.value,
            est.std_error
        );
    }
}
