use aspp::ensemble::{path_rng, run_ensemble_with_workers, run_path, run_paths, SimulationConfig};
use aspp::population::{sample_traits, InitSpec, PopulationSpec};
use proptest::prelude::*;

fn small(n_paths: u64, seed: u64) -> SimulationConfig {
    SimulationConfig {
        population: PopulationSpec {
            n_agents: 80,
            ..Default::default()
        },
        active_per_session: 8,
        sessions: 120,
        n_paths,
        master_seed: seed,
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sampled_traits_stay_in_the_quadrant(
        mean_greed in 0.005..0.05f64,
        mean_fear in 0.005..0.05f64,
        r in -1.0..=1.0f64,
        seed in any::<u64>(),
    ) {
        let spec = PopulationSpec {
            n_agents: 200,
            mean_ln_greed: mean_greed,
            mean_ln_fear: mean_fear,
            trait_correlation: r,
            ..Default::default()
        };
        let traits = sample_traits(&spec, &mut path_rng(seed, 0)).unwrap();
        prop_assert_eq!(traits.len(), 200);
        prop_assert!(traits.iter().all(|t| t.greed >= 1.0 && t.fear >= 1.0));
    }

    #[test]
    fn a_path_does_not_depend_on_ensemble_size(seed in any::<u64>(), extra in 1u64..5) {
        let a = run_path(&small(1, seed), 0).unwrap();
        let b = run_path(&small(1 + extra, seed), 0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn aggregates_do_not_depend_on_worker_count(seed in any::<u64>(), workers in 2usize..9) {
        let config = small(70, seed);
        let one = run_ensemble_with_workers(&config, 1).unwrap();
        let many = run_ensemble_with_workers(&config, workers).unwrap();
        prop_assert_eq!(one, many);
    }
}

#[test]
fn stored_paths_agree_with_single_runs() {
    let config = small(5, 3);
    let paths = run_paths(&config).unwrap();
    for (i, p) in paths.iter().enumerate() {
        assert_eq!(p, &run_path(&config, i as u64).unwrap());
        assert_eq!(p.log_price.len(), config.sessions + 1);
        let summed: f64 = p.log_return.iter().sum();
        assert!((summed - p.log_price[config.sessions]).abs() < 1e-9);
    }
}

#[test]
fn zero_noise_market_never_moves() {
    let config = SimulationConfig {
        init: InitSpec {
            noise_amplitude: 0.0,
            ..Default::default()
        },
        ..small(3, 8)
    };
    for p in run_paths(&config).unwrap() {
        assert!(p.log_return.iter().all(|&r| r == 0.0));
        assert!(p.final_wealth.iter().all(|&w| w == config.init.initial_cash));
    }
}
