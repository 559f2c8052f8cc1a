use proptest::prelude::*;
use psdsf::gen::{random_instance, InstanceLimits};
use psdsf::kernel::{
    dominant_resource, gamma_matrix, rdm_feasible, tdm_feasible, vds_view, verify_psdsf_rdm,
};
use psdsf::psdsf::{PsDsf, StepOutcome};
use psdsf::{solve_rdm, solve_tdm, ClusterSpec, Mode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> ClusterSpec {
    random_instance(
        &mut ChaCha8Rng::seed_from_u64(seed),
        &InstanceLimits::default(),
    )
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn time_division_output_is_resource_feasible(seed in any::<u64>()) {
        let spec = instance(seed);
        let r = solve_tdm(&spec).unwrap();
        prop_assert!(tdm_feasible(&spec, &gamma_matrix(&spec), &r.allocation).passed());
        prop_assert!(rdm_feasible(&spec, &r.allocation).passed());
    }

    #[test]
    fn monopoly_tasks_exhaust_the_dominant_resource(seed in any::<u64>()) {
        let spec = instance(seed);
        let g = gamma_matrix(&spec);
        for (n, user) in spec.users.iter().enumerate() {
            for (i, server) in spec.servers.iter().enumerate() {
                if !g.eligible(n, i) {
                    continue;
                }
                let rho = dominant_resource(user, server).unwrap();
                prop_assert!(close(g.get(n, i) * user.demand[rho], server.capacities[rho], 1e-12));
            }
        }
    }

    #[test]
    fn totals_scale_with_capacities(seed in any::<u64>(), factor in 0.1f64..10.0) {
        let spec = instance(seed);
        let mut scaled = spec.clone();
        for s in &mut scaled.servers {
            for c in &mut s.capacities {
                *c *= factor;
            }
        }
        let (a, b) = (solve_rdm(&spec).unwrap(), solve_rdm(&scaled).unwrap());
        prop_assume!(a.converged && b.converged);
        for (x, y) in a.totals().iter().zip(b.totals()) {
            prop_assert!(close(x * factor, y, 1e-6), "{x} * {factor} vs {y}");
        }
    }

    #[test]
    fn rescaling_a_demand_rescales_only_that_user(seed in any::<u64>(), factor in 0.1f64..10.0, pick in any::<prop::sample::Index>()) {
        let spec = instance(seed);
        let n = pick.index(spec.num_users());
        let mut scaled = spec.clone();
        for d in &mut scaled.users[n].demand {
            *d *= factor;
        }
        let (a, b) = (solve_rdm(&spec).unwrap(), solve_rdm(&scaled).unwrap());
        prop_assume!(a.converged && b.converged);
        for (m, (x, y)) in a.totals().iter().zip(b.totals()).enumerate() {
            let expected = if m == n { x / factor } else { *x };
            prop_assert!(close(expected, y, 1e-6), "user {m}: {expected} vs {y}");
        }
    }

    #[test]
    fn converged_output_satisfies_the_characterization(seed in any::<u64>()) {
        let spec = instance(seed);
        let r = solve_rdm(&spec).unwrap();
        prop_assume!(r.converged);
        let v = verify_psdsf_rdm(&spec, &gamma_matrix(&spec), &r.allocation);
        prop_assert!(v.passed(), "{:?}", v.violations());
    }

    #[test]
    fn server_steps_stay_feasible_and_never_lower_the_minimum_share(seed in any::<u64>()) {
        let spec = instance(seed);
        let g = gamma_matrix(&spec);
        let weights = spec.weights();
        let ps = PsDsf::new(&spec, &g, Mode::Rdm);
        let mut alloc = ps.init_per_server_drf();
        prop_assert!(rdm_feasible(&spec, &alloc).passed());
        for i in 0..spec.num_servers() {
            let Some(mut level) = vds_view(&alloc, &g, &weights).server_level(i) else {
                continue;
            };
            for _ in 0..50 {
                let mut state = ps.work_state(&alloc, i);
                if ps.update_allocation(&mut alloc, i, &mut state) == StepOutcome::NoProgress {
                    break;
                }
                prop_assert!(rdm_feasible(&spec, &alloc).passed());
                let next = vds_view(&alloc, &g, &weights).server_level(i).unwrap();
                prop_assert!(next >= level - 1e-9 * level.max(1.0), "server {i}: {level} -> {next}");
                level = next;
            }
        }
    }
}
