use proptest::prelude::*;

use capflow_core::crn::{particle_species, space_species};
use capflow_core::graph::{CompartmentSpec, EdgeSpec};
use capflow_core::*;

fn rate() -> impl Strategy<Value = RateSpec> {
    prop_oneof![
        (0.1f64..3.0).prop_map(|k| RateSpec::MassAction { k }),
        (0.1f64..3.0, 0.1f64..2.0, 0.1f64..2.0).prop_map(|(k, a, b)| RateSpec::Saturating { k, a, b }),
    ]
}

/// Any graph on up to `max_m` compartments.
fn graph(max_m: usize) -> impl Strategy<Value = CompartmentalGraph> {
    (1..=max_m)
        .prop_flat_map(|m| {
            (
                prop::collection::vec(0.3f64..3.0, m),
                prop::collection::vec(prop::option::weighted(0.4, rate()), m * m),
            )
        })
        .prop_map(|(caps, slots)| {
            let m = caps.len();
            let compartments = caps
                .iter()
                .enumerate()
                .map(|(i, &capacity)| CompartmentSpec {
                    name: format!("q{}", i + 1),
                    capacity,
                })
                .collect();
            let edges = slots
                .into_iter()
                .enumerate()
                .filter_map(|(k, r)| {
                    let (from, to) = (k / m, k % m);
                    (from != to).then_some(r).flatten().map(|rate| EdgeSpec {
                        from: from + 1,
                        to: to + 1,
                        rate,
                    })
                })
                .collect();
            CompartmentalGraph::build(&GraphSpec { compartments, edges }).unwrap()
        })
}

/// A graph with a state in its box, as fractions of capacity.
fn graph_and_state(max_m: usize) -> impl Strategy<Value = (CompartmentalGraph, Vec<f64>)> {
    graph(max_m).prop_flat_map(|g| {
        let m = g.m();
        (Just(g), prop::collection::vec(0.0f64..=1.0, m))
    })
    .prop_map(|(g, f)| {
        let n = f.iter().zip(g.capacities()).map(|(f, c)| f * c).collect();
        (g, n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn stoichiometry_moves_one_particle_per_reaction(g in graph(6)) {
        let crn = compartmental_crn(&g);
        let gamma = crn.stoichiometric_matrix();
        let m = g.m();
        prop_assert_eq!(gamma.reactions(), g.edges().len());
        for (r, e) in g.edges().iter().enumerate() {
            let col = gamma.column(r);
            prop_assert_eq!(col.iter().sum::<i64>(), 0);
            prop_assert_eq!(col.iter().filter(|&&v| v != 0).count(), 4);
            prop_assert_eq!(col[particle_species(e.from)], -1);
            prop_assert_eq!(col[particle_species(e.to)], 1);
            prop_assert_eq!(col[space_species(m, e.from)], 1);
            prop_assert_eq!(col[space_species(m, e.to)], -1);
        }
        // total particles, total space and n_i + s_i are all conserved
        let ones = ConservedQuantity::from_integers(&vec![1; 2 * m]);
        prop_assert!(ones.verify(&gamma, None, true).is_ok());
        for i in 0..m {
            let c = ConservedQuantity::indicator(2 * m, &[i, m + i]);
            prop_assert!(c.verify(&gamma, None, false).is_ok());
        }
    }

    #[test]
    fn strongly_connected_graphs_lift_to_strongly_connected_nets(g in graph(6)) {
        let net = PetriNet::from_crn(&compartmental_crn(&g));
        if g.is_strongly_connected() && g.m() > 1 {
            prop_assert!(net.is_strongly_connected());
        }
    }

    #[test]
    fn closed_form_siphons_are_the_minimal_siphons(g in graph(5)) {
        let net = PetriNet::from_crn(&compartmental_crn(&g));
        match closed_form_siphons(&g) {
            Ok(closed) => prop_assert_eq!(closed, net.minimal_siphons(24).unwrap()),
            Err(e) => {
                prop_assert!(!g.is_strongly_connected());
                prop_assert_eq!(e, PetriError::NotStronglyConnected);
            }
        }
    }

    #[test]
    fn every_certificate_survives_audit(g in graph(4)) {
        let crn = compartmental_crn(&g);
        let gamma = crn.stoichiometric_matrix();
        let structural = check_persistence_structural(&g);
        let general = check_persistence_theorem1(&crn, 24).unwrap();
        prop_assert!(structural.audit(&gamma).is_ok());
        prop_assert!(general.audit(&gamma).is_ok());
        // a disjoint union of strongly connected pieces is certified by the
        // general test alone
        prop_assert_eq!(structural.is_certified(), g.is_strongly_connected());
        if g.is_strongly_connected() {
            prop_assert!(general.is_certified());
        }
    }

    #[test]
    fn reduced_field_is_the_particle_part_of_the_network((g, n) in graph_and_state(6)) {
        let sys = ReducedSystem::new(&g);
        let crn = compartmental_crn(&g);
        let mut x = n.clone();
        x.extend(n.iter().zip(g.capacities()).map(|(n, c)| c - n));
        let full = crn.ode_rhs(&x).unwrap();
        let reduced = sys.rhs(&n).unwrap();
        let m = g.m();
        let scale = 1.0 + reduced.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assert!(reduced.iter().sum::<f64>().abs() <= 1e-12 * scale);
        for i in 0..m {
            prop_assert!((full[i] - reduced[i]).abs() <= 1e-12 * scale);
            prop_assert!((full[m + i] + reduced[i]).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn jacobian_is_compartmental((g, n) in graph_and_state(6)) {
        let j = ReducedSystem::new(&g).jacobian(&n).unwrap();
        let scale = j.amax().max(1.0);
        for k in 0..g.m() {
            prop_assert!(j.column(k).sum().abs() <= 1e-12 * scale);
            for i in 0..g.m() {
                if i == k {
                    prop_assert!(j[(i, k)] <= 0.0);
                } else {
                    prop_assert!(j[(i, k)] >= 0.0);
                }
            }
        }
        prop_assert!(matrix_measure_l1(&j).abs() <= 1e-12 * scale);
    }

    #[test]
    fn graph_documents_round_trip(g in graph(5)) {
        let text = serde_json::to_string(&g.to_spec()).unwrap();
        prop_assert_eq!(CompartmentalGraph::from_json(&text).unwrap(), g);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn simulation_stays_in_the_box_and_conserves((g, n0) in graph_and_state(5)) {
        let sys = ReducedSystem::new(&g);
        let traj = sys.simulate(&n0, 20.0, &SimOptions::default()).unwrap();
        prop_assert!(traj.stats.max_conservation_drift <= 1e-9 * g.total_capacity());
        for n in &traj.states {
            for (x, c) in n.iter().zip(g.capacities()) {
                prop_assert!(*x >= -1e-9 && *x <= c + 1e-9);
            }
        }
    }
}
