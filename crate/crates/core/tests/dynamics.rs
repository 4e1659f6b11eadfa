mod common;

use common::{random_grid, t2, t3};
use swinggrid::dynamics::Simulator;
use swinggrid::*;

fn single_node(power: f64, inertia: f64, damping: f64) -> PowerGrid {
    let kind = if power >= 0.0 {
        NodeKind::Generator
    } else {
        NodeKind::Load
    };
    PowerGrid::new(
        vec![GridNode {
            id: 0,
            kind,
            power,
            inertia,
            damping,
        }],
        vec![],
    )
}

#[test]
fn flows_vanish_at_equal_phases() {
    let g = common::grid127(3, ParameterPreset::ControlledDefault);
    let mut s = SimState::initial(&g);
    s.theta.iter_mut().for_each(|x| *x = 0.7);
    assert!(compute_flows(&g, &s).iter().all(|&f| f == 0.0));
}

#[test]
fn flow_of_unit_transfer() {
    let g = t2(11.0, 0.8);
    let mut s = SimState::initial(&g);
    s.theta[1] = (1.0f64 / 11.0).asin();
    let f = compute_flows(&g, &s);
    assert!((f[0] - 1.0).abs() < 1e-15);

    // same line listed the other way round keeps the low-to-high orientation
    let mut flipped = g.clone();
    flipped.lines[0] = GridLine::new(1, 0, 11.0, 0.8);
    assert_eq!(compute_flows(&flipped, &s), f);

    // relabelling the nodes negates the flow
    s.theta.swap(0, 1);
    assert!((compute_flows(&g, &s)[0] + 1.0).abs() < 1e-15);
}

#[test]
fn flows_of_inactive_lines_are_zero() {
    let g = t3();
    let mut s = SimState::initial(&g);
    s.theta = vec![0.0, 0.3, -0.2];
    s.line_status[0] = LineStatus::TrippedOverload { time: 1.0 };
    let f = compute_flows(&g, &s);
    assert_eq!(f[0], 0.0);
    assert!(f[1] != 0.0);
    apply_node_removal(&mut s, &g, 2, false).unwrap();
    assert_eq!(compute_flows(&g, &s), vec![0.0, 0.0]);
}

#[test]
fn overload_check_is_strict() {
    let g = t2(11.0, 0.8);
    let status = [LineStatus::Active];
    assert_eq!(
        check_overloads(&g, &status, &[g.lines[0].capacity()]),
        Vec::<usize>::new()
    );
    assert_eq!(check_overloads(&g, &status, &[-g.lines[0].capacity() - 1e-12]), vec![0]);
    assert_eq!(check_overloads(&g, &status, &[0.0]), Vec::<usize>::new());
    assert_eq!(
        check_overloads(&g, &[LineStatus::RemovedByNodeFault], &[100.0]),
        Vec::<usize>::new()
    );
}

#[test]
fn t2_fixed_point_has_zero_derivatives() {
    let g = t2(11.0, 0.8);
    let mut s = SimState::initial(&g);
    s.theta[0] = (1.0f64 / 11.0).asin();
    let d = derivatives(&g, &ControlLayers::disabled(2), &s).unwrap();
    assert_eq!(d.theta, vec![0.0, 0.0]);
    assert!(d.omega.iter().all(|x| x.abs() < 1e-15), "{:?}", d.omega);
    assert_eq!(d.u_integral, vec![0.0, 0.0]);
}

#[test]
fn isolated_node_decays_by_damping() {
    let g = PowerGrid::new(
        vec![GridNode {
            id: 0,
            kind: NodeKind::Load,
            power: 0.0,
            inertia: 10.0,
            damping: 1.0,
        }],
        vec![],
    );
    let mut s = SimState::initial(&g);
    s.omega[0] = 5.0;
    let d = derivatives(&g, &ControlLayers::disabled(1), &s).unwrap();
    assert_eq!(d.omega, vec![-0.5]);
    assert_eq!(d.theta, vec![5.0]);

    let mut g = common::grid127(1, ParameterPreset::ControlledDefault);
    for n in g.nodes.iter_mut() {
        n.power = 0.0;
    }
    for l in g.lines.iter_mut() {
        l.coupling = 0.0;
    }
    let mut s = SimState::initial(&g);
    for (i, w) in s.omega.iter_mut().enumerate() {
        *w = (i as f64 * 0.37).sin();
    }
    let d = derivatives(&g, &ControlLayers::disabled(127), &s).unwrap();
    for i in 0..127 {
        assert!((d.omega[i] + g.nodes[i].damping * s.omega[i] / g.nodes[i].inertia).abs() < 1e-15);
    }
}

#[test]
fn derivatives_reject_bad_dimensions() {
    let g = t2(11.0, 0.8);
    assert!(matches!(
        derivatives(&g, &ControlLayers::disabled(3), &SimState::initial(&g)),
        Err(Error::DimensionMismatch { .. })
    ));
    let mut s = SimState::initial(&g);
    s.omega.push(0.0);
    assert!(matches!(
        derivatives(&g, &ControlLayers::disabled(2), &s),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn control_terms_enter_frequency_equation() {
    let g = t2(11.0, 0.8);
    let pair = Adjacency::from_edges(2, &[(0, 1)]);
    let layers = ControlLayers::new(
        ControlLayer::new(pair.clone(), vec![true, true], 2.0),
        ControlLayer::new(pair, vec![true, false], 0.5),
    );
    let mut s = SimState::initial(&g);
    s.omega = vec![1.0, 3.0];
    s.u_integral = vec![0.25, 0.0];
    let d = derivatives(&g, &layers, &s).unwrap();
    // u^P = (4, -4); du^I/dt = (1, 0)
    assert_eq!(d.u_integral, vec![1.0, 0.0]);
    assert!((d.omega[0] - (1.0 - 1.0 + 4.0 + 0.25) / 10.0).abs() < 1e-15);
    assert!((d.omega[1] - (-1.0 - 3.0 - 4.0) / 10.0).abs() < 1e-15);
}

#[test]
fn phase_difference_form_uses_phases() {
    let g = t2(11.0, 0.8);
    let pair = Adjacency::from_edges(2, &[(0, 1)]);
    let layers = ControlLayers::new(
        ControlLayer::disabled(2),
        ControlLayer::new(pair, vec![true, true], 2.0),
    );
    let mut s = SimState::initial(&g);
    s.theta = vec![0.0, 0.5];
    let config = SimConfig {
        integral_form: IntegralForm::PhaseDifference,
        ..SimConfig::default()
    };
    let mut sim = Simulator::from_state(&g, &layers, config, s).unwrap();
    let u = sim.control_inputs();
    assert_eq!(u.u_i, vec![1.0, -1.0]);
    assert_eq!(sim.derivatives().u_integral, vec![0.0, 0.0]);
}

#[test]
fn rk4_fixed_point_only_advances_time() {
    let g = PowerGrid::new(
        vec![GridNode {
            id: 0,
            kind: NodeKind::Load,
            power: 0.0,
            inertia: 1.0,
            damping: 1.0,
        }],
        vec![],
    );
    let s = SimState::initial(&g);
    let next = rk4_step(&g, &ControlLayers::disabled(1), &s, 0.01).unwrap();
    assert_eq!(next.theta, s.theta);
    assert_eq!(next.omega, s.omega);
    assert_eq!(next.t, 0.01);
    assert_eq!(next.step, 1);
}

#[test]
fn rk4_single_step_matches_exponential() {
    // dω/dt = -0.1 ω
    let g = PowerGrid::new(
        vec![GridNode {
            id: 0,
            kind: NodeKind::Load,
            power: 0.0,
            inertia: 10.0,
            damping: 1.0,
        }],
        vec![],
    );
    let mut s = SimState::initial(&g);
    s.omega[0] = 1.0;
    let next = rk4_step(&g, &ControlLayers::disabled(1), &s, 0.01).unwrap();
    assert!((next.omega[0] - (-0.001f64).exp()).abs() < 1e-12);
    // θ' = ω integrates to 10 (1 - e^{-0.001})
    assert!((next.theta[0] - 10.0 * (1.0 - (-0.001f64).exp())).abs() < 1e-12);
}

#[test]
fn rk4_step_keeps_time_of_off_grid_states() {
    let g = single_node(0.5, 1.0, 1.0);
    let mut s = SimState::initial(&g);
    s.t = 3.3;
    s.step = 7;
    let next = rk4_step(&g, &ControlLayers::disabled(1), &s, 0.25).unwrap();
    assert_eq!(next.t, 3.55);
    assert_eq!(next.step, 8);
}

#[test]
fn non_finite_state_aborts() {
    let g = single_node(1.0, 1.0, 1.0);
    let mut s = SimState::initial(&g);
    s.omega[0] = f64::INFINITY;
    assert!(matches!(
        rk4_step(&g, &ControlLayers::disabled(1), &s, 0.01),
        Err(Error::NonFinite { .. })
    ));
}

/// Final state after integrating `t` time units with step `dt`.
fn integrate(g: &PowerGrid, layers: &ControlLayers, start: &SimState, dt: f64, t: f64) -> Vec<f64> {
    let config = SimConfig {
        dt,
        ..SimConfig::default()
    };
    let mut sim = Simulator::from_state(g, layers, config, start.clone()).unwrap();
    let steps = (t / dt).round() as usize;
    for _ in 0..steps {
        assert!(sim.step().unwrap().is_empty(), "interval must be trip-free");
    }
    let s = sim.state();
    s.theta.iter().chain(&s.omega).chain(&s.u_integral).copied().collect()
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn rk4_global_error_is_fourth_order() {
    let mut g = random_grid(10, 4, 3, 21, ParameterPreset::ControlledDefault);
    for l in g.lines.iter_mut() {
        l.capacity_fraction = 1.0;
    }
    let mut s = SimState::initial(&g);
    for i in 0..10 {
        s.theta[i] = 0.3 * (i as f64).sin();
        s.omega[i] = 0.2 * (i as f64 * 1.7).cos();
    }
    let layers = ControlLayers::disabled(10);
    let a = integrate(&g, &layers, &s, 0.02, 10.0);
    let b = integrate(&g, &layers, &s, 0.01, 10.0);
    let c = integrate(&g, &layers, &s, 0.005, 10.0);
    let ratio = max_diff(&a, &b) / max_diff(&b, &c);
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn removal_and_reconnection_restore_lines() {
    let g = random_grid(12, 4, 3, 2, ParameterPreset::ControlledDefault);
    let node = (0..12).max_by_key(|&i| g.degree(i)).unwrap();
    let mut s = SimState::initial(&g);
    let before = s.line_status.clone();
    apply_node_removal(&mut s, &g, node, false).unwrap();
    let counts = metrics::count_failures(&s.line_status);
    assert_eq!(counts.n_removed_by_fault, g.degree(node));
    assert_eq!(counts.n_failed, 0);
    assert!(matches!(
        apply_node_removal(&mut s, &g, node, false),
        Err(Error::NodeAlreadyRemoved(_))
    ));
    apply_node_reconnection(&mut s, &g, node).unwrap();
    assert_eq!(s.line_status, before);
    assert!(matches!(
        apply_node_reconnection(&mut s, &g, node),
        Err(Error::NodeNotRemoved(_))
    ));
}

#[test]
fn removing_isolated_node_touches_no_line() {
    let mut g = t3();
    g.nodes.push(GridNode::load(3, -0.5, 1.0, 1.0));
    g.nodes[0].power = 2.5;
    let mut s = SimState::initial(&g);
    apply_node_removal(&mut s, &g, 3, false).unwrap();
    assert!(s.line_status.iter().all(|x| x.is_active()));
}

#[test]
fn overload_trip_survives_reconnection() {
    let g = t3();
    let mut s = SimState::initial(&g);
    apply_node_removal(&mut s, &g, 1, false).unwrap();
    s.line_status[1] = LineStatus::TrippedOverload { time: 5.0 };
    apply_node_reconnection(&mut s, &g, 1).unwrap();
    assert_eq!(
        s.line_status,
        vec![LineStatus::Active, LineStatus::TrippedOverload { time: 5.0 }]
    );
}

#[test]
fn cyber_cofailure_cuts_controller_links() {
    let g = t3();
    let star = Adjacency::from_grid(&g);
    let layers = ControlLayers::new(ControlLayer::new(star, vec![true; 3], 1.0), ControlLayer::disabled(3));
    let mut s = SimState::initial(&g);
    s.omega = vec![0.0, 1.0, 2.0];
    let plain = Simulator::from_state(&g, &layers, SimConfig::default(), s.clone())
        .unwrap()
        .control_inputs();
    assert_eq!(plain.u_p, vec![3.0, -1.0, -2.0]);

    let mut keep = s.clone();
    apply_node_removal(&mut keep, &g, 2, false).unwrap();
    let u = Simulator::from_state(&g, &layers, SimConfig::default(), keep)
        .unwrap()
        .control_inputs();
    // the removed node still talks to the hub but receives nothing itself
    assert_eq!(u.u_p, vec![3.0, -1.0, 0.0]);

    let mut cut = s.clone();
    apply_node_removal(&mut cut, &g, 2, true).unwrap();
    let u = Simulator::from_state(&g, &layers, SimConfig::default(), cut.clone())
        .unwrap()
        .control_inputs();
    assert_eq!(u.u_p, vec![1.0, -1.0, 0.0]);

    apply_node_reconnection(&mut cut, &g, 2).unwrap();
    assert!(cut.cyber_masked.iter().all(|m| !m));
}

#[test]
fn removed_node_state_is_frozen_bitwise() {
    let g = random_grid(10, 3, 3, 4, ParameterPreset::ControlledDefault);
    let layers = ControlLayers::new(
        ControlLayer::new(gen_er(10, 0.4, 1).unwrap(), vec![true; 10], 1.0),
        ControlLayer::new(gen_er(10, 0.4, 2).unwrap(), vec![true; 10], 0.3),
    );
    let config = SimConfig {
        relax_tolerance: 1.0,
        ..SimConfig::default()
    };
    let mut sim = Simulator::new(&g, &layers, config).unwrap();
    for _ in 0..500 {
        sim.step().unwrap();
    }
    sim.remove_node(4, false).unwrap();
    let frozen = (sim.state().theta[4], sim.state().omega[4], sim.state().u_integral[4]);
    assert!(frozen.1 != 0.0);
    for _ in 0..2000 {
        sim.step().unwrap();
        let s = sim.state();
        assert_eq!(
            (s.theta[4].to_bits(), s.omega[4].to_bits(), s.u_integral[4].to_bits()),
            (frozen.0.to_bits(), frozen.1.to_bits(), frozen.2.to_bits())
        );
    }
    sim.reconnect_node(4).unwrap();
    assert_eq!(sim.state().theta[4].to_bits(), frozen.0.to_bits());
    sim.step().unwrap();
    assert!(sim.state().theta[4] != frozen.0);
}

#[test]
fn topology_is_frozen_within_a_step() {
    let g = random_grid(12, 5, 3, 0, ParameterPreset::CriticalScan);
    let layers = ControlLayers::disabled(12);
    let config = SimConfig {
        relax_tolerance: 1.0,
        ..SimConfig::default()
    };
    let mut sim = Simulator::new(&g, &layers, config).unwrap();
    for _ in 0..20_000 {
        if sim.state().step == 20_000 - 19_000 {
            sim.remove_node(2, false).unwrap();
        }
        let mut seen: Vec<Vec<usize>> = Vec::new();
        let before = sim.active_lines().to_vec();
        sim.step_probed(&mut |_, active| seen.push(active.to_vec())).unwrap();
        assert_eq!(seen.len(), 4);
        assert!(seen.iter().all(|a| *a == before));
    }
}

#[test]
fn relaxation_reaches_analytic_fixed_points() {
    let config = SimConfig {
        relax_time: 400.0,
        relax_tolerance: 1e-6,
        ..SimConfig::default()
    };
    let g = t2(11.0, 0.8);
    let r = relax_to_sync(&g, &ControlLayers::disabled(2), &config).unwrap();
    assert!(r.converged);
    let dtheta = r.state.theta[0] - r.state.theta[1];
    assert!((dtheta - (1.0f64 / 11.0).asin()).abs() < 1e-6);
    assert!((compute_flows(&g, &r.state)[0] + 1.0).abs() < 1e-6);

    let g = t3();
    let r = relax_to_sync(&g, &ControlLayers::disabled(3), &config).unwrap();
    for f in compute_flows(&g, &r.state) {
        assert!((f.abs() - 1.0).abs() < 1e-6, "{f}");
    }
}

#[test]
fn relaxation_of_zero_power_grid_stays_at_rest() {
    let mut g = t3();
    g.nodes[0].kind = NodeKind::Load;
    for n in g.nodes.iter_mut() {
        n.power = 0.0;
    }
    let r = relax_to_sync(&g, &ControlLayers::disabled(3), &SimConfig::default()).unwrap();
    assert!(r.state.theta.iter().chain(&r.state.omega).all(|&x| x == 0.0));
    assert_eq!(r.delta_omega, 0.0);
}

#[test]
fn relaxation_trips_an_undersized_line() {
    // required flow 1 exceeds capacity 0.8 * 1.2 = 0.96
    let g = t2(1.2, 0.8);
    match relax_to_sync(&g, &ControlLayers::disabled(2), &SimConfig::default()) {
        Err(Error::RelaxationTrip { lines, .. }) => assert_eq!(lines, vec![0]),
        other => panic!("expected a trip, got {other:?}"),
    }
}

#[test]
fn short_relaxation_reports_unconverged() {
    let g = t2(11.0, 0.8);
    let config = SimConfig {
        relax_time: 20.0,
        relax_tolerance: 1e-6,
        ..SimConfig::default()
    };
    let r = relax_to_sync(&g, &ControlLayers::disabled(2), &config).unwrap();
    assert!(!r.converged);
    assert!(r.delta_omega > 1e-6);
}

#[test]
fn trips_are_permanent_and_logged() {
    let g = random_grid(10, 3, 3, 0, ParameterPreset::CriticalScan);
    let config = SimConfig {
        relax_tolerance: 1.0,
        ..SimConfig::default()
    };
    let mut sim = Simulator::new(&g, &ControlLayers::disabled(10), config).unwrap();
    let mut tripped_so_far: Vec<usize> = Vec::new();
    for k in 0..60_000u64 {
        if k == 20_000 {
            sim.remove_node(2, false).unwrap();
        }
        if k == 50_000 {
            sim.reconnect_node(2).unwrap();
        }
        let new = sim.step().unwrap();
        tripped_so_far.extend(new);
        let now: Vec<usize> = (0..g.line_count())
            .filter(|&l| sim.state().line_status[l].is_tripped())
            .collect();
        let mut expected = tripped_so_far.clone();
        expected.sort_unstable();
        assert_eq!(now, expected);
    }
    assert!(!tripped_so_far.is_empty(), "fixture should cascade");
    assert_eq!(sim.state().trip_count(), tripped_so_far.len());
    assert_eq!(
        metrics::count_failures(&sim.state().line_status).n_failed,
        tripped_so_far.len()
    );
}

#[test]
fn simulation_is_deterministic() {
    let g = random_grid(15, 6, 4, 8, ParameterPreset::CriticalScan);
    let layers = ControlLayers::new(
        ControlLayer::new(gen_er(15, 0.3, 5).unwrap(), vec![true; 15], 2.0),
        ControlLayer::new(gen_er(15, 0.3, 6).unwrap(), Pinning::Generators.mask(&g), 0.1),
    );
    let run = || {
        let config = SimConfig {
            relax_tolerance: 1.0,
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(&g, &layers, config).unwrap();
        for k in 0..30_000u64 {
            if k == 10_000 {
                sim.remove_node(3, true).unwrap();
            }
            sim.step().unwrap();
        }
        sim.into_state()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    let bits = |s: &SimState| s.theta.iter().chain(&s.omega).map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
