use approx::assert_abs_diff_eq;
use netsir::control::{
    constant_strategy, evaluate_cost, percent_improvement, resource_allocation, zero_strategy, Allocation,
    ControlSchedule, CostParams,
};
use netsir::dynamics::{simulate_grouped, trapezoid, EpidemicParams, TimeGrid};
use netsir::grouping::{
    amass_control_groups, grouped_stats, partition_equal_mass, ControlGroups, GroupedDistribution, Grouping,
};
use netsir::network::{power_law_distribution, DegreeDistribution};
use proptest::prelude::*;

fn setup() -> (GroupedDistribution, ControlGroups, TimeGrid) {
    let dist = power_law_distribution(2.0, 6, 105).unwrap();
    let gd = grouped_stats(&dist, &partition_equal_mass(&dist, 21).unwrap()).unwrap();
    let cg = amass_control_groups(&gd, 3).unwrap();
    (gd, cg, TimeGrid::new(1001, 20.0).unwrap())
}

fn schedule_from(grid: &TimeGrid, u: [f64; 3], v: [f64; 3]) -> ControlSchedule {
    let ramp = |level: f64| -> Vec<f64> {
        (0..grid.len())
            .map(|n| level * (1.0 + (n as f64 * 0.05).sin()) / 2.0)
            .collect()
    };
    ControlSchedule::new(
        *grid,
        u.iter().map(|&x| ramp(x)).collect(),
        v.iter().map(|&x| ramp(x)).collect(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn breakdown_is_additive_and_monotone_in_weights(
        u in prop::array::uniform3(0.0f64..1.0),
        v in prop::array::uniform3(0.0f64..1.0),
        b in 0.0f64..2.0,
        c in 0.0f64..2.0,
        db in 0.01f64..1.0,
    ) {
        let (gd, cg, grid) = setup();
        let params = EpidemicParams::default();
        let schedule = schedule_from(&grid, u, v);
        let traj = simulate_grouped(&gd, &cg, &schedule, &params, &grid).unwrap();
        let cost = CostParams { b, c };
        let j = evaluate_cost(&traj, &schedule, &cg, &cost).unwrap();
        prop_assert!((j.total - (j.infection + j.vaccination + j.treatment)).abs() < 1e-12);
        prop_assert_eq!(j.infection, trapezoid(&traj.i, grid.dt()));

        let heavier = evaluate_cost(&traj, &schedule, &cg, &CostParams { b: b + db, c }).unwrap();
        if u.iter().any(|&x| x > 0.0) {
            prop_assert!(heavier.total > j.total);
        }
        let pricier = evaluate_cost(&traj, &schedule, &cg, &CostParams { b, c: c + db }).unwrap();
        if v.iter().any(|&x| x > 0.0) {
            prop_assert!(pricier.total > j.total);
        }

        if let Allocation::Deployed(s) = resource_allocation(&schedule, &cg, &cost).unwrap() {
            let total: f64 = s.vaccination_by_group.iter().chain(&s.treatment_by_group).sum();
            prop_assert!((total - 100.0).abs() < 1e-9);
            prop_assert!((s.group_totals.iter().sum::<f64>() - 100.0).abs() < 1e-9);
            prop_assert!((s.strategy_totals.iter().sum::<f64>() - 100.0).abs() < 1e-9);
            let resources: f64 = s.vaccination_resource.iter().chain(&s.treatment_resource).sum();
            prop_assert!((resources - j.vaccination - j.treatment).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_strategy_costs_exactly_the_infection() {
    let (gd, cg, grid) = setup();
    let params = EpidemicParams::default();
    let schedule = zero_strategy(&grid, 3);
    assert!(schedule.is_zero());
    let traj = simulate_grouped(&gd, &cg, &schedule, &params, &grid).unwrap();
    let j = evaluate_cost(&traj, &schedule, &cg, &CostParams::default()).unwrap();
    assert_eq!(j.vaccination, 0.0);
    assert_eq!(j.treatment, 0.0);
    assert_eq!(j.total, j.infection);
    assert_eq!(j.total, traj.cumulative_infected());
    assert_eq!(
        resource_allocation(&schedule, &cg, &CostParams::default()).unwrap(),
        Allocation::NoResourcesDeployed
    );
}

#[test]
fn constant_strategy_uses_half_rates() {
    let grid = TimeGrid::new(11, 20.0).unwrap();
    let s = constant_strategy(&EpidemicParams::default(), &grid, 3);
    assert!(s.u().iter().flatten().all(|&x| x == 0.25));
    assert!(s.v().iter().flatten().all(|&x| x == 0.125));
    let still = EpidemicParams {
        beta: 0.0,
        ..EpidemicParams::default()
    };
    let s = constant_strategy(&still, &grid, 2);
    assert!(s.u().iter().flatten().all(|&x| x == 0.0));
    assert_eq!(s.num_controls(), 2);
}

#[test]
fn constant_schedule_cost_has_closed_form_control_terms() {
    let (gd, cg, grid) = setup();
    let params = EpidemicParams::default();
    let schedule = constant_strategy(&params, &grid, 3);
    let traj = simulate_grouped(&gd, &cg, &schedule, &params, &grid).unwrap();
    let cost = CostParams::default();
    let j = evaluate_cost(&traj, &schedule, &cg, &cost).unwrap();
    // Σ x_m = 1, so each term is weight × rate² × T.
    assert_abs_diff_eq!(j.vaccination, 0.25 * 0.25 * 0.25 * 20.0, epsilon = 1e-12);
    assert_abs_diff_eq!(j.treatment, 0.5 * 0.125 * 0.125 * 20.0, epsilon = 1e-12);
}

#[test]
fn symmetric_schedule_splits_evenly() {
    let dist = DegreeDistribution::new(1, vec![0.5, 0.5]).unwrap();
    let gd = grouped_stats(&dist, &Grouping::identity(2)).unwrap();
    let cg = amass_control_groups(&gd, 2).unwrap();
    let grid = TimeGrid::new(51, 5.0).unwrap();
    let schedule = ControlSchedule::constant(&grid, 2, 0.3, 0.3).unwrap();
    let cost = CostParams { b: 0.4, c: 0.4 };
    let shares = resource_allocation(&schedule, &cg, &cost).unwrap();
    let shares = shares.shares().unwrap();
    assert_abs_diff_eq!(shares.strategy_totals[0], 50.0, epsilon = 1e-12);
    assert_abs_diff_eq!(shares.strategy_totals[1], 50.0, epsilon = 1e-12);
    assert_abs_diff_eq!(shares.group_totals[0], 50.0, epsilon = 1e-12);
}

#[test]
fn mismatches_are_rejected() {
    let (gd, cg, grid) = setup();
    let params = EpidemicParams::default();
    let schedule = zero_strategy(&grid, 3);
    let traj = simulate_grouped(&gd, &cg, &schedule, &params, &grid).unwrap();
    let other = zero_strategy(&TimeGrid::new(101, 20.0).unwrap(), 3);
    assert!(evaluate_cost(&traj, &other, &cg, &CostParams::default()).is_err());
    assert!(evaluate_cost(&traj, &zero_strategy(&grid, 2), &cg, &CostParams::default()).is_err());
    assert!(evaluate_cost(&traj, &schedule, &cg, &CostParams { b: f64::NAN, c: 0.5 }).is_err());
    assert!(resource_allocation(&zero_strategy(&grid, 2), &cg, &CostParams::default()).is_err());
    assert!(ControlSchedule::constant(&grid, 3, -0.1, 0.0).is_err());
}

#[test]
fn improvement_percentages() {
    assert_abs_diff_eq!(percent_improvement(2.0, 0.5), 75.0, epsilon = 1e-12);
    assert_eq!(percent_improvement(0.0, 0.0), 0.0);
    assert!(percent_improvement(1.0, 1.5) < 0.0);
}

#[test]
fn schedule_csv_round_trips_through_a_file() {
    let grid = TimeGrid::new(101, 20.0).unwrap();
    let schedule = schedule_from(&grid, [0.1, 0.7, 1.0 / 3.0], [0.2, 0.0, 0.05]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("schedule.csv");
    let mut bytes = Vec::new();
    schedule.write_csv(&mut bytes).unwrap();
    std::fs::write(&path, &bytes).unwrap();
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("t,u_1,u_2,u_3,v_1,v_2,v_3\n"));

    let back = ControlSchedule::load_csv(&path).unwrap();
    assert_eq!(back, schedule);
    assert!(
        ControlSchedule::load_csv(dir.path().join("missing.csv"))
            .unwrap_err()
            .exit_code()
            == 3
    );
}

#[test]
fn malformed_schedule_csv_reports_the_line() {
    let bad_number = "t,u_1,v_1\n0,0.1,0.1\n1,x,0.1\n";
    match ControlSchedule::read_csv(bad_number.as_bytes()) {
        Err(netsir::Error::Ingestion { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let uneven = "t,u_1,v_1\n0,0.1,0.1\n1,0.1,0.1\n3,0.1,0.1\n";
    assert!(ControlSchedule::read_csv(uneven.as_bytes()).is_err());
    let negative = "t,u_1,v_1\n0,0.1,0.1\n1,-0.1,0.1\n";
    assert!(ControlSchedule::read_csv(negative.as_bytes()).is_err());
    let header = "time,u_1,v_1\n0,0.1,0.1\n";
    assert!(ControlSchedule::read_csv(header.as_bytes()).is_err());
}
