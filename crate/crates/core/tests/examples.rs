//! Worked examples across modules, each checked against a hand computation.

use pmkt_core::demand::{budget, cheapest_demand, satiation_value, Market};
use pmkt_core::diagnostics::{envy_test, envy_value_check, ir_test, pareto_test};
use pmkt_core::equilibrium::{grid_oracle, solve, SolverConfig};
use pmkt_core::lcs::{lcs_facets, same_polytope, VPolytope};
use pmkt_core::model::{equal_type_partition, personalized_prices, validate, Instance, LinearConstraint};
use pmkt_core::pipeline::{prepare, PrepareOptions, Prepared};
use pmkt_core::scalar::{qi, Q};
use pmkt_core::structured::{
    bads_dual, regional_system, school_ceilings, supply_columns, unit_demand_rows, RegionalSpec, SchoolChoiceSpec,
};

fn parse(json: &str) -> Instance {
    Instance::from_json(json).unwrap()
}

fn setup(json: &str) -> (Instance, Prepared, Market) {
    let inst = parse(json);
    let prep = prepare(&inst, &PrepareOptions::default()).unwrap();
    let m = Market::new(&prep.instance, &prep.system).unwrap();
    (inst, prep, m)
}

const HZ_ENDOW: &str = r#"{
  "agents": ["1", "2", "3"], "objects": ["a", "b"], "quantities": [1, 2],
  "utilities": [[100, 1], [100, 1], [1, 100]],
  "endowments": [["1/3", "2/3"], ["1/3", "2/3"], ["1/3", "2/3"]],
  "constraints": { "kind": "hz" }
}"#;

const ROOMMATES3: &str = r#"{
  "agents": ["1", "2", "3"], "objects": ["1", "2", "3"], "quantities": [1, 1, 1],
  "utilities": [[0, 1, 2], [2, 0, 1], [1, 2, 0]],
  "constraints": { "kind": "roommates" }
}"#;

const SCHOOL: &str = r#"{
  "agents": ["m1", "m2", "j1", "j2"], "objects": ["north", "south"], "quantities": [2, 2],
  "utilities": [[1, 0.5], [0.9, 0.6], [1, 0.2], [0.8, 0.7]],
  "constraints": { "kind": "school_choice", "minority_agents": ["m1", "m2"], "quotas": [
    { "minority_floor": 1, "minority_ceiling": 1, "majority_floor": 0, "majority_ceiling": 2 },
    { "minority_floor": 0, "minority_ceiling": 2, "majority_floor": 0, "majority_ceiling": 2 } ] }
}"#;

fn endowment_claim() -> Vec<Vec<f64>> {
    vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.0, 1.0]]
}

fn row(cells: usize, support: &[usize], b: i64) -> LinearConstraint {
    let mut c = LinearConstraint::zero(cells);
    for &k in support {
        c.a[k] = qi(1);
    }
    c.b = qi(b);
    c
}

#[test]
fn endowment_example_validates_cleanly() {
    assert!(validate(&parse(HZ_ENDOW)).is_ok(), "{:?}", validate(&parse(HZ_ENDOW)));
}

#[test]
fn zero_quantity_is_rejected() {
    let json = HZ_ENDOW.replace(r#""quantities": [1, 2]"#, r#""quantities": [0, 2]"#);
    let r = validate(&parse(&json));
    assert!(r.violations.iter().any(|v| v.contains("quantity must be positive")), "{r:?}");
}

#[test]
fn endowment_beyond_supply_is_rejected() {
    let json = r#"{
      "agents": ["1", "2"], "objects": ["a", "b"], "quantities": [1, 1],
      "utilities": [[1, 1], [1, 1]], "endowments": [[1, 0], [1, 0]],
      "constraints": { "kind": "hz" }
    }"#;
    let r = validate(&parse(json));
    assert!(r.violations.iter().any(|v| v.contains("endowment infeasible")), "{r:?}");
}

#[test]
fn roommate_cycle_prices_personalize_cyclically() {
    let (_, prep, _) = setup(ROOMMATES3);
    let n = 3;
    let mut p = vec![0.0; prep.system.priced.len()];
    for (c, r) in prep.system.priced.iter().enumerate() {
        let s = r.support();
        // x[2,1] + x[1,3] + x[3,2] with one-based agents.
        if s == [2, 3, 7] {
            p[c] = 2.0;
        }
        if s == [1, 5, 6] {
            p[c] = 1.0;
        }
    }
    assert_eq!(p.iter().filter(|&&v| v > 0.0).count(), 2);
    let pp = personalized_prices(&prep.system, &p).unwrap();
    let expected = [[0.0, 1.0, 2.0], [2.0, 0.0, 1.0], [1.0, 2.0, 0.0]];
    for i in 0..n {
        for j in 0..n {
            assert!((pp[i][j] - expected[i][j]).abs() < 1e-12, "{pp:?}");
        }
    }
}

#[test]
fn roommate_cycles_are_priced_and_unit_rows_individual() {
    let (_, prep, _) = setup(ROOMMATES3);
    let supports: Vec<Vec<usize>> = prep.system.priced.iter().map(|c| c.support()).collect();
    assert!(supports.contains(&vec![2, 3, 7]));
    assert!(supports.contains(&vec![1, 5, 6]));
    for (i, rows) in prep.system.individual.iter().enumerate() {
        assert!(!rows.is_empty());
        assert!(rows.iter().all(|r| r.agents(3) == vec![i]));
    }
}

#[test]
fn endowment_example_has_one_type_and_one_supply_row_per_object() {
    let (inst, prep, _) = setup(HZ_ENDOW);
    assert_eq!(equal_type_partition(&inst, &prep.system), vec![vec![0, 1, 2]]);
    assert_eq!(prep.system.priced.len(), 2);
}

#[test]
fn school_choice_types_split() {
    // With one student per type, a type quota only differs when it bounds that student differently.
    let json = r#"{
      "agents": ["m", "j"], "objects": ["s", "t"], "quantities": [1, 1], "utilities": [[1, 1], [1, 1]],
      "constraints": { "kind": "school_choice", "minority_agents": ["m"], "quotas": [
        { "minority_floor": 0, "minority_ceiling": 1, "majority_floor": 0, "majority_ceiling": 1 },
        { "minority_floor": 0, "minority_ceiling": 0, "majority_floor": 0, "majority_ceiling": 1 } ] }
    }"#;
    let (inst, prep, _) = setup(json);
    assert_eq!(equal_type_partition(&inst, &prep.system), vec![vec![0], vec![1]]);
}

#[test]
fn regional_doctors_form_one_type() {
    let json = r#"{
      "agents": ["d1", "d2", "d3"], "objects": ["h1", "h2", "h3"], "quantities": [1, 1, 2],
      "utilities": [[1, 0.8, 0.3], [0.9, 1, 0.2], [1, 0.6, 0.5]],
      "constraints": { "kind": "regional", "regions": [["h1", "h2"], ["h3"]], "floors": [0, 1], "ceilings": [2, 2] }
    }"#;
    let (inst, prep, _) = setup(json);
    assert_eq!(equal_type_partition(&inst, &prep.system), vec![vec![0, 1, 2]]);
}

#[test]
fn permutation_vertices_give_rows_and_columns() {
    // Deterministic 2x2 assignments with unit supply.
    let v = |cells: [i64; 4]| cells.iter().map(|&c| qi(c)).collect::<Vec<Q>>();
    let poly = VPolytope {
        n_agents: 2,
        n_objects: 2,
        vertices: vec![v([0, 0, 0, 0]), v([1, 0, 0, 0]), v([0, 1, 0, 0]), v([0, 0, 1, 0]), v([0, 0, 0, 1]), v([1, 0, 0, 1]), v([0, 1, 1, 0])],
    };
    let facets = lcs_facets(&poly, 16).unwrap();
    let mut expected = vec![row(4, &[0, 1], 1), row(4, &[2, 3], 1), row(4, &[0, 2], 1), row(4, &[1, 3], 1)];
    let key = |c: &LinearConstraint| (c.support(), c.b.clone());
    let mut got: Vec<_> = facets.iter().map(|c| c.normalized()).collect();
    got.sort_by_key(key);
    expected.sort_by_key(key);
    assert_eq!(got, expected);
}

#[test]
fn regional_two_region_caps() {
    let spec = RegionalSpec { regions: vec![vec![0], vec![1]], floors: vec![qi(1), qi(1)], ceilings: vec![qi(3), qi(3)] };
    let w = regional_system(&spec, 3, &[qi(3), qi(3)], 12).unwrap();
    let region = |objs: &[usize]| (0..3).flat_map(|i| objs.iter().map(move |o| i * 2 + o)).collect::<Vec<_>>();
    assert!(w.contains(&row(6, &region(&[0]), 2)));
    assert!(w.contains(&row(6, &region(&[1]), 2)));
    assert!(w.contains(&row(6, &region(&[0, 1]), 3)));
}

#[test]
fn single_region_without_floor_is_plain_supply() {
    let q = [qi(1), qi(2)];
    let spec = RegionalSpec { regions: vec![vec![0, 1]], floors: vec![qi(0)], ceilings: vec![qi(3)] };
    let w = regional_system(&spec, 3, &q, 12).unwrap();
    let mut hz = unit_demand_rows(3, 2);
    hz.extend(supply_columns(3, &q));
    assert!(same_polytope(&w, &hz, 6));
}

#[test]
fn school_ceilings_without_floors_are_capped_sums() {
    let spec = SchoolChoiceSpec { minority: vec![true, false, false], quotas: vec![[qi(0), qi(1), qi(0), qi(2)], [qi(0), qi(2), qi(0), qi(1)]] };
    let (minority, majority) = school_ceilings(&spec, &[qi(3), qi(3)], 12).unwrap();
    assert_eq!(minority[&0b01], qi(1));
    assert_eq!(minority[&0b10], qi(1));
    assert_eq!(minority[&0b11], qi(1));
    assert_eq!(majority[&0b01], qi(2));
    assert_eq!(majority[&0b10], qi(1));
    assert_eq!(majority[&0b11], qi(2));
}

#[test]
fn bads_dual_flips_utilities_and_keeps_slack() {
    let json = r#"{
      "agents": ["1", "2"], "objects": ["chore"], "quantities": [1],
      "utilities": [[-3], [-1]], "constraints": { "kind": "hz" }
    }"#;
    let d = bads_dual(&parse(json)).unwrap();
    assert_eq!(d.instance.quantities, vec![qi(1)]);
    assert_eq!(d.instance.utilities, vec![vec![3.0], vec![1.0]]);
    let flip = r#"{
      "agents": ["1"], "objects": ["a", "b"], "quantities": [0.5, 0.25],
      "utilities": [[-3, -1]], "constraints": { "kind": "hz" }
    }"#;
    let d = bads_dual(&parse(flip)).unwrap();
    assert_eq!(d.instance.utilities, vec![vec![3.0, 1.0]]);
}

#[test]
fn satiation_values() {
    let one = |u: &str| {
        let json = format!(
            r#"{{ "agents": ["1"], "objects": ["a", "b"], "quantities": [1, 1], "utilities": [{u}], "constraints": {{ "kind": "hz" }} }}"#
        );
        let (_, _, m) = setup(&json);
        satiation_value(&m, 0).unwrap() * m.utility_scale[0]
    };
    assert!((one("[100, 1]") - 100.0).abs() < 1e-9);
    assert!((one("[1, 1]") - 1.0).abs() < 1e-9);
}

#[test]
fn forbidden_object_is_skipped_by_satiation() {
    let json = r#"{
      "agents": ["1", "2"], "objects": ["a", "b", "c"], "quantities": [1, 1, 1],
      "utilities": [[5, 2, 1], [1, 1, 1]],
      "constraints": { "kind": "explicit", "inequalities": [
        { "a": [[1, 0, 0], [0, 0, 0]], "b": 0 },
        { "a": [[1, 1, 1], [0, 0, 0]], "b": 1 },
        { "a": [[0, 0, 0], [1, 1, 1]], "b": 1 },
        { "a": [[1, 1, 1], [1, 1, 1]], "b": 2 } ] }
    }"#;
    let (inst, _, m) = setup(json);
    let allowed_max = inst.utilities[0][1..].iter().copied().fold(f64::MIN, f64::max);
    assert!((satiation_value(&m, 0).unwrap() * m.utility_scale[0] - allowed_max).abs() < 1e-9);
    let d = cheapest_demand(&m, &budget(&m, 0, &vec![0.0; m.priced.len()])).unwrap();
    assert!(d.bundle[0].abs() < 1e-12);
}

#[test]
fn grid_oracle_finds_the_endowment_equilibrium() {
    let (_, _, m) = setup(HZ_ENDOW);
    let g = grid_oracle(&m.with_alpha(0.5), 6.0, 0.01).unwrap();
    assert!(g.min_gap < 1e-2, "{g:?}");
    assert!((g.argmin[0] - 1.5).abs() <= 0.02 && g.argmin[1] <= 0.02, "{g:?}");
}

#[test]
fn grid_oracle_agrees_with_solver_on_one_constraint() {
    // Two agents share one unit; each spends the whole budget, so the price is 2.
    let json = r#"{
      "agents": ["1", "2"], "objects": ["a"], "quantities": [1],
      "utilities": [[1], [0.5]], "constraints": { "kind": "hz" }
    }"#;
    let (_, prep, m) = setup(json);
    let step = 0.01;
    let g = grid_oracle(&m, 7.0, step).unwrap();
    let c = solve(&m, &prep.feasible, &SolverConfig::default()).unwrap();
    assert!(c.converged);
    assert!((g.argmin[0] - c.prices[0]).abs() <= step + 1e-9, "{g:?} vs {:?}", c.prices);
    assert!((c.prices[0] - 2.0).abs() < 1e-6);
}

#[test]
fn roommate_thirds_are_efficient() {
    let (_, prep, m) = setup(ROOMMATES3);
    let x = vec![vec![1.0 / 3.0; 3]; 3];
    assert!(pareto_test(&x, &m, &prep.feasible, true).efficient);
}

#[test]
fn worst_pairing_is_dominated_by_the_other_pairing() {
    // Pairs {1,2},{3,4} are everyone's worst; {1,3},{2,4} are everyone's best.
    let json = r#"{
      "agents": ["1", "2", "3", "4"], "objects": ["1", "2", "3", "4"], "quantities": [1, 1, 1, 1],
      "utilities": [[0, 1, 3, 2], [1, 0, 2, 3], [3, 2, 0, 1], [2, 3, 1, 0]],
      "constraints": { "kind": "roommates" }
    }"#;
    let (_, prep, m) = setup(json);
    let worst = vec![vec![0.0, 1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0, 0.0]];
    let r = pareto_test(&worst, &m, &prep.feasible, true);
    assert!(!r.efficient);
    let y = r.dominating.expect("witness");
    for (i, j) in [(0, 2), (1, 3), (2, 0), (3, 1)] {
        assert!((y[i][j] - 1.0).abs() < 1e-6, "{y:?}");
    }
}

#[test]
fn single_agent_at_bliss_is_efficient() {
    let json = r#"{ "agents": ["1"], "objects": ["a", "b"], "quantities": [1, 1], "utilities": [[2, 1]], "constraints": { "kind": "hz" } }"#;
    let (_, prep, m) = setup(json);
    assert!(pareto_test(&vec![vec![1.0, 0.0]], &m, &prep.feasible, true).efficient);
    assert!(pareto_test(&vec![vec![1.0, 0.0]], &m, &prep.feasible, false).efficient);
}

#[test]
fn endowment_equilibrium_is_envy_free() {
    let (inst, prep, m) = setup(HZ_ENDOW);
    let m = m.with_alpha(0.5);
    let x = endowment_claim();
    let r = envy_test(&x, &m, &equal_type_partition(&inst, &prep.system));
    assert!(r.pairs.is_empty(), "{r:?}");
    assert!(envy_value_check(&x, &[1.5, 0.0], &m).is_empty());
}

#[test]
fn unequal_split_between_equal_types_is_flagged() {
    let (inst, prep, m) = setup(HZ_ENDOW);
    let x = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
    let r = envy_test(&x, &m, &equal_type_partition(&inst, &prep.system));
    assert!(r.equal_type_violations.contains(&(1, 0)), "{r:?}");
    let msgs = envy_value_check(&x, &[0.0, 0.0], &m);
    assert!(msgs.iter().any(|s| s.contains("input not an equilibrium")), "{msgs:?}");
}

#[test]
fn school_choice_envy_stays_across_types() {
    let (inst, prep, m) = setup(SCHOOL);
    let c = solve(&m, &prep.feasible, &SolverConfig::default()).unwrap();
    assert!(c.converged, "{c:?}");
    let part = equal_type_partition(&inst, &prep.system);
    let r = envy_test(&c.assignment, &m, &part);
    assert!(r.equal_type_violations.is_empty(), "{r:?}");
}

#[test]
fn autarky_has_no_plain_gap() {
    let (inst, _, m) = setup(HZ_ENDOW);
    let w: Vec<Vec<f64>> =
        inst.endowments.unwrap().iter().map(|r| r.iter().map(pmkt_core::scalar::q_to_f64).collect()).collect();
    let r = ir_test(&w, &m, &[1.0, 0.5], f64::INFINITY).unwrap();
    assert!(r.plain_gaps.iter().all(|&g| g == 0.0), "{r:?}");
}

#[test]
fn envy_toward_richer_endowment_is_explained_by_value() {
    // Both want `a`; agent 1 owns it, agent 2 owns `b`.
    let json = r#"{
      "agents": ["rich", "poor"], "objects": ["a", "b"], "quantities": [1, 1],
      "utilities": [[1, 0.2], [1, 0.2]], "endowments": [[1, 0], [0, 1]], "alpha": 0.25,
      "constraints": { "kind": "hz" }
    }"#;
    let (_, prep, m) = setup(json);
    let c = solve(&m, &prep.feasible, &SolverConfig::default()).unwrap();
    assert!(c.converged, "{c:?}");
    let envy = envy_test(&c.assignment, &m, &[vec![0], vec![1]]);
    assert!(envy.pairs.iter().any(|&(i, j, _)| (i, j) == (1, 0)), "{envy:?}");
    let w = m.endowments.clone().unwrap();
    let pp = m.personal_prices(1, &c.prices);
    let value = |k: usize| pp.iter().zip(&w[k]).map(|(a, b)| a * b).sum::<f64>();
    assert!(value(0) > value(1));
    assert!(envy_value_check(&c.assignment, &c.prices, &m).is_empty());
}
