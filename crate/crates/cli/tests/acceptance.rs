//! End-to-end acceptance suite. Runs every criterion in sequence, prints one
//! PASS/FAIL line each, and exits nonzero if any fails.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use pmkt_core::demand::{budget, Market};
use pmkt_core::diagnostics::{envy_test, envy_value_check, ir_test, membership, pareto_test, Tolerances};
use pmkt_core::equilibrium::{grid_oracle, solve, verify, EquilibriumCertificate, SolverConfig};
use pmkt_core::lcs::{lcs_facets, same_polytope, VPolytope, DEFAULT_DIM_CAP};
use pmkt_core::model::{equal_type_partition, personalized_prices, ConstraintSpec, Instance, LinearConstraint};
use pmkt_core::pipeline::{prepare, PrepareOptions, Prepared};
use pmkt_core::scalar::{qi, qr, Q};
use pmkt_core::structured::{
    bads_primal, brute_force_matching, enumerate_integral, enumerate_matchings, max_matching, regional_feasible,
    regional_system, roommate_system, school_choice_system, school_feasible, RegionalSpec, RoommateFamilies,
    SchoolChoiceSpec, DEFAULT_REGION_CAP,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("corpus").join(name)
}

fn load(name: &str) -> (Instance, Prepared, Market) {
    let text = std::fs::read_to_string(corpus(name)).expect("corpus instance readable");
    let inst = Instance::from_json(&text).expect("corpus instance parses");
    let prep = prepare(&inst, &PrepareOptions::default()).expect("corpus instance prepares");
    let m = Market::new(&prep.instance, &prep.system).expect("market builds");
    (inst, prep, m)
}

fn within_time(started: Instant, limit: Duration, summary: String) -> Verdict {
    let t = started.elapsed();
    if t < limit {
        Ok(format!("{summary}; {t:.2?} < {limit:?}"))
    } else {
        Err(format!("{summary}; took {t:.2?}, limit {limit:?}"))
    }
}

fn max_abs_diff(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    x.iter().flatten().zip(y.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn residuals_within(c: &EquilibriumCertificate, tol: f64) -> bool {
    c.converged && c.max_demand_residual <= tol && c.cs_residual <= tol && c.feasibility_violation <= tol && c.membership.member
}

/// Index of the priced row whose support is exactly the given cells.
fn row_with_support(prep: &Prepared, cells: &[usize]) -> Option<usize> {
    let mut want = cells.to_vec();
    want.sort_unstable();
    prep.system.priced.iter().position(|c| c.support() == want)
}

fn roommates_example() -> Verdict {
    let started = Instant::now();
    let (_, prep, m) = load("roommates3.json");
    let cert = solve(&m, &prep.feasible, &SolverConfig { seed: 7, ..SolverConfig::default() }).map_err(|e| e.to_string())?;
    if !cert.converged {
        return Err(format!("solver did not converge (score {:e})", cert.score()));
    }
    let third = vec![vec![1.0 / 3.0; 3]; 3];
    let dx = max_abs_diff(&cert.assignment, &third);
    if dx > 1e-4 {
        return Err(format!("allocation off the uniform thirds by {dx:e}"));
    }
    // Cells are agent*3 + partner. The two directed 3-cycles:
    let heavy = row_with_support(&prep, &[3, 2, 7]).ok_or("cycle 2->1, 1->3, 3->2 is not priced")?;
    let light = row_with_support(&prep, &[1, 5, 6]).ok_or("cycle 1->2, 2->3, 3->1 is not priced")?;
    for c in [heavy, light] {
        if cert.slacks[c] > 1e-6 {
            return Err(format!("3-cycle row {c} has slack {:e}", cert.slacks[c]));
        }
    }
    let pp = personalized_prices(&prep.system, &cert.prices).map_err(|e| e.to_string())?;
    let top = pp.iter().flatten().copied().fold(0.0, f64::max);
    if top <= 0.0 {
        return Err("all personalized prices are zero".into());
    }
    let expected = [[0.0, 1.0, 2.0], [2.0, 0.0, 1.0], [1.0, 2.0, 0.0]];
    let dp = pp.iter().flatten().zip(expected.iter().flatten()).map(|(a, b)| (a / top - b / 2.0).abs()).fold(0.0, f64::max);
    if dp > 1e-3 {
        return Err(format!("normalized personalized prices differ from the cyclic pattern by {dp:e}"));
    }

    let mut p = vec![0.0; prep.system.priced.len()];
    p[heavy] = 2.0;
    p[light] = 1.0;
    let checked = verify(&m, &prep.feasible, &p, &third, 1e-9).map_err(|e| e.to_string())?;
    if !residuals_within(&checked, 1e-9) {
        return Err(format!(
            "reference prices rejected: demand {:e}, slackness {:e}, feasibility {:e}",
            checked.max_demand_residual, checked.cs_residual, checked.feasibility_violation
        ));
    }
    within_time(
        started,
        Duration::from_secs(5),
        format!("thirds within {dx:.1e}, price pattern within {dp:.1e}, reference prices verified"),
    )
}

fn hz_endowment_example() -> Verdict {
    let started = Instant::now();
    let (_, prep, m) = load("hz_endow.json");
    let claim = vec![vec![0.5, 0.5], vec![0.5, 0.5], vec![0.0, 1.0]];
    let mut worst = 0.0f64;
    for alpha in [0.1, 0.5, 1.0] {
        let ma = m.with_alpha(alpha);
        let p = vec![6.0 * alpha / (1.0 + 2.0 * alpha), 0.0];
        let checked = verify(&ma, &prep.feasible, &p, &claim, 1e-9).map_err(|e| e.to_string())?;
        if !residuals_within(&checked, 1e-9) {
            return Err(format!("alpha {alpha}: closed-form prices rejected (score {:e})", checked.score()));
        }
        let cfg = SolverConfig { alpha: Some(alpha), ..SolverConfig::default() };
        let cert = solve(&m, &prep.feasible, &cfg).map_err(|e| e.to_string())?;
        if !cert.converged {
            return Err(format!("alpha {alpha}: solver did not converge"));
        }
        let d = max_abs_diff(&cert.assignment, &claim);
        if d > 1e-4 {
            return Err(format!("alpha {alpha}: solved allocation differs by {d:e}"));
        }
        worst = worst.max(d);
    }
    let grid = grid_oracle(&m.with_alpha(0.0), 6.0, 0.01).map_err(|e| e.to_string())?;
    if grid.min_gap <= 1e-3 {
        return Err(format!("alpha 0: grid minimum gap {:e} at {:?}", grid.min_gap, grid.argmin));
    }
    within_time(
        started,
        Duration::from_secs(30),
        format!("three slacks verified and solved within {worst:.1e}; alpha 0 grid minimum gap {:.3e}", grid.min_gap),
    )
}

fn regional_case(q: &[i64], floors: [i64; 2], ceilings: [i64; 2]) -> (String, Vec<LinearConstraint>, VPolytope) {
    let spec = RegionalSpec {
        regions: vec![vec![0, 1], vec![2]],
        floors: floors.iter().map(|&v| qi(v)).collect(),
        ceilings: ceilings.iter().map(|&v| qi(v)).collect(),
    };
    let q: Vec<Q> = q.iter().map(|&v| qi(v)).collect();
    let w = regional_system(&spec, 3, &q, DEFAULT_REGION_CAP).expect("regional system");
    let (le, ge) = regional_feasible(&spec, 3, &q);
    let v = enumerate_integral(3, 3, &le, &ge).expect("regional vertices");
    (format!("regional q={q:?} floors={floors:?} ceilings={ceilings:?}"), w, v)
}

fn school_case(q: &[i64], quotas: [[i64; 4]; 2]) -> (String, Vec<LinearConstraint>, VPolytope) {
    let spec = SchoolChoiceSpec {
        minority: vec![true, true, false, false],
        quotas: quotas.iter().map(|s| [qi(s[0]), qi(s[1]), qi(s[2]), qi(s[3])]).collect(),
    };
    let q: Vec<Q> = q.iter().map(|&v| qi(v)).collect();
    let w = school_choice_system(&spec, &q, DEFAULT_REGION_CAP).expect("school system");
    let (le, ge) = school_feasible(&spec, &q);
    let v = enumerate_integral(4, 2, &le, &ge).expect("school vertices");
    (format!("school q={q:?} quotas={quotas:?}"), w, v)
}

fn roommate_case(n: usize, families: RoommateFamilies) -> (String, Vec<LinearConstraint>, VPolytope) {
    let w = roommate_system(n, families, true).expect("roommate system");
    let v = VPolytope { n_agents: n, n_objects: n, vertices: enumerate_matchings(n) };
    (format!("roommates n={n} {families:?}"), w, v)
}

fn structured_equivalence() -> Verdict {
    let started = Instant::now();
    let cases = vec![
        regional_case(&[1, 1, 1], [0, 0], [3, 3]),
        regional_case(&[1, 1, 2], [1, 1], [3, 3]),
        regional_case(&[2, 1, 1], [1, 0], [2, 1]),
        regional_case(&[1, 2, 2], [0, 1], [1, 2]),
        regional_case(&[2, 2, 1], [2, 1], [2, 1]),
        school_case(&[2, 2], [[0, 2, 0, 2], [0, 2, 0, 2]]),
        school_case(&[2, 2], [[1, 2, 1, 2], [1, 2, 1, 2]]),
        school_case(&[2, 2], [[1, 1, 0, 2], [0, 2, 1, 1]]),
        school_case(&[3, 1], [[1, 2, 0, 1], [0, 1, 0, 1]]),
        roommate_case(2, RoommateFamilies::Full),
        roommate_case(3, RoommateFamilies::Full),
        roommate_case(4, RoommateFamilies::Full),
        roommate_case(4, RoommateFamilies::OddSets),
    ];
    let count = cases.len();
    for (name, w, v) in cases {
        let facets = lcs_facets(&v, DEFAULT_DIM_CAP).map_err(|e| format!("{name}: {e}"))?;
        if !same_polytope(&w, &facets, v.cells()) {
            return Err(format!("{name}: structured system and facet enumeration disagree"));
        }
    }
    within_time(started, Duration::from_secs(60), format!("{count} instances agree by mutual inclusion"))
}

fn random_instance(rng: &mut ChaCha8Rng, k: usize) -> Instance {
    let n = rng.gen_range(1..=4);
    let l = rng.gen_range(1..=4);
    let q: Vec<i64> = (0..l).map(|_| rng.gen_range(1..=2)).collect();
    let utilities = (0..n).map(|_| (0..l).map(|_| rng.gen_range(0.1..=1.0)).collect()).collect();
    let endowed = k % 2 == 1;
    let share = n.max(l) as i64;
    Instance {
        agents: (0..n).map(|i| format!("a{i}")).collect(),
        objects: (0..l).map(|o| format!("o{o}")).collect(),
        quantities: q.iter().map(|&v| qi(v)).collect(),
        utilities,
        endowments: endowed.then(|| vec![(0..l).map(|_| qr(1, share)).collect(); n]),
        alpha: if endowed { 0.25 } else { 1.0 },
        constraints: ConstraintSpec::Hz,
    }
}

/// Every property a converged certificate must satisfy; returns the first failure.
fn certificate_properties(c: &EquilibriumCertificate, inst: &Instance, prep: &Prepared, m: &Market) -> Result<(), String> {
    let x = &c.assignment;
    if !membership(x, &prep.feasible).member {
        return Err("assignment outside the feasible set".into());
    }
    if c.cs_residual > 1e-6 {
        return Err(format!("complementary slackness {:e}", c.cs_residual));
    }
    let pareto = pareto_test(x, m, &prep.feasible, true);
    if pareto.gain > Tolerances::PARETO {
        return Err(format!("dominated with joint gain {:e}", pareto.gain));
    }
    let envy = envy_test(x, m, &equal_type_partition(inst, &prep.system));
    if !envy.equal_type_violations.is_empty() {
        return Err(format!("equal-type envy {:?}", envy.equal_type_violations));
    }
    if m.endowments.is_some() {
        let avg = (0..m.n).map(|i| budget(m, i, &c.prices).income).sum::<f64>() / m.n as f64;
        if avg > 1.0 + 1e-6 {
            return Err(format!("average income {avg}"));
        }
    }
    let msgs = envy_value_check(x, &c.prices, m);
    if let Some(msg) = msgs.first() {
        return Err(msg.clone());
    }
    Ok(())
}

fn random_property_suite() -> Verdict {
    const TOTAL: usize = 200;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut converged = 0;
    let mut unconverged = Vec::new();
    for k in 0..TOTAL {
        let inst = random_instance(&mut rng, k);
        let prep = prepare(&inst, &PrepareOptions::default()).map_err(|e| format!("instance {k}: {e}"))?;
        let m = Market::new(&prep.instance, &prep.system).map_err(|e| format!("instance {k}: {e}"))?;
        let c = solve(&m, &prep.feasible, &SolverConfig { seed: k as u64, ..SolverConfig::default() })
            .map_err(|e| format!("instance {k}: {e}"))?;
        if !c.converged {
            unconverged.push(format!("{k} (score {:.1e})", c.score()));
            continue;
        }
        converged += 1;
        certificate_properties(&c, &inst, &prep, &m).map_err(|e| format!("instance {k}: {e}"))?;
    }
    let summary = format!(
        "{converged}/{TOTAL} converged, all converged certificates pass; not converged: [{}]",
        unconverged.join(", ")
    );
    if converged * 10 >= TOTAL * 9 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn ir_trend() -> Verdict {
    let (_, prep, m) = load("hz_endow.json");
    let mut gaps = Vec::new();
    for alpha in [0.3, 0.1, 0.03, 0.01] {
        let cfg = SolverConfig { alpha: Some(alpha), ..SolverConfig::default() };
        let c = solve(&m, &prep.feasible, &cfg).map_err(|e| e.to_string())?;
        if !c.converged {
            return Err(format!("alpha {alpha}: solver did not converge"));
        }
        let ir = ir_test(&c.assignment, &m.with_alpha(alpha), &c.prices, f64::INFINITY).map_err(|e| e.to_string())?;
        gaps.push(ir.max_gap);
    }
    let summary = format!("gaps at alpha 0.3, 0.1, 0.03, 0.01: {gaps:.4?}");
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0] + Tolerances::UTILITY);
    if monotone && gaps[3] < 0.5 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn bads_floors() -> Verdict {
    let (inst, prep, m) = load("bads.json");
    let c = solve(&m, &prep.feasible, &SolverConfig::default()).map_err(|e| e.to_string())?;
    if !c.converged {
        return Err(format!("dual solve did not converge (score {:e})", c.score()));
    }
    let x = bads_primal(&c.assignment);
    let mut shortfall = 0.0f64;
    for (o, q) in inst.quantities.iter().enumerate() {
        let need = pmkt_core::scalar::q_to_f64(q);
        shortfall = shortfall.max(need - x.iter().map(|r| r[o]).sum::<f64>());
    }
    if shortfall > 1e-6 {
        return Err(format!("floor shortfall {shortfall:e}"));
    }
    certificate_properties(&c, &prep.instance, &prep, &m).map_err(|e| format!("dual certificate: {e}"))?;
    Ok(format!("{} agents, {} bads; largest floor shortfall {shortfall:.1e}; dual certificate passes", inst.n(), inst.l()))
}

fn matching_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for g in 0..100 {
        let n = rng.gen_range(2..=8);
        let mut all: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let m = rng.gen_range(0..=all.len().min(12));
        let mut edges = Vec::new();
        for _ in 0..m {
            edges.push(all.swap_remove(rng.gen_range(0..all.len())));
        }
        let (fast, slow) = (max_matching(n, &edges), brute_force_matching(n, &edges));
        if fast != slow {
            return Err(format!("graph {g} on {n} vertices {edges:?}: {fast} vs {slow}"));
        }
    }
    Ok("100 random graphs with at most 12 edges agree exactly".into())
}

fn corpus_run(out: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_pmkt"))
        .args(["corpus", "--out"])
        .arg(out)
        .env("PMKT_THREADS", "4")
        .output()
        .map_err(|e| format!("cannot run pmkt: {e}"))?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("corpus exited with {:?}: {}", status.status.code(), String::from_utf8_lossy(&status.stderr)))
    }
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).expect("under root").to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn corpus_determinism() -> Verdict {
    let root = std::env::temp_dir().join(format!("pmkt-acceptance-{}", std::process::id()));
    let (a, b) = (root.join("first"), root.join("second"));
    let _ = std::fs::remove_dir_all(&root);
    let result = (|| {
        corpus_run(&a)?;
        corpus_run(&b)?;
        let (fa, fb) = (files_under(&a), files_under(&b));
        if fa != fb || fa.is_empty() {
            return Err(format!("runs wrote different file sets: {fa:?} vs {fb:?}"));
        }
        for f in &fa {
            if std::fs::read(a.join(f)).ok() != std::fs::read(b.join(f)).ok() {
                return Err(format!("{} differs between runs", f.display()));
            }
        }
        Ok(format!("{} certificates byte-identical across two runs", fa.len()))
    })();
    let _ = std::fs::remove_dir_all(&root);
    result
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("roommates worked example", roommates_example),
        ("endowment example and alpha 0 nonexistence", hz_endowment_example),
        ("structured vs generic polytopes", structured_equivalence),
        ("random certificate properties", random_property_suite),
        ("individual rationality trend", ir_trend),
        ("bads floors", bads_floors),
        ("matching oracle", matching_oracle),
        ("corpus determinism", corpus_determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let verdict = run();
        let t = started.elapsed();
        match verdict {
            Ok(m) => println!("criterion {} PASS {name}: {m} [{t:.2?}]", k + 1),
            Err(m) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {m} [{t:.2?}]", k + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
