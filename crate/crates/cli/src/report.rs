//! Human-readable summary of a certificate with the efficiency and fairness
//! diagnostics.

use std::fmt::Write;

use pmkt_core::demand::{dot, Market};
use pmkt_core::diagnostics::{envy_test, envy_value_check, ir_test, pareto_test};
use pmkt_core::model::equal_type_partition;
use pmkt_core::scalar::fmt_q;

use crate::files::{CertificateFile, Loaded};

fn table(out: &mut String, rows: &[String], cols: &[String], data: &[Vec<f64>]) {
    let w = rows.iter().map(String::len).max().unwrap_or(0).max(5);
    let cw = cols.iter().map(String::len).max().unwrap_or(0).max(10);
    let _ = writeln!(out, "{:w$} {}", "", cols.iter().map(|c| format!("{c:>cw$}")).collect::<Vec<_>>().join(" "));
    for (r, d) in rows.iter().zip(data) {
        let cells: Vec<String> = d.iter().map(|x| format!("{x:>cw$.6}")).collect();
        let _ = writeln!(out, "{r:w$} {}", cells.join(" "));
    }
}

pub fn render(loaded: &Loaded, m: &Market, cert: &CertificateFile) -> String {
    let eq = &cert.equilibrium;
    let prep = &loaded.prepared;
    let inst = &prep.instance;
    let x = &eq.assignment;
    let mut out = String::new();
    let _ = writeln!(out, "# pmkt report\n");
    let _ = writeln!(
        out,
        "constraints: {}  agents: {}  objects: {}  alpha: {}",
        cert.constraint_kind,
        inst.n(),
        inst.l(),
        eq.alpha
    );
    let status = if eq.converged { "converged" } else { "NOT converged" };
    let _ = writeln!(out, "status: {status} ({}, {} iterations, start {:?})\n", eq.method, eq.iterations, eq.start);

    let _ = writeln!(out, "## Prices on priced constraints\n");
    let mut zero = 0;
    for (c, (row, p)) in prep.system.priced.iter().zip(&eq.prices).enumerate() {
        if *p <= 1e-12 {
            zero += 1;
            continue;
        }
        let l = prep.system.n_objects;
        let terms: Vec<String> = row
            .support()
            .into_iter()
            .map(|k| {
                let a = fmt_q(&row.a[k]);
                let coef = if a == "1" { String::new() } else { format!("{a}·") };
                format!("{coef}x[{},{}]", inst.agents[k / l], inst.objects[k % l])
            })
            .collect();
        let _ = writeln!(out, "c{c}: {} <= {}   price {p:.6}   slack {:.3e}", terms.join(" + "), fmt_q(&row.b), eq.slacks[c].max(0.0));
    }
    let _ = writeln!(out, "({zero} of {} priced constraints at price zero)\n", eq.prices.len());

    let _ = writeln!(out, "## Personalized prices\n");
    table(&mut out, &inst.agents, &inst.objects, &cert.personalized_prices);
    let _ = writeln!(out, "\n## Assignment\n");
    table(&mut out, &inst.agents, &inst.objects, x);

    let _ = writeln!(out, "\n## Agents (utilities in original units)\n");
    for i in 0..inst.n() {
        let pi = m.personal_prices(i, &eq.prices);
        let _ = writeln!(
            out,
            "{}: utility {:.6}  spend {:.6}  residual {:.3e}",
            inst.agents[i],
            m.utility(i, &x[i]) * m.utility_scale[i],
            dot(&pi, &x[i]),
            eq.demand_residuals[i]
        );
    }

    let _ = writeln!(out, "\n## Residuals\n");
    let _ = writeln!(out, "max demand residual {:.3e}", eq.max_demand_residual);
    let _ = writeln!(out, "complementary slackness {:.3e}", eq.cs_residual);
    let _ = writeln!(out, "feasibility violation {:.3e}", eq.feasibility_violation);
    let _ = writeln!(out, "feasible-set member {} (violation {:.3e})", eq.membership.member, eq.membership.violation);
    let _ = writeln!(out, "price ceiling {:.6}{}", eq.price_ceiling, if eq.at_ceiling { " (reached)" } else { "" });

    let _ = writeln!(out, "\n## Diagnostics\n");
    let pareto = pareto_test(x, m, &prep.feasible, true);
    let _ = writeln!(out, "constrained Pareto efficient: {} (best joint gain {:.3e})", pareto.efficient, pareto.gain);
    let envy = envy_test(x, m, &equal_type_partition(inst, &prep.system));
    let _ = writeln!(out, "envy pairs: {}  equal-type violations: {}", envy.pairs.len(), envy.equal_type_violations.len());
    for (i, j, d) in &envy.pairs {
        let _ = writeln!(out, "  {} envies {} by {:.3e}", inst.agents[*i], inst.agents[*j], d * m.utility_scale[*i]);
    }
    for msg in envy_value_check(x, &eq.prices, m) {
        let _ = writeln!(out, "  {msg}");
    }
    if m.endowments.is_some() {
        if let Ok(ir) = ir_test(x, m, &eq.prices, f64::INFINITY) {
            let _ = writeln!(out, "largest individual-rationality gap {:.6} (normalized utility)", ir.max_gap);
        }
        if let Some(v) = eq.average_endowment_value {
            let _ = writeln!(out, "average endowment value {v:.6}");
        }
    }

    if let Some(b) = &cert.bads {
        let _ = writeln!(out, "\n## Bads (primal assignment)\n");
        table(&mut out, &inst.agents, &b.objects, &b.primal_assignment);
        let floors: Vec<String> = b.floors.iter().map(|q| fmt_q(&q.0)).collect();
        let _ = writeln!(out, "floors {}  largest shortfall {:.3e}", floors.join(", "), b.floor_violation);
        for (i, row) in b.primal_assignment.iter().enumerate() {
            let u = dot(&loaded.original.utilities[i], row);
            let _ = writeln!(out, "{}: utility {u:.6}", inst.agents[i]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_aligns_columns() {
        let mut out = String::new();
        table(&mut out, &["alice".into(), "bo".into()], &["x".into(), "longer_name_col".into()], &[vec![1.0, 0.5], vec![0.0, 2.0]]);
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines.iter().all(|l| l.len() == lines[0].len()), "{out}");
        assert!(lines[1].starts_with("alice") && lines[1].ends_with("0.500000"));
    }
}
