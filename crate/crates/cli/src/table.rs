//! Fixed-width summary tables.
//!
//! Q, NMI, Con and F1 are printed ×100 with one decimal, O_c as is with two
//! decimals; missing values print as `-`.

use attrcom::metrics::MetricsRecord;

const HEADER: [&str; 6] = ["Q", "NMI", "Con", "F1", "O_c", "|CS|"];

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.1}", 100.0 * x))
}

pub fn metrics_table(rows: &[(String, &MetricsRecord)]) -> String {
    let name_width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(4);
    let mut out = format!("{:<name_width$}", "run");
    for h in HEADER {
        out.push_str(&format!(" {h:>7}"));
    }
    out.push('\n');
    for (name, m) in rows {
        let cells = [
            pct(Some(m.modularity)),
            pct(m.nmi),
            pct(Some(m.conductance)),
            pct(m.f1),
            format!("{:.2}", m.connectivity),
            m.num_communities.to_string(),
        ];
        out.push_str(&format!("{name:<name_width$}"));
        for c in cells {
            out.push_str(&format!(" {c:>7}"));
        }
        out.push('\n');
    }
    out
}
