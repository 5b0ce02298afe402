//! Round-by-round comparison table.

use std::fmt::Write;

use scatter_core::eval::ExperimentTable;

pub const CSV_HEADER: &str = "round,a_items,a_stages,b_items,b_stages";

pub fn to_markdown(table: &ExperimentTable) -> String {
    let mut out = String::from("# Method A vs Method B\n\n");
    out.push_str("| Round | A-items | A-stages | B-items | B-stages |\n");
    out.push_str("|---:|---:|---:|---:|---:|\n");
    for (i, [ai, as_, bi, bs]) in table.metric_rows().into_iter().enumerate() {
        let _ = writeln!(
            out,
            "| {} | {ai} | {as_} | {bi} | {bs} |",
            table.rows[i].a.round
        );
    }
    let avg = &table.averages;
    let _ = writeln!(
        out,
        "| Avg | {:.2} | {:.2} | {:.2} | {:.2} |",
        avg.a.items, avg.a.stages, avg.b.items, avg.b.stages
    );
    out
}

/// One line per round, no average row.
pub fn to_csv(table: &ExperimentTable) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for (i, [ai, as_, bi, bs]) in table.metric_rows().into_iter().enumerate() {
        let _ = writeln!(out, "{},{ai},{as_},{bi},{bs}", table.rows[i].a.round);
    }
    out
}
