use crate::metrics::cohort::CohortMetrics;

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.4}"))
}

/// Summary and per-case rows as tab-separated text.
pub fn cohort_tsv(m: &CohortMetrics) -> String {
    let mut s = String::from("label\tdsc_agg\tmean_dice\tmean_hd95\tmean_msd\tundefined_cases\n");
    for l in &m.labels {
        s += &format!(
            "{}\t{:.4}\t{:.4}\t{}\t{}\t{}\n",
            l.name,
            l.dsc_agg,
            l.mean_dice,
            opt(l.mean_hd95),
            opt(l.mean_msd),
            l.undefined_cases
        );
    }
    s += "\nlabel\tcase_id\tdice\thd\thd95\tmsd\tempty\n";
    for l in &m.labels {
        for c in &l.cases {
            let empty = c.empty.map_or("-".to_string(), |e| format!("{e:?}").to_lowercase());
            s += &format!("{}\t{}\t{:.4}\t{}\t{}\t{}\t{}\n", l.name, c.case_id, c.dice, opt(c.hd), opt(c.hd95), opt(c.msd), empty);
        }
    }
    s
}

pub fn cohort_json(m: &CohortMetrics) -> String {
    serde_json::to_string_pretty(m).expect("metrics serialize") + "\n"
}

/// Pads tab-separated rows into left-aligned columns. Blank lines are kept.
pub fn render_aligned(tsv: &str) -> String {
    let mut out = String::new();
    for block in tsv.split("\n\n") {
        let rows: Vec<Vec<&str>> = block.lines().map(|l| l.split('\t').collect()).collect();
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        let widths: Vec<usize> =
            (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|v| v.chars().count()).max().unwrap_or(0)).collect();
        if !out.is_empty() {
            out.push('\n');
        }
        for r in rows {
            let line: Vec<String> = r.iter().enumerate().map(|(c, v)| format!("{v:<w$}", w = widths[c])).collect();
            out += line.join("  ").trim_end();
            out.push('\n');
        }
    }
    out
}

pub fn cohort_text(m: &CohortMetrics) -> String {
    render_aligned(&cohort_tsv(m))
}
