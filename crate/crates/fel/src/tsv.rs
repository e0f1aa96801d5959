//! Tab-separated reports: the pretraining loss log and the arm ordering matrix.

use fel_core::train::{LossRecord, PairDiff};

pub const LOSS_HEADER: &str = "step\tobjective\tloss";

pub fn loss_log(records: &[LossRecord]) -> String {
    let mut out = format!("{LOSS_HEADER}\n");
    for r in records {
        out.push_str(&format!("{}\t{}\t{}\n", r.step, r.objective, r.loss));
    }
    out
}

/// Parses a loss log written by [`loss_log`].
pub fn parse_loss_log(text: &str) -> Result<Vec<(usize, String, f64)>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(LOSS_HEADER) {
        return Err(String::from("missing loss log header"));
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split('\t').collect();
            let bad = || format!("line {}: expected step, objective, loss", i + 2);
            if f.len() != 3 {
                return Err(bad());
            }
            Ok((f[0].parse().map_err(|_| bad())?, f[1].to_string(), f[2].parse().map_err(|_| bad())?))
        })
        .collect()
}

/// One matrix per finetuning size and statistic: rows are arm `a`, columns
/// arm `b`, cells `mean(a) - mean(b)` or the pooled standard deviation.
pub fn ordering_matrix(arms: &[String], diffs: &[PairDiff]) -> String {
    let mut sizes: Vec<usize> = diffs.iter().map(|d| d.size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    let mut out = String::from("statistic\tsize\tarm");
    for b in arms {
        out.push('\t');
        out.push_str(b);
    }
    out.push('\n');
    for stat in ["mean_diff", "pooled_std"] {
        for &size in &sizes {
            for a in arms {
                out.push_str(&format!("{stat}\t{size}\t{a}"));
                for b in arms {
                    let cell = diffs
                        .iter()
                        .find(|d| d.size == size && &d.a == a && &d.b == b)
                        .map(|d| if stat == "mean_diff" { d.mean_diff } else { d.pooled_std });
                    out.push('\t');
                    match cell {
                        Some(x) => out.push_str(&x.to_string()),
                        None => out.push_str("NA"),
                    }
                }
                out.push('\n');
            }
        }
    }
    out
}
