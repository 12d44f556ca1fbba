//! Markdown and CSV rendering of saved results.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::games::{verify_ordering, EquilibriumRecord, GameKind, OrderingReport};
use crate::harness::EvalSummary;
use crate::metrics::MethodTag;
use crate::tradeoff::TradeoffStudy;

/// Anything the report command accepts, recognized by shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReportItem {
    Record(EquilibriumRecord),
    Evaluation(EvalSummary),
    Ordering(OrderingReport),
    Tradeoff(TradeoffStudy),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rendered {
    pub markdown: String,
    /// `(file name, CSV body)` pairs.
    pub tables: Vec<(String, String)>,
    pub warnings: Vec<String>,
}

fn num(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    format!("{v:.6}")
}

fn game_name(g: GameKind) -> &'static str {
    match g {
        GameKind::G1 => "G1",
        GameKind::G2 => "G2",
        GameKind::G3 => "G3",
        GameKind::Gt => "Gt",
        GameKind::Matrix => "matrix",
    }
}

fn verdict(holds: bool) -> &'static str {
    if holds {
        "PASS"
    } else {
        "FAIL"
    }
}

fn chain_line(o: &OrderingReport) -> String {
    format!(
        "G1 = {} >= G3 = {} >= G2 = {} (tolerance {:e}): {} [{}]",
        num(o.g1),
        num(o.g3),
        num(o.g2),
        o.tolerance,
        verdict(o.holds),
        if o.certified { "certified" } else { "heuristic, non-certifying" }
    )
}

pub fn render(items: Vec<(String, ReportItem)>) -> Result<Rendered> {
    if items.is_empty() {
        return Err(Error::Usage("report needs at least one record".into()));
    }
    let mut records = Vec::new();
    let mut evals = Vec::new();
    let mut orderings = Vec::new();
    let mut studies = Vec::new();
    for (src, item) in items {
        match item {
            ReportItem::Record(r) => records.push((src, r)),
            ReportItem::Evaluation(e) => evals.push((src, e)),
            ReportItem::Ordering(o) => orderings.push((src, o)),
            ReportItem::Tradeoff(t) => studies.push((src, t)),
        }
    }
    let mut md = String::from("# Results\n");
    let mut tables = Vec::new();
    let mut warnings = Vec::new();

    if !records.is_empty() {
        md.push_str("\n## Equilibrium records\n\n");
        md.push_str("| source | game | loss | eps | lambda | value | certified |\n");
        md.push_str("|---|---|---|---|---|---|---|\n");
        let mut csv = String::from("source,game,loss,eps,lambda,value,certified\n");
        for (src, r) in &records {
            let (loss, eps, lambda) = match &r.context {
                Some(c) => (c.loss.to_string(), num(c.eps), num(c.lambda)),
                None => ("-".into(), "-".into(), "-".into()),
            };
            let _ = writeln!(
                md,
                "| {src} | {} | {loss} | {eps} | {lambda} | {} | {} |",
                game_name(r.game),
                num(r.value),
                if r.certified { "yes" } else { "no" }
            );
            let _ = writeln!(csv, "{src},{},{loss},{eps},{lambda},{},{}", game_name(r.game), r.value, r.certified);
        }
        tables.push(("records.csv".into(), csv));

        let first = records[0].1.context.as_ref();
        if records
            .iter()
            .any(|(_, r)| match (first, r.context.as_ref()) {
                (Some(a), Some(b)) => !a.compatible(b),
                (None, None) => false,
                _ => true,
            })
        {
            warnings.push("records were computed on different data, radius or loss; values are not comparable".into());
        }

        let pick = |g: GameKind| {
            let v: Vec<&EquilibriumRecord> = records.iter().map(|(_, r)| r).filter(|r| r.game == g).collect();
            (v.len() == 1).then(|| v[0])
        };
        if let (Some(g1), Some(g3), Some(g2)) = (pick(GameKind::G1), pick(GameKind::G3), pick(GameKind::G2)) {
            match verify_ordering(g1, g3, g2, 1e-6) {
                Ok(o) => orderings.push(("records".into(), o)),
                Err(e) => warnings.push(format!("value chain skipped: {e}")),
            }
        }

        let mut gaps = String::from("source,iteration,gap\n");
        let mut any_gap = false;
        for (src, r) in &records {
            for t in &r.trace {
                if let Some(g) = t.gap {
                    any_gap = true;
                    let _ = writeln!(gaps, "{src},{},{g}", t.round);
                }
            }
        }
        if any_gap {
            tables.push(("plot_fp_gap.csv".into(), gaps));
        }
    }

    if !orderings.is_empty() {
        md.push_str("\n## Value chain\n\n");
        for (src, o) in &orderings {
            let _ = writeln!(md, "- {src}: {}", chain_line(o));
        }
    }

    if !evals.is_empty() {
        md.push_str("\n## Robustness\n\n");
        md.push_str("| model | eps | method | clean acc | AA | AR | certified AA | lambda_hat |\n");
        md.push_str("|---|---|---|---|---|---|---|---|\n");
        for (src, e) in &evals {
            for r in &e.reports {
                let _ = writeln!(
                    md,
                    "| {src} | {} | {} | {} | {} | {} | {} | {} |",
                    num(r.eps),
                    match r.method {
                        MethodTag::GridExact => "grid_exact",
                        MethodTag::PgdLowerBound => "pgd_lower_bound",
                    },
                    num(r.clean_accuracy),
                    num(r.adversarial_accuracy),
                    num(r.adversarial_risk),
                    r.certified_adversarial_accuracy.map(num).unwrap_or_else(|| "-".into()),
                    num(e.lipschitz.lambda_hat)
                );
            }
        }
        tables.push(("plot_eps_aa.csv".into(), eval_csv(&evals)));
    }

    if !studies.is_empty() {
        md.push_str("\n## Robustness against accuracy\n\n");
        md.push_str("Orderings are checked on seed means with one pooled standard error of slack.\n\n");
        md.push_str("| source | lambda | mean adversarial payoff | mean clean loss |\n|---|---|---|---|\n");
        let mut csv = String::from("source,lambda,seed,adversarial_payoff,clean_loss\n");
        for (src, t) in &studies {
            let _ = writeln!(md, "| {src} | {} | {} | {} |", num(t.lambda_s), num(t.mean_payoff_s), num(t.mean_clean_s));
            let _ = writeln!(md, "| {src} | {} | {} | {} |", num(t.lambda_t), num(t.mean_payoff_t), num(t.mean_clean_t));
            for (lambda, runs) in [(t.lambda_s, &t.runs_s), (t.lambda_t, &t.runs_t)] {
                for r in runs.iter() {
                    let _ = writeln!(csv, "{src},{lambda},{},{},{}", r.seed, r.adversarial_payoff, r.clean_loss);
                }
            }
            let _ = writeln!(
                md,
                "\n- {src}: more robust at lower lambda: {} (se {}); more accurate at higher lambda: {} (se {})",
                verdict(t.robustness_holds),
                num(t.payoff_se),
                verdict(t.accuracy_holds),
                num(t.clean_se)
            );
        }
        tables.push(("tradeoff.csv".into(), csv));
    }

    if !warnings.is_empty() {
        md.push_str("\n## Warnings\n\n");
        for w in &warnings {
            let _ = writeln!(md, "- {w}");
        }
    }
    Ok(Rendered {
        markdown: md,
        tables,
        warnings,
    })
}

/// Markdown for a non-empty list of records.
pub fn records_markdown(records: &[(String, EquilibriumRecord)]) -> String {
    let items = records
        .iter()
        .map(|(s, r)| (s.clone(), ReportItem::Record(r.clone())))
        .collect();
    render(items).map(|r| r.markdown).unwrap_or_default()
}

/// Plot data: adversarial accuracy against radius, one row per model and eps.
pub fn eval_csv(evals: &[(String, EvalSummary)]) -> String {
    let mut csv = String::from("model,eps,method,clean_accuracy,adversarial_accuracy,adversarial_risk,certified_adversarial_accuracy\n");
    for (src, e) in evals {
        for r in &e.reports {
            let _ = writeln!(
                csv,
                "{src},{},{},{},{},{},{}",
                r.eps,
                match r.method {
                    MethodTag::GridExact => "grid_exact",
                    MethodTag::PgdLowerBound => "pgd_lower_bound",
                },
                r.clean_accuracy,
                r.adversarial_accuracy,
                r.adversarial_risk,
                r.certified_adversarial_accuracy.map(|v| v.to_string()).unwrap_or_default()
            );
        }
    }
    csv
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::MatrixGame;

    #[test]
    fn empty_is_usage_error() {
        assert!(matches!(render(vec![]), Err(Error::Usage(_))));
    }

    #[test]
    fn matrix_chain_passes() {
        let g = MatrixGame::new(vec![vec![0.0, -0.5], vec![-1.0, 0.0]]).unwrap();
        let recs = crate::games::matrix_records(&g, &Default::default()).unwrap();
        let items = recs
            .into_iter()
            .enumerate()
            .map(|(i, r)| (format!("r{i}"), ReportItem::Record(r)))
            .collect();
        let out = render(items).unwrap();
        assert!(out.markdown.contains("-0.333333"));
        assert!(out.markdown.contains("PASS"));
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn single_record_is_one_row() {
        let g = MatrixGame::new(vec![vec![1.0]]).unwrap();
        let [r, _, _] = crate::games::matrix_records(&g, &Default::default()).unwrap();
        let out = render(vec![("one".into(), ReportItem::Record(r))]).unwrap();
        let csv = &out.tables.iter().find(|(n, _)| n == "records.csv").unwrap().1;
        assert_eq!(csv.lines().count(), 2);
    }
}
