use std::fmt::Write as _;

use super::Metrics;
use crate::rules::Criterion;

pub const METRICS_CSV_HEADER: &str = "criterion,n_rules,seed,mrr,hits1,hits3,hits10,n_queries";

/// One grid cell. `criterion` is `None` for the rule-free baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub criterion: Option<Criterion>,
    pub n_rules: usize,
    pub seed: u64,
    pub outcome: Result<Metrics, String>,
}

/// Run `cell` for the baseline (`N = 0`) and every `(criterion, N > 0)`
/// pair, per seed. A failing cell is recorded and the grid continues.
pub fn run_ablation<F>(criteria: &[Criterion], counts: &[usize], seeds: &[u64], mut cell: F) -> Vec<AblationCell>
where
    F: FnMut(Option<Criterion>, usize, u64) -> Result<Metrics, String>,
{
    let mut counts: Vec<usize> = counts.iter().copied().filter(|&n| n > 0).collect();
    counts.sort_unstable();
    counts.dedup();
    let mut out = Vec::new();
    let mut run = |criterion, n_rules, seed| {
        let outcome = cell(criterion, n_rules, seed);
        if let Err(e) = &outcome {
            log::warn!("ablation cell {} N={n_rules} seed={seed} failed: {e}", crit_key(criterion));
        }
        out.push(AblationCell { criterion, n_rules, seed, outcome });
    };
    for &seed in seeds {
        run(None, 0, seed);
        for &c in criteria {
            for &n in &counts {
                run(Some(c), n, seed);
            }
        }
    }
    out
}

fn crit_key(c: Option<Criterion>) -> &'static str {
    c.map_or("none", |c| c.key())
}

/// Metrics CSV. Failed cells keep their row with empty metric fields.
pub fn write_metrics_csv(cells: &[AblationCell]) -> String {
    let mut s = String::from(METRICS_CSV_HEADER);
    s.push('\n');
    for c in cells {
        let _ = write!(s, "{},{},{},", crit_key(c.criterion), c.n_rules, c.seed);
        match &c.outcome {
            Ok(m) => {
                let _ = writeln!(s, "{},{},{},{},{}", m.mrr, m.hits1, m.hits3, m.hits10, m.n_queries);
            }
            Err(_) => s.push_str(",,,,\n"),
        }
    }
    s
}
