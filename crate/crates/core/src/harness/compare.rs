//! Cross-policy comparison: paired two-sided t-test on final test
//! accuracies of runs matched by seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::record::{read_summary, RunSummary};
use crate::mask::PolicyKind;
use crate::stats::{paired_t_test, PairedTTest};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyComparison {
    pub baseline: PolicyKind,
    pub treatment: PolicyKind,
    pub n_pairs: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub p_value: f64,
    /// Zero-variance differences; the t statistic is 0 or ±inf.
    pub degenerate: bool,
}

impl PolicyComparison {
    fn from_test(baseline: PolicyKind, treatment: PolicyKind, test: PairedTTest) -> Self {
        PolicyComparison {
            baseline,
            treatment,
            n_pairs: test.n,
            mean_diff: test.mean_diff,
            t: test.t,
            p_value: test.p_value,
            degenerate: test.degenerate,
        }
    }
}

/// Paired t-test over `(baseline, treatment)` run summaries. Pairs must be
/// matched: same data and init seeds within each pair, one policy per side.
pub fn compare_policies(pairs: &[(&RunSummary, &RunSummary)]) -> Result<PolicyComparison> {
    if pairs.len() < 2 {
        return Err(Error::Input(format!(
            "need at least 2 matched pairs, got {}",
            pairs.len()
        )));
    }
    let baseline = pairs[0].0.policy;
    let treatment = pairs[0].1.policy;
    if baseline == treatment {
        return Err(Error::Input(format!(
            "comparing {baseline} against itself"
        )));
    }
    for (b, t) in pairs {
        if b.policy != baseline || t.policy != treatment {
            return Err(Error::Input(
                "pairs mix different policies on one side".into(),
            ));
        }
        if b.seeds.data != t.seeds.data || b.seeds.init != t.seeds.init {
            return Err(Error::Input(format!(
                "unmatched pair: baseline seeds {:?} vs treatment {:?}",
                b.seeds, t.seeds
            )));
        }
    }
    let diffs: Vec<f64> = pairs
        .iter()
        .map(|(b, t)| t.final_accuracy - b.final_accuracy)
        .collect();
    Ok(PolicyComparison::from_test(
        baseline,
        treatment,
        paired_t_test(&diffs)?,
    ))
}

/// Scan a sweep directory for run summaries and compare every policy found
/// against the baseline, pairing runs by `(data, init)` seeds.
pub fn compare_run_dirs(root: &Path, baseline: PolicyKind) -> Result<Vec<PolicyComparison>> {
    let mut summaries: Vec<RunSummary> = Vec::new();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let dir = entry.path();
        if dir.is_dir() && dir.join(super::record::SUMMARY_FILE).exists() {
            summaries.push(read_summary(&dir)?);
        }
    }
    if summaries.is_empty() {
        return Err(Error::Input(format!(
            "no run summaries under {}",
            root.display()
        )));
    }

    let mut base_runs: Vec<&RunSummary> =
        summaries.iter().filter(|s| s.policy == baseline).collect();
    if base_runs.is_empty() {
        return Err(Error::Input(format!(
            "baseline policy {baseline} has no runs under {}",
            root.display()
        )));
    }
    base_runs.sort_by_key(|s| (s.seeds.data, s.seeds.init));

    let mut treatments: Vec<PolicyKind> = summaries
        .iter()
        .map(|s| s.policy)
        .filter(|&p| p != baseline)
        .collect();
    treatments.sort_by_key(|p| p.name());
    treatments.dedup();

    let mut out = Vec::new();
    for treatment in treatments {
        let mut pairs: Vec<(&RunSummary, &RunSummary)> = Vec::new();
        for b in &base_runs {
            let partner = summaries.iter().find(|s| {
                s.policy == treatment
                    && s.seeds.data == b.seeds.data
                    && s.seeds.init == b.seeds.init
            });
            match partner {
                Some(t) => pairs.push((b, t)),
                None => {
                    return Err(Error::Input(format!(
                        "no {treatment} run matching baseline seeds {:?}",
                        b.seeds
                    )))
                }
            }
        }
        out.push(compare_policies(&pairs)?);
    }
    Ok(out)
}
