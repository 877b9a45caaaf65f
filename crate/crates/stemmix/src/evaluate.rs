//! Objective evaluation: binary accuracy at the 0.5 threshold and the
//! average rank of the original candidate among pools of alternatives.

use crate::generation::{
    generate_candidate_cfg, render_stems_cfg, Condition, DatasetExample, GenConfig, Label,
    MashupCandidate,
};
use crate::mashupdb::{MashupDB, StemClass};
use crate::model::{
    clip_features, mashability_features, train_on_features, Features, Hyper, ModelConfig,
    TrainOutcome, Variant,
};
use crate::signal::mix;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Ranking outcome over a set of retrieval groups.
#[derive(Debug, Clone, PartialEq)]
pub struct RankReport {
    /// Rank of each group's positive, pessimistic tie handling.
    pub ranks: Vec<usize>,
    pub pool_sizes: Vec<usize>,
    pub average_rank: f64,
    /// Binary accuracy on the labeled subset, if computed alongside.
    pub accuracy: Option<f64>,
}

/// Fraction of labeled examples where `score > 0.5` matches the label
/// (strict threshold: a 0.5 score counts as a negative prediction).
pub fn accuracy(scored: &[(f64, Label)]) -> Result<f64> {
    let labeled: Vec<&(f64, Label)> = scored
        .iter()
        .filter(|(_, l)| *l != Label::Unlabeled)
        .collect();
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let correct = labeled
        .iter()
        .filter(|(score, label)| (*score > 0.5) == (*label == Label::Positive))
        .count();
    Ok(correct as f64 / labeled.len() as f64)
}

/// Rank of one positive among a pool: 1 plus the number of pool items
/// scoring greater than or tied with it (pessimistic ties).
pub fn rank_of(positive_score: f64, pool_scores: &[f64]) -> usize {
    1 + pool_scores.iter().filter(|&&s| s >= positive_score).count()
}

/// Average rank over groups of (positive score, pool scores).
pub fn average_rank(groups: &[(f64, Vec<f64>)]) -> Result<RankReport> {
    if groups.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ranks = Vec::with_capacity(groups.len());
    let mut pool_sizes = Vec::with_capacity(groups.len());
    for (positive, pool) in groups {
        if pool.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !positive.is_finite() || pool.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("rank scores".into()));
        }
        ranks.push(rank_of(*positive, pool));
        pool_sizes.push(pool.len());
    }
    let average_rank = ranks.iter().sum::<usize>() as f64 / ranks.len() as f64;
    Ok(RankReport {
        ranks,
        pool_sizes,
        average_rank,
        accuracy: None,
    })
}

/// One system's row in a report.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemRow {
    pub name: String,
    pub accuracy: Option<f64>,
    pub average_rank: f64,
    pub pool_sizes: Vec<usize>,
}

/// Render a side-by-side report (header plus one row per system).
pub fn format_report(rows: &[SystemRow]) -> String {
    let mut out = String::from("system\taccuracy\taverage_rank\tpool_sizes\n");
    for r in rows {
        let acc = r
            .accuracy
            .map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        let pools = r
            .pool_sizes
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(",");
        out.push_str(&format!(
            "{}\t{}\t{:.4}\t{}\n",
            r.name, acc, r.average_rank, pools
        ));
    }
    out
}

/// Settings for a full side-by-side table run: four trained systems
/// ({premix, postmix} x {with, without unlabeled examples}) plus the
/// rule-based baseline, all scored on shared retrieval pools.
#[derive(Debug, Clone)]
pub struct TablePlan {
    pub premix: ModelConfig,
    pub postmix: ModelConfig,
    pub hyper: Hyper,
    pub gen: GenConfig,
    /// Number of vocal seeds to build retrieval pools for.
    pub n_rank_seeds: usize,
    /// Matched candidates per pool.
    pub pool_size: usize,
}

/// Deterministic retrieval pools: for each of `n_seeds` vocal seeds, the
/// original candidate plus `pool_size` matched alternatives. Vocal seeds
/// whose pools cannot be completed (empty queries) are skipped.
pub fn rank_pools(
    db: &MashupDB,
    gen: &GenConfig,
    n_seeds: usize,
    pool_size: usize,
    seed: u64,
) -> Result<Vec<(MashupCandidate, Vec<MashupCandidate>)>> {
    let mut order: Vec<String> = db
        .by_class(StemClass::Vocal)
        .iter()
        .map(|r| r.id.clone())
        .collect();
    if order.is_empty() {
        return Err(Error::NoVocalStems);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x4A11C);
    order.shuffle(&mut rng);
    let mut pools = Vec::with_capacity(n_seeds);
    for vid in &order {
        if pools.len() == n_seeds {
            break;
        }
        let attempt = (|| {
            let original =
                generate_candidate_cfg(db, Condition::Original, Some(vid), &mut rng, gen)?;
            let mut pool = Vec::with_capacity(pool_size);
            for _ in 0..pool_size {
                pool.push(generate_candidate_cfg(
                    db,
                    Condition::Matched,
                    Some(vid),
                    &mut rng,
                    gen,
                )?);
            }
            Ok((original, pool))
        })();
        match attempt {
            Ok(p) => pools.push(p),
            Err(Error::NoCandidates(_)) | Err(Error::RetryBudgetExhausted(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if pools.is_empty() {
        return Err(Error::NoCandidates("no seed admits a full pool".into()));
    }
    Ok(pools)
}

/// Train the four model systems, score them and the baseline on shared
/// pools, and return one [`SystemRow`] per system.
///
/// Row order: premix_lsro, premix, postmix_lsro, postmix, amu. Unlabeled
/// (matched) examples are dropped from training for the non-LSRO rows.
/// Model rows carry best validation accuracy; the baseline row has none.
pub fn run_table(
    db: &MashupDB,
    examples: &[DatasetExample],
    plan: &TablePlan,
) -> Result<Vec<SystemRow>> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    // one render per example feeds both model front-ends
    let mut pre_feats: Vec<Features> = Vec::with_capacity(examples.len());
    let mut post_feats: Vec<Features> = Vec::with_capacity(examples.len());
    for ex in examples {
        let [v, h, p] = render_stems_cfg(db, &ex.candidate, &plan.gen)?;
        pre_feats.push(vec![
            clip_features(&v, &plan.premix)?,
            clip_features(&h, &plan.premix)?,
            clip_features(&p, &plan.premix)?,
        ]);
        let mixdown = mix(&[&v, &h, &p], &[1.0, 1.0, 1.0])?;
        post_feats.push(vec![clip_features(&mixdown, &plan.postmix)?]);
    }
    let labeled: Vec<usize> = (0..examples.len())
        .filter(|&i| examples[i].label != Label::Unlabeled)
        .collect();
    let subset = |idx: &[usize], feats: &[Features]| -> (Vec<DatasetExample>, Vec<Features>) {
        (
            idx.iter().map(|&i| examples[i].clone()).collect(),
            idx.iter().map(|&i| feats[i].clone()).collect(),
        )
    };
    let (lab_ex, lab_pre) = subset(&labeled, &pre_feats);
    let (_, lab_post) = subset(&labeled, &post_feats);

    let train = |ex: &[DatasetExample],
                 feats: &[Features],
                 config: &ModelConfig|
     -> Result<TrainOutcome> { train_on_features(ex, feats, config, &plan.hyper) };
    let mut systems: Vec<(&str, ModelConfig, TrainOutcome)> = vec![
        (
            "premix_lsro",
            plan.premix.clone(),
            train(examples, &pre_feats, &plan.premix)?,
        ),
        (
            "premix",
            plan.premix.clone(),
            train(&lab_ex, &lab_pre, &plan.premix)?,
        ),
        (
            "postmix_lsro",
            plan.postmix.clone(),
            train(examples, &post_feats, &plan.postmix)?,
        ),
        (
            "postmix",
            plan.postmix.clone(),
            train(&lab_ex, &lab_post, &plan.postmix)?,
        ),
    ];

    let pools = rank_pools(
        db,
        &plan.gen,
        plan.n_rank_seeds,
        plan.pool_size,
        plan.hyper.seed,
    )?;
    // per-candidate scores for the four nets and the baseline, sharing one
    // render per candidate
    let mut groups: Vec<[(f64, Vec<f64>); 5]> = Vec::with_capacity(pools.len());
    for (original, pool) in &pools {
        let mut score_all = |c: &MashupCandidate| -> Result<[f64; 5]> {
            let stems = render_stems_cfg(db, c, &plan.gen)?;
            let [v, h, p] = &stems;
            let pre: Features = vec![
                clip_features(v, &plan.premix)?,
                clip_features(h, &plan.premix)?,
                clip_features(p, &plan.premix)?,
            ];
            let mixdown = mix(&[v, h, p], &[1.0, 1.0, 1.0])?;
            let post: Features = vec![clip_features(&mixdown, &plan.postmix)?];
            let mut out = [0.0; 5];
            for (slot, (_, config, outcome)) in systems.iter_mut().enumerate() {
                let feats = if config.variant == Variant::Premix {
                    &pre
                } else {
                    &post
                };
                out[slot] = mashability_features(&mut outcome.network, feats)?;
            }
            out[4] = crate::amu::amu_from_stems(db, c, &stems)?;
            Ok(out)
        };
        let pos = score_all(original)?;
        let mut pool_scores = [(); 5].map(|_| Vec::with_capacity(pool.len()));
        for c in pool {
            let s = score_all(c)?;
            for (slot, v) in s.iter().enumerate() {
                pool_scores[slot].push(*v);
            }
        }
        let mut group: [(f64, Vec<f64>); 5] = Default::default();
        for slot in 0..5 {
            group[slot] = (pos[slot], std::mem::take(&mut pool_scores[slot]));
        }
        groups.push(group);
    }

    let mut rows = Vec::with_capacity(5);
    for (slot, (name, _, outcome)) in systems.iter().enumerate() {
        let per_system: Vec<(f64, Vec<f64>)> = groups.iter().map(|g| g[slot].clone()).collect();
        let report = average_rank(&per_system)?;
        rows.push(SystemRow {
            name: name.to_string(),
            accuracy: Some(outcome.best_val_accuracy),
            average_rank: report.average_rank,
            pool_sizes: report.pool_sizes,
        });
    }
    let amu_groups: Vec<(f64, Vec<f64>)> = groups.iter().map(|g| g[4].clone()).collect();
    let report = average_rank(&amu_groups)?;
    rows.push(SystemRow {
        name: "amu".to_string(),
        accuracy: None,
        average_rank: report.average_rank,
        pool_sizes: report.pool_sizes,
    });
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn label_oracle_scores_perfectly() {
        let scored: Vec<(f64, Label)> = (0..20)
            .map(|i| {
                if i % 2 == 0 {
                    (0.9, Label::Positive)
                } else {
                    (0.1, Label::Negative)
                }
            })
            .collect();
        assert_eq!(accuracy(&scored).unwrap(), 1.0);
    }

    #[test]
    fn constant_half_scorer_predicts_all_negative() {
        let scored = vec![
            (0.5, Label::Positive),
            (0.5, Label::Negative),
            (0.5, Label::Negative),
            (0.5, Label::Unlabeled),
        ];
        // strict > 0.5: everything classified negative; 2 of 3 labeled right
        let acc = accuracy(&scored).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unlabeled_only_set_is_an_error() {
        let scored = vec![(0.4, Label::Unlabeled)];
        assert!(matches!(accuracy(&scored), Err(Error::EmptyDataset)));
    }

    #[test]
    fn rank_extremes() {
        assert_eq!(rank_of(0.9, &[0.1, 0.2, 0.3]), 1);
        assert_eq!(rank_of(0.05, &[0.1, 0.2, 0.3, 0.4, 0.5]), 6);
        // pessimistic ties: tied pool items count as greater
        assert_eq!(rank_of(0.5, &[0.5, 0.5, 0.1]), 3);
    }

    #[test]
    fn rank_matches_descending_sort_position() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..200 {
            let positive: f64 = rng.gen();
            let pool: Vec<f64> = (0..9)
                .map(|_| (rng.gen::<f64>() * 4.0).round() / 4.0)
                .collect();
            let direct = rank_of(positive, &pool);
            // cross-check: position in a full descending sort, positive after
            // any tied pool item
            let mut all: Vec<(f64, bool)> = pool.iter().map(|&s| (s, false)).collect();
            all.push((positive, true));
            all.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1).reverse()));
            let sorted = all.iter().position(|&(_, is_pos)| is_pos).unwrap() + 1;
            assert_eq!(direct, sorted);
        }
    }

    #[test]
    fn random_scorer_averages_mid_pool() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let groups: Vec<(f64, Vec<f64>)> = (0..4000)
            .map(|_| (rng.gen(), (0..9).map(|_| rng.gen()).collect()))
            .collect();
        let report = average_rank(&groups).unwrap();
        assert!(
            (report.average_rank - 5.5).abs() < 0.5,
            "mean rank {}",
            report.average_rank
        );
    }

    #[test]
    fn metrics_are_invariant_under_monotone_score_transforms() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let groups: Vec<(f64, Vec<f64>)> = (0..50)
            .map(|_| (rng.gen(), (0..7).map(|_| rng.gen()).collect()))
            .collect();
        let warp = |s: f64| 0.1 + 0.8 / (1.0 + (-3.0 * (s - 0.5)).exp());
        let warped: Vec<(f64, Vec<f64>)> = groups
            .iter()
            .map(|(p, pool)| (warp(*p), pool.iter().map(|&s| warp(s)).collect()))
            .collect();
        assert_eq!(
            average_rank(&groups).unwrap().ranks,
            average_rank(&warped).unwrap().ranks
        );
    }

    #[test]
    fn report_formatting() {
        let rows = vec![
            SystemRow {
                name: "premix".into(),
                accuracy: Some(0.975),
                average_rank: 1.25,
                pool_sizes: vec![20, 20],
            },
            SystemRow {
                name: "amu".into(),
                accuracy: None,
                average_rank: 7.5,
                pool_sizes: vec![20, 20],
            },
        ];
        let text = format_report(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "premix\t0.9750\t1.2500\t20,20");
        assert_eq!(lines[2], "amu\t-\t7.5000\t20,20");
    }
}
