use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::dataio::Label;

/// Percentage of predictions equal to `target`.
pub fn compute_aea(preds: &[Label], target: Label) -> Result<f64, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::EmptyPredictions);
    }
    let hits = preds.iter().filter(|&&p| p == target).count();
    Ok(100.0 * hits as f64 / preds.len() as f64)
}

/// One expert's ranking of the M configurations on one image group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpsBallot {
    pub expert: String,
    pub image: String,
    pub scores: BTreeMap<String, u32>,
}

impl HpsBallot {
    pub fn validate(&self) -> Result<(), MetricsError> {
        let m = self.scores.len();
        let ranks: BTreeSet<u32> = self.scores.values().copied().collect();
        if m == 0 || ranks.len() != m || ranks.iter().any(|&r| r == 0 || r as usize > m) {
            return Err(MetricsError::NotAPermutation { expert: self.expert.clone(), image: self.image.clone(), m });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpsSummary {
    pub config: String,
    /// Exact score as `"num/den"`.
    pub exact: String,
    pub score: f64,
    pub n_experts: usize,
    pub n_images: usize,
}

/// Validates every ballot and that the ballots form a full expert × image
/// grid over one shared configuration set. Returns (n_experts, n_images).
fn check_grid(ballots: &[HpsBallot]) -> Result<(usize, usize), MetricsError> {
    let first = ballots.first().ok_or(MetricsError::NoBallots)?;
    let configs: BTreeSet<&String> = first.scores.keys().collect();
    let mut seen = BTreeSet::new();
    for b in ballots {
        b.validate()?;
        if b.scores.keys().collect::<BTreeSet<_>>() != configs {
            return Err(MetricsError::IncompleteGrid(format!(
                "expert {:?} on image {:?} scores a different set of configs",
                b.expert, b.image
            )));
        }
        if !seen.insert((b.expert.as_str(), b.image.as_str())) {
            return Err(MetricsError::IncompleteGrid(format!("duplicate ballot ({:?}, {:?})", b.expert, b.image)));
        }
    }
    let experts: BTreeSet<&str> = ballots.iter().map(|b| b.expert.as_str()).collect();
    let images: BTreeSet<&str> = ballots.iter().map(|b| b.image.as_str()).collect();
    if seen.len() != experts.len() * images.len() {
        return Err(MetricsError::IncompleteGrid(format!(
            "{} ballots for {} experts x {} images",
            seen.len(),
            experts.len(),
            images.len()
        )));
    }
    Ok((experts.len(), images.len()))
}

/// Mean rank score of `config` over all experts and images, exact.
pub fn compute_hps(ballots: &[HpsBallot], config: &str) -> Result<Ratio<u64>, MetricsError> {
    if let Some(b) = ballots.iter().find(|b| !b.scores.contains_key(config)) {
        return Err(MetricsError::MissingConfig {
            expert: b.expert.clone(),
            image: b.image.clone(),
            config: config.to_string(),
        });
    }
    let (n, k) = check_grid(ballots)?;
    let sum: u64 = ballots.iter().map(|b| u64::from(b.scores[config])).sum();
    Ok(Ratio::new(sum, (n * k) as u64))
}

/// Scores for every configuration, in config-name order.
pub fn hps_table(ballots: &[HpsBallot]) -> Result<Vec<HpsSummary>, MetricsError> {
    let (n_experts, n_images) = check_grid(ballots)?;
    ballots[0]
        .scores
        .keys()
        .map(|c| {
            let r = compute_hps(ballots, c)?;
            Ok(HpsSummary {
                config: c.clone(),
                exact: format!("{}/{}", r.numer(), r.denom()),
                score: *r.numer() as f64 / *r.denom() as f64,
                n_experts,
                n_images,
            })
        })
        .collect()
}
