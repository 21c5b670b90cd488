// SPDX-License-Identifier: MIT OR Apache-2.0

//! Multiple-choice scoring: credit iff the best answer gets the highest
//! likelihood.

use crate::error::{Result, SeaError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mc1Outcome {
    pub hit: bool,
    /// The maximum likelihood was shared by more than one candidate; the
    /// lowest index among them was taken as the prediction.
    pub tie: bool,
    pub predicted: usize,
}

pub fn score_mc1(log_likelihoods: &[f64], best: usize) -> Result<Mc1Outcome> {
    if log_likelihoods.is_empty() {
        return Err(SeaError::Invalid("empty candidate list".into()));
    }
    if log_likelihoods.len() < 2 {
        return Err(SeaError::Invalid("MC1 needs at least two candidates".into()));
    }
    if best >= log_likelihoods.len() {
        return Err(SeaError::Invalid(format!(
            "best-answer index {best} out of range for {} candidates",
            log_likelihoods.len()
        )));
    }
    if log_likelihoods.iter().any(|l| !l.is_finite()) {
        return Err(SeaError::NonFinite("candidate log-likelihoods".into()));
    }
    let max = log_likelihoods.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let predicted = log_likelihoods.iter().position(|&l| l == max).expect("non-empty");
    let tie = log_likelihoods.iter().filter(|&&l| l == max).count() > 1;
    Ok(Mc1Outcome {
        hit: predicted == best,
        tie,
        predicted,
    })
}
