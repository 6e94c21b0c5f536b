use super::TrainError;

/// Label of a real sample in [`wasserstein_loss`].
pub const REAL_LABEL: f32 = 1.0;
/// Label of a generated sample.
pub const FAKE_LABEL: f32 = -1.0;

fn nonempty(n: usize) -> Result<f64, TrainError> {
    if n == 0 {
        Err(TrainError::EmptyBatch)
    } else {
        Ok(n as f64)
    }
}

fn same_len(a: usize, b: usize) -> Result<(), TrainError> {
    if a == b {
        Ok(())
    } else {
        Err(TrainError::BatchMismatch { left: a, right: b })
    }
}

/// `-(1/n) * sum(y * p)` with labels +1 (real) and -1 (fake).
pub fn wasserstein_loss(labels: &[f32], scores: &[f32]) -> Result<f64, TrainError> {
    same_len(labels.len(), scores.len())?;
    let n = nonempty(labels.len())?;
    if let Some(&y) = labels.iter().find(|&&y| y != REAL_LABEL && y != FAKE_LABEL) {
        return Err(TrainError::Label(y));
    }
    Ok(-labels
        .iter()
        .zip(scores)
        .map(|(&y, &p)| y as f64 * p as f64)
        .sum::<f64>()
        / n)
}

/// `-(1/n) * sum(D(x) - D(G(z)))`.
pub fn critic_loss(real_scores: &[f32], fake_scores: &[f32]) -> Result<f64, TrainError> {
    same_len(real_scores.len(), fake_scores.len())?;
    let n = nonempty(real_scores.len())?;
    Ok(-real_scores
        .iter()
        .zip(fake_scores)
        .map(|(&r, &f)| r as f64 - f as f64)
        .sum::<f64>()
        / n)
}

/// `-(1/n) * sum(D(G(z)))`.
pub fn generator_loss(fake_scores: &[f32]) -> Result<f64, TrainError> {
    let n = nonempty(fake_scores.len())?;
    Ok(-fake_scores.iter().map(|&p| p as f64).sum::<f64>() / n)
}

/// Wasserstein part plus the weighted gradient penalty.
pub fn total_critic_loss(wasserstein: f64, penalty: f64, coefficient: f32) -> f64 {
    wasserstein + coefficient as f64 * penalty
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_values() {
        assert_eq!(wasserstein_loss(&[1.0, 1.0], &[2.0, 4.0]).unwrap(), -3.0);
        assert_eq!(wasserstein_loss(&[-1.0], &[5.0]).unwrap(), 5.0);
        assert_eq!(wasserstein_loss(&[1.0, -1.0], &[0.37, 0.37]).unwrap(), 0.0);
        assert_eq!(critic_loss(&[3.0], &[1.0]).unwrap(), -2.0);
        assert_eq!(critic_loss(&[1.5, -2.0], &[1.5, -2.0]).unwrap(), 0.0);
        assert_eq!(critic_loss(&[10.0, 10.0], &[-10.0, -10.0]).unwrap(), -20.0);
        assert_eq!(generator_loss(&[4.0]).unwrap(), -4.0);
        assert_eq!(generator_loss(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(generator_loss(&[-2.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn bad_batches_are_rejected() {
        assert!(matches!(
            wasserstein_loss(&[], &[]),
            Err(TrainError::EmptyBatch)
        ));
        assert!(matches!(critic_loss(&[], &[]), Err(TrainError::EmptyBatch)));
        assert!(matches!(generator_loss(&[]), Err(TrainError::EmptyBatch)));
        assert!(matches!(
            critic_loss(&[1.0], &[]),
            Err(TrainError::BatchMismatch { .. })
        ));
        assert!(matches!(
            wasserstein_loss(&[0.5], &[1.0]),
            Err(TrainError::Label(_))
        ));
    }
}
