use rand::Rng;

use super::{sample_context, ContextError, ContextVector, FeatureDistribution};

const MAX_REJECTIONS: usize = 100_000;

/// Draws from the training distribution, rejecting the holdout region.
#[derive(Debug, Clone)]
pub struct TrainSampler {
    train: FeatureDistribution,
    holdout: FeatureDistribution,
}

/// Draws only inside the holdout region.
#[derive(Debug, Clone)]
pub struct TestSampler {
    holdout: FeatureDistribution,
}

impl TrainSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ContextVector, ContextError> {
        for _ in 0..MAX_REJECTIONS {
            let ctx = sample_context(&self.train, rng)?;
            if !self.holdout.contains(&ctx) {
                return Ok(ctx);
            }
        }
        Err(ContextError::Infeasible {
            attempts: MAX_REJECTIONS,
            reason: "every draw fell inside the holdout region".into(),
        })
    }

    pub fn holdout(&self) -> &FeatureDistribution {
        &self.holdout
    }
}

impl TestSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ContextVector, ContextError> {
        sample_context(&self.holdout, rng)
    }

    pub fn region(&self) -> &FeatureDistribution {
        &self.holdout
    }
}

/// Train/test samplers for a systematicity split. The holdout region is the
/// conjunction of the test distribution's ranges and lane-setup set.
pub fn split_systematicity(
    train: &FeatureDistribution,
    test: &FeatureDistribution,
) -> Result<(TrainSampler, TestSampler), ContextError> {
    train.validate()?;
    test.validate()?;
    test.within(train).map_err(ContextError::HoldoutOutsideSupport)?;
    if train.within(test).is_ok() {
        return Err(ContextError::EmptyComplement);
    }
    Ok((
        TrainSampler {
            train: train.clone(),
            holdout: test.clone(),
        },
        TestSampler { holdout: test.clone() },
    ))
}
