use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid distribution: {0}")]
pub struct InvalidDistribution(pub String);

/// Seeded categorical draw from `(category, weight)` pairs.
pub fn sample_demographics(
    distribution: &[(String, f64)],
    seed: u64,
) -> Result<&str, InvalidDistribution> {
    if distribution.is_empty() {
        return Err(InvalidDistribution("no categories".into()));
    }
    if let Some((c, w)) = distribution
        .iter()
        .find(|(_, w)| !w.is_finite() || *w < 0.0)
    {
        return Err(InvalidDistribution(format!("weight {w} for {c:?}")));
    }
    let index = WeightedIndex::new(distribution.iter().map(|(_, w)| *w))
        .map_err(|e| InvalidDistribution(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(&distribution[index.sample(&mut rng)].0)
}
