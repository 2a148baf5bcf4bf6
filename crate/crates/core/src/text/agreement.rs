use std::collections::BTreeMap;

use super::TextError;

/// Cohen's kappa between two annotators' labels for the same items.
///
/// When chance agreement is already 1 both sequences use a single shared
/// label and the result is 1.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> Result<f64, TextError> {
    if a.is_empty() {
        return Err(TextError::Invalid("cohen_kappa: empty input".into()));
    }
    if a.len() != b.len() {
        return Err(TextError::Invalid(format!(
            "cohen_kappa: sequences of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let observed = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut marginals: BTreeMap<&T, (usize, usize)> = BTreeMap::new();
    for x in a {
        marginals.entry(x).or_default().0 += 1;
    }
    for y in b {
        marginals.entry(y).or_default().1 += 1;
    }
    let expected: f64 = marginals
        .values()
        .map(|&(ca, cb)| (ca as f64 / n) * (cb as f64 / n))
        .sum();
    if expected == 1.0 {
        return Ok(1.0);
    }
    Ok((observed - expected) / (1.0 - expected))
}
