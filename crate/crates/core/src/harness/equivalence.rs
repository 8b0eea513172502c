//! Per-round comparison of a plain and a SIFL run.

use crate::keys::KeySet;
use crate::linalg::relative_error;
use crate::model::{EncryptedParamVector, ParamVector};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    /// `‖w_plain − M·w̃‖₂ / (1 + ‖w_plain‖₂)` per round.
    pub errors: Vec<f64>,
    pub max: f64,
    pub threshold: f64,
    /// First round whose error exceeds the threshold.
    pub offending_round: Option<usize>,
}

impl EquivalenceReport {
    pub fn passed(&self) -> bool {
        self.offending_round.is_none()
    }
}

pub fn check_equivalence(
    plain: &[ParamVector],
    sifl: &[EncryptedParamVector],
    keys: &KeySet,
    threshold: f64,
) -> Result<EquivalenceReport> {
    if plain.len() != sifl.len() {
        return Err(Error::TraceLength {
            plain: plain.len(),
            sifl: sifl.len(),
        });
    }
    let mut errors = Vec::with_capacity(plain.len());
    for (p, s) in plain.iter().zip(sifl) {
        let decrypted = keys.decrypt(s)?;
        errors.push(relative_error(p.values(), decrypted.values()));
    }
    let offending_round = errors.iter().position(|e| !(*e <= threshold));
    Ok(EquivalenceReport {
        max: errors.iter().copied().fold(0.0, f64::max),
        errors,
        threshold,
        offending_round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomness::RandomnessSource;

    #[test]
    fn flags_first_divergent_round() {
        let keys = KeySet::for_params(6, 4, 1, 3).unwrap();
        let src = RandomnessSource::new(1, 1.0);
        let plain: Vec<_> = (0..3)
            .map(|i| ParamVector::new(vec![i as f64; 6]).unwrap())
            .collect();
        let mut sifl: Vec<_> = plain
            .iter()
            .enumerate()
            .map(|(i, p)| {
                keys.encrypt(p, &src.draw(keys.randomness_dim(), i as u32))
                    .unwrap()
            })
            .collect();
        let ok = check_equivalence(&plain, &sifl, &keys, 1e-9).unwrap();
        assert!(ok.passed(), "{ok:?}");

        sifl[1].values_mut()[0] += 1.0;
        let bad = check_equivalence(&plain, &sifl, &keys, 1e-9).unwrap();
        assert_eq!(bad.offending_round, Some(1));
        assert!(bad.max > 1e-3);

        assert!(matches!(
            check_equivalence(&plain, &sifl[..2], &keys, 10.0),
            Err(Error::TraceLength { plain: 3, sifl: 2 })
        ));
    }
}
