//! Thinning of emitted photons by a chain of independent efficiencies.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOutcome {
    /// Click time, equal to the emission time when the photon survives every element.
    pub click: Option<f64>,
    /// Index of the chain element that absorbed the photon.
    pub absorbed_by: Option<usize>,
}

/// Passes an optional emission through each element with an independent Bernoulli trial.
pub fn apply_detection_chain<R: Rng + ?Sized>(
    emission: Option<f64>,
    chain: &[f64],
    rng: &mut R,
) -> Result<ChainOutcome> {
    if let Some(e) = chain.iter().find(|e| !(0.0..=1.0).contains(*e)) {
        return Err(Error::InvalidInput(format!(
            "chain efficiency {e} outside [0, 1]"
        )));
    }
    let Some(t) = emission else {
        return Ok(ChainOutcome {
            click: None,
            absorbed_by: None,
        });
    };
    for (i, e) in chain.iter().enumerate() {
        if rng.random::<f64>() >= *e {
            return Ok(ChainOutcome {
                click: None,
                absorbed_by: Some(i),
            });
        }
    }
    Ok(ChainOutcome {
        click: Some(t),
        absorbed_by: None,
    })
}
