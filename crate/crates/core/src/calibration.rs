//! JSON store of calibrated envelope constants and indicator references.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::indicators::{Indicator, IndicatorReference};
use crate::laws::{EnvelopeCalibration, LawSpec};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStore {
    #[serde(default)]
    pub envelopes: Vec<EnvelopeCalibration>,
    #[serde(default)]
    pub indicators: Vec<IndicatorReference>,
}

impl CalibrationStore {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Adds `cal`, replacing any entry for the same law family and shape.
    pub fn insert_envelope(&mut self, cal: EnvelopeCalibration) {
        self.envelopes
            .retain(|e| !(e.law.name() == cal.law.name() && e.n == cal.n && e.t == cal.t));
        self.envelopes.push(cal);
    }

    /// Adds `reference`, replacing any entry for the same indicator and shape.
    pub fn insert_indicator(&mut self, reference: IndicatorReference) {
        self.indicators.retain(|r| !r.same_key(&reference));
        self.indicators.push(reference);
    }

    pub fn envelope(&self, law: &LawSpec, n: usize, t: usize) -> Option<&EnvelopeCalibration> {
        self.envelopes
            .iter()
            .find(|e| e.law.name() == law.name() && e.n == n && e.t == t)
    }

    pub fn indicator(&self, indicator: &Indicator, n: usize, t: usize) -> Option<&IndicatorReference> {
        self.indicators
            .iter()
            .find(|r| r.indicator == *indicator && r.n == n && r.t == t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::indicators::ReferenceSource;

    fn reference(mean: f64) -> IndicatorReference {
        IndicatorReference {
            indicator: Indicator::msr(),
            law: LawSpec::ring(0.5, 1).unwrap(),
            n: 10,
            t: 20,
            mean,
            variance: 1e-4,
            source: ReferenceSource::MonteCarlo,
            trials: 100,
            seed: 1,
        }
    }

    #[test]
    fn round_trips_through_json() {
        let mut store = CalibrationStore::default();
        store.insert_indicator(reference(0.8));
        store.insert_indicator(reference(0.9));
        store.insert_envelope(EnvelopeCalibration {
            law: LawSpec::Semicircle,
            n: 10,
            t: 10,
            constant: 2.0,
            ks_constant: 1.5,
            eps: 0.05,
            alpha: 0.005,
            mc_trials: 200,
            seed: 3,
        });
        assert_eq!(store.indicators.len(), 1);
        assert_eq!(store.indicator(&Indicator::msr(), 10, 20).unwrap().mean, 0.9);
        assert!(store.envelope(&LawSpec::Semicircle, 10, 10).is_some());
        assert!(store.envelope(&LawSpec::Semicircle, 11, 10).is_none());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cal.json");
        store.save(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"C\"") && text.contains("\"C_KS\""));
        assert_eq!(CalibrationStore::load(&path).unwrap(), store);
    }
}
