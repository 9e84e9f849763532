//! Comparison quantifiers.
//!
//! `ae_only` and `mcd_only` reuse the hybrid model and thresholds with one of
//! the two flags switched off. The ensemble trains independent phase-1 models
//! and uses the population variance of their predictions.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::estimator::{EstimatorConfig, EstimatorModel, Example, PredictionSet};
use crate::featurize::{FeatureSet, Featurizer};
use crate::hashing;
use crate::neural::TrainConfig;
use crate::stats;
use crate::{Error, Result};

pub const DEFAULT_ENSEMBLE_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Hybrid,
    AeOnly,
    McdOnly,
    Ensemble,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Hybrid,
        Method::AeOnly,
        Method::McdOnly,
        Method::Ensemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Hybrid => "hybrid",
            Method::AeOnly => "ae_only",
            Method::McdOnly => "mcd_only",
            Method::Ensemble => "ensemble",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<EstimatorModel>,
}

impl Ensemble {
    /// Trains `k >= 2` phase-1 models whose initial weights and shuffling
    /// differ by seed.
    pub fn train(
        featurizer: &Featurizer,
        cfg: &EstimatorConfig,
        train_cfg: &TrainConfig,
        data: &[Example],
        k: usize,
        seed: u64,
    ) -> Result<Self> {
        if k < 2 {
            return Err(Error::InvalidArgument(
                "an ensemble needs at least two members".into(),
            ));
        }
        let members = (0..k)
            .map(|i| {
                let member_seed = hashing::hash_words(&[seed, 0xE5, i as u64]);
                let mut m = EstimatorModel::new(featurizer.clone(), cfg, member_seed)?;
                let tc = TrainConfig {
                    seed: member_seed,
                    ..*train_cfg
                };
                m.train_phase1(data, &tc)?;
                Ok(m)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { members })
    }

    /// Wraps existing models; a single member is accepted.
    pub fn from_members(members: Vec<EstimatorModel>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Empty("ensemble members"));
        }
        Ok(Self { members })
    }

    /// Plain predictions of every member, their mean and population variance.
    /// Statistics are computed over the sorted predictions, so member order
    /// does not affect them.
    pub fn predict(&self, fs: &FeatureSet) -> Result<PredictionSet> {
        let mut samples = self
            .members
            .iter()
            .map(|m| m.predict_plain(&m.encode(fs)?.pooled))
            .collect::<Result<Vec<f64>>>()?;
        samples = stats::sorted(&samples);
        PredictionSet::from_samples(samples)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::Vocabulary;

    fn fs(f: &Featurizer) -> FeatureSet {
        let mut v1 = alloc::vec![0.0; f.slots * f.dim1()];
        v1[..7].copy_from_slice(&[0.1, 0.5, 2.0, 0.0, 1.0, 1.0, 0.2]);
        let v2 = f.embedder.embed(&v1).unwrap();
        FeatureSet {
            slots: f.slots,
            dim1: f.dim1(),
            dim2: f.dim2(),
            v1,
            v2,
        }
    }

    #[test]
    fn degenerate_ensembles() {
        let f = Featurizer::new(2, Vocabulary::new([1, 2, 3])).unwrap();
        let m = EstimatorModel::new(f.clone(), &EstimatorConfig::default(), 4).unwrap();
        let x = fs(&f);

        let single = Ensemble::from_members(alloc::vec![m.clone()])
            .unwrap()
            .predict(&x)
            .unwrap();
        assert_eq!(
            single.mean,
            m.predict_plain(&m.encode(&x).unwrap().pooled).unwrap()
        );

        let same = Ensemble::from_members(alloc::vec![m.clone(); 5])
            .unwrap()
            .predict(&x)
            .unwrap();
        assert_eq!(same.variance, 0.0);

        let other = EstimatorModel::new(f.clone(), &EstimatorConfig::default(), 5).unwrap();
        let a = Ensemble::from_members(alloc::vec![m.clone(), other.clone(), m.clone()])
            .unwrap()
            .predict(&x)
            .unwrap();
        let b = Ensemble::from_members(alloc::vec![other, m.clone(), m])
            .unwrap()
            .predict(&x)
            .unwrap();
        assert_eq!(a.variance.to_bits(), b.variance.to_bits());
        assert!(a.variance > 0.0);
    }

    #[test]
    fn needs_two_members_to_train() {
        let f = Featurizer::new(1, Vocabulary::new([1])).unwrap();
        let ex = Example {
            features: fs(&Featurizer::new(1, Vocabulary::new([1])).unwrap()),
            target: 0.5,
        };
        let tc = TrainConfig {
            epochs: 1,
            batch_size: 1,
            learning_rate: 0.01,
            momentum: 0.0,
            seed: 1,
        };
        assert!(
            Ensemble::train(&f, &EstimatorConfig::default(), &tc, &[ex.clone()], 1, 1).is_err()
        );
        assert_eq!(
            Ensemble::train(&f, &EstimatorConfig::default(), &tc, &[ex], 2, 1)
                .unwrap()
                .members
                .len(),
            2
        );
    }
}
