//! The benefit estimator with built-in uncertainty hooks.
//!
//! ```text
//!  V2 (t x dim2) --encoder (per slot)--> V_h (t x h) --mean--> v_h (h) --predictor (MC dropout)--> y
//!                                        V_h (t*h)   --decoder--> V1_hat (t x dim1)
//! ```
//!
//! The encoder is one network shared by all slots. The decoder consumes the
//! un-pooled `V_h` and reconstructs the raw vectors `V1`, never `V2`. The
//! predictor carries dropout on its last hidden layer only, so its plain
//! output equals the expectation of its Monte-Carlo outputs.
//!
//! Training runs in two phases: phase 1 fits encoder and predictor to the
//! relative benefit, phase 2 freezes both and fits the decoder to `V1`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::featurize::{FeatureSet, Featurizer};
use crate::hashing::{self, Hasher64, Stream};
use crate::neural::{self, DenseNet, Gradients, LayerSpec, Mode, Sgd, TrainConfig};
use crate::stats;
use crate::{Error, Result};

/// Default number of Monte-Carlo passes.
pub const DEFAULT_MC_PASSES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Width `h` of a hidden block and of the pooled vector.
    pub hidden: usize,
    pub encoder_hidden: Vec<usize>,
    pub predictor_hidden: Vec<usize>,
    /// Dropout on the predictor's last hidden layer.
    pub dropout: f64,
    /// Hidden widths of the decoder over the flattened blocks; `None` mirrors
    /// the encoder (each width times the slot count).
    #[serde(default)]
    pub decoder_hidden: Option<Vec<usize>>,
    pub mc_passes: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            encoder_hidden: vec![64],
            predictor_hidden: vec![64, 64],
            dropout: 0.2,
            decoder_hidden: None,
            mc_passes: DEFAULT_MC_PASSES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Untrained,
    PredictorTrained,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorModel {
    pub featurizer: Featurizer,
    pub hidden: usize,
    pub encoder: DenseNet,
    pub decoder: DenseNet,
    pub predictor: DenseNet,
    pub mc_passes: usize,
    pub phase: Phase,
    /// Root of the per-input Monte-Carlo streams.
    pub seed: u64,
}

/// Hidden representation of one feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    /// `V_h`, `slots * hidden` long.
    pub blocks: Vec<f64>,
    /// `v_h`, the coordinate-wise mean over blocks.
    pub pooled: Vec<f64>,
}

/// Outputs of `m` dropout-active passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Population variance (divides by `m`).
    pub variance: f64,
}

impl PredictionSet {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        let mean = stats::mean(&samples)?;
        let variance = stats::population_variance(&samples)?;
        Ok(Self {
            samples,
            mean,
            variance,
        })
    }
}

/// One training or validation record.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: FeatureSet,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoPhaseConfig {
    pub phase1: TrainConfig,
    pub phase2: TrainConfig,
}

impl Default for TwoPhaseConfig {
    fn default() -> Self {
        Self {
            phase1: TrainConfig {
                epochs: 60,
                batch_size: 32,
                learning_rate: 0.01,
                momentum: 0.9,
                seed: 11,
            },
            phase2: TrainConfig {
                epochs: 60,
                batch_size: 32,
                learning_rate: 0.002,
                momentum: 0.9,
                seed: 12,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDiagnostics {
    pub phase1_loss: Vec<f64>,
    pub phase2_loss: Vec<f64>,
    /// Mean reconstruction error of the decoder before phase 2.
    pub reconstruction_before: f64,
    pub encoder_fingerprint_phase1: u64,
    pub encoder_fingerprint_phase2: u64,
    pub predictor_fingerprint_phase1: u64,
    pub predictor_fingerprint_phase2: u64,
}

/// Relative benefit `B / c(q, I0)`.
pub fn target_of(benefit: f64, base_cost: f64) -> Result<f64> {
    if !(base_cost > 0.0) {
        return Err(Error::NonPositiveBaseCost(base_cost));
    }
    Ok(benefit / base_cost)
}

fn hidden_specs(widths: &[usize]) -> Vec<LayerSpec> {
    widths.iter().map(|&w| LayerSpec::relu(w)).collect()
}

impl EstimatorModel {
    pub fn new(featurizer: Featurizer, cfg: &EstimatorConfig, seed: u64) -> Result<Self> {
        if cfg.hidden == 0 {
            return Err(Error::InvalidArgument(
                "hidden width must be positive".into(),
            ));
        }
        if cfg.mc_passes == 0 {
            return Err(Error::InvalidArgument(
                "at least one Monte-Carlo pass is required".into(),
            ));
        }
        let slots = featurizer.slots;
        let (dim1, dim2) = (featurizer.dim1(), featurizer.dim2());

        let mut enc = hidden_specs(&cfg.encoder_hidden);
        enc.push(LayerSpec::relu(cfg.hidden));
        let encoder = DenseNet::new(dim2, &enc, hashing::hash_words(&[seed, 1]))?;

        let mut pred = hidden_specs(&cfg.predictor_hidden);
        if let Some(last) = pred.last_mut() {
            last.dropout = cfg.dropout;
        } else if cfg.dropout > 0.0 {
            return Err(Error::InvalidArgument(
                "dropout needs at least one predictor hidden layer".into(),
            ));
        }
        pred.push(LayerSpec::identity(1));
        let predictor = DenseNet::new(cfg.hidden, &pred, hashing::hash_words(&[seed, 2]))?;

        let decoder = Self::build_decoder(
            slots,
            dim1,
            cfg.hidden,
            &cfg.encoder_hidden,
            cfg.decoder_hidden.as_deref(),
            seed,
        )?;
        Ok(Self {
            featurizer,
            hidden: cfg.hidden,
            encoder,
            decoder,
            predictor,
            mc_passes: cfg.mc_passes,
            phase: Phase::Untrained,
            seed,
        })
    }

    fn build_decoder(
        slots: usize,
        dim1: usize,
        hidden: usize,
        encoder_hidden: &[usize],
        decoder_hidden: Option<&[usize]>,
        seed: u64,
    ) -> Result<DenseNet> {
        let widths: Vec<usize> = match decoder_hidden {
            Some(w) => w.to_vec(),
            None => encoder_hidden.iter().rev().map(|w| w * slots).collect(),
        };
        let mut specs = hidden_specs(&widths);
        specs.push(LayerSpec::identity(slots * dim1));
        DenseNet::new(slots * hidden, &specs, hashing::hash_words(&[seed, 3]))
    }

    /// Replaces the decoder with a fresh one of the given hidden widths.
    pub fn reset_decoder(
        &mut self,
        decoder_hidden: Option<&[usize]>,
        encoder_hidden: &[usize],
        seed: u64,
    ) -> Result<()> {
        self.decoder = Self::build_decoder(
            self.slots(),
            self.dim1(),
            self.hidden,
            encoder_hidden,
            decoder_hidden,
            seed,
        )?;
        if self.phase == Phase::Complete {
            self.phase = Phase::PredictorTrained;
        }
        Ok(())
    }

    pub fn slots(&self) -> usize {
        self.featurizer.slots
    }

    pub fn dim1(&self) -> usize {
        self.featurizer.dim1()
    }

    pub fn dim2(&self) -> usize {
        self.featurizer.dim2()
    }

    /// Structural consistency of a (possibly deserialized) model.
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.decoder.validate()?;
        self.predictor.validate()?;
        let expect = |expected: usize, actual: usize| {
            if expected == actual {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { expected, actual })
            }
        };
        expect(self.dim2(), self.encoder.input_dim())?;
        expect(self.hidden, self.encoder.output_dim())?;
        expect(self.slots() * self.hidden, self.decoder.input_dim())?;
        expect(self.slots() * self.dim1(), self.decoder.output_dim())?;
        expect(self.hidden, self.predictor.input_dim())?;
        expect(1, self.predictor.output_dim())?;
        if self.encoder.has_dropout() {
            return Err(Error::InvalidNetwork("encoder cannot carry dropout".into()));
        }
        if self.mc_passes == 0 {
            return Err(Error::InvalidArgument(
                "at least one Monte-Carlo pass is required".into(),
            ));
        }
        Ok(())
    }

    fn check_features(&self, fs: &FeatureSet) -> Result<()> {
        if fs.slots != self.slots() || fs.dim1 != self.dim1() || fs.dim2 != self.dim2() {
            return Err(Error::DimensionMismatch {
                expected: self.slots() * self.dim2(),
                actual: fs.slots * fs.dim2,
            });
        }
        if fs.v2.len() != fs.slots * fs.dim2 || fs.v1.len() != fs.slots * fs.dim1 {
            return Err(Error::DimensionMismatch {
                expected: fs.slots * fs.dim2,
                actual: fs.v2.len(),
            });
        }
        Ok(())
    }

    pub fn encode(&self, fs: &FeatureSet) -> Result<Encoding> {
        self.check_features(fs)?;
        let h = self.hidden;
        let mut blocks = Vec::with_capacity(self.slots() * h);
        let mut pooled = vec![0.0; h];
        for slot in 0..self.slots() {
            let block = self.encoder.infer(fs.embedded(slot))?;
            pooled.iter_mut().zip(&block).for_each(|(p, b)| *p += b);
            blocks.extend(block);
        }
        let t = self.slots() as f64;
        pooled.iter_mut().for_each(|p| *p /= t);
        Ok(Encoding { blocks, pooled })
    }

    /// `V1_hat = decoder(V_h)`, flattened `slots * dim1`.
    pub fn reconstruct(&self, blocks: &[f64]) -> Result<Vec<f64>> {
        self.decoder.infer(blocks)
    }

    pub fn predict_plain(&self, pooled: &[f64]) -> Result<f64> {
        Ok(self.predictor.infer(pooled)?[0])
    }

    /// `m` dropout-active predictor passes drawn from `rng`.
    pub fn predict_mc(&self, pooled: &[f64], m: usize, rng: &mut Stream) -> Result<PredictionSet> {
        if m == 0 {
            return Err(Error::InvalidArgument(
                "at least one Monte-Carlo pass is required".into(),
            ));
        }
        let samples = (0..m)
            .map(|_| Ok(self.predictor.forward(pooled, Mode::MonteCarlo, rng)?[0]))
            .collect::<Result<Vec<f64>>>()?;
        PredictionSet::from_samples(samples)
    }

    /// Monte-Carlo stream keyed by the model seed and the raw features, so a
    /// prediction is a pure function of its input.
    pub fn mc_stream(&self, fs: &FeatureSet) -> Stream {
        let mut h = Hasher64::new();
        h.word(self.seed);
        for &x in &fs.v1 {
            h.f64(x);
        }
        hashing::stream(h.finish(), 0x4D43)
    }

    /// Phase 1: encoder and predictor on squared error against the target.
    pub fn train_phase1(&mut self, data: &[Example], cfg: &TrainConfig) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        cfg.validate()?;
        for ex in data {
            self.check_features(&ex.features)?;
        }
        let mut rng = hashing::stream(cfg.seed, 0x5031);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut enc_grads = self.encoder.zero_gradients();
        let mut pred_grads = self.predictor.zero_gradients();
        let mut enc_opt = Sgd::new(&self.encoder, cfg.learning_rate, cfg.momentum);
        let mut pred_opt = Sgd::new(&self.predictor, cfg.learning_rate, cfg.momentum);
        let slots = self.slots();
        let mut curve = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
            let mut total = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                enc_grads.zero();
                pred_grads.zero();
                for &i in batch {
                    total += self.accumulate_phase1(
                        &data[i],
                        slots,
                        &mut rng,
                        &mut enc_grads,
                        &mut pred_grads,
                    )?;
                }
                enc_opt.step(&mut self.encoder, &enc_grads, batch.len());
                pred_opt.step(&mut self.predictor, &pred_grads, batch.len());
            }
            curve.push(total / data.len() as f64);
        }
        self.phase = Phase::PredictorTrained;
        Ok(curve)
    }

    fn accumulate_phase1(
        &self,
        ex: &Example,
        slots: usize,
        rng: &mut Stream,
        enc_grads: &mut Gradients,
        pred_grads: &mut Gradients,
    ) -> Result<f64> {
        let mut traces = Vec::with_capacity(slots);
        let mut pooled = vec![0.0; self.hidden];
        for slot in 0..slots {
            let tr = self
                .encoder
                .forward_trace(ex.features.embedded(slot), Mode::Train, rng)?;
            pooled
                .iter_mut()
                .zip(tr.output())
                .for_each(|(p, b)| *p += b);
            traces.push(tr);
        }
        let t = slots as f64;
        pooled.iter_mut().for_each(|p| *p /= t);
        let ptrace = self.predictor.forward_trace(&pooled, Mode::Train, rng)?;
        let (loss, d) = neural::mse(ptrace.output(), &[ex.target])?;
        let d_pooled = self.predictor.backward(&ptrace, &d, pred_grads)?;
        let d_block: Vec<f64> = d_pooled.iter().map(|g| g / t).collect();
        for tr in &traces {
            self.encoder.backward(tr, &d_block, enc_grads)?;
        }
        Ok(loss)
    }

    /// Phase 2: decoder only, reconstructing `V1` from `V_h`.
    pub fn train_phase2(&mut self, data: &[Example], cfg: &TrainConfig) -> Result<Vec<f64>> {
        if data.is_empty() {
            return Err(Error::Empty("training set"));
        }
        let pairs = self.reconstruction_pairs(data)?;
        let curve = neural::train(&mut self.decoder, &pairs, cfg)?;
        self.phase = Phase::Complete;
        Ok(curve)
    }

    fn reconstruction_pairs(&self, data: &[Example]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        data.iter()
            .map(|ex| Ok((self.encode(&ex.features)?.blocks, ex.features.v1.clone())))
            .collect()
    }

    /// Mean per-coordinate reconstruction error over `data`.
    pub fn reconstruction_error(&self, data: &[Example]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("reconstruction set"));
        }
        let mut total = 0.0;
        for ex in data {
            let enc = self.encode(&ex.features)?;
            let rec = self.reconstruct(&enc.blocks)?;
            total += neural::mse(&rec, &ex.features.v1)?.0;
        }
        Ok(total / data.len() as f64)
    }

    /// Mean absolute error of the plain prediction against the targets.
    pub fn prediction_error(&self, data: &[Example]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Empty("validation set"));
        }
        let mut total = 0.0;
        for ex in data {
            let y = self.predict_plain(&self.encode(&ex.features)?.pooled)?;
            total += libm::fabs(y - ex.target);
        }
        Ok(total / data.len() as f64)
    }

    pub fn train_two_phase(
        &mut self,
        data: &[Example],
        cfg: &TwoPhaseConfig,
    ) -> Result<TrainingDiagnostics> {
        let phase1_loss = self.train_phase1(data, &cfg.phase1)?;
        let encoder_fingerprint_phase1 = self.encoder.fingerprint();
        let predictor_fingerprint_phase1 = self.predictor.fingerprint();
        let reconstruction_before = self.reconstruction_error(data)?;
        let phase2_loss = self.train_phase2(data, &cfg.phase2)?;
        Ok(TrainingDiagnostics {
            phase1_loss,
            phase2_loss,
            reconstruction_before,
            encoder_fingerprint_phase1,
            encoder_fingerprint_phase2: self.encoder.fingerprint(),
            predictor_fingerprint_phase1,
            predictor_fingerprint_phase2: self.predictor.fingerprint(),
        })
    }
}

/// Trains one phase-1 model per candidate and keeps the one with the lowest
/// validation error. Returns the model, the winning index and every score.
pub fn select_phase1(
    featurizer: &Featurizer,
    candidates: &[(EstimatorConfig, TrainConfig, u64)],
    train: &[Example],
    validation: &[Example],
) -> Result<(EstimatorModel, usize, Vec<f64>)> {
    if candidates.is_empty() {
        return Err(Error::Empty("hyperparameter candidates"));
    }
    let mut best: Option<(EstimatorModel, usize)> = None;
    let mut scores = Vec::with_capacity(candidates.len());
    for (i, (cfg, train_cfg, seed)) in candidates.iter().enumerate() {
        let mut model = EstimatorModel::new(featurizer.clone(), cfg, *seed)?;
        model.train_phase1(train, train_cfg)?;
        let score = model.prediction_error(validation)?;
        let better = scores.iter().all(|&s: &f64| score < s);
        scores.push(score);
        if better {
            best = Some((model, i));
        }
    }
    let (model, index) = best.ok_or(Error::Empty("hyperparameter candidates"))?;
    Ok((model, index, scores))
}

/// Trains one decoder per variant on a phase-1 model and keeps the one with
/// the lowest validation reconstruction error.
pub fn select_decoder(
    model: &EstimatorModel,
    encoder_hidden: &[usize],
    variants: &[Option<Vec<usize>>],
    cfg: &TrainConfig,
    train: &[Example],
    validation: &[Example],
) -> Result<(EstimatorModel, usize, Vec<f64>)> {
    if variants.is_empty() {
        return Err(Error::Empty("decoder variants"));
    }
    let mut best: Option<(EstimatorModel, usize)> = None;
    let mut scores = Vec::with_capacity(variants.len());
    for (i, variant) in variants.iter().enumerate() {
        let mut m = model.clone();
        m.reset_decoder(
            variant.as_deref(),
            encoder_hidden,
            hashing::hash_words(&[model.seed, 0xDEC, i as u64]),
        )?;
        m.train_phase2(train, cfg)?;
        let score = m.reconstruction_error(validation)?;
        let better = scores.iter().all(|&s: &f64| score < s);
        scores.push(score);
        if better {
            best = Some((m, i));
        }
    }
    let (m, index) = best.ok_or(Error::Empty("decoder variants"))?;
    Ok((m, index, scores))
}
