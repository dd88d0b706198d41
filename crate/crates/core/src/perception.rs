//! Stand-in for a trained perception stack.
//!
//! Takes ground-truth affordances and degrades them the way a detector
//! would: detection probabilities and confidences for the two stop flags, a
//! confusion matrix for the sign classifier, Gaussian noise on the scalar
//! channels, and a fixed pipeline latency. Every draw comes from one seeded
//! stream, so identical inputs and seed give bit-identical outputs.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::affordance::{Affordances, SignReading, CENTER_DISTANCE_MAX_M, VEHICLE_DISTANCE_MAX_M};
use crate::config::{Block, ParseError};
use crate::geometry::wrap_angle;

/// Affordances as the controller sees them: the truth plus detector output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerceivedAffordances {
    pub hazard_stop: bool,
    pub red_light: bool,
    /// Detector confidence that a hazard stop is required.
    pub p_hazard: f64,
    /// Detector confidence that a governing light is red.
    pub p_red: f64,
    pub speed_sign: SignReading,
    pub vehicle_distance: f64,
    pub relative_angle: f64,
    pub center_distance: f64,
}

impl PerceivedAffordances {
    /// Wraps ground truth as a perfect detection.
    pub fn exact(truth: &Affordances) -> Self {
        PerceivedAffordances {
            hazard_stop: truth.hazard_stop,
            red_light: truth.red_light,
            p_hazard: if truth.hazard_stop { 1.0 } else { 0.0 },
            p_red: if truth.red_light { 1.0 } else { 0.0 },
            speed_sign: truth.speed_sign,
            vehicle_distance: truth.vehicle_distance,
            relative_angle: truth.relative_angle,
            center_distance: truth.center_distance,
        }
    }
}

/// Error model parameters. Rows of `sign_confusion` are true classes in the
/// order none/30/60/90 and must each sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionModel {
    pub name: String,
    pub p_tp_red: f64,
    pub p_fp_red: f64,
    pub p_tp_hazard: f64,
    pub p_fp_hazard: f64,
    /// Confidence emitted for a detection; the complement is emitted for a
    /// non-detection. Drawn as clamp(N(mean, sigma), 0, 1).
    pub confidence_mean: f64,
    pub confidence_sigma: f64,
    pub sign_confusion: [[f64; 4]; 4],
    pub sigma_d: f64,
    pub sigma_psi: f64,
    pub sigma_ell: f64,
    pub latency_steps: usize,
    pub seed: u64,
}

const IDENTITY_CONFUSION: [[f64; 4]; 4] = [
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
    [0.0, 0.0, 1.0, 0.0],
    [0.0, 0.0, 0.0, 1.0],
];

impl PerceptionModel {
    /// Perfect perception: the output equals the (undelayed) truth.
    pub fn clean() -> Self {
        PerceptionModel {
            name: "clean".into(),
            p_tp_red: 1.0,
            p_fp_red: 0.0,
            p_tp_hazard: 1.0,
            p_fp_hazard: 0.0,
            confidence_mean: 1.0,
            confidence_sigma: 0.0,
            sign_confusion: IDENTITY_CONFUSION,
            sigma_d: 0.0,
            sigma_psi: 0.0,
            sigma_ell: 0.0,
            latency_steps: 0,
            seed: 0,
        }
    }

    /// Error rates of a detector evaluated on roads it was tuned on.
    pub fn train_like() -> Self {
        PerceptionModel {
            name: "train".into(),
            p_tp_red: 0.98,
            p_fp_red: 0.004,
            p_tp_hazard: 0.97,
            p_fp_hazard: 0.004,
            confidence_mean: 0.96,
            confidence_sigma: 0.04,
            sign_confusion: [
                [0.97, 0.01, 0.01, 0.01],
                [0.04, 0.94, 0.02, 0.0],
                [0.04, 0.02, 0.92, 0.02],
                [0.04, 0.0, 0.02, 0.94],
            ],
            sigma_d: 0.05,
            sigma_psi: 0.01,
            sigma_ell: 1.0,
            latency_steps: 1,
            seed: 0,
        }
    }

    /// Error rates of the same detector on unseen roads.
    pub fn test_like() -> Self {
        PerceptionModel {
            name: "test".into(),
            p_tp_red: 0.93,
            p_fp_red: 0.015,
            p_tp_hazard: 0.92,
            p_fp_hazard: 0.015,
            confidence_mean: 0.9,
            confidence_sigma: 0.08,
            sign_confusion: [
                [0.93, 0.03, 0.02, 0.02],
                [0.08, 0.86, 0.05, 0.01],
                [0.08, 0.05, 0.82, 0.05],
                [0.08, 0.01, 0.05, 0.86],
            ],
            sigma_d: 0.1,
            sigma_psi: 0.02,
            sigma_ell: 2.0,
            latency_steps: 2,
            seed: 0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "clean" => Some(Self::clean()),
            "train" => Some(Self::train_like()),
            "test" => Some(Self::test_like()),
            _ => None,
        }
    }

    /// Reads a model from a `perception` config block; unspecified fields
    /// keep the values of the `base` preset (default clean).
    pub fn from_block(block: &Block) -> Result<Self, ParseError> {
        let mut m = match block.prop("base") {
            Some(p) => {
                let name = p.one_str()?;
                Self::preset(name)
                    .ok_or_else(|| ParseError::new(p.line, format!("unknown preset `{name}`")))?
            }
            None => Self::clean(),
        };
        if let Some(name) = block.args.first() {
            m.name = name.clone();
        }
        for prop in &block.props {
            match prop.key.as_str() {
                "base" => {}
                "p_tp_red" => m.p_tp_red = prop.one_f64()?,
                "p_fp_red" => m.p_fp_red = prop.one_f64()?,
                "p_tp_hazard" => m.p_tp_hazard = prop.one_f64()?,
                "p_fp_hazard" => m.p_fp_hazard = prop.one_f64()?,
                "confidence_mean" => m.confidence_mean = prop.one_f64()?,
                "confidence_sigma" => m.confidence_sigma = prop.one_f64()?,
                "sigma_d" => m.sigma_d = prop.one_f64()?,
                "sigma_psi" => m.sigma_psi = prop.one_f64()?,
                "sigma_ell" => m.sigma_ell = prop.one_f64()?,
                "latency_steps" => m.latency_steps = prop.one_f64()? as usize,
                "seed" => m.seed = prop.one_f64()? as u64,
                "confusion_row" => {
                    let vals = prop.f64s()?;
                    if vals.len() != 5 {
                        return Err(ParseError::new(
                            prop.line,
                            "`confusion_row` expects a row index and four probabilities",
                        ));
                    }
                    let row = vals[0] as usize;
                    if row > 3 {
                        return Err(ParseError::new(prop.line, "row index must be 0..=3"));
                    }
                    m.sign_confusion[row] = [vals[1], vals[2], vals[3], vals[4]];
                }
                other => {
                    return Err(ParseError::new(
                        prop.line,
                        format!("unknown perception field `{other}`"),
                    ))
                }
            }
        }
        m.validate()
            .map_err(|msg| ParseError::new(block.line, msg))?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), String> {
        let probs = [
            self.p_tp_red,
            self.p_fp_red,
            self.p_tp_hazard,
            self.p_fp_hazard,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err("detection probabilities must be in [0, 1]".into());
        }
        if [self.sigma_d, self.sigma_psi, self.sigma_ell, self.confidence_sigma]
            .iter()
            .any(|s| *s < 0.0)
        {
            return Err("noise sigmas must be non-negative".into());
        }
        for (i, row) in self.sign_confusion.iter().enumerate() {
            if row.iter().any(|p| *p < 0.0) {
                return Err(format!("confusion row {i} has a negative entry"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(format!("confusion row {i} sums to {sum}, expected 1"));
            }
        }
        Ok(())
    }

    /// Seeded copy, for deriving per-episode streams from one model.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut m = self.clone();
        m.seed = seed;
        m
    }
}

/// Stateful per-episode perception pipeline.
#[derive(Debug, Clone)]
pub struct PerceptionSim {
    model: PerceptionModel,
    rng: ChaCha8Rng,
    buffer: VecDeque<Affordances>,
}

impl PerceptionSim {
    pub fn new(model: PerceptionModel) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        PerceptionSim {
            model,
            rng,
            buffer: VecDeque::new(),
        }
    }

    pub fn model(&self) -> &PerceptionModel {
        &self.model
    }

    /// One step of the pipeline. The RNG always advances by the same number
    /// of draws so the stream is independent of the truth values.
    pub fn perceive(&mut self, truth: &Affordances) -> PerceivedAffordances {
        self.buffer.push_back(*truth);
        while self.buffer.len() > self.model.latency_steps + 1 {
            self.buffer.pop_front();
        }
        // Before the buffer fills, the oldest entry is the first truth, which
        // matches a cold pipeline repeating its first frame.
        let delayed = *self.buffer.front().unwrap();

        let m = &self.model;
        let u_red: f64 = self.rng.gen();
        let z_red: f64 = self.rng.sample(StandardNormal);
        let u_hazard: f64 = self.rng.gen();
        let z_hazard: f64 = self.rng.sample(StandardNormal);
        let u_sign: f64 = self.rng.gen();
        let z_d: f64 = self.rng.sample(StandardNormal);
        let z_psi: f64 = self.rng.sample(StandardNormal);
        let z_ell: f64 = self.rng.sample(StandardNormal);

        let red_detected = if delayed.red_light {
            u_red < m.p_tp_red
        } else {
            u_red < m.p_fp_red
        };
        let hazard_detected = if delayed.hazard_stop {
            u_hazard < m.p_tp_hazard
        } else {
            u_hazard < m.p_fp_hazard
        };
        let conf = |z: f64| (m.confidence_mean + m.confidence_sigma * z).clamp(0.0, 1.0);
        let p_red = if red_detected {
            conf(z_red)
        } else {
            1.0 - conf(z_red)
        };
        let p_hazard = if hazard_detected {
            conf(z_hazard)
        } else {
            1.0 - conf(z_hazard)
        };

        let row = &m.sign_confusion[delayed.speed_sign.index()];
        let mut acc = 0.0;
        let mut class = 3;
        for (i, p) in row.iter().enumerate() {
            acc += p;
            if u_sign < acc {
                class = i;
                break;
            }
        }
        let speed_sign = SignReading::from_index(class);

        PerceivedAffordances {
            hazard_stop: hazard_detected,
            red_light: red_detected,
            p_hazard,
            p_red,
            speed_sign,
            vehicle_distance: (delayed.vehicle_distance + m.sigma_ell * z_ell)
                .clamp(0.0, VEHICLE_DISTANCE_MAX_M),
            relative_angle: wrap_angle(delayed.relative_angle + m.sigma_psi * z_psi),
            center_distance: (delayed.center_distance + m.sigma_d * z_d)
                .clamp(-CENTER_DISTANCE_MAX_M, CENTER_DISTANCE_MAX_M),
        }
    }
}
