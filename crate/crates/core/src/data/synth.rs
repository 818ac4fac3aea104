//! Seeded synthetic cohorts with a planted hazard, standing in for private
//! hospital data.
//!
//! Each patient carries a latent standardized trajectory per feature,
//! `z_f(t) = base_f + slope_f * t / 365`. The hazard is
//! `h(t) = sum_i w_i * z_{p_i}(t) + drift * t / 365` over the planted
//! features `p_i`. The first visit where `h` exceeds `threshold` is the
//! last one recorded and the event follows within 180 days. Observed values
//! add measurement noise, are mapped to clinical units, and are randomly
//! masked.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use super::cohort::{Cohort, Outcome, PatientRecord, Visit};
use super::schema::{Feature, FeatureSchema, XY_DYNAMIC, XY_STATIC};
use super::DataError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub n_static: usize,
    pub n_dynamic: usize,
    pub min_visits: usize,
    pub max_visits: usize,
    /// Dynamic feature indices that drive the hazard.
    pub planted: Vec<usize>,
    pub weights: Vec<f64>,
    pub threshold: f64,
    pub drift: f64,
    /// Spread of each latent trajectory's baseline and yearly trend.
    pub base_sd: f64,
    pub slope_sd: f64,
    /// Longest follow-up generated, in days.
    pub horizon_days: f64,
    pub mean_gap_days: f64,
    pub missing_rate: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_patients: 500,
            n_static: 3,
            n_dynamic: 10,
            min_visits: 8,
            max_visits: 20,
            // Albumin, WBC, Calcium
            planted: vec![2, 3, 6],
            weights: vec![-1.0, 1.0, 1.0],
            threshold: 2.0,
            drift: 0.0,
            base_sd: 0.6,
            slope_sd: 0.8,
            horizon_days: 5.0 * 365.0,
            mean_gap_days: 60.0,
            missing_rate: 0.3,
            noise: 0.1,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Invalid(format!("synthetic spec: {m}")));
        if self.n_patients == 0 {
            return bad("n_patients must be positive");
        }
        if self.n_dynamic == 0 || self.n_dynamic > XY_DYNAMIC.len() {
            return bad("n_dynamic must be in 1..=33");
        }
        if self.n_static > XY_STATIC.len() {
            return bad("n_static must be at most 7");
        }
        if self.min_visits == 0 || self.min_visits > self.max_visits {
            return bad("need 1 <= min_visits <= max_visits");
        }
        if self.planted.is_empty() || self.planted.len() != self.weights.len() {
            return bad("need at least one planted feature and one weight per planted feature");
        }
        if self.planted.iter().any(|&p| p >= self.n_dynamic) {
            return bad("planted index out of range");
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate must be in [0, 1)");
        }
        if !(self.mean_gap_days > 0.0 && self.horizon_days > 0.0 && self.noise >= 0.0 && self.base_sd >= 0.0 && self.slope_sd >= 0.0) {
            return bad("gap and horizon must be positive, noise and spreads non-negative");
        }
        Ok(())
    }

    pub fn schema(&self) -> FeatureSchema {
        let mut features: Vec<Feature> = XY_STATIC[..self.n_static]
            .iter()
            .map(|(n, u, c)| Feature::static_(n, u, *c))
            .collect();
        features.extend(XY_DYNAMIC[..self.n_dynamic].iter().map(|(n, u)| Feature::dynamic(n, u)));
        FeatureSchema::new(features).expect("valid built-in features")
    }

    pub fn planted_names(&self) -> Vec<String> {
        self.planted.iter().map(|&p| XY_DYNAMIC[p].0.to_string()).collect()
    }
}

/// Reference `(mean, sd)` per dynamic feature in its clinical unit; binary
/// comorbidity flags use `(0, 0)` and are thresholded instead.
const DYNAMIC_SCALE: [(f64, f64); 33] = [
    (58.0, 13.0),
    (3.0, 2.0),
    (36.0, 4.0),
    (6.5, 2.0),
    (18.0, 9.0),
    (2.6, 0.8),
    (2.3, 0.2),
    (1.8, 0.9),
    (1.1, 0.3),
    (92.0, 6.0),
    (4.0, 0.7),
    (139.0, 3.0),
    (420.0, 90.0),
    (5.8, 1.5),
    (320.0, 70.0),
    (20.0, 8.0),
    (300.0, 150.0),
    (108.0, 16.0),
    (300.0, 180.0),
    (210.0, 60.0),
    (90.0, 40.0),
    (1.6, 0.4),
    (64.0, 6.0),
    (4.4, 1.0),
    (45.0, 9.0),
    (0.0, 0.0),
    (0.0, 0.0),
    (0.0, 0.0),
    (0.0, 0.0),
    (0.0, 0.0),
    (0.0, 0.0),
    (850.0, 250.0),
    (99.0, 4.0),
];

const STATIC_SCALE: [(f64, f64); 7] = [
    (165.0, 8.0),
    (63.0, 11.0),
    (23.0, 3.5),
    (0.0, 0.0),
    (0.0, 0.0),
    (0.0, 0.0),
    (0.0, 0.0),
];

fn to_units((mean, sd): (f64, f64), z: f64) -> f64 {
    let v = if sd == 0.0 {
        // flag present for roughly the top decile
        f64::from(u8::from(z > 1.28))
    } else {
        (mean + sd * z).max(0.0)
    };
    (v * 100.0).round() / 100.0
}

pub fn generate_synthetic_cohort(spec: &SyntheticSpec) -> Result<Cohort, DataError> {
    spec.validate()?;
    let schema = spec.schema();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let gap = Exp::new(1.0 / spec.mean_gap_days).expect("positive rate");
    let width = (spec.n_patients as f64).log10().floor() as usize + 1;

    let mut records = Vec::with_capacity(spec.n_patients);
    for p in 0..spec.n_patients {
        let base: Vec<f64> = (0..spec.n_dynamic).map(|_| spec.base_sd * std_normal.sample(&mut rng)).collect();
        let slope: Vec<f64> = (0..spec.n_dynamic).map(|_| spec.slope_sd * std_normal.sample(&mut rng)).collect();
        let n_visits = rng.random_range(spec.min_visits..=spec.max_visits);

        let static_values = (0..spec.n_static)
            .map(|j| {
                let z = std_normal.sample(&mut rng);
                let missing = rng.random::<f64>() < spec.missing_rate / 3.0;
                (!missing).then(|| to_units(STATIC_SCALE[j], z))
            })
            .collect();

        let mut visits = Vec::with_capacity(n_visits);
        let mut event_time = None;
        let mut t = 0.0f64;
        for k in 0..n_visits {
            if k > 0 {
                t += (7.0 + gap.sample(&mut rng)).round();
            }
            if t > spec.horizon_days {
                break;
            }
            let latent = |f: usize| base[f] + slope[f] * t / 365.0;
            let values = (0..spec.n_dynamic)
                .map(|f| {
                    let z = latent(f) + spec.noise * std_normal.sample(&mut rng);
                    let missing = rng.random::<f64>() < spec.missing_rate;
                    (!missing).then(|| to_units(DYNAMIC_SCALE[f], z))
                })
                .collect();
            visits.push(Visit { time: t, values });
            let hazard: f64 = spec
                .planted
                .iter()
                .zip(&spec.weights)
                .map(|(&f, w)| w * latent(f))
                .sum::<f64>()
                + spec.drift * t / 365.0;
            if hazard > spec.threshold {
                event_time = Some(t + rng.random_range(1..=180) as f64);
                break;
            }
        }
        let last = visits.last().map_or(0.0, |v| v.time);
        let outcome = match event_time {
            Some(e) => Outcome {
                event: true,
                time: Some(e),
            },
            None => Outcome {
                event: false,
                time: Some(last + rng.random_range(0..=365) as f64),
            },
        };
        records.push(PatientRecord {
            patient_id: format!("P{:0width$}", p + 1),
            static_values,
            visits,
            outcome,
        });
    }
    Cohort::new(schema, records)
}
