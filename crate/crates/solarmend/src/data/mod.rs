//! Fleet timeseries: ingestion, augmentation, corruption, and synthesis.
//!
//! The working representation is [`PvFleetSeries`]: per-inverter normalized
//! power on a fixed 5-minute grid with an observation mask. Raw (denormalized)
//! values are carried alongside so that exporting observed entries is
//! bit-exact (an affine normalize/denormalize round trip through floating
//! point is not), and observed data must never be altered by the pipeline.

mod augment;
mod corrupt;
mod ingest;
mod profile;
mod synth;
mod windows;

pub use augment::{
    augment, validate_value, AugmentImputer, AugmentOptions, Augmented, Validated,
    ValidationOutcome, ValidatorOptions,
};
pub use corrupt::{apply_mask, corrupt, draw_mask, CorruptionConfig, MissingMask, MissingType};
pub use ingest::{export_csv, ingest_csv, IngestOptions, PowerUnit};
pub use profile::{profile_missing_patterns, MissingProfile};
pub use synth::{generate_synthetic_fleet, SynthConfig};
pub use windows::{slide_windows, DaySplit, Window};

#[cfg(test)]
pub(crate) use synth::correlation;

use crate::{Error, Result};

/// Timesteps per day at the 5-minute cadence.
pub const STEPS_PER_DAY: usize = 288;

/// Seconds between grid points.
pub const STEP_SECONDS: i64 = 300;

/// Nameplate physics of one inverter, used by the augmentation validator.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhysicsParams {
    /// Rated power at standard test conditions, watts.
    pub p_nameplate: f64,
    /// Warranted module power, watts.
    pub p_norm: f64,
    /// Temperature coefficient, 1/°C (typically negative).
    pub gamma_t: f64,
}

impl PhysicsParams {
    /// Warranty invariant: `p_nameplate ≥ p_norm ≥ 0.8 · p_nameplate`.
    pub fn validate(&self) -> Result<()> {
        if !(self.p_nameplate.is_finite() && self.p_norm.is_finite() && self.gamma_t.is_finite()) {
            return Err(Error::InvalidArgument(
                "non-finite physics parameter".into(),
            ));
        }
        if self.p_nameplate < self.p_norm
            || self.p_norm < 0.8 * self.p_nameplate
            || self.p_norm < 0.0
        {
            return Err(Error::InvalidArgument(format!(
                "warranty bound violated: need nameplate {} >= norm {} >= 80% of nameplate",
                self.p_nameplate, self.p_norm
            )));
        }
        Ok(())
    }
}

/// Per-inverter affine map between raw watts and the normalized unit range.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaling {
    pub offset: f64,
    pub scale: f64,
}

impl Scaling {
    pub fn identity() -> Self {
        Scaling {
            offset: 0.0,
            scale: 1.0,
        }
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.offset) / self.scale
    }

    pub fn denormalize(&self, normalized: f64) -> f64 {
        normalized * self.scale + self.offset
    }
}

/// Optional weather channels aligned with the power grid; NaN marks an
/// absent reading.
#[derive(Debug, Clone)]
pub struct AuxChannels {
    /// Plane-of-array irradiance, W/m².
    pub g_poa: Vec<f64>,
    /// Module temperature, °C.
    pub t_module: Vec<f64>,
}

/// Bit-level float comparison so NaN sentinels compare equal to themselves;
/// equality here means "the same bytes", which is what determinism tests
/// need.
fn bits_eq(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

impl PartialEq for AuxChannels {
    fn eq(&self, other: &Self) -> bool {
        bits_eq(&self.g_poa, &other.g_poa) && bits_eq(&self.t_module, &other.t_module)
    }
}

/// The fleet's node attribute tensor: normalized AC power over
/// `time × inverter`, with observation mask and static metadata.
#[derive(Debug, Clone)]
pub struct PvFleetSeries {
    timestamps: Vec<i64>,
    inverter_ids: Vec<String>,
    site_ids: Vec<String>,
    locations: Vec<(f64, f64)>,
    physics: Vec<PhysicsParams>,
    scaling: Vec<Scaling>,
    /// `T × n` normalized power, row-major; unobserved slots hold 0.0.
    values: Vec<f64>,
    /// `T × n` raw power in watts; NaN where nothing was ever observed
    /// or filled.
    raw: Vec<f64>,
    observed: Vec<bool>,
    aux: Option<AuxChannels>,
}

impl PartialEq for PvFleetSeries {
    fn eq(&self, other: &Self) -> bool {
        self.timestamps == other.timestamps
            && self.inverter_ids == other.inverter_ids
            && self.site_ids == other.site_ids
            && self.locations == other.locations
            && self.physics == other.physics
            && self.scaling == other.scaling
            && bits_eq(&self.values, &other.values)
            && bits_eq(&self.raw, &other.raw)
            && self.observed == other.observed
            && self.aux == other.aux
    }
}

impl PvFleetSeries {
    /// Assembles a series, validating the grid and value invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        timestamps: Vec<i64>,
        inverter_ids: Vec<String>,
        site_ids: Vec<String>,
        locations: Vec<(f64, f64)>,
        physics: Vec<PhysicsParams>,
        scaling: Vec<Scaling>,
        values: Vec<f64>,
        raw: Vec<f64>,
        observed: Vec<bool>,
        aux: Option<AuxChannels>,
    ) -> Result<Self> {
        let steps = timestamps.len();
        let n = inverter_ids.len();
        if steps == 0 || n == 0 {
            return Err(Error::InvalidArgument(
                "series needs at least one timestep and one inverter".into(),
            ));
        }
        for pair in timestamps.windows(2) {
            if pair[1] - pair[0] != STEP_SECONDS {
                return Err(Error::InvalidArgument(format!(
                    "timestamps must advance by exactly {STEP_SECONDS} s, got {} then {}",
                    pair[0], pair[1]
                )));
            }
        }
        if site_ids.len() != n || locations.len() != n || physics.len() != n || scaling.len() != n {
            return Err(Error::Shape(format!(
                "metadata length mismatch: {n} inverters"
            )));
        }
        let cells = steps * n;
        if values.len() != cells || raw.len() != cells || observed.len() != cells {
            return Err(Error::Shape(format!(
                "grid is {steps} x {n} = {cells} cells; got {} values, {} raw, {} observed",
                values.len(),
                raw.len(),
                observed.len()
            )));
        }
        if let Some(aux) = &aux {
            if aux.g_poa.len() != cells || aux.t_module.len() != cells {
                return Err(Error::Shape("aux channels must match the grid".into()));
            }
        }
        for (idx, (&v, &obs)) in values.iter().zip(&observed).enumerate() {
            if obs && !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "observed value at cell {idx} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(PvFleetSeries {
            timestamps,
            inverter_ids,
            site_ids,
            locations,
            physics,
            scaling,
            values,
            raw,
            observed,
            aux,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_inverters(&self) -> usize {
        self.inverter_ids.len()
    }

    /// Whole days in the series.
    pub fn n_days(&self) -> usize {
        self.n_steps() / STEPS_PER_DAY
    }

    pub fn timestamps(&self) -> &[i64] {
        &self.timestamps
    }

    pub fn inverter_ids(&self) -> &[String] {
        &self.inverter_ids
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn locations(&self) -> &[(f64, f64)] {
        &self.locations
    }

    pub fn physics(&self) -> &[PhysicsParams] {
        &self.physics
    }

    pub fn scaling(&self) -> &[Scaling] {
        &self.scaling
    }

    pub fn aux(&self) -> Option<&AuxChannels> {
        self.aux.as_ref()
    }

    /// Flat cell index of `(step, inverter)`.
    pub fn cell(&self, step: usize, inverter: usize) -> usize {
        step * self.n_inverters() + inverter
    }

    /// Normalized power at a cell (0.0 when unobserved).
    pub fn value(&self, step: usize, inverter: usize) -> f64 {
        self.values[self.cell(step, inverter)]
    }

    pub fn is_observed(&self, step: usize, inverter: usize) -> bool {
        self.observed[self.cell(step, inverter)]
    }

    /// Raw power in watts at a cell; NaN when never observed or filled.
    pub fn raw_value(&self, step: usize, inverter: usize) -> f64 {
        self.raw[self.cell(step, inverter)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn observed(&self) -> &[bool] {
        &self.observed
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn is_fully_observed(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    /// One inverter's normalized series as a dense column copy.
    pub fn inverter_series(&self, inverter: usize) -> Vec<f64> {
        (0..self.n_steps())
            .map(|t| self.value(t, inverter))
            .collect()
    }

    /// Number of observed entries per inverter.
    pub fn observed_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_inverters()];
        for t in 0..self.n_steps() {
            for (i, count) in counts.iter_mut().enumerate() {
                if self.is_observed(t, i) {
                    *count += 1;
                }
            }
        }
        counts
    }

    /// A copy restricted to whole days `[start, end)`.
    pub fn slice_days(&self, days: std::ops::Range<usize>) -> Result<PvFleetSeries> {
        if days.end > self.n_days() || days.start >= days.end {
            return Err(Error::InvalidArgument(format!(
                "day range {days:?} out of bounds for {} whole days",
                self.n_days()
            )));
        }
        let n = self.n_inverters();
        let from = days.start * STEPS_PER_DAY;
        let to = days.end * STEPS_PER_DAY;
        let cell_range = from * n..to * n;
        Ok(PvFleetSeries {
            timestamps: self.timestamps[from..to].to_vec(),
            inverter_ids: self.inverter_ids.clone(),
            site_ids: self.site_ids.clone(),
            locations: self.locations.clone(),
            physics: self.physics.clone(),
            scaling: self.scaling.clone(),
            values: self.values[cell_range.clone()].to_vec(),
            raw: self.raw[cell_range.clone()].to_vec(),
            observed: self.observed[cell_range.clone()].to_vec(),
            aux: self.aux.as_ref().map(|aux| AuxChannels {
                g_poa: aux.g_poa[cell_range.clone()].to_vec(),
                t_module: aux.t_module[cell_range].to_vec(),
            }),
        })
    }

    /// Re-expresses the series under another set of per-inverter scalings,
    /// recomputing normalized values from the stored raw watts. Needed when
    /// two files must be compared in one normalization space.
    pub fn renormalized_with(&self, scaling: &[Scaling]) -> Result<PvFleetSeries> {
        if scaling.len() != self.n_inverters() {
            return Err(Error::Shape(format!(
                "{} scalings for {} inverters",
                scaling.len(),
                self.n_inverters()
            )));
        }
        let mut out = self.clone();
        out.scaling = scaling.to_vec();
        for t in 0..self.n_steps() {
            for (i, factors) in scaling.iter().enumerate() {
                let cell = self.cell(t, i);
                out.values[cell] = if self.observed[cell] {
                    factors.normalize(self.raw[cell])
                } else {
                    0.0
                };
            }
        }
        Ok(out)
    }

    pub(crate) fn set_cell(&mut self, step: usize, inverter: usize, normalized: f64, obs: bool) {
        let cell = self.cell(step, inverter);
        self.raw[cell] = if obs {
            self.scaling[inverter].denormalize(normalized)
        } else {
            f64::NAN
        };
        self.values[cell] = normalized;
        self.observed[cell] = obs;
    }
}

#[cfg(test)]
pub(crate) fn test_series(steps: usize, n: usize) -> PvFleetSeries {
    let timestamps: Vec<i64> = (0..steps as i64).map(|t| t * STEP_SECONDS).collect();
    let values: Vec<f64> = (0..steps * n).map(|i| (i % 10) as f64 / 10.0).collect();
    PvFleetSeries::from_parts(
        timestamps,
        (0..n).map(|i| format!("inv{i:02}")).collect(),
        (0..n).map(|i| format!("site{}", i / 2)).collect(),
        (0..n).map(|i| (i as f64 * 0.1, 0.0)).collect(),
        vec![
            PhysicsParams {
                p_nameplate: 100.0,
                p_norm: 95.0,
                gamma_t: -0.004
            };
            n
        ],
        vec![Scaling::identity(); n],
        values.clone(),
        values,
        vec![true; steps * n],
        None,
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_irregular_timestamps() {
        let mut ts: Vec<i64> = (0..4).map(|t| t * STEP_SECONDS).collect();
        ts[3] += 1;
        let result = PvFleetSeries::from_parts(
            ts,
            vec!["a".into()],
            vec!["s".into()],
            vec![(0.0, 0.0)],
            vec![PhysicsParams {
                p_nameplate: 100.0,
                p_norm: 95.0,
                gamma_t: -0.004,
            }],
            vec![Scaling::identity()],
            vec![0.0; 4],
            vec![0.0; 4],
            vec![true; 4],
            None,
        );
        assert!(result.is_err());
    }

    #[test]
    fn rejects_negative_observed_values() {
        let result = PvFleetSeries::from_parts(
            vec![0],
            vec!["a".into()],
            vec!["s".into()],
            vec![(0.0, 0.0)],
            vec![PhysicsParams {
                p_nameplate: 100.0,
                p_norm: 95.0,
                gamma_t: -0.004,
            }],
            vec![Scaling::identity()],
            vec![-0.25],
            vec![-0.25],
            vec![true],
            None,
        );
        assert!(result.is_err());
    }

    #[test]
    fn warranty_bound_is_checked() {
        assert!(PhysicsParams {
            p_nameplate: 100.0,
            p_norm: 95.0,
            gamma_t: -0.004
        }
        .validate()
        .is_ok());
        // 79 W warranted on a 100 W panel breaks the 80% floor.
        assert!(PhysicsParams {
            p_nameplate: 100.0,
            p_norm: 79.0,
            gamma_t: -0.004
        }
        .validate()
        .is_err());
        assert!(PhysicsParams {
            p_nameplate: 100.0,
            p_norm: 101.0,
            gamma_t: -0.004
        }
        .validate()
        .is_err());
    }

    #[test]
    fn slice_days_keeps_whole_days() {
        let series = super::test_series(STEPS_PER_DAY * 3, 2);
        let sliced = series.slice_days(1..3).unwrap();
        assert_eq!(sliced.n_steps(), STEPS_PER_DAY * 2);
        assert_eq!(sliced.value(0, 0), series.value(STEPS_PER_DAY, 0));
        assert!(series.slice_days(2..5).is_err());
    }
}
