//! Configurable corruption masks for denoising training and evaluation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PvFleetSeries, STEPS_PER_DAY};
use crate::{Error, Result};

/// The two missing-data regimes the corruption module can inject.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingType {
    /// Missing completely at random: each cell independently dropped.
    Mcar,
    /// Block missing: one contiguous daily outage per inverter.
    Bm,
}

/// The `(missing type, parameter)` tuple that characterizes a corruption:
/// a drop probability in `[0, 1]` for MCAR, or a block length in 5-minute
/// steps for BM.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorruptionConfig {
    pub missing_type: MissingType,
    pub parameter: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    /// A mid-grid training corruption: 30% MCAR.
    fn default() -> Self {
        CorruptionConfig::mcar(0.3, 0)
    }
}

impl CorruptionConfig {
    pub fn mcar(rate: f64, seed: u64) -> Self {
        CorruptionConfig {
            missing_type: MissingType::Mcar,
            parameter: rate,
            seed,
        }
    }

    /// Block missing with the length given in 5-minute steps.
    pub fn bm(block_steps: usize, seed: u64) -> Self {
        CorruptionConfig {
            missing_type: MissingType::Bm,
            parameter: block_steps as f64,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.missing_type {
            MissingType::Mcar => {
                if !(0.0..=1.0).contains(&self.parameter) {
                    return Err(Error::InvalidArgument(format!(
                        "MCAR rate must lie in [0, 1], got {}",
                        self.parameter
                    )));
                }
            }
            MissingType::Bm => {
                let steps = self.parameter;
                if steps.fract() != 0.0 || !(1.0..=STEPS_PER_DAY as f64).contains(&steps) {
                    return Err(Error::InvalidArgument(format!(
                        "BM block length must be an integer in [1, {STEPS_PER_DAY}], got {steps}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn block_steps(&self) -> usize {
        self.parameter as usize
    }
}

/// A realized corruption mask: `true` keeps a cell, `false` drops it.
#[derive(Debug, Clone, PartialEq)]
pub struct MissingMask {
    n_steps: usize,
    n_inverters: usize,
    kept: Vec<bool>,
    provenance: CorruptionConfig,
}

impl MissingMask {
    pub fn from_kept(
        n_steps: usize,
        n_inverters: usize,
        kept: Vec<bool>,
        provenance: CorruptionConfig,
    ) -> Result<Self> {
        if kept.len() != n_steps * n_inverters {
            return Err(Error::Shape(format!(
                "mask of {} cells for a {n_steps} x {n_inverters} grid",
                kept.len()
            )));
        }
        Ok(MissingMask {
            n_steps,
            n_inverters,
            kept,
            provenance,
        })
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_inverters(&self) -> usize {
        self.n_inverters
    }

    pub fn is_kept(&self, step: usize, inverter: usize) -> bool {
        self.kept[step * self.n_inverters + inverter]
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    /// The configuration that produced this mask.
    pub fn provenance(&self) -> &CorruptionConfig {
        &self.provenance
    }

    pub fn dropped_count(&self) -> usize {
        self.kept.iter().filter(|&&k| !k).count()
    }

    /// Writes `timestamp,inverter_id,kept` rows for exact replay.
    pub fn write_csv(&self, series: &PvFleetSeries, path: &std::path::Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)?;
        writer.write_record(["timestamp", "inverter_id", "kept"])?;
        for t in 0..self.n_steps {
            for i in 0..self.n_inverters {
                writer.write_record([
                    super::ingest::format_timestamp(series.timestamps()[t]),
                    series.inverter_ids()[i].clone(),
                    if self.is_kept(t, i) { "1" } else { "0" }.to_string(),
                ])?;
            }
        }
        writer.flush()?;
        Ok(())
    }

    /// Reads a mask previously written by [`MissingMask::write_csv`].
    pub fn read_csv(series: &PvFleetSeries, path: &std::path::Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut kept = vec![true; series.n_steps() * series.n_inverters()];
        let index: std::collections::HashMap<&str, usize> = series
            .inverter_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();
        let t0 = series.timestamps()[0];
        for record in reader.records() {
            let record = record?;
            let ts = super::ingest::parse_timestamp(record.get(0).unwrap_or_default())?;
            let offset = ts - t0;
            if offset < 0 || offset % super::STEP_SECONDS != 0 {
                return Err(Error::Ingest(format!("mask timestamp {ts} off the grid")));
            }
            let step = (offset / super::STEP_SECONDS) as usize;
            let inverter = *index
                .get(record.get(1).unwrap_or_default())
                .ok_or_else(|| {
                    Error::Ingest(format!(
                        "mask names unknown inverter {:?}",
                        record.get(1).unwrap_or_default()
                    ))
                })?;
            if step >= series.n_steps() {
                return Err(Error::Ingest(format!(
                    "mask timestamp {ts} past the series"
                )));
            }
            kept[step * series.n_inverters() + inverter] =
                record.get(2).unwrap_or_default().trim() == "1";
        }
        MissingMask::from_kept(
            series.n_steps(),
            series.n_inverters(),
            kept,
            CorruptionConfig::mcar(0.0, 0),
        )
    }
}

/// Draws a corruption mask for a `steps × n` grid without touching data.
///
/// MCAR drops each cell independently by comparing a per-cell uniform draw
/// against the rate. BM drops exactly one block of the configured length per
/// inverter-day, with the block start uniform within the day. Deterministic
/// under the config's seed.
pub fn draw_mask(steps: usize, n: usize, config: &CorruptionConfig) -> Result<MissingMask> {
    config.validate()?;
    let mut kept = vec![true; steps * n];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    match config.missing_type {
        MissingType::Mcar => {
            let rate = config.parameter;
            for cell in kept.iter_mut() {
                if rng.gen::<f64>() < rate {
                    *cell = false;
                }
            }
        }
        MissingType::Bm => {
            let block = config.block_steps();
            let days = steps / STEPS_PER_DAY;
            if days * STEPS_PER_DAY != steps {
                return Err(Error::InvalidArgument(format!(
                    "BM corruption needs whole days, got {steps} steps"
                )));
            }
            for inverter in 0..n {
                for day in 0..days {
                    let start = if block == STEPS_PER_DAY {
                        0
                    } else {
                        rng.gen_range(0..=STEPS_PER_DAY - block)
                    };
                    for s in start..start + block {
                        kept[(day * STEPS_PER_DAY + s) * n + inverter] = false;
                    }
                }
            }
        }
    }
    MissingMask::from_kept(steps, n, kept, *config)
}

/// Injects missing data into a fully observed series: `D_C = D_A ⊙ mask`.
pub fn corrupt(
    d_a: &PvFleetSeries,
    config: &CorruptionConfig,
) -> Result<(PvFleetSeries, MissingMask)> {
    if !d_a.is_fully_observed() {
        return Err(Error::InvalidArgument(
            "corruption requires a fully observed input".into(),
        ));
    }
    let mask = draw_mask(d_a.n_steps(), d_a.n_inverters(), config)?;
    Ok((apply_mask(d_a, &mask)?, mask))
}

/// Applies a kept/dropped mask: dropped cells become value 0, unobserved.
pub fn apply_mask(d_a: &PvFleetSeries, mask: &MissingMask) -> Result<PvFleetSeries> {
    if mask.n_steps() != d_a.n_steps() || mask.n_inverters() != d_a.n_inverters() {
        return Err(Error::Shape(format!(
            "mask {} x {} vs series {} x {}",
            mask.n_steps(),
            mask.n_inverters(),
            d_a.n_steps(),
            d_a.n_inverters()
        )));
    }
    let mut out = d_a.clone();
    for t in 0..d_a.n_steps() {
        for i in 0..d_a.n_inverters() {
            if !mask.is_kept(t, i) {
                out.set_cell(t, i, 0.0, false);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_series;

    #[test]
    fn zero_rate_changes_nothing() {
        let d_a = test_series(STEPS_PER_DAY, 3);
        let (d_c, mask) = corrupt(&d_a, &CorruptionConfig::mcar(0.0, 7)).unwrap();
        assert_eq!(d_c, d_a);
        assert_eq!(mask.dropped_count(), 0);
    }

    #[test]
    fn kept_cells_are_bit_identical() {
        let d_a = test_series(STEPS_PER_DAY, 4);
        let (d_c, mask) = corrupt(&d_a, &CorruptionConfig::mcar(0.4, 11)).unwrap();
        for t in 0..d_a.n_steps() {
            for i in 0..d_a.n_inverters() {
                if mask.is_kept(t, i) {
                    assert_eq!(d_c.value(t, i), d_a.value(t, i));
                    assert!(d_c.is_observed(t, i));
                } else {
                    assert_eq!(d_c.value(t, i), 0.0);
                    assert!(!d_c.is_observed(t, i));
                }
            }
        }
    }

    #[test]
    fn bm_drops_one_block_per_inverter_day() {
        let d_a = test_series(STEPS_PER_DAY * 3, 2);
        let block = 72;
        let (_, mask) = corrupt(&d_a, &CorruptionConfig::bm(block, 3)).unwrap();
        for inverter in 0..2 {
            for day in 0..3 {
                let dropped: Vec<usize> = (0..STEPS_PER_DAY)
                    .filter(|s| !mask.is_kept(day * STEPS_PER_DAY + s, inverter))
                    .collect();
                assert_eq!(dropped.len(), block);
                // Contiguity: a single run.
                for pair in dropped.windows(2) {
                    assert_eq!(pair[1], pair[0] + 1);
                }
            }
        }
    }

    #[test]
    fn bm_full_day_block_is_allowed() {
        let d_a = test_series(STEPS_PER_DAY, 1);
        let (d_c, mask) = corrupt(&d_a, &CorruptionConfig::bm(STEPS_PER_DAY, 5)).unwrap();
        assert_eq!(mask.dropped_count(), STEPS_PER_DAY);
        assert!(d_c.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(CorruptionConfig::mcar(1.5, 0).validate().is_err());
        assert!(CorruptionConfig::bm(0, 0).validate().is_err());
        assert!(CorruptionConfig::bm(289, 0).validate().is_err());
        assert!(CorruptionConfig {
            missing_type: MissingType::Bm,
            parameter: 71.5,
            seed: 0
        }
        .validate()
        .is_err());
    }

    #[test]
    fn corruption_is_deterministic_under_seed() {
        let d_a = test_series(STEPS_PER_DAY * 2, 3);
        let config = CorruptionConfig::mcar(0.3, 42);
        let (c1, m1) = corrupt(&d_a, &config).unwrap();
        let (c2, m2) = corrupt(&d_a, &config).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(m1, m2);
        let (c3, _) = corrupt(&d_a, &CorruptionConfig::mcar(0.3, 43)).unwrap();
        assert_ne!(c1, c3);
    }

    #[test]
    fn mcar_rate_concentrates() {
        let d_a = test_series(STEPS_PER_DAY * 4, 10);
        let cells = (d_a.n_steps() * d_a.n_inverters()) as f64;
        let (_, mask) = corrupt(&d_a, &CorruptionConfig::mcar(0.5, 9)).unwrap();
        let rate = mask.dropped_count() as f64 / cells;
        // 3σ binomial bound around 0.5.
        let sigma = (0.5 * 0.5 / cells).sqrt();
        assert!((rate - 0.5).abs() < 3.0 * sigma, "rate {rate}");
    }

    #[test]
    fn rejects_partially_observed_input() {
        let mut d_a = test_series(STEPS_PER_DAY, 2);
        d_a.set_cell(0, 0, 0.0, false);
        assert!(corrupt(&d_a, &CorruptionConfig::mcar(0.1, 0)).is_err());
    }

    #[test]
    fn mask_csv_round_trips() {
        let d_a = test_series(STEPS_PER_DAY, 3);
        let (_, mask) = corrupt(&d_a, &CorruptionConfig::mcar(0.4, 21)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mask.csv");
        mask.write_csv(&d_a, &path).unwrap();
        let read = MissingMask::read_csv(&d_a, &path).unwrap();
        assert_eq!(read.kept(), mask.kept());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // proptest shrinks failures over rates and seeds; one day of
            // three inverters keeps each case fast.
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn kept_cells_never_change(rate in 0.0f64..1.0, seed in 0u64..1000) {
                let d_a = test_series(STEPS_PER_DAY, 3);
                let (d_c, mask) = corrupt(&d_a, &CorruptionConfig::mcar(rate, seed)).unwrap();
                for t in 0..d_a.n_steps() {
                    for i in 0..3 {
                        if mask.is_kept(t, i) {
                            prop_assert_eq!(
                                d_c.value(t, i).to_bits(),
                                d_a.value(t, i).to_bits()
                            );
                        } else {
                            prop_assert_eq!(d_c.value(t, i), 0.0);
                        }
                    }
                }
            }

            #[test]
            fn bm_blocks_have_exact_length(block in 1usize..=288, seed in 0u64..1000) {
                let mask = draw_mask(STEPS_PER_DAY * 2, 2, &CorruptionConfig::bm(block, seed))
                    .unwrap();
                for inverter in 0..2 {
                    for day in 0..2 {
                        let dropped = (0..STEPS_PER_DAY)
                            .filter(|s| !mask.is_kept(day * STEPS_PER_DAY + s, inverter))
                            .count();
                        prop_assert_eq!(dropped, block);
                    }
                }
            }
        }
    }
}
