//! Domain-knowledge-validated data augmentation.
//!
//! Augmentation fills the naturally missing entries with a library imputer
//! so training sees a complete target, then passes every filled value through
//! a physics validator. The validator predicts power from irradiance and
//! module temperature,
//!
//! ```text
//! P = (G_POA / 1000) · P_norm / (1 + γ_T (T_module − 25)),
//! ```
//!
//! and clamps candidates into a tolerance band around that prediction. The
//! prediction ignores second-order effects (low light, clipping, shading,
//! degradation), hence a band rather than an equality. Without weather
//! channels only the static bounds `[0, nameplate]` apply.

use super::{PhysicsParams, PvFleetSeries, Scaling};
use crate::baselines::{impute_knn, impute_li, impute_mice};
use crate::Result;

/// Library imputers admissible for augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentImputer {
    Li,
    /// Default: nearest neighbours introduce the fewest physics violations.
    #[default]
    Knn,
    Mice,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidatorOptions {
    /// Apply the physics validator at all (domain-knowledge switch).
    pub enabled: bool,
    /// Symmetric tolerance band around the predicted power.
    pub band: f64,
    /// Use the multiplicative temperature correction instead of the
    /// divisive form above.
    pub multiplicative_form: bool,
}

impl Default for ValidatorOptions {
    fn default() -> Self {
        ValidatorOptions {
            enabled: true,
            band: 0.25,
            multiplicative_form: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentOptions {
    pub imputer: AugmentImputer,
    pub knn_k: usize,
    pub mice_iterations: usize,
    pub validator: ValidatorOptions,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            imputer: AugmentImputer::Knn,
            knn_k: 5,
            mice_iterations: 3,
            validator: ValidatorOptions::default(),
        }
    }
}

/// What the validator did to a candidate value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidationOutcome {
    Accepted,
    Clamped,
    /// The temperature correction denominator was non-positive; only the
    /// static bounds were applied.
    SkippedNonPhysical,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validated {
    pub value: f64,
    pub outcome: ValidationOutcome,
}

/// Clamps a candidate normalized power into its physically admissible range.
pub fn validate_value(
    candidate_normalized: f64,
    aux: Option<(f64, f64)>,
    physics: &PhysicsParams,
    scaling: &Scaling,
    options: &ValidatorOptions,
) -> Result<Validated> {
    physics.validate()?;
    let static_upper = scaling.normalize(physics.p_nameplate);
    let static_lower = scaling.normalize(0.0).max(0.0);

    let clamp_to = |lower: f64, upper: f64, outcome_ok: ValidationOutcome| {
        let v = candidate_normalized.clamp(lower, upper);
        Validated {
            value: v,
            outcome: if v == candidate_normalized {
                outcome_ok
            } else {
                ValidationOutcome::Clamped
            },
        }
    };

    let Some((g_poa, t_module)) = aux.filter(|(g, t)| g.is_finite() && t.is_finite()) else {
        return Ok(clamp_to(
            static_lower,
            static_upper,
            ValidationOutcome::Accepted,
        ));
    };

    let temp_term = 1.0 + physics.gamma_t * (t_module - 25.0);
    if temp_term <= 0.0 {
        let v = candidate_normalized.clamp(static_lower, static_upper);
        return Ok(Validated {
            value: v,
            outcome: ValidationOutcome::SkippedNonPhysical,
        });
    }

    let predicted_watts = if options.multiplicative_form {
        (g_poa / 1000.0) * physics.p_norm * temp_term
    } else {
        (g_poa / 1000.0) * physics.p_norm / temp_term
    };
    let lower_watts = ((1.0 - options.band) * predicted_watts).max(0.0);
    let upper_watts = (1.0 + options.band) * predicted_watts;
    let lower = scaling.normalize(lower_watts).max(static_lower);
    let upper = scaling.normalize(upper_watts).min(static_upper);
    Ok(clamp_to(
        lower,
        upper.max(lower),
        ValidationOutcome::Accepted,
    ))
}

/// An augmented series: every cell observed, with a record of which cells
/// were filled (and how the validator treated them).
#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub series: PvFleetSeries,
    /// `T × n`, true where augmentation supplied the value.
    pub filled: Vec<bool>,
    pub clamped_count: usize,
    pub skipped_count: usize,
}

/// Produces the augmented dataset `D_A`: library-imputed, then validated.
///
/// Observed entries are untouched; the returned mask marks exactly the
/// filled cells.
pub fn augment(series: &PvFleetSeries, options: &AugmentOptions) -> Result<Augmented> {
    let candidate = match options.imputer {
        AugmentImputer::Li => impute_li(series)?,
        AugmentImputer::Knn => impute_knn(series, options.knn_k)?,
        AugmentImputer::Mice => impute_mice(series, options.mice_iterations)?,
    };

    let mut out = series.clone();
    let mut filled = vec![false; series.n_steps() * series.n_inverters()];
    let mut clamped_count = 0;
    let mut skipped_count = 0;
    for t in 0..series.n_steps() {
        for i in 0..series.n_inverters() {
            if series.is_observed(t, i) {
                continue;
            }
            let cell = series.cell(t, i);
            filled[cell] = true;
            let raw_candidate = candidate.value(t, i);
            let value = if options.validator.enabled {
                let aux = series
                    .aux()
                    .map(|aux| (aux.g_poa[cell], aux.t_module[cell]));
                let validated = validate_value(
                    raw_candidate,
                    aux,
                    &series.physics()[i],
                    &series.scaling()[i],
                    &options.validator,
                )?;
                match validated.outcome {
                    ValidationOutcome::Clamped => clamped_count += 1,
                    ValidationOutcome::SkippedNonPhysical => skipped_count += 1,
                    ValidationOutcome::Accepted => {}
                }
                validated.value
            } else {
                raw_candidate
            };
            out.set_cell(t, i, value, true);
        }
    }
    Ok(Augmented {
        series: out,
        filled,
        clamped_count,
        skipped_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::series_with_gaps;

    fn physics() -> PhysicsParams {
        PhysicsParams {
            p_nameplate: 100.0,
            p_norm: 95.0,
            gamma_t: -0.004,
        }
    }

    #[test]
    fn standard_conditions_predict_p_norm() {
        // G = 1000 W/m², T = 25 °C: both factors are 1, so P = P_norm and a
        // candidate equal to P_norm passes untouched.
        let scaling = Scaling::identity();
        let validated = validate_value(
            95.0,
            Some((1000.0, 25.0)),
            &physics(),
            &scaling,
            &ValidatorOptions::default(),
        )
        .unwrap();
        assert_eq!(validated.outcome, ValidationOutcome::Accepted);
        assert_eq!(validated.value, 95.0);
    }

    #[test]
    fn divisive_temperature_form_is_used_verbatim() {
        // γ = −0.004, T = 35, G = 1000, P_norm = 100 → P = 100/0.96.
        let p = PhysicsParams {
            p_nameplate: 120.0,
            p_norm: 100.0,
            gamma_t: -0.004,
        };
        let expected = 100.0 / 0.96;
        // Band 0: candidate clamps exactly onto the prediction.
        let opts = ValidatorOptions {
            band: 0.0,
            ..ValidatorOptions::default()
        };
        let validated =
            validate_value(50.0, Some((1000.0, 35.0)), &p, &Scaling::identity(), &opts).unwrap();
        assert_eq!(validated.outcome, ValidationOutcome::Clamped);
        assert!((validated.value - expected).abs() < 1e-12);
        assert!((expected - 104.16666666666667).abs() < 1e-10);
    }

    #[test]
    fn multiplicative_variant_flips_the_correction() {
        let p = PhysicsParams {
            p_nameplate: 120.0,
            p_norm: 100.0,
            gamma_t: -0.004,
        };
        let opts = ValidatorOptions {
            band: 0.0,
            multiplicative_form: true,
            ..ValidatorOptions::default()
        };
        let validated =
            validate_value(50.0, Some((1000.0, 35.0)), &p, &Scaling::identity(), &opts).unwrap();
        assert!((validated.value - 96.0).abs() < 1e-12);
    }

    #[test]
    fn missing_weather_applies_static_bounds_only() {
        let validated = validate_value(
            150.0,
            None,
            &physics(),
            &Scaling::identity(),
            &ValidatorOptions::default(),
        )
        .unwrap();
        // Clamped to nameplate.
        assert_eq!(validated.value, 100.0);
        assert_eq!(validated.outcome, ValidationOutcome::Clamped);

        let negative = validate_value(
            -3.0,
            None,
            &physics(),
            &Scaling::identity(),
            &ValidatorOptions::default(),
        )
        .unwrap();
        assert_eq!(negative.value, 0.0);
    }

    #[test]
    fn non_physical_denominator_skips_validation() {
        // γ = −0.01 and T = 130 °C drive 1 + γ(T−25) below zero.
        let p = PhysicsParams {
            p_nameplate: 100.0,
            p_norm: 90.0,
            gamma_t: -0.01,
        };
        let validated = validate_value(
            0.5,
            Some((800.0, 130.0)),
            &p,
            &Scaling::identity(),
            &ValidatorOptions::default(),
        )
        .unwrap();
        assert_eq!(validated.outcome, ValidationOutcome::SkippedNonPhysical);
        assert_eq!(validated.value, 0.5);
    }

    #[test]
    fn no_missing_data_is_identity_with_empty_mask() {
        let series = series_with_gaps(vec![vec![Some(0.2), Some(0.4)], vec![Some(0.3), Some(0.5)]]);
        let augmented = augment(&series, &AugmentOptions::default()).unwrap();
        assert_eq!(augmented.series, series);
        assert!(augmented.filled.iter().all(|&f| !f));
    }

    #[test]
    fn linear_midpoint_before_validation() {
        let series = series_with_gaps(vec![vec![Some(0.4), None, Some(0.6)]]);
        let options = AugmentOptions {
            imputer: AugmentImputer::Li,
            ..AugmentOptions::default()
        };
        let augmented = augment(&series, &options).unwrap();
        assert!((augmented.series.value(1, 0) - 0.5).abs() < 1e-15);
        assert!(augmented.filled[series.cell(1, 0)]);
    }

    #[test]
    fn observed_entries_survive_augmentation_bit_exactly() {
        let cols: Vec<Vec<Option<f64>>> = (0..3)
            .map(|i| {
                (0..24)
                    .map(|t| {
                        if (t + i) % 6 == 2 {
                            None
                        } else {
                            Some(((t * 7 + i * 3) % 11) as f64 / 11.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let series = series_with_gaps(cols);
        let augmented = augment(&series, &AugmentOptions::default()).unwrap();
        assert!(augmented.series.is_fully_observed());
        for t in 0..series.n_steps() {
            for i in 0..series.n_inverters() {
                if series.is_observed(t, i) {
                    assert_eq!(
                        augmented.series.value(t, i).to_bits(),
                        series.value(t, i).to_bits()
                    );
                    assert!(!augmented.filled[series.cell(t, i)]);
                }
            }
        }
    }

    #[test]
    fn validator_sweep_leaves_zero_violations() {
        // Synthetic fleet with consistent weather channels: corrupt, then
        // augment; every filled value must sit inside its admissible band.
        use crate::data::{corrupt, generate_synthetic_fleet, CorruptionConfig, SynthConfig};
        let fleet = generate_synthetic_fleet(&SynthConfig {
            n_sites: 2,
            inverters_per_site: 3,
            n_days: 3,
            ..SynthConfig::default()
        })
        .unwrap();
        let (corrupted, _) = corrupt(&fleet, &CorruptionConfig::mcar(0.3, 5)).unwrap();
        let options = AugmentOptions::default();
        let augmented = augment(&corrupted, &options).unwrap();
        for t in 0..fleet.n_steps() {
            for i in 0..fleet.n_inverters() {
                let cell = fleet.cell(t, i);
                if !augmented.filled[cell] {
                    continue;
                }
                let aux = corrupted.aux().map(|a| (a.g_poa[cell], a.t_module[cell]));
                let v = augmented.series.value(t, i);
                let again = validate_value(
                    v,
                    aux,
                    &corrupted.physics()[i],
                    &corrupted.scaling()[i],
                    &options.validator,
                )
                .unwrap();
                assert_eq!(
                    again.value, v,
                    "cell ({t}, {i}) violates its admissible range after clamping"
                );
            }
        }
    }
}
