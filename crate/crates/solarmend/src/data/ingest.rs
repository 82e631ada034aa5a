//! CSV ingestion onto the regular 5-minute grid, and the matching export.
//!
//! Data files carry `timestamp,inverter_id,power[,g_poa,t_module]` rows with
//! ISO-8601 UTC timestamps; metadata files carry one
//! `inverter_id,site_id,lon,lat,p_nameplate,p_norm,gamma_t` row per inverter.
//! Grid positions with no row become unobserved cells, and the grid is padded
//! to whole days so downstream windowing always sees full daily slices.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, SecondsFormat, TimeZone, Utc};

use super::{AuxChannels, PhysicsParams, PvFleetSeries, Scaling, STEPS_PER_DAY, STEP_SECONDS};
use crate::{Error, Result};

const SECONDS_PER_DAY: i64 = STEP_SECONDS * STEPS_PER_DAY as i64;

/// Unit of the `power` column in the data file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerUnit {
    /// Raw watts; ingestion computes per-inverter normalization factors.
    #[default]
    RawWatts,
    /// Already normalized to the unit range; scaling is the identity.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    pub power_unit: PowerUnit,
    /// Fraction of leading days whose observations set the normalization,
    /// so later validation/test days cannot leak into the factors.
    pub train_fraction: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            power_unit: PowerUnit::RawWatts,
            train_fraction: 2.0 / 3.0,
        }
    }
}

#[derive(Debug, serde::Deserialize)]
struct MetadataRow {
    inverter_id: String,
    site_id: String,
    lon: f64,
    lat: f64,
    p_nameplate: f64,
    p_norm: f64,
    gamma_t: f64,
}

pub(crate) fn parse_timestamp(text: &str) -> Result<i64> {
    DateTime::parse_from_rfc3339(text.trim())
        .map(|dt| dt.timestamp())
        .map_err(|e| Error::Ingest(format!("bad timestamp {text:?}: {e}")))
}

pub(crate) fn format_timestamp(epoch: i64) -> String {
    Utc.timestamp_opt(epoch, 0)
        .single()
        .expect("grid timestamps are valid")
        .to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Snaps an epoch second onto the 300 s grid, tolerating 1 s of skew.
fn snap_to_grid(ts: i64) -> Result<i64> {
    let rem = ts.rem_euclid(STEP_SECONDS);
    match rem {
        0 => Ok(ts),
        1 => Ok(ts - 1),
        r if r == STEP_SECONDS - 1 => Ok(ts + 1),
        _ => Err(Error::Ingest(format!(
            "timestamp {} is {}s off the 5-minute grid",
            format_timestamp(ts),
            rem.min(STEP_SECONDS - rem)
        ))),
    }
}

/// Reads a fleet data file and its metadata into a [`PvFleetSeries`].
///
/// The grid spans whole UTC days covering every row; rows must land within
/// 1 s of a grid point, reference a known inverter, and not collide.
pub fn ingest_csv(
    data_path: &Path,
    metadata_path: &Path,
    options: IngestOptions,
) -> Result<PvFleetSeries> {
    let mut meta_reader = csv::Reader::from_path(metadata_path)?;
    let mut inverter_ids = Vec::new();
    let mut site_ids = Vec::new();
    let mut locations = Vec::new();
    let mut physics = Vec::new();
    for row in meta_reader.deserialize() {
        let row: MetadataRow = row?;
        inverter_ids.push(row.inverter_id);
        site_ids.push(row.site_id);
        locations.push((row.lon, row.lat));
        let p = PhysicsParams {
            p_nameplate: row.p_nameplate,
            p_norm: row.p_norm,
            gamma_t: row.gamma_t,
        };
        p.validate().map_err(|e| {
            Error::Ingest(format!(
                "metadata for {}: {e}",
                inverter_ids.last().expect("just pushed")
            ))
        })?;
        physics.push(p);
    }
    if inverter_ids.is_empty() {
        return Err(Error::Ingest("metadata file lists no inverters".into()));
    }
    let n = inverter_ids.len();
    let index: HashMap<&str, usize> = inverter_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut reader = csv::Reader::from_path(data_path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let ts_col = col("timestamp")
        .ok_or_else(|| Error::Ingest("data file has no `timestamp` column".into()))?;
    let id_col = col("inverter_id")
        .ok_or_else(|| Error::Ingest("data file has no `inverter_id` column".into()))?;
    let power_col =
        col("power").ok_or_else(|| Error::Ingest("data file has no `power` column".into()))?;
    let g_col = col("g_poa");
    let t_col = col("t_module");
    let has_aux = g_col.is_some() || t_col.is_some();

    struct Row {
        ts: i64,
        inverter: usize,
        power: Option<f64>,
        g_poa: f64,
        t_module: f64,
    }
    let parse_opt = |record: &csv::StringRecord, idx: Option<usize>| -> Result<f64> {
        let Some(idx) = idx else { return Ok(f64::NAN) };
        let text = record.get(idx).unwrap_or("").trim();
        if text.is_empty() {
            return Ok(f64::NAN);
        }
        text.parse::<f64>()
            .map_err(|e| Error::Ingest(format!("bad number {text:?}: {e}")))
    };

    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = line + 2; // header is line 1
        let ts = snap_to_grid(parse_timestamp(record.get(ts_col).unwrap_or(""))?)
            .map_err(|e| Error::Ingest(format!("row {row_no}: {e}")))?;
        let id = record.get(id_col).unwrap_or("").trim();
        let inverter = *index
            .get(id)
            .ok_or_else(|| Error::Ingest(format!("row {row_no}: unknown inverter {id:?}")))?;
        let power_text = record.get(power_col).unwrap_or("").trim();
        let power = if power_text.is_empty() {
            None
        } else {
            let p: f64 = power_text
                .parse()
                .map_err(|e| Error::Ingest(format!("row {row_no}: bad power: {e}")))?;
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::Ingest(format!(
                    "row {row_no}: power must be finite and non-negative, got {p}"
                )));
            }
            Some(p)
        };
        rows.push(Row {
            ts,
            inverter,
            power,
            g_poa: parse_opt(&record, g_col)?,
            t_module: parse_opt(&record, t_col)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Ingest("data file has no rows".into()));
    }

    // Whole-day grid covering every row.
    let min_ts = rows.iter().map(|r| r.ts).min().expect("non-empty");
    let max_ts = rows.iter().map(|r| r.ts).max().expect("non-empty");
    let grid_start = min_ts - min_ts.rem_euclid(SECONDS_PER_DAY);
    let grid_end = max_ts - max_ts.rem_euclid(SECONDS_PER_DAY) + SECONDS_PER_DAY;
    let steps = ((grid_end - grid_start) / STEP_SECONDS) as usize;
    let timestamps: Vec<i64> = (0..steps)
        .map(|s| grid_start + s as i64 * STEP_SECONDS)
        .collect();

    let cells = steps * n;
    let mut raw = vec![f64::NAN; cells];
    let mut observed = vec![false; cells];
    let mut seen = vec![false; cells];
    let mut aux = if has_aux {
        Some(AuxChannels {
            g_poa: vec![f64::NAN; cells],
            t_module: vec![f64::NAN; cells],
        })
    } else {
        None
    };
    for row in &rows {
        let step = ((row.ts - grid_start) / STEP_SECONDS) as usize;
        let cell = step * n + row.inverter;
        if seen[cell] {
            return Err(Error::Ingest(format!(
                "duplicate row for {} at {}",
                inverter_ids[row.inverter],
                format_timestamp(row.ts)
            )));
        }
        seen[cell] = true;
        if let Some(p) = row.power {
            raw[cell] = p;
            observed[cell] = true;
        }
        if let Some(aux) = aux.as_mut() {
            aux.g_poa[cell] = row.g_poa;
            aux.t_module[cell] = row.t_module;
        }
    }

    // Normalization factors from the leading training days only. The lower
    // bound is pinned to the physical floor of 0 W so that later days can
    // never normalize to a negative value.
    let scaling: Vec<Scaling> = match options.power_unit {
        PowerUnit::Normalized => vec![Scaling::identity(); n],
        PowerUnit::RawWatts => {
            let days = steps / STEPS_PER_DAY;
            let train_days =
                ((days as f64 * options.train_fraction).floor() as usize).clamp(1, days);
            let train_steps = train_days * STEPS_PER_DAY;
            (0..n)
                .map(|i| {
                    let over = |limit: usize| {
                        (0..limit)
                            .filter(|&t| observed[t * n + i])
                            .map(|t| raw[t * n + i])
                            .fold(f64::NEG_INFINITY, f64::max)
                    };
                    let mut max = over(train_steps);
                    if !max.is_finite() {
                        max = over(steps);
                    }
                    Scaling {
                        offset: 0.0,
                        scale: if max.is_finite() && max > 0.0 {
                            max
                        } else {
                            1.0
                        },
                    }
                })
                .collect()
        }
    };

    let values: Vec<f64> = raw
        .iter()
        .zip(&observed)
        .enumerate()
        .map(|(cell, (&r, &obs))| {
            if obs {
                scaling[cell % n].normalize(r)
            } else {
                0.0
            }
        })
        .collect();

    PvFleetSeries::from_parts(
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
    )
}

/// Writes the observed cells of a series in the ingestion schema.
///
/// Values are the stored raw watts, printed with Rust's shortest
/// round-trip float formatting, so re-ingesting reproduces them bit-exactly.
pub fn export_csv(series: &PvFleetSeries, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let has_aux = series.aux().is_some();
    if has_aux {
        writer.write_record(["timestamp", "inverter_id", "power", "g_poa", "t_module"])?;
    } else {
        writer.write_record(["timestamp", "inverter_id", "power"])?;
    }
    let fmt_opt = |v: f64| {
        if v.is_finite() {
            v.to_string()
        } else {
            String::new()
        }
    };
    for t in 0..series.n_steps() {
        for i in 0..series.n_inverters() {
            let has_power = series.is_observed(t, i);
            let aux_present = series.aux().is_some_and(|aux| {
                let cell = series.cell(t, i);
                aux.g_poa[cell].is_finite() || aux.t_module[cell].is_finite()
            });
            if !has_power && !aux_present {
                continue;
            }
            let ts = format_timestamp(series.timestamps()[t]);
            let power = if has_power {
                series.raw_value(t, i).to_string()
            } else {
                String::new()
            };
            if has_aux {
                let cell = series.cell(t, i);
                let aux = series.aux().expect("checked");
                writer.write_record([
                    ts,
                    series.inverter_ids()[i].clone(),
                    power,
                    fmt_opt(aux.g_poa[cell]),
                    fmt_opt(aux.t_module[cell]),
                ])?;
            } else {
                writer.write_record([ts, series.inverter_ids()[i].clone(), power])?;
            }
        }
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_file(dir: &Path, name: &str, contents: &str) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        path
    }

    fn metadata_two() -> &'static str {
        "inverter_id,site_id,lon,lat,p_nameplate,p_norm,gamma_t\n\
         inv_a,site1,-79.5,43.7,100,95,-0.004\n\
         inv_b,site1,-79.5,43.7,100,95,-0.004\n"
    }

    #[test]
    fn grid_is_padded_to_whole_days() {
        let dir = tempfile::tempdir().unwrap();
        let data = write_file(
            dir.path(),
            "data.csv",
            "timestamp,inverter_id,power\n\
             2015-09-01T10:00:00Z,inv_a,50\n\
             2015-09-01T10:05:00Z,inv_a,60\n\
             2015-09-01T10:00:00Z,inv_b,40\n",
        );
        let meta = write_file(dir.path(), "meta.csv", metadata_two());
        let series = ingest_csv(&data, &meta, IngestOptions::default()).unwrap();
        assert_eq!(series.n_steps(), STEPS_PER_DAY);
        assert_eq!(series.n_inverters(), 2);
        // 10:00 UTC is step 120.
        assert!(series.is_observed(120, 0));
        assert!(series.is_observed(121, 0));
        assert!(!series.is_observed(0, 0));
        assert_eq!(series.raw_value(120, 0), 50.0);
        // Max of inv_a's observations is 60 → normalized 50/60.
        assert!((series.value(120, 0) - 50.0 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn one_second_skew_snaps_onto_grid() {
        let dir = tempfile::tempdir().unwrap();
        let data = write_file(
            dir.path(),
            "data.csv",
            "timestamp,inverter_id,power\n\
             2015-09-01T10:00:01Z,inv_a,50\n\
             2015-09-01T10:04:59Z,inv_b,40\n",
        );
        let meta = write_file(dir.path(), "meta.csv", metadata_two());
        let series = ingest_csv(&data, &meta, IngestOptions::default()).unwrap();
        assert!(series.is_observed(120, 0));
        assert!(series.is_observed(121, 1));
    }

    #[test]
    fn off_grid_duplicate_and_unknown_rows_error() {
        let dir = tempfile::tempdir().unwrap();
        let meta = write_file(dir.path(), "meta.csv", metadata_two());

        let off_grid = write_file(
            dir.path(),
            "off.csv",
            "timestamp,inverter_id,power\n2015-09-01T10:00:02Z,inv_a,5\n",
        );
        assert!(ingest_csv(&off_grid, &meta, IngestOptions::default()).is_err());

        let duplicate = write_file(
            dir.path(),
            "dup.csv",
            "timestamp,inverter_id,power\n\
             2015-09-01T10:00:00Z,inv_a,5\n\
             2015-09-01T10:00:00Z,inv_a,6\n",
        );
        assert!(ingest_csv(&duplicate, &meta, IngestOptions::default()).is_err());

        let unknown = write_file(
            dir.path(),
            "unk.csv",
            "timestamp,inverter_id,power\n2015-09-01T10:00:00Z,inv_zz,5\n",
        );
        assert!(ingest_csv(&unknown, &meta, IngestOptions::default()).is_err());
    }

    #[test]
    fn fully_populated_file_has_no_missing_cells() {
        let dir = tempfile::tempdir().unwrap();
        let mut rows = String::from("timestamp,inverter_id,power\n");
        for s in 0..STEPS_PER_DAY {
            let h = s / 12;
            let m = (s % 12) * 5;
            for id in ["inv_a", "inv_b"] {
                rows.push_str(&format!("2015-09-01T{h:02}:{m:02}:00Z,{id},{}\n", s % 50));
            }
        }
        let data = write_file(dir.path(), "data.csv", &rows);
        let meta = write_file(dir.path(), "meta.csv", metadata_two());
        let series = ingest_csv(&data, &meta, IngestOptions::default()).unwrap();
        assert!(series.is_fully_observed());
        assert_eq!(series.n_steps(), STEPS_PER_DAY);
    }

    #[test]
    fn export_round_trips_observed_raw_values_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let data = write_file(
            dir.path(),
            "data.csv",
            "timestamp,inverter_id,power\n\
             2015-09-01T00:00:00Z,inv_a,0.1\n\
             2015-09-01T00:05:00Z,inv_a,33.333333333333336\n\
             2015-09-01T00:10:00Z,inv_a,17.65432109876543\n\
             2015-09-01T00:00:00Z,inv_b,12.000000000000002\n",
        );
        let meta = write_file(dir.path(), "meta.csv", metadata_two());
        let series = ingest_csv(&data, &meta, IngestOptions::default()).unwrap();

        let exported = dir.path().join("exported.csv");
        export_csv(&series, &exported).unwrap();
        let reread = ingest_csv(&exported, &meta, IngestOptions::default()).unwrap();

        for t in 0..series.n_steps() {
            for i in 0..series.n_inverters() {
                assert_eq!(series.is_observed(t, i), reread.is_observed(t, i));
                if series.is_observed(t, i) {
                    // Bit-exact after the denormalized write and re-read.
                    assert_eq!(
                        series.raw_value(t, i).to_bits(),
                        reread.raw_value(t, i).to_bits()
                    );
                }
            }
        }
    }
}
