//! Census of missing-data patterns across attributes.

use std::collections::BTreeMap;

use super::PvFleetSeries;

/// Presence/absence pattern counts over the series' attributes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingProfile {
    /// Attribute names, in the order the pattern bits use.
    pub attributes: Vec<String>,
    /// `(presence bits, count)`, sorted by descending count.
    pub patterns: Vec<(Vec<bool>, u64)>,
    total_cells: u64,
    power_missing: u64,
}

impl MissingProfile {
    pub fn power_missing_fraction(&self) -> f64 {
        self.power_missing as f64 / self.total_cells as f64
    }

    pub fn total_cells(&self) -> u64 {
        self.total_cells
    }

    /// Renders one `pattern: count` line per pattern, most frequent first.
    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("attributes: {}\n", self.attributes.join(", ")));
        for (bits, count) in &self.patterns {
            let marks: Vec<&str> = bits.iter().map(|&b| if b { "+" } else { "-" }).collect();
            out.push_str(&format!("[{}] {count}\n", marks.join("")));
        }
        out.push_str(&format!(
            "power missing: {}/{} cells ({:.3}%)\n",
            self.power_missing,
            self.total_cells,
            100.0 * self.power_missing_fraction()
        ));
        out
    }
}

/// Counts one presence/absence pattern per grid cell over whichever
/// attributes the series carries (power, plus aux channels when present),
/// sorted by descending frequency.
pub fn profile_missing_patterns(series: &PvFleetSeries) -> MissingProfile {
    let mut attributes = vec!["power".to_string()];
    if series.aux().is_some() {
        attributes.push("g_poa".to_string());
        attributes.push("t_module".to_string());
    }

    let mut counts: BTreeMap<Vec<bool>, u64> = BTreeMap::new();
    let mut power_missing = 0u64;
    for t in 0..series.n_steps() {
        for i in 0..series.n_inverters() {
            let mut bits = Vec::with_capacity(attributes.len());
            let has_power = series.is_observed(t, i);
            bits.push(has_power);
            if !has_power {
                power_missing += 1;
            }
            if let Some(aux) = series.aux() {
                let cell = series.cell(t, i);
                bits.push(aux.g_poa[cell].is_finite());
                bits.push(aux.t_module[cell].is_finite());
            }
            *counts.entry(bits).or_insert(0) += 1;
        }
    }

    let mut patterns: Vec<(Vec<bool>, u64)> = counts.into_iter().collect();
    // Descending by count; the BTreeMap order breaks ties deterministically.
    patterns.sort_by_key(|(_, count)| std::cmp::Reverse(*count));

    MissingProfile {
        attributes,
        patterns,
        total_cells: (series.n_steps() * series.n_inverters()) as u64,
        power_missing,
    }
}
