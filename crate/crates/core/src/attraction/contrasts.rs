//! Condition contrasts with a paired bootstrap over items.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::measures::ItemMeasure;
use super::stimuli::Condition;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    RelAttn,
    Surprisal,
}

impl Measure {
    pub const ALL: [Measure; 2] = [Measure::RelAttn, Measure::Surprisal];

    fn of(self, m: &ItemMeasure) -> f64 {
        match self {
            Measure::RelAttn => m.rel_attn,
            Measure::Surprisal => m.surprisal,
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Measure::RelAttn => "rel_attn",
            Measure::Surprisal => "surprisal",
        })
    }
}

/// A signed combination of condition means.
#[derive(Clone, Debug, PartialEq)]
pub struct Contrast {
    pub name: &'static str,
    pub terms: &'static [(Condition, f64)],
}

pub const CONTRASTS: [Contrast; 7] = {
    use Condition::*;
    [
        Contrast { name: "A-B", terms: &[(A, 1.0), (B, -1.0)] },
        Contrast { name: "C-D", terms: &[(C, 1.0), (D, -1.0)] },
        Contrast { name: "(A-B)-(C-D)", terms: &[(A, 1.0), (B, -1.0), (C, -1.0), (D, 1.0)] },
        Contrast { name: "E-F", terms: &[(E, 1.0), (F, -1.0)] },
        Contrast { name: "E-H", terms: &[(E, 1.0), (H, -1.0)] },
        Contrast { name: "E-G", terms: &[(E, 1.0), (G, -1.0)] },
        Contrast { name: "(E-G)-(H-F)", terms: &[(E, 1.0), (G, -1.0), (H, -1.0), (F, 1.0)] },
    ]
};

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastResult {
    pub name: String,
    pub measure: Measure,
    pub alpha: f64,
    /// Mean of the item-matched differences, pooled over seeds.
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Bootstrap share of resampled means at or below zero, with add-one smoothing.
    pub p_positive: f64,
    /// Bootstrap share at or above zero, with add-one smoothing.
    pub p_negative: f64,
    pub items: usize,
    /// Number of (item, seed) differences.
    pub units: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContrastReport {
    pub results: Vec<ContrastResult>,
    /// Contrasts that could not be computed, with the reason.
    pub skipped: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub seed: u64,
    /// Two-sided coverage of the interval.
    pub level_percent: u32,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { resamples: 10_000, seed: 0, level_percent: 95 }
    }
}

/// Per-item lists of differences for one contrast, measure and alpha.
/// Keys are sorted so the result does not depend on input order.
fn differences(
    measures: &[ItemMeasure],
    contrast: &Contrast,
    measure: Measure,
    alpha: f64,
) -> BTreeMap<String, Vec<f64>> {
    let mut cells: BTreeMap<(String, u64), BTreeMap<Condition, f64>> = BTreeMap::new();
    for m in measures.iter().filter(|m| m.alpha.to_bits() == alpha.to_bits()) {
        cells.entry((m.item.clone(), m.seed)).or_default().insert(m.condition, measure.of(m));
    }
    let mut per_item: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for ((item, _), values) in cells {
        let mut d = 0.0;
        let mut complete = true;
        for &(c, w) in contrast.terms {
            match values.get(&c) {
                Some(v) if v.is_finite() => d += w * v,
                _ => complete = false,
            }
        }
        if complete {
            per_item.entry(item).or_default().push(d);
        }
    }
    per_item
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn bootstrap(per_item: &BTreeMap<String, Vec<f64>>, cfg: &BootstrapConfig, stream: u64) -> (f64, f64, f64, f64, f64) {
    let groups: Vec<(f64, usize)> = per_item.values().map(|ds| (ds.iter().sum(), ds.len())).collect();
    let (sum, n): (f64, usize) = groups.iter().fold((0.0, 0), |(s, c), g| (s + g.0, c + g.1));
    let estimate = sum / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let mut means = Vec::with_capacity(cfg.resamples);
    for _ in 0..cfg.resamples {
        let (mut s, mut c) = (0.0, 0usize);
        for _ in 0..groups.len() {
            let g = groups[rng.gen_range(0..groups.len())];
            s += g.0;
            c += g.1;
        }
        means.push(s / c as f64);
    }
    means.sort_by(f64::total_cmp);
    let tail = (1.0 - cfg.level_percent as f64 / 100.0) / 2.0;
    let low = quantile(&means, tail).min(estimate);
    let high = quantile(&means, 1.0 - tail).max(estimate);
    let below = means.iter().filter(|&&m| m <= 0.0).count();
    let above = means.iter().filter(|&&m| m >= 0.0).count();
    let r = cfg.resamples as f64;
    (estimate, low, high, (below as f64 + 1.0) / (r + 1.0), (above as f64 + 1.0) / (r + 1.0))
}

/// Every contrast in [`CONTRASTS`] for both measures and every alpha present.
/// Differences are taken within (item, seed); the bootstrap resamples items
/// and keeps each item's seeds together. Measures with no attention (NaN)
/// are left out of that contrast.
pub fn contrasts(measures: &[ItemMeasure], cfg: &BootstrapConfig) -> ContrastReport {
    let mut alphas: Vec<f64> = measures.iter().map(|m| m.alpha).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup_by(|a, b| a.to_bits() == b.to_bits());
    let mut report = ContrastReport { results: Vec::new(), skipped: Vec::new() };
    for &alpha in &alphas {
        for (mi, measure) in Measure::ALL.into_iter().enumerate() {
            for (ci, contrast) in CONTRASTS.iter().enumerate() {
                let per_item = differences(measures, contrast, measure, alpha);
                if per_item.is_empty() {
                    report.skipped.push(format!("{} {measure} alpha={alpha}: no item has every condition", contrast.name));
                    continue;
                }
                let stream = (mi * CONTRASTS.len() + ci) as u64;
                let (estimate, ci_low, ci_high, p_positive, p_negative) = bootstrap(&per_item, cfg, stream);
                report.results.push(ContrastResult {
                    name: contrast.name.to_string(),
                    measure,
                    alpha,
                    estimate,
                    ci_low,
                    ci_high,
                    p_positive,
                    p_negative,
                    items: per_item.len(),
                    units: per_item.values().map(Vec::len).sum(),
                });
            }
        }
    }
    report
}

/// Tab-separated report, one line per result.
pub fn format_report(report: &ContrastReport) -> String {
    let mut s = String::from("contrast\tmeasure\talpha\testimate\tci_low\tci_high\tp_positive\tp_negative\titems\tunits\n");
    for r in &report.results {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.name, r.measure, r.alpha, r.estimate, r.ci_low, r.ci_high, r.p_positive, r.p_negative, r.items, r.units
        ));
    }
    for k in &report.skipped {
        s.push_str(&format!("# skipped: {k}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(item: usize, seed: u64, c: Condition, rel: f64) -> ItemMeasure {
        ItemMeasure {
            item: item.to_string(),
            condition: c,
            seed,
            alpha: 1.0,
            rel_attn: rel,
            surprisal: 2.0,
            attn_subj: f64::NAN,
            attn_nonsubj: f64::NAN,
        }
    }

    fn quick() -> BootstrapConfig {
        BootstrapConfig { resamples: 500, ..BootstrapConfig::default() }
    }

    #[test]
    fn constant_measures_give_zero_contrasts() {
        let ms: Vec<ItemMeasure> =
            (0..5).flat_map(|i| Condition::ALL.into_iter().map(move |c| m(i, 1, c, 0.4))).collect();
        let report = contrasts(&ms, &quick());
        assert_eq!(report.results.len(), 14);
        assert!(report.skipped.is_empty());
        for r in &report.results {
            assert_eq!((r.estimate, r.ci_low, r.ci_high), (0.0, 0.0, 0.0), "{}", r.name);
        }
    }

    #[test]
    fn missing_conditions_are_reported() {
        let ms = vec![m(1, 1, Condition::A, 0.5), m(1, 1, Condition::B, 0.4)];
        let report = contrasts(&ms, &quick());
        assert_eq!(report.results.len(), 2);
        assert_eq!(report.skipped.len(), 12);
        let ab = &report.results[0];
        assert_eq!(ab.name, "A-B");
        assert!((ab.estimate - 0.1).abs() < 1e-15);
    }

    #[test]
    fn bootstrap_is_seed_deterministic() {
        let ms: Vec<ItemMeasure> = (0..20)
            .flat_map(|i| [m(i, 1, Condition::A, 0.5 + 0.01 * i as f64), m(i, 1, Condition::B, 0.45)])
            .collect();
        let a = contrasts(&ms, &quick());
        let mut reversed = ms.clone();
        reversed.reverse();
        assert_eq!(a, contrasts(&reversed, &quick()));
        let other = contrasts(&ms, &BootstrapConfig { seed: 9, ..quick() });
        assert_ne!(a.results[0].ci_low, other.results[0].ci_low);
    }
}
