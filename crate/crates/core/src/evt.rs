//! Peaks-over-threshold modelling of reconstruction losses.
//!
//! The largest training losses are fitted with a generalized Pareto
//! distribution (GPD). A new instance is scored by the GPD probability of its
//! excess over the fitting threshold; a score at or above `z` marks it as
//! unknown. The global variant pools all training losses, the class-wise
//! variant keeps one tail per training class.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Excess magnitudes at or below this count as zero.
const NEGLIGIBLE: f64 = 1e-12;
const GRID_POINTS: usize = 200;
const BISECTION_STEPS: usize = 100;

/// Fitted tail: shape `xi`, scale `mu`, exceedance threshold `w`, and the
/// number of largest losses `tau` used for the fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GpdModel {
    pub xi: f64,
    pub mu: f64,
    pub w: f64,
    pub tau: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EvtMode {
    Global,
    Classwise,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RejectionPolicy {
    pub z: f64,
    pub mode: EvtMode,
}

impl RejectionPolicy {
    pub fn new(z: f64, mode: EvtMode) -> Result<Self> {
        if !(z > 0.0 && z < 1.0) {
            return Err(Error::invalid(format!(
                "threshold z must lie in (0, 1), got {z}"
            )));
        }
        Ok(RejectionPolicy { z, mode })
    }
}

impl Default for RejectionPolicy {
    fn default() -> Self {
        RejectionPolicy {
            z: 0.5,
            mode: EvtMode::Global,
        }
    }
}

/// Outcome of open-set classification for one instance. Known labels are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpenLabel {
    Known(u16),
    Unknown,
}

impl OpenLabel {
    /// Raster code: the class itself, or `num_classes + 1` for unknown.
    pub fn code(self, num_classes: u16) -> u16 {
        match self {
            OpenLabel::Known(c) => c,
            OpenLabel::Unknown => num_classes + 1,
        }
    }
}

/// Number of largest losses used for the tail fit.
///
/// Global: `round(nos·4·0.05·C)`, at least 20. Class-wise:
/// `round(nos·4·0.05)`, at least 2.
pub fn tail_size(nos: usize, num_classes: usize, mode: EvtMode) -> usize {
    let per_class = nos as f64 * 4.0 * 0.05;
    match mode {
        EvtMode::Global => ((per_class * num_classes as f64).round() as usize).max(20),
        EvtMode::Classwise => (per_class.round() as usize).max(2),
    }
}

/// Fits a GPD to the `tau` largest of `losses`.
///
/// The threshold `w` is the `(tau+1)`-th largest loss (the smallest loss when
/// `tau` equals the sample count). Shape and scale are the maximum-likelihood
/// estimates found by a profile search over `θ = −ξ/μ`; degenerate tails fall
/// back to the exponential member of the family.
pub fn fit_gpd(losses: &[f64], tau: usize) -> Result<GpdModel> {
    if tau < 2 {
        return Err(Error::invalid(format!(
            "tail size must be at least 2, got {tau}"
        )));
    }
    if losses.len() < tau {
        return Err(Error::invalid(format!(
            "tail size {tau} exceeds the {} available losses",
            losses.len()
        )));
    }
    if losses.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite loss in tail fit".into()));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let w = if tau == sorted.len() {
        sorted[tau - 1]
    } else {
        sorted[tau]
    };
    let excesses: Vec<f64> = sorted[..tau].iter().map(|v| (v - w).max(0.0)).collect();
    let (xi, mu) = fit_excesses(&excesses);
    Ok(GpdModel { xi, mu, w, tau })
}

/// Maximum-likelihood (ξ, μ) for nonnegative excesses.
fn fit_excesses(excesses: &[f64]) -> (f64, f64) {
    let n = excesses.len() as f64;
    let mean = excesses.iter().sum::<f64>() / n;
    let max = excesses.iter().copied().fold(0.0, f64::max);
    let exponential = (0.0, mean.max(NEGLIGIBLE));
    if max <= NEGLIGIBLE {
        return exponential;
    }
    let profile = Profile { excesses };
    let grid = theta_grid(excesses, mean, max);
    let scored: Vec<(f64, f64)> = grid
        .iter()
        .filter_map(|&theta| profile.log_lik(theta).map(|l| (theta, l)))
        .collect();
    let Some(best) = scored
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
    else {
        return exponential;
    };
    let mut theta = scored[best].0;
    let lo = if best > 0 { scored[best - 1].0 } else { theta };
    let hi = scored.get(best + 1).map_or(theta, |s| s.0);
    if let Some(refined) = profile.refine(lo, theta, hi) {
        theta = refined;
    }
    if theta == 0.0 {
        return exponential;
    }
    match profile.estimates(theta) {
        Some((xi, mu)) if mu.is_finite() && mu > 0.0 => (xi, mu.max(NEGLIGIBLE)),
        _ => exponential,
    }
}

/// Candidate θ values: log-spaced on both sides of zero, bounded below by a
/// Grimshaw-style bracket from the smallest positive excess and above by the
/// support limit `1/max`.
fn theta_grid(excesses: &[f64], mean: f64, max: f64) -> Vec<f64> {
    let min_pos = excesses
        .iter()
        .copied()
        .filter(|&e| e > NEGLIGIBLE)
        .fold(f64::INFINITY, f64::min);
    let mut reach = 2.0 * (mean - min_pos) / (min_pos * min_pos);
    if !reach.is_finite() {
        reach = 0.0;
    }
    // |θ|·mean spans [1e-4, reach·mean], clipped to a sane range.
    let reach = (reach * mean).clamp(10.0, 1e6);
    let half = GRID_POINTS / 2;
    let mut grid = Vec::with_capacity(GRID_POINTS + 1);
    for i in 0..half {
        let frac = i as f64 / (half - 1) as f64;
        let scaled = 10f64.powf(-4.0 + frac * (reach.log10() + 4.0));
        grid.push(-scaled / mean);
    }
    grid.push(0.0);
    for i in 0..half {
        // distance to the support limit, from 1 down to 1e-9
        let frac = i as f64 / (half - 1) as f64;
        let gap = 10f64.powf(-9.0 * frac);
        let theta = (1.0 - gap) / max;
        if theta > 0.0 {
            grid.push(theta);
        }
    }
    grid.push((1.0 - 1e-4) / max);
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

struct Profile<'a> {
    excesses: &'a [f64],
}

impl Profile<'_> {
    fn n(&self) -> f64 {
        self.excesses.len() as f64
    }

    /// Mean of `ln(1 − θ e)`, which is the ξ estimate at this θ.
    fn shape_at(&self, theta: f64) -> Option<f64> {
        let mut acc = 0.0;
        for &e in self.excesses {
            let arg = 1.0 - theta * e;
            if arg <= 0.0 {
                return None;
            }
            acc += (-theta * e).ln_1p();
        }
        Some(acc / self.n())
    }

    fn estimates(&self, theta: f64) -> Option<(f64, f64)> {
        let xi = self.shape_at(theta)?;
        Some((xi, -xi / theta))
    }

    /// Profile log-likelihood; None outside the support or where ξ < −1
    /// (the likelihood is unbounded there).
    fn log_lik(&self, theta: f64) -> Option<f64> {
        let n = self.n();
        if theta == 0.0 {
            let mean = self.excesses.iter().sum::<f64>() / n;
            return Some(-n * mean.ln() - n);
        }
        let (xi, mu) = self.estimates(theta)?;
        if xi < -1.0 || !(mu > 0.0) {
            return None;
        }
        let l = -n * mu.ln() - n * xi - n;
        l.is_finite().then_some(l)
    }

    fn slope(&self, theta: f64) -> Option<f64> {
        if theta == 0.0 {
            return None;
        }
        let s = self.shape_at(theta)?;
        let ds = -self
            .excesses
            .iter()
            .map(|&e| e / (1.0 - theta * e))
            .sum::<f64>()
            / self.n();
        let n = self.n();
        let d = -n * (ds / s - 1.0 / theta) - n * ds;
        d.is_finite().then_some(d)
    }

    /// Bisection on the sign of the profile slope around the best grid point.
    fn refine(&self, lo: f64, mid: f64, hi: f64) -> Option<f64> {
        let (mut a, mut b) = match self.slope(mid)? {
            d if d > 0.0 => (mid, hi),
            d if d < 0.0 => (lo, mid),
            _ => return Some(mid),
        };
        if a == b {
            return None;
        }
        let (sa, sb) = (self.slope(a)?, self.slope(b)?);
        if !(sa > 0.0 && sb < 0.0) {
            return None;
        }
        for _ in 0..BISECTION_STEPS {
            let m = 0.5 * (a + b);
            if m == a || m == b {
                break;
            }
            match self.slope(m) {
                Some(d) if d > 0.0 => a = m,
                Some(d) if d < 0.0 => b = m,
                Some(_) => return Some(m),
                None => break,
            }
        }
        let best = 0.5 * (a + b);
        let base = self.log_lik(mid)?;
        match self.log_lik(best) {
            Some(l) if l >= base => Some(best),
            _ => None,
        }
    }
}

/// GPD cumulative probability of an excess `e`.
pub fn gpd_cdf(model: &GpdModel, e: f64) -> f64 {
    if !(e > 0.0) {
        return 0.0;
    }
    let GpdModel { xi, mu, .. } = *model;
    if xi == 0.0 {
        return (1.0 - (-e / mu).exp()).clamp(0.0, 1.0);
    }
    if xi < 0.0 && e >= -mu / xi {
        return 1.0;
    }
    let base = xi * e / mu;
    let survival = (-(base.ln_1p()) / xi).exp();
    (1.0 - survival).clamp(0.0, 1.0)
}

/// 0 for losses at or below the threshold, else the GPD probability of the excess.
pub fn unknown_score(model: &GpdModel, v: f64) -> f64 {
    if v <= model.w {
        0.0
    } else {
        gpd_cdf(model, v - model.w)
    }
}

/// Keeps the closed-set label when `score < z`; rejects otherwise.
pub fn decide(closed_label: u16, score: f64, z: f64) -> OpenLabel {
    if score < z {
        OpenLabel::Known(closed_label)
    } else {
        OpenLabel::Unknown
    }
}

/// Top-1 softmax probability below `threshold` → unknown; ties pick the lowest class.
pub fn softmax_threshold_baseline(probs: &[f32], threshold: f32) -> OpenLabel {
    let (idx, &max) = probs
        .iter()
        .enumerate()
        .fold((0, &f32::NEG_INFINITY), |best, (i, p)| {
            if *p > *best.1 {
                (i, p)
            } else {
                best
            }
        });
    if max < threshold {
        OpenLabel::Unknown
    } else {
        OpenLabel::Known(idx as u16 + 1)
    }
}

/// Per-class tails plus the classes that had too few losses for one.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClasswiseGpd {
    pub models: BTreeMap<u16, GpdModel>,
    /// Classes scored with the global model instead.
    pub fallbacks: Vec<u16>,
}

impl ClasswiseGpd {
    pub fn model_for<'a>(&'a self, class: u16, global: &'a GpdModel) -> &'a GpdModel {
        self.models.get(&class).unwrap_or(global)
    }
}

/// Fits one tail per class `1..=num_classes` from losses keyed by true label.
///
/// Each class uses the class-wise tail size, capped at its loss count; a
/// class with fewer than two losses is recorded as a fallback.
pub fn fit_classwise(
    groups: &BTreeMap<u16, Vec<f64>>,
    nos: usize,
    num_classes: u16,
) -> Result<ClasswiseGpd> {
    let tau = tail_size(nos, 1, EvtMode::Classwise);
    let mut out = ClasswiseGpd::default();
    for class in 1..=num_classes {
        match groups.get(&class) {
            Some(losses) if losses.len() >= 2 => {
                let model = fit_gpd(losses, tau.min(losses.len()))?;
                out.models.insert(class, model);
            }
            _ => out.fallbacks.push(class),
        }
    }
    Ok(out)
}

/// The fitted models needed at prediction time.
#[derive(Clone, Debug, PartialEq)]
pub struct EvtModels {
    pub global: GpdModel,
    pub classwise: ClasswiseGpd,
}

impl EvtModels {
    pub fn model_for(&self, mode: EvtMode, class: u16) -> &GpdModel {
        match mode {
            EvtMode::Global => &self.global,
            EvtMode::Classwise => self.classwise.model_for(class, &self.global),
        }
    }

    pub fn score(&self, mode: EvtMode, closed_label: u16, loss: f64) -> f64 {
        unknown_score(self.model_for(mode, closed_label), loss)
    }

    /// Refits every model on new `(closed label, loss)` pairs, keeping each
    /// model's tail size (capped at the available count). Classes with fewer
    /// than two losses fall back to the refitted global model.
    pub fn refit(&self, losses: &[(u16, f64)]) -> Result<EvtModels> {
        let all: Vec<f64> = losses.iter().map(|p| p.1).collect();
        let global = fit_gpd(&all, self.global.tau.min(all.len()))?;
        let mut groups: BTreeMap<u16, Vec<f64>> = BTreeMap::new();
        for &(class, v) in losses {
            groups.entry(class).or_default().push(v);
        }
        let mut classwise = ClasswiseGpd::default();
        let classes = self
            .classwise
            .models
            .keys()
            .chain(&self.classwise.fallbacks);
        for &class in classes {
            let tau = self.classwise.model_for(class, &self.global).tau;
            match groups.get(&class) {
                Some(v) if v.len() >= 2 => {
                    classwise
                        .models
                        .insert(class, fit_gpd(v, tau.min(v.len()))?);
                }
                _ => classwise.fallbacks.push(class),
            }
        }
        classwise.fallbacks.sort_unstable();
        Ok(EvtModels { global, classwise })
    }

    /// One line per model: `global|<class> xi mu w tau`, 9 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        write_model_line(&mut s, "global", &self.global);
        for (class, m) in &self.classwise.models {
            write_model_line(&mut s, &class.to_string(), m);
        }
        s
    }

    /// Parses [`EvtModels::to_text`] output. Classes without a line fall back
    /// to the global model; `num_classes` lets those be listed.
    pub fn from_text(text: &str, num_classes: Option<u16>) -> Result<Self> {
        let mut global = None;
        let mut models = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = || Error::format(format!("gpd line {}: {line:?}", lineno + 1));
            if fields.len() != 5 {
                return Err(bad());
            }
            let num = |i: usize| fields[i].parse::<f64>().map_err(|_| bad());
            let model = GpdModel {
                xi: num(1)?,
                mu: num(2)?,
                w: num(3)?,
                tau: fields[4].parse().map_err(|_| bad())?,
            };
            if !(model.mu > 0.0) || !model.xi.is_finite() || !model.w.is_finite() {
                return Err(bad());
            }
            if fields[0] == "global" {
                global = Some(model);
            } else {
                let class: u16 = fields[0].parse().map_err(|_| bad())?;
                models.insert(class, model);
            }
        }
        let global = global.ok_or_else(|| Error::format("gpd file has no global model"))?;
        let fallbacks = num_classes
            .map(|c| (1..=c).filter(|k| !models.contains_key(k)).collect())
            .unwrap_or_default();
        Ok(EvtModels {
            global,
            classwise: ClasswiseGpd { models, fallbacks },
        })
    }
}

fn write_model_line(out: &mut String, id: &str, m: &GpdModel) {
    let _ = writeln!(out, "{id} {:.8e} {:.8e} {:.8e} {}", m.xi, m.mu, m.w, m.tau);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(xi: f64, mu: f64, w: f64) -> GpdModel {
        GpdModel { xi, mu, w, tau: 10 }
    }

    /// Inverse-CDF draws: e = μ((1−u)^(−ξ) − 1)/ξ, or −μ ln(1−u) for ξ = 0.
    fn gpd_samples(xi: f64, mu: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                if xi == 0.0 {
                    -mu * (1.0 - u).ln()
                } else {
                    mu * ((1.0 - u).powf(-xi) - 1.0) / xi
                }
            })
            .collect()
    }

    #[test]
    fn tail_size_rules() {
        assert_eq!(tail_size(20, 9, EvtMode::Global), 36);
        assert_eq!(tail_size(20, 3, EvtMode::Global), 20);
        assert_eq!(tail_size(200, 7, EvtMode::Classwise), 40);
        assert_eq!(tail_size(1, 1, EvtMode::Classwise), 2);
    }

    #[test]
    fn recovers_heavy_tail() {
        let data = gpd_samples(0.2, 1.0, 10_000, 1);
        let m = fit_gpd(&data, data.len()).unwrap();
        assert!((0.15..=0.25).contains(&m.xi), "xi {}", m.xi);
        assert!((0.95..=1.05).contains(&m.mu), "mu {}", m.mu);
    }

    #[test]
    fn recovers_exponential_tail() {
        let data = gpd_samples(0.0, 1.0, 10_000, 2);
        let m = fit_gpd(&data, data.len()).unwrap();
        assert!(m.xi.abs() <= 0.05, "xi {}", m.xi);
    }

    #[test]
    fn degenerate_tail_falls_back() {
        let m = fit_gpd(&[0.4; 30], 20).unwrap();
        assert_eq!(m.xi, 0.0);
        assert_eq!(m.mu, 1e-12);
        assert_eq!(m.w, 0.4);
    }

    #[test]
    fn threshold_is_next_largest() {
        let losses: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        let m = fit_gpd(&losses, 3).unwrap();
        assert_eq!(m.w, 7.0);
        assert_eq!(m.tau, 3);
        assert!(fit_gpd(&losses, 11).is_err());
        assert!(fit_gpd(&losses, 1).is_err());
    }

    #[test]
    fn cdf_closed_forms() {
        assert_eq!(gpd_cdf(&model(0.0, 2.0, 0.0), 0.0), 0.0);
        assert!((gpd_cdf(&model(0.0, 1.0, 0.0), 2f64.ln()) - 0.5).abs() < 1e-12);
        assert!((gpd_cdf(&model(0.5, 1.0, 0.0), 1.0) - 5.0 / 9.0).abs() < 1e-12);
        // bounded support for negative shape
        assert_eq!(gpd_cdf(&model(-0.5, 1.0, 0.0), 2.0), 1.0);
        assert_eq!(gpd_cdf(&model(-0.5, 1.0, 0.0), 3.0), 1.0);
    }

    #[test]
    fn score_examples() {
        let m = model(0.0, 1.0, 2.0);
        assert_eq!(unknown_score(&m, 2.0), 0.0);
        assert_eq!(unknown_score(&m, 1.0), 0.0);
        assert!((unknown_score(&m, 2.0 + 2f64.ln()) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn decide_examples() {
        assert_eq!(decide(3, 0.2, 0.5), OpenLabel::Known(3));
        assert_eq!(decide(3, 0.9, 0.5), OpenLabel::Unknown);
        assert_eq!(decide(3, 0.5, 0.5), OpenLabel::Unknown);
        assert_eq!(OpenLabel::Unknown.code(9), 10);
    }

    #[test]
    fn softmax_baseline_examples() {
        assert_eq!(
            softmax_threshold_baseline(&[0.6, 0.4], 0.5),
            OpenLabel::Known(1)
        );
        assert_eq!(
            softmax_threshold_baseline(&[0.45, 0.35, 0.2], 0.5),
            OpenLabel::Unknown
        );
        assert_eq!(
            softmax_threshold_baseline(&[1.0 / 3.0; 3], 0.5),
            OpenLabel::Unknown
        );
        assert_eq!(
            softmax_threshold_baseline(&[0.5, 0.5], 0.5),
            OpenLabel::Known(1)
        );
    }

    #[test]
    fn policy_validates_threshold() {
        assert!(RejectionPolicy::new(0.0, EvtMode::Global).is_err());
        assert!(RejectionPolicy::new(1.0, EvtMode::Global).is_err());
        assert!(RejectionPolicy::new(0.5, EvtMode::Classwise).is_ok());
    }

    #[test]
    fn classwise_thresholds_stay_in_class() {
        let mut groups = BTreeMap::new();
        groups.insert(
            1,
            (0..40).map(|i| 0.1 + i as f64 * 0.001).collect::<Vec<_>>(),
        );
        groups.insert(
            2,
            (0..40).map(|i| 5.0 + i as f64 * 0.01).collect::<Vec<_>>(),
        );
        let cw = fit_classwise(&groups, 10, 2).unwrap();
        assert!(cw.fallbacks.is_empty());
        for (class, losses) in &groups {
            let w = cw.models[class].w;
            let (lo, hi) = (losses[0], losses[losses.len() - 1]);
            assert!(w >= lo && w <= hi);
        }
    }

    #[test]
    fn single_class_matches_global_with_class_tau() {
        let losses: Vec<f64> = gpd_samples(0.1, 0.5, 80, 3);
        let mut groups = BTreeMap::new();
        groups.insert(1, losses.clone());
        let cw = fit_classwise(&groups, 20, 1).unwrap();
        let direct = fit_gpd(&losses, tail_size(20, 1, EvtMode::Classwise)).unwrap();
        assert_eq!(cw.models[&1], direct);
    }

    #[test]
    fn sparse_class_falls_back() {
        let mut groups = BTreeMap::new();
        groups.insert(1, vec![0.3]);
        groups.insert(2, vec![0.1, 0.2, 0.3, 0.4]);
        let cw = fit_classwise(&groups, 20, 3).unwrap();
        assert_eq!(cw.fallbacks, vec![1, 3]);
        let global = model(0.0, 1.0, 0.0);
        assert_eq!(cw.model_for(1, &global), &global);
        assert_ne!(cw.model_for(2, &global), &global);
    }

    #[test]
    fn refit_keeps_tail_sizes() {
        let mut models = BTreeMap::new();
        models.insert(1, model(0.0, 1.0, 0.0));
        let old = EvtModels {
            global: GpdModel {
                tau: 20,
                ..model(0.0, 1.0, 0.0)
            },
            classwise: ClasswiseGpd {
                models,
                fallbacks: vec![2],
            },
        };
        let losses: Vec<(u16, f64)> = gpd_samples(0.0, 2.0, 60, 5)
            .into_iter()
            .enumerate()
            .map(|(i, v)| (if i < 59 { 1 } else { 2 }, v))
            .collect();
        let new = old.refit(&losses).unwrap();
        assert_eq!(new.global.tau, 20);
        assert_eq!(new.classwise.models[&1].tau, 10);
        assert_eq!(new.classwise.fallbacks, vec![2]);
        let all: Vec<f64> = losses.iter().map(|p| p.1).collect();
        assert_eq!(new.global, fit_gpd(&all, 20).unwrap());
    }

    #[test]
    fn text_round_trip() {
        let mut classwise = ClasswiseGpd::default();
        classwise.models.insert(
            2,
            GpdModel {
                xi: -0.125,
                mu: 0.03,
                w: 0.2,
                tau: 4,
            },
        );
        let models = EvtModels {
            global: GpdModel {
                xi: 0.123456789,
                mu: 1.5,
                w: 0.25,
                tau: 36,
            },
            classwise,
        };
        let text = models.to_text();
        assert!(text.starts_with("global 1.23456789e-1 "));
        let back = EvtModels::from_text(&text, Some(3)).unwrap();
        assert_eq!(back.global.tau, 36);
        assert_eq!(back.classwise.fallbacks, vec![1, 3]);
        assert_eq!(back.to_text(), text);
        assert!(EvtModels::from_text("1 0 1 0 2\n", None).is_err());
    }
}
