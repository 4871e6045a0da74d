//! Tissue channel gain, transmit-power bounds and node lifetime.
//!
//! The default gain model is a log-distance power law per propagation path,
//! `g(Λ) = g₀ · (Λ₀ / Λ)ⁿ`, with an extra per-centimetre depth factor on the
//! muscle-to-skin path. Its parameters are fitted to two-point transmit-power
//! measurements (see [`fit_power_law`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NodeSpec, ScenarioConfig, Tissue};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("degenerate link: length {0} cm")]
    DegenerateLink(f64),
    #[error("unreachable gain {0}")]
    UnreachableGain(f64),
    #[error("node unreachable at any distance")]
    Unreachable,
    #[error("underdetermined: {0}")]
    Underdetermined(String),
    #[error("invalid channel model: {0}")]
    InvalidModel(String),
}

/// Propagation path between a node and a surface relay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathKind {
    /// Skin to skin.
    #[serde(rename = "ss", alias = "S-S")]
    SkinToSkin,
    /// Muscle to skin.
    #[serde(rename = "ms", alias = "M-S")]
    MuscleToSkin,
}

impl PathKind {
    pub fn of(tissue: Tissue) -> Self {
        match tissue {
            Tissue::Skin => PathKind::SkinToSkin,
            Tissue::Muscle => PathKind::MuscleToSkin,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ss" | "s-s" | "skin" => Some(PathKind::SkinToSkin),
            "ms" | "m-s" | "muscle" => Some(PathKind::MuscleToSkin),
            _ => None,
        }
    }
}

/// A monotone, invertible map from link length to linear channel gain.
pub trait GainCurve {
    fn gain(&self, length: f64, depth: f64) -> Result<f64, ChannelError>;

    /// Length at which the curve reaches `gain`.
    ///
    /// The default solves by bisection, which works for any strictly
    /// decreasing curve.
    fn inverse_gain(&self, gain: f64, depth: f64) -> Result<f64, ChannelError> {
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(ChannelError::UnreachableGain(gain));
        }
        let mut lo = 1e-9;
        if self.gain(lo, depth)? < gain {
            return Err(ChannelError::UnreachableGain(gain));
        }
        let mut hi = 1.0;
        while self.gain(hi, depth)? > gain {
            lo = hi;
            hi *= 2.0;
            if hi > 1e12 {
                return Err(ChannelError::UnreachableGain(gain));
            }
        }
        while hi - lo > 1e-12 * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if self.gain(mid, depth)? > gain {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawPath {
    /// Linear gain `g₀` at the reference length.
    pub reference_gain: f64,
    /// Reference length `Λ₀`, cm.
    pub reference_length: f64,
    /// Path-loss exponent `n`.
    pub exponent: f64,
    /// Linear gain factor per cm of depth (muscle-to-skin only).
    #[serde(default = "PowerLawPath::unit_bonus")]
    pub depth_bonus: f64,
}

impl PowerLawPath {
    fn unit_bonus() -> f64 {
        1.0
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.reference_gain > 0.0 && self.reference_gain < 1.0) {
            return Err(ChannelError::InvalidModel("reference gain must lie in (0, 1)".into()));
        }
        if !(self.reference_length > 0.0) {
            return Err(ChannelError::InvalidModel("reference length must be positive".into()));
        }
        if !(self.exponent > 0.0) {
            return Err(ChannelError::InvalidModel("path-loss exponent must be positive".into()));
        }
        if !(self.depth_bonus >= 1.0) {
            return Err(ChannelError::InvalidModel("depth bonus must be at least 1".into()));
        }
        Ok(())
    }

    fn depth_factor(&self, depth: f64) -> f64 {
        self.depth_bonus.powf(depth)
    }
}

impl GainCurve for PowerLawPath {
    fn gain(&self, length: f64, depth: f64) -> Result<f64, ChannelError> {
        if !(length > 0.0) {
            return Err(ChannelError::DegenerateLink(length));
        }
        Ok(self.reference_gain
            * (self.reference_length / length).powf(self.exponent)
            * self.depth_factor(depth))
    }

    fn inverse_gain(&self, gain: f64, depth: f64) -> Result<f64, ChannelError> {
        if !(gain > 0.0) || !gain.is_finite() {
            return Err(ChannelError::UnreachableGain(gain));
        }
        let scale = self.reference_gain * self.depth_factor(depth) / gain;
        Ok(self.reference_length * scale.powf(1.0 / self.exponent))
    }
}

/// Reference transmit powers measured on tissue at two relay distances.
pub mod anchors {
    /// (length cm, transmit power W) over the skin-to-skin path.
    pub const SKIN_TO_SKIN: [(f64, f64); 2] = [(14.0, 6.5e-3), (5.0, 0.8e-3)];
    /// (length cm, transmit power W) over the muscle-to-skin path.
    pub const MUSCLE_TO_SKIN: [(f64, f64); 2] = [(14.0, 4.6e-3), (5.0, 0.2e-3)];
    /// `δ · N_o · f` under which the anchors were taken in the default setup.
    pub const NOISE_FLOOR: f64 = 5.0 * 1e-12 * 1e4;
    pub const REFERENCE_LENGTH: f64 = 5.0;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelModel {
    pub ss: PowerLawPath,
    pub ms: PowerLawPath,
}

impl Default for ChannelModel {
    fn default() -> Self {
        let fit = |rows: &[(f64, f64)]| {
            fit_power_law(rows, anchors::NOISE_FLOOR, anchors::REFERENCE_LENGTH)
                .expect("anchor rows are well-posed")
                .path
        };
        Self {
            ss: fit(&anchors::SKIN_TO_SKIN),
            ms: fit(&anchors::MUSCLE_TO_SKIN),
        }
    }
}

impl ChannelModel {
    pub fn path(&self, kind: PathKind) -> &PowerLawPath {
        match kind {
            PathKind::SkinToSkin => &self.ss,
            PathKind::MuscleToSkin => &self.ms,
        }
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        self.ss.validate()?;
        self.ms.validate()
    }

    /// Gain along `path`. Depth only matters on the muscle-to-skin path.
    pub fn gain(&self, path: PathKind, length: f64, depth: f64) -> Result<f64, ChannelError> {
        self.path(path).gain(length, effective_depth(path, depth))
    }

    pub fn inverse_gain(&self, path: PathKind, gain: f64, depth: f64) -> Result<f64, ChannelError> {
        self.path(path).inverse_gain(gain, effective_depth(path, depth))
    }
}

fn effective_depth(path: PathKind, depth: f64) -> f64 {
    match path {
        PathKind::SkinToSkin => 0.0,
        PathKind::MuscleToSkin => depth,
    }
}

/// Minimum transmit power meeting the SNR target over a link of `gain`.
pub fn pt_min(config: &ScenarioConfig, gain: f64) -> f64 {
    config.noise_floor() / gain
}

/// Minimum transmit power for `node` at link length `length`; zero for a
/// co-located link.
pub fn pt_min_at(config: &ScenarioConfig, node: &NodeSpec, length: f64) -> f64 {
    if length <= 0.0 {
        return 0.0;
    }
    let g = config
        .channel
        .gain(PathKind::of(node.tissue), length, node.z)
        .expect("length checked positive");
    pt_min(config, g)
}

/// Upper bound on transmit power: tissue safety and the lifetime budget.
pub fn pt_max(config: &ScenarioConfig, node: &NodeSpec) -> f64 {
    let budget = if node.required_lifetime > 0.0 {
        node.energy_store.max(0.0) / node.required_lifetime
    } else {
        f64::INFINITY
    };
    config.safe_power.min(budget)
}

/// Longest link over which `node` meets the SNR target within its power bound.
pub fn threshold_length(config: &ScenarioConfig, node: &NodeSpec) -> Result<f64, ChannelError> {
    threshold_length_with(config, node, config.channel.path(PathKind::of(node.tissue)))
}

/// [`threshold_length`] against an arbitrary gain curve.
pub fn threshold_length_with(
    config: &ScenarioConfig,
    node: &NodeSpec,
    curve: &dyn GainCurve,
) -> Result<f64, ChannelError> {
    let budget = pt_max(config, node);
    if !(budget > 0.0) {
        return Err(ChannelError::Unreachable);
    }
    let needed_gain = config.noise_floor() / budget;
    let depth = effective_depth(PathKind::of(node.tissue), node.z);
    match curve.inverse_gain(needed_gain, depth) {
        Ok(len) if len > 0.0 && len.is_finite() => Ok(len),
        _ => Err(ChannelError::Unreachable),
    }
}

/// Threshold length after applying the configured per-path cap, if any.
pub fn effective_threshold(config: &ScenarioConfig, node: &NodeSpec) -> Result<f64, ChannelError> {
    let th = threshold_length(config, node)?;
    let cap = match node.tissue {
        Tissue::Skin => config.threshold_cap_ss,
        Tissue::Muscle => config.threshold_cap_ms,
    };
    Ok(cap.map_or(th, |c| th.min(c)))
}

/// Transmit energy spent by `node` over its required lifetime at power `pt`,
/// with the per-bit energy taken as `pt / f`.
pub fn energy_over_period(node: &NodeSpec, pt: f64, config: &ScenarioConfig) -> f64 {
    let f = config.bandwidth;
    let bits_per_symbol = (node.modulation_level as f64).log2();
    let per_bit = pt / f;
    per_bit * node.data_rate * node.required_lifetime / (f * bits_per_symbol)
}

/// Battery lifetime: `capacity / (duty_cycle × load) × external_factor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LifetimeModel {
    pub battery_capacity_mah: f64,
    pub duty_cycle: f64,
    /// Power drawn by everything other than the transmitter, W.
    pub overhead_power: f64,
    pub supply_voltage: f64,
    pub external_factor: f64,
}

impl LifetimeModel {
    /// RF reference point used to fix the external factor.
    pub const RF_REFERENCE_POWER: f64 = 2e-3;
    pub const RF_REFERENCE_DAYS: f64 = 254.0;

    /// Lifetime in days at transmit power `pt` (W).
    pub fn lifetime_days(&self, pt: f64) -> f64 {
        let load_ma = (pt.max(0.0) + self.overhead_power) / self.supply_voltage * 1e3;
        let hours = self.battery_capacity_mah / (self.duty_cycle * load_ma);
        hours / 24.0 * self.external_factor
    }

    /// Returns a copy whose external factor maps `pt` to exactly `days`.
    pub fn calibrated(&self, pt: f64, days: f64) -> Self {
        let raw = Self {
            external_factor: 1.0,
            ..*self
        };
        Self {
            external_factor: days / raw.lifetime_days(pt),
            ..*self
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.battery_capacity_mah > 0.0) {
            return Err("battery capacity must be positive".into());
        }
        if !(self.duty_cycle > 0.0 && self.duty_cycle <= 1.0) {
            return Err("duty cycle must lie in (0, 1]".into());
        }
        if !(self.overhead_power >= 0.0) {
            return Err("overhead power must be non-negative".into());
        }
        if !(self.supply_voltage > 0.0) {
            return Err("supply voltage must be positive".into());
        }
        if !(self.external_factor > 0.0) {
            return Err("external factor must be positive".into());
        }
        Ok(())
    }
}

impl Default for LifetimeModel {
    fn default() -> Self {
        Self {
            battery_capacity_mah: 240.0,
            duty_cycle: 0.1,
            overhead_power: 1e-4,
            supply_voltage: 3.0,
            external_factor: 1.0,
        }
        .calibrated(Self::RF_REFERENCE_POWER, Self::RF_REFERENCE_DAYS)
    }
}

/// Result of fitting a power-law path to `(length, power)` measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerLawFit {
    pub path: PowerLawPath,
    /// Natural-log residuals of the fitted transmit power, one per distinct row.
    pub residuals: Vec<f64>,
}

/// Least-squares fit of `ln Pt = a + n ln Λ`, converted to gains through
/// `g = noise_floor / Pt`.
///
/// Exact duplicate rows are collapsed first. At least two distinct lengths
/// are required.
pub fn fit_power_law(
    rows: &[(f64, f64)],
    noise_floor: f64,
    reference_length: f64,
) -> Result<PowerLawFit, ChannelError> {
    let mut distinct: Vec<(f64, f64)> = Vec::with_capacity(rows.len());
    for &(l, p) in rows {
        if !(l > 0.0 && p > 0.0) {
            return Err(ChannelError::InvalidModel(format!(
                "length and power must be positive, got ({l}, {p})"
            )));
        }
        if !distinct.iter().any(|&(dl, dp)| dl == l && dp == p) {
            distinct.push((l, p));
        }
    }
    if distinct.len() < 2 {
        return Err(ChannelError::Underdetermined(format!(
            "{} distinct row(s), need at least 2",
            distinct.len()
        )));
    }
    let xs: Vec<f64> = distinct.iter().map(|r| r.0.ln()).collect();
    let ys: Vec<f64> = distinct.iter().map(|r| r.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(ChannelError::Underdetermined("all rows share one length".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let residuals = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| y - (intercept + exponent * x))
        .collect();
    let pt_ref = (intercept + exponent * reference_length.ln()).exp();
    let path = PowerLawPath {
        reference_gain: noise_floor / pt_ref,
        reference_length,
        exponent,
        depth_bonus: 1.0,
    };
    Ok(PowerLawFit { path, residuals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    /// Curve without a closed-form inverse, to exercise the bisection path.
    struct Exponential;
    impl GainCurve for Exponential {
        fn gain(&self, length: f64, _depth: f64) -> Result<f64, ChannelError> {
            if length <= 0.0 {
                return Err(ChannelError::DegenerateLink(length));
            }
            Ok(0.5 * (-0.3 * length).exp())
        }
    }

    #[test]
    fn default_model_is_valid() {
        let m = ChannelModel::default();
        m.validate().unwrap();
        assert!(m.ss.reference_gain < 1.0 && m.ms.reference_gain < 1.0);
    }

    #[test]
    fn gain_reference_point_and_power_law() {
        let m = ChannelModel::default();
        let g0 = m.ss.reference_gain;
        assert!((m.gain(PathKind::SkinToSkin, 5.0, 0.0).unwrap() - g0).abs() < 1e-18);
        let g1 = m.gain(PathKind::SkinToSkin, 3.0, 0.0).unwrap();
        let g2 = m.gain(PathKind::SkinToSkin, 6.0, 0.0).unwrap();
        assert!((g1 / g2 - 2f64.powf(m.ss.exponent)).abs() < 1e-9);
        assert_eq!(
            m.gain(PathKind::SkinToSkin, 0.0, 0.0),
            Err(ChannelError::DegenerateLink(0.0))
        );
    }

    #[test]
    fn skin_ratio_matches_anchor() {
        let c = cfg();
        let s = NodeSpec::surface(1, 0.0, 0.0, 1.0);
        let ratio = pt_min_at(&c, &s, 14.0) / pt_min_at(&c, &s, 5.0);
        assert!((ratio - 6.5 / 0.8).abs() / (6.5 / 0.8) < 1e-9);
    }

    #[test]
    fn inverse_examples() {
        let m = ChannelModel::default();
        for path in [PathKind::SkinToSkin, PathKind::MuscleToSkin] {
            let g = m.gain(path, 7.3, 1.0).unwrap();
            assert!((m.inverse_gain(path, g, 1.0).unwrap() - 7.3).abs() < 7.3e-9);
            let g0 = m.path(path).reference_gain;
            assert!((m.inverse_gain(path, g0, 0.0).unwrap() - 5.0).abs() < 1e-12);
            let near = m.inverse_gain(path, 2.0 * g0, 0.0).unwrap();
            assert!(near < 5.0);
        }
        assert!(m.inverse_gain(PathKind::SkinToSkin, 0.0, 0.0).is_err());
    }

    #[test]
    fn pt_min_examples() {
        let c = ScenarioConfig {
            snr_target: 5.0,
            noise_psd: 1e-14,
            bandwidth: 1e4,
            ..cfg()
        };
        assert!((pt_min(&c, 1e-6) - 5e-4).abs() < 1e-18);
        assert!((pt_min(&c, 1.0) - 5e-10).abs() < 1e-22);
        let s = NodeSpec::surface(1, 0.0, 0.0, 1.0);
        assert_eq!(pt_min_at(&c, &s, 0.0), 0.0);
    }

    #[test]
    fn pt_max_examples() {
        let c = ScenarioConfig { safe_power: 1e-3, ..cfg() };
        let mut n = NodeSpec::implant(1, 0.0, 0.0, 1.0, 1.0);
        n.energy_store = 5e-4 * n.required_lifetime;
        assert!((pt_max(&c, &n) - 5e-4).abs() < 1e-15);
        n.energy_store = 2e-3 * n.required_lifetime;
        assert_eq!(pt_max(&c, &n), 1e-3);
        n.energy_store = 0.0;
        assert_eq!(pt_max(&c, &n), 0.0);
        assert_eq!(threshold_length(&c, &n), Err(ChannelError::Unreachable));
    }

    #[test]
    fn threshold_is_power_crossing() {
        let c = cfg();
        for node in [NodeSpec::surface(1, 0.0, 0.0, 1.0), NodeSpec::implant(2, 0.0, 0.0, 1.2, 1.0)] {
            let th = threshold_length(&c, &node).unwrap();
            let at = pt_min_at(&c, &node, th);
            assert!((at - pt_max(&c, &node)).abs() < 1e-9, "{at}");
        }
    }

    #[test]
    fn threshold_grows_with_energy() {
        let c = cfg();
        let mut n = NodeSpec::implant(1, 0.0, 0.0, 0.5, 1.0);
        n.energy_store = 1e-3 * n.required_lifetime;
        let short = threshold_length(&c, &n).unwrap();
        n.energy_store *= 2.0;
        let long = threshold_length(&c, &n).unwrap();
        assert!(long >= short);
    }

    #[test]
    fn muscle_threshold_exceeds_skin_at_equal_budget() {
        let c = cfg();
        let s = threshold_length(&c, &NodeSpec::surface(1, 0.0, 0.0, 1.0)).unwrap();
        let m = threshold_length(&c, &NodeSpec::implant(2, 0.0, 0.0, 0.0, 1.0)).unwrap();
        assert!(m >= s, "ms {m} < ss {s}");
    }

    #[test]
    fn bisection_fallback_matches_crossing() {
        let c = cfg();
        let n = NodeSpec::surface(1, 0.0, 0.0, 1.0);
        let th = threshold_length_with(&c, &n, &Exponential).unwrap();
        let g = Exponential.gain(th, 0.0).unwrap();
        assert!((pt_min(&c, g) - pt_max(&c, &n)).abs() / pt_max(&c, &n) < 1e-9);
        let closed = -(2.0 * c.noise_floor() / pt_max(&c, &n)).ln() / 0.3;
        assert!((th - closed).abs() < 1e-9);
    }

    #[test]
    fn energy_over_period_examples() {
        let c = cfg();
        let mut n = NodeSpec::surface(1, 0.0, 0.0, 1.0);
        let e1 = energy_over_period(&n, 1e-3, &c);
        let expected = (1e-3 / c.bandwidth) * 1.0 * n.required_lifetime / c.bandwidth;
        assert!((e1 - expected).abs() < 1e-24);
        n.data_rate = 2.0;
        assert!((energy_over_period(&n, 1e-3, &c) - 2.0 * e1).abs() < 1e-24);
        n.required_lifetime = 0.0;
        assert_eq!(energy_over_period(&n, 1e-3, &c), 0.0);
    }

    #[test]
    fn lifetime_anchor_and_monotone() {
        let l = LifetimeModel::default();
        assert!((l.lifetime_days(2e-3) - 254.0).abs() < 1e-9);
        assert!(l.lifetime_days(20e-6) >= 295.0);
        assert!(l.lifetime_days(1e-3) > l.lifetime_days(2e-3));
    }

    #[test]
    fn fit_recovers_anchor_exponents() {
        let ss = fit_power_law(&anchors::SKIN_TO_SKIN, 5e-8, 5.0).unwrap();
        let expect_ss = (6.5f64 / 0.8).ln() / (14.0f64 / 5.0).ln();
        assert!((ss.path.exponent - expect_ss).abs() < 1e-12);
        assert!((ss.path.exponent - 2.03).abs() < 0.01);
        let ms = fit_power_law(&anchors::MUSCLE_TO_SKIN, 5e-8, 5.0).unwrap();
        assert!((ms.path.exponent - 3.05).abs() < 0.01);
        assert!(ss.residuals.iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn fit_requires_two_rows_and_dedups() {
        assert!(matches!(
            fit_power_law(&[(5.0, 1e-3)], 5e-8, 5.0),
            Err(ChannelError::Underdetermined(_))
        ));
        assert!(matches!(
            fit_power_law(&[(5.0, 1e-3), (5.0, 1e-3)], 5e-8, 5.0),
            Err(ChannelError::Underdetermined(_))
        ));
        let rows = [(14.0, 6.5e-3), (5.0, 0.8e-3), (9.0, 2.0e-3)];
        let dup = [rows[0], rows[1], rows[1], rows[2], rows[0]];
        assert_eq!(
            fit_power_law(&rows, 5e-8, 5.0).unwrap().path,
            fit_power_law(&dup, 5e-8, 5.0).unwrap().path
        );
    }

    proptest! {
        #[test]
        fn round_trip(len in 0.01f64..200.0, depth in 0.0f64..3.0, muscle in any::<bool>()) {
            let m = ChannelModel { ms: PowerLawPath { depth_bonus: 1.1, ..ChannelModel::default().ms }, ..Default::default() };
            let path = if muscle { PathKind::MuscleToSkin } else { PathKind::SkinToSkin };
            let g = m.gain(path, len, depth).unwrap();
            let back = m.inverse_gain(path, g, depth).unwrap();
            prop_assert!((back - len).abs() <= 1e-9 * len);
        }

        #[test]
        fn pt_min_increasing_in_length(a in 0.1f64..50.0, d in 0.001f64..10.0, muscle in any::<bool>()) {
            let c = cfg();
            let n = if muscle { NodeSpec::implant(1, 0.0, 0.0, 0.7, 1.0) } else { NodeSpec::surface(1, 0.0, 0.0, 1.0) };
            prop_assert!(pt_min_at(&c, &n, a + d) > pt_min_at(&c, &n, a));
        }
    }
}
