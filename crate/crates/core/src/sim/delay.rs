use crate::consensus::NodeId;
use crate::time::{SimDuration, SimTime};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Network delay applied on a sender's egress. Milliseconds throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayModel {
    #[default]
    None,
    Uniform { mean: f64, half_width: f64 },
    /// Node 1 gets `high`, node n gets `low`, linear in between; each band
    /// is `mean ± spread * mean`.
    Skew { high: f64, low: f64, spread: f64 },
    /// `Skew`, shifted by one node position every `period_rounds` rounds.
    Dynamic {
        high: f64,
        low: f64,
        spread: f64,
        period_rounds: u64,
    },
    /// `mean ± half_width` for `on_ms`, then no delay for `off_ms`, repeating.
    Burst {
        mean: f64,
        half_width: f64,
        on_ms: f64,
        off_ms: f64,
    },
}

pub const DEFAULT_ROTATION_ROUNDS: u64 = 10;

impl DelayModel {
    pub fn d1(mean: f64) -> Self {
        DelayModel::Uniform {
            mean,
            half_width: mean * 0.2,
        }
    }

    pub fn d2() -> Self {
        DelayModel::Skew {
            high: 1000.0,
            low: 100.0,
            spread: 0.2,
        }
    }

    pub fn d3(period_rounds: u64) -> Self {
        DelayModel::Dynamic {
            high: 1000.0,
            low: 100.0,
            spread: 0.2,
            period_rounds: period_rounds.max(1),
        }
    }

    pub fn d4() -> Self {
        DelayModel::Burst {
            mean: 1000.0,
            half_width: 100.0,
            on_ms: 5000.0,
            off_ms: 10000.0,
        }
    }

    /// `none`, `d0`, `d1:<mean>`, `d2`, `d3`, `d3:<period>`, `d4`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let (head, arg) = match text.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (text, None),
        };
        let num = |a: Option<&str>| -> Result<Option<f64>, String> {
            a.map(|s| s.parse::<f64>().map_err(|_| format!("bad number `{s}` in `{text}`")))
                .transpose()
        };
        match head.to_ascii_lowercase().as_str() {
            "none" | "d0" if arg.is_none() => Ok(DelayModel::None),
            "d1" => {
                let mean = num(arg)?.unwrap_or(100.0);
                if mean.is_nan() || mean < 0.0 {
                    return Err(format!("negative delay in `{text}`"));
                }
                Ok(DelayModel::d1(mean))
            }
            "d2" if arg.is_none() => Ok(DelayModel::d2()),
            "d3" => {
                let p = num(arg)?.unwrap_or(DEFAULT_ROTATION_ROUNDS as f64);
                if p < 1.0 || p.fract() != 0.0 {
                    return Err(format!("rotation period must be a positive integer in `{text}`"));
                }
                Ok(DelayModel::d3(p as u64))
            }
            "d4" if arg.is_none() => Ok(DelayModel::d4()),
            _ => Err(format!("unknown delay model `{text}`")),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            DelayModel::None => true,
            DelayModel::Uniform { mean, half_width } => {
                mean.is_finite() && half_width >= 0.0 && mean - half_width >= 0.0
            }
            DelayModel::Skew { high, low, spread }
            | DelayModel::Dynamic {
                high, low, spread, ..
            } => low >= 0.0 && high.is_finite() && (0.0..=1.0).contains(&spread),
            DelayModel::Burst {
                mean,
                half_width,
                on_ms,
                off_ms,
            } => {
                mean.is_finite()
                    && half_width >= 0.0
                    && mean - half_width >= 0.0
                    && on_ms >= 0.0
                    && off_ms >= 0.0
                    && on_ms + off_ms > 0.0
            }
        };
        if let DelayModel::Dynamic { period_rounds: 0, .. } = self {
            return Err("rotation period must be positive".into());
        }
        if ok {
            Ok(())
        } else {
            Err(format!("invalid delay parameters: {self:?}"))
        }
    }

    /// Rotation step active after `rounds` committed rounds.
    pub fn rotation(&self, rounds: u64) -> u64 {
        match self {
            DelayModel::Dynamic { period_rounds, .. } => rounds / period_rounds.max(&1),
            _ => 0,
        }
    }

    fn burst_on(at: SimTime, on_ms: f64, off_ms: f64) -> bool {
        let period = on_ms + off_ms;
        at.as_ms().rem_euclid(period) < on_ms
    }

    /// `(mean, half_width)` for messages sent by `from`.
    pub fn band(&self, n: usize, from: NodeId, at: SimTime, rotation: u64) -> (f64, f64) {
        let skew = |high: f64, low: f64, spread: f64, shift: u64| {
            let pos = ((from as u64 - 1 + shift) % n as u64) as f64;
            let frac = if n > 1 { pos / (n - 1) as f64 } else { 0.0 };
            let mean = high - (high - low) * frac;
            (mean, mean * spread)
        };
        match *self {
            DelayModel::None => (0.0, 0.0),
            DelayModel::Uniform { mean, half_width } => (mean, half_width),
            DelayModel::Skew { high, low, spread } => skew(high, low, spread, 0),
            DelayModel::Dynamic {
                high, low, spread, ..
            } => skew(high, low, spread, rotation),
            DelayModel::Burst {
                mean,
                half_width,
                on_ms,
                off_ms,
            } => {
                if Self::burst_on(at, on_ms, off_ms) {
                    (mean, half_width)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }

    pub fn regime_label(&self, at: SimTime, rotation: u64) -> String {
        match *self {
            DelayModel::None => "d0".into(),
            DelayModel::Uniform { mean, .. } => format!("d1:{mean}"),
            DelayModel::Skew { .. } => "d2".into(),
            DelayModel::Dynamic { .. } => format!("d3:{rotation}"),
            DelayModel::Burst { on_ms, off_ms, .. } => {
                if Self::burst_on(at, on_ms, off_ms) {
                    "d4:on".into()
                } else {
                    "d4:off".into()
                }
            }
        }
    }

    /// Largest delay any sample can take.
    pub fn max_delay_ms(&self) -> f64 {
        match *self {
            DelayModel::None => 0.0,
            DelayModel::Uniform { mean, half_width }
            | DelayModel::Burst {
                mean, half_width, ..
            } => mean + half_width,
            DelayModel::Skew { high, low, spread }
            | DelayModel::Dynamic {
                high, low, spread, ..
            } => high.max(low) * (1.0 + spread),
        }
    }
}

impl fmt::Display for DelayModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            DelayModel::None => f.write_str("none"),
            DelayModel::Uniform { mean, .. } => write!(f, "d1:{mean}"),
            DelayModel::Skew { .. } => f.write_str("d2"),
            DelayModel::Dynamic { period_rounds, .. } => write!(f, "d3:{period_rounds}"),
            DelayModel::Burst { .. } => f.write_str("d4"),
        }
    }
}

/// One delay sample for a message `from -> to` sent at `at`.
pub fn sample_delay(
    model: &DelayModel,
    n: usize,
    from: NodeId,
    _to: NodeId,
    at: SimTime,
    rotation: u64,
    rng: &mut impl Rng,
) -> SimDuration {
    let (mean, half) = model.band(n, from, at, rotation);
    if mean <= 0.0 && half <= 0.0 {
        return SimDuration::ZERO;
    }
    let lo = (mean - half).max(0.0);
    let hi = mean + half;
    let ms = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    SimDuration::from_ms(ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn samples(model: &DelayModel, from: NodeId, at_ms: f64, k: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        (0..k)
            .map(|_| sample_delay(model, 10, from, 1, SimTime::from_ms(at_ms), 0, &mut rng).as_ms())
            .collect()
    }

    #[test]
    fn uniform_band() {
        let s = samples(&DelayModel::d1(100.0), 2, 0.0, 2000);
        assert!(s.iter().all(|d| (80.0..=120.0).contains(d)));
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        assert!((mean - 100.0).abs() < 2.0, "{mean}");
    }

    #[test]
    fn none_is_zero() {
        assert!(samples(&DelayModel::None, 1, 0.0, 10).iter().all(|d| *d == 0.0));
    }

    #[test]
    fn burst_phases() {
        let m = DelayModel::d4();
        assert!(samples(&m, 3, 12_000.0, 50).iter().all(|d| *d == 0.0));
        assert!(samples(&m, 3, 16_000.0, 50)
            .iter()
            .all(|d| (900.0..=1100.0).contains(d)));
        assert_eq!(m.regime_label(SimTime::from_ms(12_000.0), 0), "d4:off");
        assert_eq!(m.regime_label(SimTime::from_ms(16_000.0), 0), "d4:on");
    }

    #[test]
    fn skew_declines_across_nodes() {
        let m = DelayModel::d2();
        assert_eq!(m.band(10, 1, SimTime::ZERO, 0), (1000.0, 200.0));
        assert_eq!(m.band(10, 10, SimTime::ZERO, 0), (100.0, 20.0));
        let (m5, _) = m.band(10, 5, SimTime::ZERO, 0);
        assert!(m5 < 1000.0 && m5 > 100.0);
    }

    #[test]
    fn rotation_shifts_bands() {
        let m = DelayModel::d3(10);
        assert_eq!(m.rotation(9), 0);
        assert_eq!(m.rotation(10), 1);
        assert_eq!(m.band(10, 10, SimTime::ZERO, 1).0, 1000.0);
        assert_eq!(m.band(10, 1, SimTime::ZERO, 1), m.band(10, 2, SimTime::ZERO, 0));
        assert_eq!(m.regime_label(SimTime::ZERO, 3), "d3:3");
    }

    #[test]
    fn parse_forms() {
        assert_eq!(DelayModel::parse("none"), Ok(DelayModel::None));
        assert_eq!(DelayModel::parse("d1:500"), Ok(DelayModel::d1(500.0)));
        assert_eq!(DelayModel::parse("d3:5"), Ok(DelayModel::d3(5)));
        assert_eq!(DelayModel::parse("d4"), Ok(DelayModel::d4()));
        assert!(DelayModel::parse("d1:x").is_err());
        assert!(DelayModel::parse("d9").is_err());
        assert!(DelayModel::parse("d3:0").is_err());
        for m in [DelayModel::d1(200.0), DelayModel::d2(), DelayModel::d3(4), DelayModel::d4()] {
            assert_eq!(DelayModel::parse(&m.to_string()), Ok(m.clone()));
            m.validate().unwrap();
        }
    }
}
