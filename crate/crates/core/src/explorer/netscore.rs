use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetScoreWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for NetScoreWeights {
    fn default() -> Self {
        NetScoreWeights {
            alpha: 2.0,
            beta: 0.5,
            gamma: 0.5,
        }
    }
}

/// `20·log10(a^α / (p^β · m^γ))` with `a` in percent, `p` in millions of
/// parameters and `m` in billions of MACs.
pub fn netscore(a: f64, p: f64, m: f64, w: NetScoreWeights) -> Result<f64> {
    if !(a > 0.0 && p > 0.0 && m > 0.0) || !(a.is_finite() && p.is_finite() && m.is_finite()) {
        return Err(Error::arg(alloc::format!(
            "netscore needs positive finite inputs, got a={a}, p={p}, m={m}"
        )));
    }
    Ok(20.0 * (w.alpha * libm::log10(a) - w.beta * libm::log10(p) - w.gamma * libm::log10(m)))
}

/// Measured performance of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfRecord {
    /// Top-1 accuracy, percent.
    pub a: f64,
    pub params: u64,
    pub macs: u64,
    /// `params / 1e6`
    pub p_millions: f64,
    /// `macs / 1e9`
    pub m_billions: f64,
    /// Per-image latency; zero when not measured.
    pub latency_ms: f64,
    /// NetScore; `-inf` when the accuracy is zero.
    pub u: f64,
}

impl PerfRecord {
    pub fn new(a: f64, params: u64, macs: u64, latency_ms: f64, w: NetScoreWeights) -> Result<Self> {
        if !(0.0..=100.0).contains(&a) {
            return Err(Error::arg(alloc::format!("accuracy {a} is outside [0, 100]")));
        }
        if params == 0 || macs == 0 || !(latency_ms >= 0.0) {
            return Err(Error::arg("params and macs must be positive, latency non-negative"));
        }
        let p_millions = params as f64 / 1e6;
        let m_billions = macs as f64 / 1e9;
        let u = if a == 0.0 {
            f64::NEG_INFINITY
        } else {
            netscore(a, p_millions, m_billions, w)?
        };
        Ok(PerfRecord {
            a,
            params,
            macs,
            p_millions,
            m_billions,
            latency_ms,
            u,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let w = NetScoreWeights::default();
        assert_eq!(netscore(1.0, 1.0, 1.0, w).unwrap(), 0.0);
        let d = netscore(50.0, 2.0, 0.3, w).unwrap() - netscore(50.0, 1.0, 0.3, w).unwrap();
        assert!((d + 3.0103).abs() < 1e-4, "{d}");
        // 20·log10(75.8²) = 40·log10(75.8)
        let s = netscore(75.8, 1.0, 1.0, w).unwrap();
        assert!((s - 75.186768).abs() < 1e-5, "{s}");
        assert!(netscore(0.0, 1.0, 1.0, w).is_err());
        assert!(netscore(1.0, -1.0, 1.0, w).is_err());
    }

    #[test]
    fn perf_record_units() {
        let r = PerfRecord::new(80.0, 2_000_000, 500_000_000, 1.0, NetScoreWeights::default()).unwrap();
        assert_eq!(r.p_millions, 2.0);
        assert_eq!(r.m_billions, 0.5);
        assert_eq!(PerfRecord::new(0.0, 1, 1, 0.0, NetScoreWeights::default()).unwrap().u, f64::NEG_INFINITY);
        assert!(PerfRecord::new(101.0, 1, 1, 0.0, NetScoreWeights::default()).is_err());
    }
}
