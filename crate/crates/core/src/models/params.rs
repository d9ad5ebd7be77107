//! Hardware parameters and the times derived from them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::time::SimTime;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{field}: {message}")]
pub struct ParamError {
    pub field: String,
    pub message: String,
}

impl ParamError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ParamError {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Prefixes the field path, e.g. `hardware.` or `routers.3.`.
    pub fn within(mut self, prefix: &str) -> Self {
        self.field = format!("{prefix}{}", self.field);
        self
    }
}

/// Physical parameters, in SI units unless the name says otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareParams {
    pub memory_efficiency: f64,
    /// Hz.
    pub memory_frequency: f64,
    /// s.
    pub coherence_time: f64,
    pub raw_fidelity: f64,
    pub detector_efficiency: f64,
    /// Hz; its inverse is the detector dead time.
    pub count_rate: f64,
    /// Counts per second.
    pub dark_count: f64,
    /// s.
    pub resolution: f64,
    /// dB/km.
    pub attenuation: f64,
    /// m/s.
    pub light_speed: f64,
    /// s.
    pub tdm_frame: f64,
    pub gate_fidelity: f64,
    pub swap_success: f64,
    /// km, router to router.
    pub qc_length: f64,
    /// s.
    pub cc_latency: f64,
    /// Success factor of the linear-optics Bell measurement.
    pub bsm_success: f64,
}

impl Default for HardwareParams {
    fn default() -> Self {
        HardwareParams {
            memory_efficiency: 0.75,
            memory_frequency: 20e3,
            coherence_time: 1.3,
            raw_fidelity: 0.99,
            detector_efficiency: 0.9,
            count_rate: 25e6,
            dark_count: 0.0,
            resolution: 150e-12,
            attenuation: 0.2,
            light_speed: 2e8,
            tdm_frame: 12.5e-9,
            gate_fidelity: 1.0,
            swap_success: 1.0,
            qc_length: 1.0,
            cc_latency: 0.3e-3,
            bsm_success: 0.5,
        }
    }
}

/// Per-router or per-link replacements for some of the global parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareOverrides {
    pub memory_efficiency: Option<f64>,
    pub coherence_time: Option<f64>,
    pub raw_fidelity: Option<f64>,
    pub detector_efficiency: Option<f64>,
    pub count_rate: Option<f64>,
    pub dark_count: Option<f64>,
    pub resolution: Option<f64>,
    pub attenuation: Option<f64>,
    pub gate_fidelity: Option<f64>,
    pub swap_success: Option<f64>,
    pub qc_length: Option<f64>,
    pub bsm_success: Option<f64>,
}

fn probability(field: &str, v: f64) -> Result<(), ParamError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ParamError::new(field, format!("{v} is not a probability")))
    }
}

fn positive(field: &str, v: f64) -> Result<(), ParamError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ParamError::new(field, format!("{v} must be positive")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ParamError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ParamError::new(field, format!("{v} must not be negative")))
    }
}

impl HardwareParams {
    pub fn validate(&self) -> Result<(), ParamError> {
        probability("memory_efficiency", self.memory_efficiency)?;
        positive("memory_frequency", self.memory_frequency)?;
        positive("coherence_time", self.coherence_time)?;
        probability("raw_fidelity", self.raw_fidelity)?;
        probability("detector_efficiency", self.detector_efficiency)?;
        positive("count_rate", self.count_rate)?;
        non_negative("dark_count", self.dark_count)?;
        non_negative("resolution", self.resolution)?;
        non_negative("attenuation", self.attenuation)?;
        positive("light_speed", self.light_speed)?;
        positive("tdm_frame", self.tdm_frame)?;
        probability("gate_fidelity", self.gate_fidelity)?;
        probability("swap_success", self.swap_success)?;
        positive("qc_length", self.qc_length)?;
        positive("cc_latency", self.cc_latency)?;
        probability("bsm_success", self.bsm_success)?;
        if self.tdm_frame >= 1.0 / self.memory_frequency {
            return Err(ParamError::new("tdm_frame", "must be shorter than the memory period"));
        }
        Ok(())
    }

    pub fn with(&self, o: &HardwareOverrides) -> HardwareParams {
        let mut p = self.clone();
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { p.$f = v; } )* };
        }
        take!(
            memory_efficiency,
            coherence_time,
            raw_fidelity,
            detector_efficiency,
            count_rate,
            dark_count,
            resolution,
            attenuation,
            gate_fidelity,
            swap_success,
            qc_length,
            bsm_success
        );
        p
    }

    /// Probability that a photon survives `km` of fiber.
    pub fn survival(&self, km: f64) -> f64 {
        10f64.powf(-self.attenuation * km / 10.0)
    }

    /// Flight time over `km` of fiber.
    pub fn fiber_delay(&self, km: f64) -> SimTime {
        SimTime::from_secs_f64(km * 1e3 / self.light_speed)
    }

    pub fn memory_period(&self) -> SimTime {
        SimTime::from_secs_f64(1.0 / self.memory_frequency)
    }

    pub fn dead_time(&self) -> SimTime {
        SimTime::from_secs_f64(1.0 / self.count_rate)
    }

    pub fn cc_delay(&self) -> SimTime {
        SimTime::from_secs_f64(self.cc_latency)
    }

    pub fn coherence(&self) -> SimTime {
        SimTime::from_secs_f64(self.coherence_time)
    }

    pub fn resolution_window(&self) -> SimTime {
        SimTime::from_secs_f64(self.resolution)
    }

    pub fn frame(&self) -> SimTime {
        SimTime::from_secs_f64(self.tdm_frame)
    }

    /// Probability of at least one dark click inside one resolution window.
    pub fn dark_click(&self) -> f64 {
        1.0 - (-self.dark_count * self.resolution).exp()
    }
}

/// Attempt times for one channel slot: `k * period + offset`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct AttemptGrid {
    pub period: SimTime,
    pub offset: SimTime,
}

impl AttemptGrid {
    pub fn new(period: SimTime, frame: SimTime, index: u32) -> Self {
        let offset = SimTime::from_ps((frame.as_ps() * index as u64) % period.as_ps());
        AttemptGrid { period, offset }
    }

    pub fn first(&self) -> SimTime {
        self.offset
    }

    /// The first grid time strictly after `t`.
    pub fn after(&self, t: SimTime) -> SimTime {
        let (p, o, t) = (self.period.as_ps(), self.offset.as_ps(), t.as_ps());
        if t < o {
            return self.offset;
        }
        let k = (t - o) / p + 1;
        SimTime::from_ps(k * p + o)
    }
}

/// Whether two detector clicks are close enough to count as coincident.
pub fn coincident(a: SimTime, b: SimTime, resolution: SimTime) -> bool {
    let d = if a > b { a - b } else { b - a };
    d <= resolution
}

/// Fidelity of a pair made by swapping two pairs.
pub fn swapped_fidelity(left: f64, right: f64, gate: f64) -> f64 {
    left * right * gate
}

/// Fidelity of the kept pair after a successful purification round.
pub fn purified_fidelity(f: f64) -> f64 {
    let g = 1.0 - f;
    f * f / (f * f + g * g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_defaults() {
        let p = HardwareParams::default();
        p.validate().unwrap();
        assert_eq!(p.memory_period(), SimTime::from_us(50));
        assert_eq!(p.frame(), SimTime::from_ps(12_500));
        assert_eq!(p.dead_time(), SimTime::from_ns(40));
        assert_eq!(p.resolution_window(), SimTime::from_ps(150));
        assert_eq!(p.cc_delay(), SimTime::from_us(300));
        assert_eq!(p.fiber_delay(0.5), SimTime::from_ps(2_500_000));
        assert_eq!(p.coherence(), SimTime::from_ms(1300));
        assert_eq!(p.dark_click(), 0.0);
    }

    #[test]
    fn survival_over_half_a_link() {
        let p = HardwareParams::default();
        assert!((p.survival(0.5) - 10f64.powf(-0.01)).abs() < 1e-15);
        assert!((p.survival(0.5) - 0.97724).abs() < 1e-5);
        let lossless = HardwareParams {
            attenuation: 0.0,
            ..p
        };
        assert_eq!(lossless.survival(0.5), 1.0);
    }

    #[test]
    fn validation_names_the_field() {
        let p = HardwareParams {
            qc_length: -1.0,
            ..HardwareParams::default()
        };
        assert_eq!(p.validate().unwrap_err().field, "qc_length");
        let p = HardwareParams {
            memory_efficiency: 1.5,
            ..HardwareParams::default()
        };
        assert_eq!(p.validate().unwrap_err().field, "memory_efficiency");
    }

    #[test]
    fn overrides_replace_only_given_fields() {
        let base = HardwareParams::default();
        let p = base.with(&HardwareOverrides {
            swap_success: Some(0.5),
            ..HardwareOverrides::default()
        });
        assert_eq!(p.swap_success, 0.5);
        assert_eq!(p.memory_efficiency, base.memory_efficiency);
    }

    #[test]
    fn grid_is_strictly_after() {
        let g = AttemptGrid::new(SimTime::from_us(50), SimTime::from_ps(12_500), 2);
        assert_eq!(g.first(), SimTime::from_ps(25_000));
        assert_eq!(g.after(SimTime::ZERO), SimTime::from_ps(25_000));
        assert_eq!(g.after(SimTime::from_ps(25_000)), SimTime::from_ps(50_025_000));
        assert_eq!(g.after(SimTime::from_ps(50_024_999)), SimTime::from_ps(50_025_000));
        // Two attempts never share a period.
        let t = g.after(SimTime::from_us(10));
        assert!(g.after(t) - t >= SimTime::from_us(50));
    }

    #[test]
    fn coincidence_window() {
        let s = SimTime::from_ps(150);
        assert!(coincident(SimTime::from_ps(1000), SimTime::from_ps(1150), s));
        assert!(!coincident(SimTime::from_ps(1000), SimTime::from_ps(1200), s));
    }

    #[test]
    fn fidelity_updates() {
        assert!((swapped_fidelity(0.99, 0.99, 1.0) - 0.9801).abs() < 1e-12);
        let f = purified_fidelity(0.99);
        assert!((f - 0.9801 / (0.9801 + 0.0001)).abs() < 1e-12);
        assert!((f - 0.99990).abs() < 1e-5);
    }
}
