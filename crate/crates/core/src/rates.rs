//! Jump-rate functions `g` together with the structural certificates the
//! rest of the crate relies on (`g(0) = 0`, bounded variation, monotonicity,
//! radius of convergence of the partition function).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of occupancies over which certificates are checked.
pub const DEFAULT_K_PROBE: u64 = 4096;

/// How a tabulated rate function continues past its last entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TailRule {
    /// Repeat the last value.
    Hold,
    /// Continue with the last increment.
    Extend,
}

/// Built-in rate families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum RateFamily {
    /// `g(k) = k` (independent walkers).
    Linear,
    /// `g(k) = 1{k >= 1}`.
    Constant,
    /// `g(k) = min(k, c)`.
    Capped { cap: u64 },
    /// `g(k) = values[k]` for `k < values.len()`, then the tail rule.
    /// `values[0]` must be 0.
    Table { values: Vec<f64>, tail: TailRule },
}

impl fmt::Display for RateFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateFamily::Linear => write!(f, "linear"),
            RateFamily::Constant => write!(f, "constant"),
            RateFamily::Capped { cap } => write!(f, "capped({cap})"),
            RateFamily::Table { values, tail } => {
                write!(f, "table({} entries, {:?})", values.len(), tail)
            }
        }
    }
}

impl FromStr for RateFamily {
    type Err = Error;

    /// Parses `linear`, `constant`, `capped(c)` and `table(v0,v1,...;hold|extend)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "linear" => return Ok(RateFamily::Linear),
            "constant" => return Ok(RateFamily::Constant),
            _ => {}
        }
        let bad = || Error::Config(format!("unknown rate function `{s}`"));
        if let Some(inner) = s.strip_prefix("capped(").and_then(|r| r.strip_suffix(')')) {
            let cap = inner.trim().parse::<u64>().map_err(|_| bad())?;
            return Ok(RateFamily::Capped { cap });
        }
        if let Some(inner) = s.strip_prefix("table(").and_then(|r| r.strip_suffix(')')) {
            let (list, tail) = match inner.split_once(';') {
                Some((l, t)) => (l, t.trim()),
                None => (inner, "hold"),
            };
            let tail = match tail {
                "hold" => TailRule::Hold,
                "extend" => TailRule::Extend,
                _ => return Err(bad()),
            };
            let values = list
                .split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            return Ok(RateFamily::Table { values, tail });
        }
        Err(bad())
    }
}

/// A validated jump-rate function with its certificates.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFunction {
    family: RateFamily,
    g_star: f64,
    non_decreasing: bool,
    phi_star: f64,
    k_probe: u64,
}

impl RateFunction {
    /// Builds a rate function and checks its certificates on `0..=k_probe`.
    ///
    /// `phi_star_override` replaces the radius of convergence derived from the
    /// family; it is mandatory when `g` is not monotone.
    pub fn new(family: RateFamily, k_probe: u64, phi_star_override: Option<f64>) -> Result<Self> {
        match &family {
            RateFamily::Capped { cap } if *cap == 0 => {
                return Err(Error::InvalidParams("capped(0) is identically zero".into()))
            }
            RateFamily::Table { values, tail } => {
                if values.len() < 2 {
                    return Err(Error::InvalidParams("rate table needs at least g(0), g(1)".into()));
                }
                if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidParams("rate table entries must be finite and >= 0".into()));
                }
                if *tail == TailRule::Extend {
                    let n = values.len();
                    if values[n - 1] - values[n - 2] < 0.0 {
                        return Err(Error::InvalidParams(
                            "extended tail would turn negative".into(),
                        ));
                    }
                }
            }
            _ => {}
        }
        let k_probe = k_probe.max(1);
        let mut rf = RateFunction {
            family,
            g_star: 0.0,
            non_decreasing: true,
            phi_star: f64::INFINITY,
            k_probe,
        };
        if rf.eval(0) != 0.0 {
            return Err(Error::InvalidParams("g(0) must be 0".into()));
        }
        let mut g_star: f64 = 0.0;
        let mut non_decreasing = true;
        let mut prev = 0.0;
        for k in 1..=k_probe + 1 {
            let v = rf.eval(k);
            g_star = g_star.max((v - prev).abs());
            if v < prev {
                non_decreasing = false;
            }
            prev = v;
        }
        rf.g_star = g_star;
        rf.non_decreasing = non_decreasing;
        rf.phi_star = match phi_star_override {
            Some(p) if p > 0.0 => p,
            Some(p) => return Err(Error::InvalidParams(format!("phi_star override {p} must be > 0"))),
            None if non_decreasing => rf.limit_value(),
            None => return Err(Error::PhiStarRequired),
        };
        Ok(rf)
    }

    /// Shorthand for a built-in family with default certificate range.
    pub fn from_family(family: RateFamily) -> Result<Self> {
        Self::new(family, DEFAULT_K_PROBE, None)
    }

    pub fn linear() -> Self {
        Self::from_family(RateFamily::Linear).expect("linear family is valid")
    }

    pub fn constant() -> Self {
        Self::from_family(RateFamily::Constant).expect("constant family is valid")
    }

    pub fn capped(cap: u64) -> Result<Self> {
        Self::from_family(RateFamily::Capped { cap })
    }

    #[inline]
    pub fn eval(&self, k: u64) -> f64 {
        match &self.family {
            RateFamily::Linear => k as f64,
            RateFamily::Constant => {
                if k == 0 {
                    0.0
                } else {
                    1.0
                }
            }
            RateFamily::Capped { cap } => k.min(*cap) as f64,
            RateFamily::Table { values, tail } => {
                let n = values.len();
                if (k as usize) < n {
                    values[k as usize]
                } else {
                    match tail {
                        TailRule::Hold => values[n - 1],
                        TailRule::Extend => {
                            let step = values[n - 1] - values[n - 2];
                            values[n - 1] + step * (k - (n as u64 - 1)) as f64
                        }
                    }
                }
            }
        }
    }

    /// `lim_k g(k)`, which for monotone `g` is the radius of convergence of `Z`.
    fn limit_value(&self) -> f64 {
        match &self.family {
            RateFamily::Linear => f64::INFINITY,
            RateFamily::Constant => 1.0,
            RateFamily::Capped { cap } => *cap as f64,
            RateFamily::Table { values, tail } => {
                let n = values.len();
                match tail {
                    TailRule::Extend if values[n - 1] > values[n - 2] => f64::INFINITY,
                    _ => values[n - 1],
                }
            }
        }
    }

    /// `inf_{j >= k} g(j)`, used to certify geometric tails of the
    /// grand-canonical series.
    pub fn tail_inf(&self, k: u64) -> f64 {
        match &self.family {
            RateFamily::Linear => k as f64,
            RateFamily::Constant => {
                if k == 0 {
                    0.0
                } else {
                    1.0
                }
            }
            RateFamily::Capped { cap } => k.min(*cap) as f64,
            RateFamily::Table { values, .. } => {
                let n = values.len();
                let last = values[n - 1];
                let start = (k as usize).min(n);
                values[start..]
                    .iter()
                    .copied()
                    .fold(last, f64::min)
            }
        }
    }

    pub fn family(&self) -> &RateFamily {
        &self.family
    }

    /// `sup_k |g(k+1) - g(k)|` over the probed range.
    pub fn g_star(&self) -> f64 {
        self.g_star
    }

    pub fn non_decreasing(&self) -> bool {
        self.non_decreasing
    }

    pub fn phi_star(&self) -> f64 {
        self.phi_star
    }

    pub fn k_probe(&self) -> u64 {
        self.k_probe
    }
}

/// Serializable description of a rate function, as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RateSpec {
    Name(String),
    Table { table: Vec<f64>, tail: TailRule },
}

impl RateSpec {
    pub fn family(&self) -> Result<RateFamily> {
        match self {
            RateSpec::Name(s) => s.parse(),
            RateSpec::Table { table, tail } => Ok(RateFamily::Table {
                values: table.clone(),
                tail: *tail,
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_values() {
        let lin = RateFunction::linear();
        assert_eq!(lin.eval(0), 0.0);
        assert_eq!(lin.eval(7), 7.0);
        assert!(lin.phi_star().is_infinite());
        assert_eq!(lin.g_star(), 1.0);

        let c = RateFunction::constant();
        assert_eq!(c.eval(0), 0.0);
        assert_eq!(c.eval(5), 1.0);
        assert_eq!(c.phi_star(), 1.0);

        let cap = RateFunction::capped(3).unwrap();
        assert_eq!(
            (0..6).map(|k| cap.eval(k)).collect::<Vec<_>>(),
            vec![0.0, 1.0, 2.0, 3.0, 3.0, 3.0]
        );
        assert_eq!(cap.phi_star(), 3.0);
        assert!(cap.non_decreasing());
    }

    #[test]
    fn parse_names() {
        assert_eq!("linear".parse::<RateFamily>().unwrap(), RateFamily::Linear);
        assert_eq!(
            "capped(4)".parse::<RateFamily>().unwrap(),
            RateFamily::Capped { cap: 4 }
        );
        assert_eq!(
            "table(0, 1, 1.5; extend)".parse::<RateFamily>().unwrap(),
            RateFamily::Table {
                values: vec![0.0, 1.0, 1.5],
                tail: TailRule::Extend
            }
        );
        assert!("quadratic".parse::<RateFamily>().is_err());
    }

    #[test]
    fn table_tails() {
        let held = RateFunction::from_family(RateFamily::Table {
            values: vec![0.0, 2.0, 3.0],
            tail: TailRule::Hold,
        })
        .unwrap();
        assert_eq!(held.eval(10), 3.0);
        assert_eq!(held.phi_star(), 3.0);
        let ext = RateFunction::from_family(RateFamily::Table {
            values: vec![0.0, 2.0, 3.0],
            tail: TailRule::Extend,
        })
        .unwrap();
        assert_eq!(ext.eval(4), 5.0);
        assert!(ext.phi_star().is_infinite());
        assert_eq!(ext.g_star(), 2.0);
    }

    #[test]
    fn non_monotone_needs_phi_star() {
        let fam = RateFamily::Table {
            values: vec![0.0, 2.0, 1.0],
            tail: TailRule::Hold,
        };
        assert_eq!(
            RateFunction::from_family(fam.clone()).unwrap_err(),
            Error::PhiStarRequired
        );
        let rf = RateFunction::new(fam, 64, Some(1.0)).unwrap();
        assert!(!rf.non_decreasing());
        assert_eq!(rf.tail_inf(1), 1.0);
    }

    #[test]
    fn rejects_nonzero_origin() {
        let fam = RateFamily::Table {
            values: vec![0.5, 1.0],
            tail: TailRule::Hold,
        };
        assert!(RateFunction::from_family(fam).is_err());
    }
}
