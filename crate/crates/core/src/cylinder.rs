//! Radial cylinder functions: functions of finitely many spins that see each
//! spin `x_i` only through its distance `d(x_i)` from the identity.
//!
//! A textual form is accepted for the command line: a `+`-separated sum of
//! `*`-separated products whose factors are numbers, `d<i>`, `d<i>^<e>` or
//! `exp(<θ>*d<i>^<e>)`, for instance `1+d0`, `d0^2*d1` or `exp(0.5*d0^1)`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// A map `r ↦ g(r)` applied to the radius of one site.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RadialMap {
    /// `r^e`; `e = 1` is the distance itself.
    Power { exponent: f64 },
    /// `min(exp(θ r^e), cap)`.
    ExpPowerCapped { theta: f64, exponent: f64, cap: f64 },
}

impl RadialMap {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            RadialMap::Power { exponent } => {
                if exponent == 1.0 {
                    r
                } else {
                    r.powf(exponent)
                }
            }
            RadialMap::ExpPowerCapped {
                theta,
                exponent,
                cap,
            } => (theta * r.powf(exponent)).exp().min(cap),
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        match *self {
            RadialMap::Power { exponent } => {
                if exponent == 1.0 {
                    1.0
                } else if r == 0.0 {
                    if exponent > 1.0 {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    exponent * r.powf(exponent - 1.0)
                }
            }
            RadialMap::ExpPowerCapped {
                theta,
                exponent,
                cap,
            } => {
                let v = (theta * r.powf(exponent)).exp();
                if v >= cap || r == 0.0 {
                    0.0
                } else {
                    v * theta * exponent * r.powf(exponent - 1.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CylinderFn {
    Const { value: f64 },
    Site { site: i64, map: RadialMap },
    Product { factors: Vec<CylinderFn> },
    Sum { terms: Vec<CylinderFn> },
}

impl CylinderFn {
    pub fn constant(value: f64) -> Self {
        CylinderFn::Const { value }
    }

    /// `d(x_site)`.
    pub fn distance(site: i64) -> Self {
        CylinderFn::Site {
            site,
            map: RadialMap::Power { exponent: 1.0 },
        }
    }

    pub fn distance_pow(site: i64, exponent: f64) -> Self {
        CylinderFn::Site {
            site,
            map: RadialMap::Power { exponent },
        }
    }

    pub fn site(site: i64, map: RadialMap) -> Self {
        CylinderFn::Site { site, map }
    }

    pub fn plus(self, other: CylinderFn) -> Self {
        match self {
            CylinderFn::Sum { mut terms } => {
                terms.push(other);
                CylinderFn::Sum { terms }
            }
            s => CylinderFn::Sum {
                terms: vec![s, other],
            },
        }
    }

    pub fn times(self, other: CylinderFn) -> Self {
        match self {
            CylinderFn::Product { mut factors } => {
                factors.push(other);
                CylinderFn::Product { factors }
            }
            s => CylinderFn::Product {
                factors: vec![s, other],
            },
        }
    }

    pub fn scaled(self, c: f64) -> Self {
        CylinderFn::constant(c).times(self)
    }

    /// Sites the function depends on.
    pub fn support(&self) -> BTreeSet<i64> {
        let mut out = BTreeSet::new();
        self.collect_support(&mut out);
        out
    }

    fn collect_support(&self, out: &mut BTreeSet<i64>) {
        match self {
            CylinderFn::Const { .. } => {}
            CylinderFn::Site { site, .. } => {
                out.insert(*site);
            }
            CylinderFn::Product { factors: v } | CylinderFn::Sum { terms: v } => {
                v.iter().for_each(|f| f.collect_support(out))
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        self.support().is_empty()
    }

    /// Evaluates with `radius(i)` supplying `d(x_i)`.
    pub fn eval<R: Fn(i64) -> f64 + ?Sized>(&self, radius: &R) -> f64 {
        match self {
            CylinderFn::Const { value } => *value,
            CylinderFn::Site { site, map } => map.eval(radius(*site)),
            CylinderFn::Product { factors } => factors.iter().map(|f| f.eval(radius)).product(),
            CylinderFn::Sum { terms } => terms.iter().map(|f| f.eval(radius)).sum(),
        }
    }

    /// `∂/∂r_i` of the function written in the radii. Since `|∇d| = 1` off the
    /// axis, `|∇_i f| = |∂f/∂r_i|`.
    pub fn partial<R: Fn(i64) -> f64 + ?Sized>(&self, radius: &R, i: i64) -> f64 {
        match self {
            CylinderFn::Const { .. } => 0.0,
            CylinderFn::Site { site, map } => {
                if *site == i {
                    map.derivative(radius(*site))
                } else {
                    0.0
                }
            }
            CylinderFn::Sum { terms } => terms.iter().map(|f| f.partial(radius, i)).sum(),
            CylinderFn::Product { factors } => {
                let mut total = 0.0;
                for (k, fk) in factors.iter().enumerate() {
                    let dk = fk.partial(radius, i);
                    if dk == 0.0 {
                        continue;
                    }
                    let rest: f64 = factors
                        .iter()
                        .enumerate()
                        .filter(|(j, _)| *j != k)
                        .map(|(_, f)| f.eval(radius))
                        .product();
                    total += dk * rest;
                }
                total
            }
        }
    }
}

impl fmt::Display for RadialMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RadialMap::Power { exponent } => write!(f, "^{exponent}"),
            RadialMap::ExpPowerCapped {
                theta,
                exponent,
                cap,
            } => {
                write!(f, "exp({theta}*d^{exponent})<={cap}")
            }
        }
    }
}

impl fmt::Display for CylinderFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CylinderFn::Const { value } => write!(f, "{value}"),
            CylinderFn::Site { site, map } => match map {
                RadialMap::Power { exponent } if *exponent == 1.0 => write!(f, "d{site}"),
                RadialMap::Power { exponent } => write!(f, "d{site}^{exponent}"),
                RadialMap::ExpPowerCapped {
                    theta,
                    exponent,
                    cap,
                } if cap.is_infinite() => {
                    write!(f, "exp({theta}*d{site}^{exponent})")
                }
                m => write!(f, "[{m} at site {site}]"),
            },
            CylinderFn::Product { factors } => {
                let parts: Vec<String> = factors.iter().map(|x| x.to_string()).collect();
                write!(f, "{}", parts.join("*"))
            }
            CylinderFn::Sum { terms } => {
                let parts: Vec<String> = terms.iter().map(|x| x.to_string()).collect();
                write!(f, "{}", parts.join("+"))
            }
        }
    }
}

fn parse_site_power(tok: &str) -> Result<(i64, f64)> {
    let body = tok
        .strip_prefix('d')
        .ok_or_else(|| LabError::InvalidParameter(format!("expected d<site>, got '{tok}'")))?;
    let (site, exp) = match body.split_once('^') {
        Some((s, e)) => (s, e.parse::<f64>().map_err(|_| bad(tok))?),
        None => (body, 1.0),
    };
    Ok((site.parse::<i64>().map_err(|_| bad(tok))?, exp))
}

fn bad(tok: &str) -> LabError {
    LabError::InvalidParameter(format!("cannot parse factor '{tok}'"))
}

fn parse_factor(tok: &str) -> Result<CylinderFn> {
    if let Ok(v) = tok.parse::<f64>() {
        return Ok(CylinderFn::constant(v));
    }
    if let Some(inner) = tok.strip_prefix("exp(").and_then(|t| t.strip_suffix(')')) {
        let (theta, rest) = inner.split_once('*').ok_or_else(|| bad(tok))?;
        let theta = theta.parse::<f64>().map_err(|_| bad(tok))?;
        let (site, exponent) = parse_site_power(rest)?;
        return Ok(CylinderFn::site(
            site,
            RadialMap::ExpPowerCapped {
                theta,
                exponent,
                cap: f64::INFINITY,
            },
        ));
    }
    let (site, exponent) = parse_site_power(tok)?;
    Ok(CylinderFn::distance_pow(site, exponent))
}

impl FromStr for CylinderFn {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        if compact.is_empty() {
            return Err(LabError::InvalidParameter("empty function".into()));
        }
        // split on '+' outside parentheses
        let mut terms = Vec::new();
        let mut depth = 0i32;
        let mut start = 0;
        let bytes = compact.as_bytes();
        for (k, &b) in bytes.iter().enumerate() {
            match b {
                b'(' => depth += 1,
                b')' => depth -= 1,
                b'+' if depth == 0 && k > 0 && bytes[k - 1] != b'e' && bytes[k - 1] != b'^' => {
                    terms.push(&compact[start..k]);
                    start = k + 1;
                }
                _ => {}
            }
        }
        terms.push(&compact[start..]);
        let mut parsed = Vec::new();
        for term in terms {
            let mut factors = Vec::new();
            let mut depth = 0i32;
            let mut start = 0;
            for (k, ch) in term.char_indices() {
                match ch {
                    '(' => depth += 1,
                    ')' => depth -= 1,
                    '*' if depth == 0 => {
                        factors.push(parse_factor(&term[start..k])?);
                        start = k + 1;
                    }
                    _ => {}
                }
            }
            factors.push(parse_factor(&term[start..])?);
            parsed.push(if factors.len() == 1 {
                factors.pop().expect("one factor")
            } else {
                CylinderFn::Product { factors }
            });
        }
        Ok(if parsed.len() == 1 {
            parsed.pop().expect("one term")
        } else {
            CylinderFn::Sum { terms: parsed }
        })
    }
}
