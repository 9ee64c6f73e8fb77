use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Spectrum family with its parameters.
///
/// Text form: a tag optionally followed by named parameters, e.g.
/// `example1`, `ntk(s=0.5)`, `poly(decay=2, weight_decay=1.5, noise=0.1)`,
/// `isotropic(d=1000, noise=1)` or
/// `custom(eigenvalues=[1, 0.5], weights=[0.5, 0.5], noise=0.1)`.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// λᵢ = i^{-(1+1/√n)}, θ̃ᵢ² = 1/(i log²(i+1)), σ² = n^{-1/4}.
    Example1,
    /// λᵢ = 1/i up to e^{n^{3/4}}, θ̃ᵢ² = 1/(i log³(i+1)), σ² = 1/log n.
    Example2,
    /// One spike plus a Toeplitz-like bulk of size p_n = n², uniform weights.
    NtkExample { s: f64, noise: f64 },
    /// λᵢ = i^{-decay}, θ̃ᵢ² = i^{-weight_decay}.
    PolyDecay {
        decay: f64,
        weight_decay: f64,
        noise: f64,
    },
    /// d unit eigenvalues, θ̃ᵢ² = 1/d.
    Isotropic { d: usize, noise: f64 },
    Custom {
        eigenvalues: Vec<f64>,
        weights_sq: Vec<f64>,
        noise: f64,
    },
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::Example1 => "example1",
            Family::Example2 => "example2",
            Family::NtkExample { .. } => "ntk",
            Family::PolyDecay { .. } => "poly",
            Family::Isotropic { .. } => "isotropic",
            Family::Custom { .. } => "custom",
        }
    }
}

fn write_list(f: &mut fmt::Formatter<'_>, v: &[f64]) -> fmt::Result {
    write!(f, "[")?;
    for (i, x) in v.iter().enumerate() {
        if i > 0 {
            write!(f, ", ")?;
        }
        write!(f, "{x}")?;
    }
    write!(f, "]")
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Example1 | Family::Example2 => write!(f, "{}", self.tag()),
            Family::NtkExample { s, noise } => write!(f, "ntk(s={s}, noise={noise})"),
            Family::PolyDecay {
                decay,
                weight_decay,
                noise,
            } => write!(
                f,
                "poly(decay={decay}, weight_decay={weight_decay}, noise={noise})"
            ),
            Family::Isotropic { d, noise } => write!(f, "isotropic(d={d}, noise={noise})"),
            Family::Custom {
                eigenvalues,
                weights_sq,
                noise,
            } => {
                write!(f, "custom(eigenvalues=")?;
                write_list(f, eigenvalues)?;
                write!(f, ", weights=")?;
                write_list(f, weights_sq)?;
                write!(f, ", noise={noise})")
            }
        }
    }
}

enum Value {
    Num(f64),
    List(Vec<f64>),
}

struct Params {
    items: Vec<(String, Value)>,
}

impl Params {
    fn take_num(&mut self, key: &str) -> Result<Option<f64>> {
        match self.items.iter().position(|(k, _)| k == key) {
            None => Ok(None),
            Some(i) => match self.items.remove(i).1 {
                Value::Num(x) => Ok(Some(x)),
                Value::List(_) => Err(Error::Parse(format!("`{key}` expects a number"))),
            },
        }
    }

    fn num(&mut self, key: &str) -> Result<f64> {
        self.take_num(key)?
            .ok_or_else(|| Error::Parse(format!("missing parameter `{key}`")))
    }

    fn list(&mut self, key: &str) -> Result<Vec<f64>> {
        match self.items.iter().position(|(k, _)| k == key) {
            None => Err(Error::Parse(format!("missing parameter `{key}`"))),
            Some(i) => match self.items.remove(i).1 {
                Value::List(v) => Ok(v),
                Value::Num(x) => Ok(vec![x]),
            },
        }
    }

    fn finish(self, tag: &str) -> Result<()> {
        match self.items.first() {
            None => Ok(()),
            Some((k, _)) => Err(Error::Parse(format!("unknown parameter `{k}` for `{tag}`"))),
        }
    }
}

fn parse_num(s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("not a number: `{}`", s.trim())))
}

/// Split on commas that are not inside brackets.
fn split_top(s: &str) -> Result<Vec<&str>> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth < 0 {
                    return Err(Error::Parse("unbalanced `]`".into()));
                }
            }
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return Err(Error::Parse("unbalanced `[`".into()));
    }
    out.push(&s[start..]);
    Ok(out)
}

fn parse_params(body: &str) -> Result<Params> {
    let mut items = Vec::new();
    if body.trim().is_empty() {
        return Ok(Params { items });
    }
    for part in split_top(body)? {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got `{}`", part.trim())))?;
        let k = k.trim().to_ascii_lowercase();
        let v = v.trim();
        let value = if let Some(inner) = v.strip_prefix('[') {
            let inner = inner
                .strip_suffix(']')
                .ok_or_else(|| Error::Parse(format!("unterminated list for `{k}`")))?;
            let list = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner
                    .split(',')
                    .map(parse_num)
                    .collect::<Result<Vec<_>>>()?
            };
            Value::List(list)
        } else {
            Value::Num(parse_num(v)?)
        };
        if items.iter().any(|(key, _)| *key == k) {
            return Err(Error::Parse(format!("duplicate parameter `{k}`")));
        }
        items.push((k, value));
    }
    Ok(Params { items })
}

fn positive(name: &'static str, x: f64) -> Result<f64> {
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(Error::invalid(
            name,
            format!("must be positive and finite, got {x}"),
        ))
    }
}

fn non_negative(name: &'static str, x: f64) -> Result<f64> {
    if x.is_finite() && x >= 0.0 {
        Ok(x)
    } else {
        Err(Error::invalid(
            name,
            format!("must be non-negative and finite, got {x}"),
        ))
    }
}

impl Family {
    /// Checks the documented parameter ranges.
    pub fn validate(&self) -> Result<()> {
        match self {
            Family::Example1 | Family::Example2 => Ok(()),
            Family::NtkExample { s, noise } => {
                if !(*s > 0.0 && *s < 1.0) {
                    return Err(Error::invalid("s", format!("must lie in (0, 1), got {s}")));
                }
                non_negative("noise", *noise).map(|_| ())
            }
            Family::PolyDecay {
                decay,
                weight_decay,
                noise,
            } => {
                if !(decay.is_finite() && *decay > 1.0) {
                    return Err(Error::invalid(
                        "decay",
                        format!("must exceed 1, got {decay}"),
                    ));
                }
                if !(weight_decay.is_finite() && *weight_decay > 1.0) {
                    return Err(Error::invalid(
                        "weight_decay",
                        format!("must exceed 1, got {weight_decay}"),
                    ));
                }
                non_negative("noise", *noise).map(|_| ())
            }
            Family::Isotropic { d, noise } => {
                if *d == 0 {
                    return Err(Error::invalid("d", "must be positive"));
                }
                non_negative("noise", *noise).map(|_| ())
            }
            Family::Custom {
                eigenvalues,
                weights_sq,
                noise,
            } => {
                if eigenvalues.is_empty() {
                    return Err(Error::invalid("eigenvalues", "must be non-empty"));
                }
                if eigenvalues.len() != weights_sq.len() {
                    return Err(Error::invalid(
                        "weights",
                        format!(
                            "length {} differs from eigenvalues length {}",
                            weights_sq.len(),
                            eigenvalues.len()
                        ),
                    ));
                }
                for &l in eigenvalues {
                    positive("eigenvalues", l)?;
                }
                if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::invalid("eigenvalues", "must be non-increasing"));
                }
                for &w in weights_sq {
                    non_negative("weights", w)?;
                }
                non_negative("noise", *noise).map(|_| ())
            }
        }
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (tag, body) = match s.find('(') {
            Some(i) => {
                let body = s[i + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Parse(format!("missing `)` in `{s}`")))?;
                (s[..i].trim(), body)
            }
            None => (s, ""),
        };
        let tag = tag.to_ascii_lowercase();
        let mut p = parse_params(body)?;
        let fam = match tag.as_str() {
            "example1" => Family::Example1,
            "example2" => Family::Example2,
            "ntk" | "ntk_example" | "example3" => Family::NtkExample {
                s: p.num("s")?,
                noise: p.take_num("noise")?.unwrap_or(1.0),
            },
            "poly" | "poly_decay" => Family::PolyDecay {
                decay: p.num("decay")?,
                weight_decay: p.num("weight_decay")?,
                noise: p.take_num("noise")?.unwrap_or(1.0),
            },
            "isotropic" => {
                let d = p.num("d")?;
                if !(d >= 1.0 && d.fract() == 0.0 && d < 1e12) {
                    return Err(Error::invalid(
                        "d",
                        format!("must be a positive integer, got {d}"),
                    ));
                }
                Family::Isotropic {
                    d: d as usize,
                    noise: p.take_num("noise")?.unwrap_or(1.0),
                }
            }
            "custom" => Family::Custom {
                eigenvalues: p.list("eigenvalues")?,
                weights_sq: p.list("weights")?,
                noise: p.take_num("noise")?.unwrap_or(1.0),
            },
            other => return Err(Error::Parse(format!("unknown spectrum family `{other}`"))),
        };
        p.finish(&tag)?;
        fam.validate()?;
        Ok(fam)
    }
}

impl Serialize for Family {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Family {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_forms() {
        assert_eq!("example1".parse::<Family>().unwrap(), Family::Example1);
        assert_eq!(
            " ntk( s = 0.5 ) ".parse::<Family>().unwrap(),
            Family::NtkExample { s: 0.5, noise: 1.0 }
        );
        assert_eq!(
            "isotropic(d=1000, noise=1)".parse::<Family>().unwrap(),
            Family::Isotropic {
                d: 1000,
                noise: 1.0
            }
        );
        let c: Family = "custom(eigenvalues=[1, 0.5], weights=[0.25,0.75], noise=0)"
            .parse()
            .unwrap();
        assert_eq!(
            c,
            Family::Custom {
                eigenvalues: vec![1.0, 0.5],
                weights_sq: vec![0.25, 0.75],
                noise: 0.0
            }
        );
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "pareto",
            "ntk(s=1.5)",
            "ntk",
            "poly(decay=0.5, weight_decay=2)",
            "isotropic(d=2.5)",
            "isotropic(d=4, colour=2)",
            "custom(eigenvalues=[1, 2], weights=[1, 1])",
            "custom(eigenvalues=[1], weights=[1, 1])",
            "poly(decay=2, weight_decay=2",
        ] {
            assert!(bad.parse::<Family>().is_err(), "{bad}");
        }
    }

    #[test]
    fn display_round_trips() {
        for f in [
            Family::Example1,
            Family::Example2,
            Family::NtkExample {
                s: 0.3,
                noise: 0.25,
            },
            Family::PolyDecay {
                decay: 1.5,
                weight_decay: 2.0,
                noise: 0.1,
            },
            Family::Isotropic { d: 7, noise: 1.0 },
            Family::Custom {
                eigenvalues: vec![1.0, 0.1],
                weights_sq: vec![0.3, 0.0],
                noise: 2.0,
            },
        ] {
            assert_eq!(f.to_string().parse::<Family>().unwrap(), f);
        }
    }
}
