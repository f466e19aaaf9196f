use std::fmt;
use std::str::FromStr;

/// Ascending, deduplicated list of non-negative integers written as `a,b,c` or `start..end:step` (inclusive).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UsizeList(pub Vec<usize>);

impl FromStr for UsizeList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("'{v}' is not a non-negative integer"));
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim) {
            match part.split_once("..") {
                Some((a, rest)) => {
                    let (b, step) = rest.split_once(':').unwrap_or((rest, "1"));
                    let (a, b, step) = (parse(a)?, parse(b)?, parse(step)?);
                    if step == 0 || b < a {
                        return Err(format!("range '{part}' needs start <= end and a positive step"));
                    }
                    out.extend((a..=b).step_by(step));
                }
                None => out.push(parse(part)?),
            }
        }
        out.sort_unstable();
        out.dedup();
        Ok(UsizeList(out))
    }
}

/// Ascending, deduplicated list of finite numbers written as `a,b,c` or `start..end:step` (inclusive).
#[derive(Debug, Clone, PartialEq)]
pub struct F64List(pub Vec<f64>);

impl FromStr for F64List {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |v: &str| match v.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => Err(format!("'{v}' is not a finite number")),
        };
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim) {
            match part.split_once("..") {
                Some((a, rest)) => {
                    let (b, step) = rest.split_once(':').ok_or_else(|| format!("range '{part}' needs a step: start..end:step"))?;
                    let (a, b, step) = (parse(a)?, parse(b)?, parse(step)?);
                    if !(step > 0.0) || b < a {
                        return Err(format!("range '{part}' needs start <= end and a positive step"));
                    }
                    let n = ((b - a) / step + 1e-9).floor() as usize;
                    out.extend((0..=n).map(|i| ((a + step * i as f64) * 1e12).round() / 1e12));
                }
                None => out.push(parse(part)?),
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        Ok(F64List(out))
    }
}

/// Room size `X,Y,Z` in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Room(pub [f64; 3]);

impl FromStr for Room {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let v: Vec<f64> = s.split(',').map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
        match v[..] {
            [x, y, z] if v.iter().all(|e| *e > 0.0 && e.is_finite()) => Ok(Room([x, y, z])),
            _ => Err(format!("'{s}' is not three positive sizes X,Y,Z")),
        }
    }
}

impl fmt::Display for Room {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.0[0], self.0[1], self.0[2])
    }
}
