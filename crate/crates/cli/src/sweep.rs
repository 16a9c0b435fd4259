use lora_capacity::Error;

/// One swept parameter: a dotted scenario key and its values, kept as the
/// literal strings that get written into the config table.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

fn range(spec: &str) -> Result<Option<Vec<f64>>, Error> {
    let parts: Vec<&str> = spec.split(':').collect();
    let (kind, rest) = match parts.as_slice() {
        [kind @ ("log" | "lin"), a, b, n] => (*kind, (a, b, n)),
        _ => return Ok(None),
    };
    let bad = || Error::Validation(format!("malformed range '{spec}' (want log:a:b:n or lin:a:b:n)"));
    let a: f64 = rest.0.parse().map_err(|_| bad())?;
    let b: f64 = rest.1.parse().map_err(|_| bad())?;
    let n: usize = rest.2.parse().map_err(|_| bad())?;
    if n == 0 {
        return Err(bad());
    }
    if n == 1 {
        return Ok(Some(vec![a]));
    }
    if kind == "log" && !(a > 0.0 && b > 0.0) {
        return Err(Error::Validation(format!("log range needs positive bounds: '{spec}'")));
    }
    let t = |k: usize| k as f64 / (n - 1) as f64;
    Ok(Some(
        (0..n)
            .map(|k| match kind {
                "log" => a * (b / a).powf(t(k)),
                _ => a + (b - a) * t(k),
            })
            .collect(),
    ))
}

impl Axis {
    /// `values` is a comma list (`1,2,4,8`) or a range (`log:0.01:100:40`,
    /// `lin:0:1:11`). Values must be numeric and strictly monotone.
    pub fn parse(key: &str, values: &str) -> Result<Self, Error> {
        if key.trim().is_empty() {
            return Err(Error::Validation("sweep axis key is empty".into()));
        }
        let values: Vec<String> = match range(values.trim())? {
            Some(v) => v.iter().map(|x| x.to_string()).collect(),
            None => values
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        };
        if values.is_empty() {
            return Err(Error::Validation(format!("no sweep values for '{key}'")));
        }
        let nums = values
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Error::Validation(format!("sweep values for '{key}' must be numeric")))?;
        let up = nums.windows(2).all(|w| w[1] > w[0]);
        let down = nums.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::Validation(format!(
                "sweep values for '{key}' must be strictly monotone"
            )));
        }
        Ok(Self {
            key: key.trim().to_string(),
            values,
        })
    }

    /// `key=v1,v2,...` as given to `--by`.
    pub fn parse_assignment(spec: &str) -> Result<Self, Error> {
        let (key, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::Validation(format!("--by expects key=values, got '{spec}'")))?;
        Self::parse(key, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lists_and_ranges() {
        let a = Axis::parse("m", "1,2,4,8").unwrap();
        assert_eq!(a.values, ["1", "2", "4", "8"]);
        let a = Axis::parse("lambda_total", "log:0.01:100:5").unwrap();
        assert_eq!(a.values.len(), 5);
        assert_eq!(a.values[0], "0.01");
        assert!((a.values[4].parse::<f64>().unwrap() - 100.0).abs() < 1e-9);
        let a = Axis::parse("alpha", "lin:0:1:3").unwrap();
        assert_eq!(a.values, ["0", "0.5", "1"]);
        assert_eq!(Axis::parse("alpha", "0.5").unwrap().values, ["0.5"]);
        let a = Axis::parse_assignment("m=8,4").unwrap();
        assert_eq!((a.key.as_str(), a.values.len()), ("m", 2));
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(Axis::parse("m", "").is_err());
        assert!(Axis::parse("m", "1,1,2").is_err());
        assert!(Axis::parse("m", "1,3,2").is_err());
        assert!(Axis::parse("p_confirmed", "equal,explora").is_err());
        assert!(Axis::parse("lambda_total", "log:0:1:4").is_err());
        assert!(Axis::parse("lambda_total", "lin:0:1:0").is_err());
        assert!(Axis::parse_assignment("m").is_err());
    }
}
