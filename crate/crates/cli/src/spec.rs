//! `key=value` experiment parameters and spec files.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Bad input from the user; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub type UsageResult<T> = std::result::Result<T, UsageError>;

macro_rules! usage {
    ($($arg:tt)*) => { UsageError(format!($($arg)*)) };
}
pub(crate) use usage;

/// Fully resolved parameters of one run. Every key the command knows is
/// present, user values overriding defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub seed: u64,
}

/// Splits `key=value` tokens. Later tokens win.
pub fn parse_tokens<'a, I>(tokens: I) -> UsageResult<Vec<(String, String)>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut out = Vec::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| usage!("expected key=value, got {tok:?}"))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(usage!("empty key in {tok:?}"));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Spec-file syntax: one `key=value` per line, `#` starts a comment.
pub fn parse_spec_file(text: &str) -> UsageResult<Vec<(String, String)>> {
    let lines = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty());
    parse_tokens(lines)
}

impl ExperimentSpec {
    /// Overlays `given` on `defaults`; unknown keys are rejected.
    pub fn resolve(command: &str, defaults: &[(&str, &str)], given: &[(String, String)]) -> UsageResult<Self> {
        let mut params: BTreeMap<String, String> = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        params.entry("seed".into()).or_insert_with(|| "0".into());
        for (k, v) in given {
            match params.get_mut(k) {
                Some(slot) => *slot = v.clone(),
                None => {
                    let known: Vec<&str> = params.keys().map(String::as_str).collect();
                    return Err(usage!("unknown key {k:?} for {command}; known keys: {}", known.join(", ")));
                }
            }
        }
        let seed = parse_value::<u64>("seed", &params["seed"])?;
        Ok(ExperimentSpec {
            command: command.to_string(),
            params,
            seed,
        })
    }

    fn raw(&self, key: &str) -> &str {
        self.params
            .get(key)
            .unwrap_or_else(|| panic!("{key} is not declared for {}", self.command))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> UsageResult<T> {
        parse_value(key, self.raw(key))
    }

    /// Empty value means unset.
    pub fn get_opt<T: FromStr>(&self, key: &str) -> UsageResult<Option<T>> {
        match self.raw(key) {
            "" => Ok(None),
            v => parse_value(key, v).map(Some),
        }
    }

    /// Comma-separated list; an empty value is the empty list.
    pub fn get_list<T: FromStr>(&self, key: &str) -> UsageResult<Vec<T>> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',').map(|p| parse_value(key, p.trim())).collect()
    }

    pub fn get_str(&self, key: &str) -> &str {
        self.raw(key)
    }

    /// Single header line, `key=value` pairs in key order.
    pub fn canonical(&self) -> String {
        self.params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> UsageResult<T> {
    v.parse()
        .map_err(|_| usage!("cannot parse {key}={v:?} as {}", std::any::type_name::<T>()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULTS: &[(&str, &str)] = &[("d1", "2,8"), ("samples", "100"), ("lambda", "")];

    #[test]
    fn resolves_defaults_and_overrides() {
        let given = parse_tokens(["samples=500", "seed=7"]).unwrap();
        let s = ExperimentSpec::resolve("x", DEFAULTS, &given).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.get::<usize>("samples").unwrap(), 500);
        assert_eq!(s.get_list::<usize>("d1").unwrap(), vec![2, 8]);
        assert_eq!(s.get_opt::<f64>("lambda").unwrap(), None);
        assert_eq!(s.canonical(), "d1=2,8 lambda= samples=500 seed=7");
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let given = parse_tokens(["sample=5"]).unwrap();
        assert!(ExperimentSpec::resolve("x", DEFAULTS, &given).is_err());
        assert!(parse_tokens(["samples"]).is_err());
        assert!(parse_tokens(["=3"]).is_err());
        let given = parse_tokens(["samples=many"]).unwrap();
        let s = ExperimentSpec::resolve("x", DEFAULTS, &given).unwrap();
        assert!(s.get::<usize>("samples").is_err());
        let given = parse_tokens(["seed=-1"]).unwrap();
        assert!(ExperimentSpec::resolve("x", DEFAULTS, &given).is_err());
    }

    #[test]
    fn spec_file_lines() {
        let text = "# sweep\nd1 = 2,8,32\n\nsamples=20000  # more\n";
        let kv = parse_spec_file(text).unwrap();
        assert_eq!(kv, vec![("d1".into(), "2,8,32".into()), ("samples".into(), "20000".into())]);
    }
}
