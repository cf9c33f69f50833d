use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An ICD9 diagnosis code or code family.
///
/// Codes are 3 to 5 characters. The leftmost three characters name a family and every
/// additional character narrows it (`E81` > `E816` > `E8162`). The first character is a
/// digit (diseases), `E` (external causes of injury) or `V` (health-status factors);
/// everything after it is a digit. Stored upper-case, without the dot some sources use.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Icd9Code(String);

impl Icd9Code {
    pub const MIN_LEN: usize = 3;
    pub const MAX_LEN: usize = 5;

    pub fn parse(raw: &str) -> Result<Self> {
        let text: String = raw
            .trim()
            .chars()
            .filter(|&c| c != '.')
            .collect::<String>()
            .to_ascii_uppercase();
        if !(Self::MIN_LEN..=Self::MAX_LEN).contains(&text.len()) {
            return Err(Error::invalid("ICD9 code", raw, "length must be 3 to 5 characters"));
        }
        let mut chars = text.chars();
        let first = chars.next().unwrap_or_default();
        if !(first.is_ascii_digit() || first == 'E' || first == 'V') {
            return Err(Error::invalid("ICD9 code", raw, "must start with a digit, 'E' or 'V'"));
        }
        if !chars.all(|c| c.is_ascii_digit()) {
            return Err(Error::invalid(
                "ICD9 code",
                raw,
                "characters after the first must be digits",
            ));
        }
        Ok(Icd9Code(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The 3-character family this code belongs to.
    pub fn family(&self) -> &str {
        &self.0[..Self::MIN_LEN]
    }

    pub fn starts_with(&self, prefix: &str) -> bool {
        icd9_prefix_match(self, prefix)
    }
}

/// True iff `prefix` equals the leftmost `prefix.len()` characters of `code`, ignoring
/// ASCII case. Prefixes shorter than a full family (3 characters) never match.
pub fn icd9_prefix_match(code: &Icd9Code, prefix: &str) -> bool {
    let prefix = prefix.trim();
    prefix.len() >= Icd9Code::MIN_LEN
        && prefix.len() <= code.0.len()
        && code.0.as_bytes()[..prefix.len()].eq_ignore_ascii_case(prefix.as_bytes())
}

impl FromStr for Icd9Code {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Icd9Code::parse(s)
    }
}

impl TryFrom<String> for Icd9Code {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Icd9Code::parse(&s)
    }
}

impl From<Icd9Code> for String {
    fn from(code: Icd9Code) -> String {
        code.0
    }
}

impl fmt::Display for Icd9Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn code(s: &str) -> Icd9Code {
        Icd9Code::parse(s).unwrap()
    }

    #[test]
    fn prefix_match_examples() {
        assert!(icd9_prefix_match(&code("E8162"), "E81"));
        assert!(icd9_prefix_match(&code("56211"), "562"));
        assert!(icd9_prefix_match(&code("E8162"), "E8162"));
        assert!(!icd9_prefix_match(&code("E8162"), "E82"));
    }

    #[test]
    fn prefix_match_is_case_insensitive() {
        assert!(icd9_prefix_match(&code("e8162"), "e81"));
        assert!(icd9_prefix_match(&code("V5811"), "v58"));
    }

    #[test]
    fn short_or_overlong_prefixes_do_not_match() {
        assert!(!icd9_prefix_match(&code("E8162"), "E8"));
        assert!(!icd9_prefix_match(&code("E816"), "E8162"));
    }

    #[test]
    fn parse_validates_shape() {
        assert_eq!(code(" 808.43 ").as_str(), "80843");
        assert_eq!(code("v58").as_str(), "V58");
        assert!(Icd9Code::parse("E8").is_err());
        assert!(Icd9Code::parse("E81620").is_err());
        assert!(Icd9Code::parse("X810").is_err());
        assert!(Icd9Code::parse("E8A2").is_err());
        assert_eq!(code("E8162").family(), "E81");
    }
}
