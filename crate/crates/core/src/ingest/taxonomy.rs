use std::collections::BTreeMap;
use std::path::Path;

use super::CrimeType;
use crate::error::{Error, Result};

/// Mapping from raw source labels to canonical types.
///
/// Total by construction: labels without an entry resolve to `default`.
/// Keys are stored trimmed and lower-cased.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Taxonomy {
    entries: BTreeMap<String, CrimeType>,
    default: CrimeType,
}

fn normalize(label: &str) -> String {
    label.trim().to_lowercase()
}

impl Default for Taxonomy {
    fn default() -> Self {
        Taxonomy { entries: BTreeMap::new(), default: CrimeType::Other }
    }
}

impl Taxonomy {
    /// Every canonical name maps to itself.
    pub fn identity() -> Self {
        let mut t = Taxonomy::default();
        for ty in CrimeType::ALL.into_iter().filter(|t| t.is_concrete()) {
            t.insert(ty.name(), ty).expect("concrete type");
        }
        t
    }

    pub fn insert(&mut self, raw: &str, ty: CrimeType) -> Result<()> {
        if !ty.is_concrete() {
            return Err(Error::config(format!("`{raw}` cannot map to the aggregate type AllCrimes")));
        }
        self.entries.insert(normalize(raw), ty);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Parse `raw label = CanonicalType` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Taxonomy::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (raw, ty) = line
                .rsplit_once('=')
                .ok_or_else(|| Error::config(format!("taxonomy line {}: expected `label = Type`", lineno + 1)))?;
            if raw.trim().is_empty() {
                return Err(Error::config(format!("taxonomy line {}: empty label", lineno + 1)));
            }
            let ty: CrimeType = ty.parse().map_err(|e| Error::config(format!("taxonomy line {}: {e}", lineno + 1)))?;
            t.insert(raw, ty)?;
        }
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Taxonomy::parse(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self, raw: &str) -> CrimeType {
        self.entries.get(&normalize(raw)).copied().unwrap_or(self.default)
    }
}

/// Map a raw source label onto the canonical taxonomy; unmapped labels become `Other`.
pub fn homogenize(raw: &str, taxonomy: &Taxonomy) -> CrimeType {
    taxonomy.resolve(raw)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_fallback() {
        let t = Taxonomy::identity();
        assert_eq!(homogenize("Homicide", &t), CrimeType::Homicide);
        assert_eq!(homogenize("FRAUD", &t), CrimeType::Other);
        assert_eq!(homogenize("  theft ", &t), CrimeType::Theft);
    }

    #[test]
    fn parses_file_format() {
        let t = Taxonomy::parse(
            "# Philadelphia\nBURG RES = Burglary\n\nTHEFT FROM AUTO = Theft  # trailing comment\nAGG ASSAULT=assault\n",
        )
        .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.resolve("burg res"), CrimeType::Burglary);
        assert_eq!(t.resolve("Agg Assault"), CrimeType::Assault);
        assert_eq!(t.resolve("unknown"), CrimeType::Other);
    }

    #[test]
    fn rejects_bad_lines() {
        assert!(Taxonomy::parse("no equals sign").is_err());
        assert!(Taxonomy::parse("X = NotAType").is_err());
        assert!(Taxonomy::parse("X = AllCrimes").is_err());
        assert!(Taxonomy::parse(" = Theft").is_err());
    }
}
