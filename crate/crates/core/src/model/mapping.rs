//! Name-prefix rewrites applied to checkpoint tensor names.
//!
//! One rule per line, `from_prefix => to_prefix`; `#` starts a comment.
//! The first rule whose prefix matches wins; unmatched names pass through.

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MappingRule {
    pub from: String,
    pub to: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MappingSpec {
    pub rules: Vec<MappingRule>,
}

impl MappingSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (from, to) = line
                .split_once("=>")
                .ok_or_else(|| Error::parse("mapping spec", format!("line {}: expected `from => to`", lineno + 1)))?;
            let (from, to) = (from.trim(), to.trim());
            if from.is_empty() || from.contains(char::is_whitespace) || to.contains(char::is_whitespace) {
                return Err(Error::parse(
                    "mapping spec",
                    format!("line {}: prefixes must be non-empty single tokens", lineno + 1),
                ));
            }
            rules.push(MappingRule { from: from.into(), to: to.into() });
        }
        Ok(Self { rules })
    }

    pub fn apply(&self, name: &str) -> String {
        for r in &self.rules {
            if let Some(rest) = name.strip_prefix(r.from.as_str()) {
                return format!("{}{rest}", r.to);
            }
        }
        name.to_string()
    }

    pub fn to_text(&self) -> String {
        self.rules.iter().map(|r| format!("{} => {}\n", r.from, r.to)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_matching_rule_wins() {
        let spec = MappingSpec::parse("# comment\nbackbone.stem. => stem.\nbackbone. => \n\n").unwrap();
        assert_eq!(spec.apply("backbone.stem.conv.weight"), "stem.conv.weight");
        assert_eq!(spec.apply("backbone.norm.gamma"), "norm.gamma");
        assert_eq!(spec.apply("classifier.bias"), "classifier.bias");
        assert_eq!(MappingSpec::parse(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn malformed_lines_fail() {
        assert!(MappingSpec::parse("a -> b").is_err());
        assert!(MappingSpec::parse(" => b").is_err());
        assert!(MappingSpec::parse("a b => c").is_err());
    }
}
