//! Group names: parsing, canonicalization, and stateless technology mapping.
//!
//! A group name has the shape
//!
//! ```text
//! scheme "://" group ["@" instantiation] [":" port] ["/" sec-credentials]
//! ```
//!
//! `scheme` picks the namespace (`mcast-ip`, `sip`, `opaque`, …), `group` is
//! a dot-separated label hierarchy with the most specific label first,
//! `instantiation` names the node or node set that instantiates the group,
//! `port` selects an application, and `sec-credentials` carries an opaque
//! credential reference. A port written before the `@` clause is accepted
//! and canonicalized to the position after the instantiation.
//!
//! Canonical form: scheme and instantiation endpoints are lowercased, group
//! labels are case-preserved, explicit sets are sorted and deduplicated, and
//! an absent port stays absent. `parse` followed by [`GroupUri::to_string`]
//! yields the canonical text, and parsing canonical text round-trips
//! exactly.

use std::collections::BTreeSet;
use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;

use crate::bloom::BloomFilter;

/// How the group is instantiated: by nobody in particular (any-source), by a
/// single named node, by an explicit node set, or by a statistical filter
/// over node names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instantiation {
    Empty,
    Single(String),
    ExplicitSet(BTreeSet<String>),
    FilterSet(BloomFilter),
}

impl Instantiation {
    /// Builds an explicit set from endpoints, canonicalizing each one.
    pub fn explicit_set<'a>(
        endpoints: impl IntoIterator<Item = &'a str>,
    ) -> Result<Instantiation, UriError> {
        let mut set = BTreeSet::new();
        for e in endpoints {
            set.insert(canonical_endpoint(e)?);
        }
        if set.is_empty() {
            return Err(UriError::EmptySet);
        }
        Ok(Instantiation::ExplicitSet(set))
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Instantiation::Empty)
    }

    /// The endpoint of a single-node instantiation.
    pub fn single_endpoint(&self) -> Option<&str> {
        match self {
            Instantiation::Single(e) => Some(e),
            _ => None,
        }
    }
}

/// A parsed, validated group name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupUri {
    /// Namespace token, canonically lowercase.
    pub scheme: String,
    /// Hierarchical group labels, most specific first.
    pub group_labels: Vec<String>,
    pub instantiation: Instantiation,
    pub port: Option<u16>,
    /// Opaque credential reference from the trailing `/` clause.
    pub sec_credentials: Option<String>,
}

/// Mapping of a group name onto a concrete distribution technology.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TechBinding {
    pub technology: String,
    pub address: String,
    pub port: Option<u16>,
}

/// Reasons a group name fails to parse or validate.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UriError {
    #[error("missing '://' scheme separator")]
    BadSchemeSeparator,
    #[error("invalid scheme {0:?}")]
    BadScheme(String),
    #[error("empty group clause")]
    EmptyGroup,
    #[error("invalid group label {0:?}")]
    BadLabel(String),
    #[error("wildcard '*' is only allowed as the entire most-specific label")]
    IllegalWildcard,
    #[error("group labels {0:?} collide with the dotted-quad address form")]
    AmbiguousQuad(String),
    #[error("invalid port {0:?}")]
    BadPort(String),
    #[error("port appears both before and after the instantiation")]
    DuplicatePort,
    #[error("more than one '@' clause")]
    MultipleAt,
    #[error("empty instantiation clause after '@'")]
    EmptyInstantiation,
    #[error("invalid instantiation endpoint {0:?}")]
    BadEndpoint(String),
    #[error("unbalanced or malformed instantiation set braces")]
    UnbalancedBraces,
    #[error("instantiation set must name at least one endpoint")]
    EmptySet,
    #[error("invalid filter clause: {0}")]
    BadFilter(String),
    #[error("invalid sec-credentials {0:?}")]
    BadCredentials(String),
}

/// Why a stateless technology mapping is unavailable.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MappingError {
    #[error("scheme {0:?} has no stateless default mapping")]
    NoDefaultMapping(String),
    #[error("group {group:?} is not a valid {technology} address: {reason}")]
    InvalidTechAddress {
        technology: String,
        group: String,
        reason: String,
    },
}

fn is_label_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

fn is_plain_label(s: &str) -> bool {
    !s.is_empty() && s.chars().all(is_label_char)
}

/// Strict dotted-quad: four decimal octets, no leading zeros.
fn is_dotted_quad(s: &str) -> bool {
    let parts: Vec<&str> = s.split('.').collect();
    parts.len() == 4 && parts.iter().all(|p| is_octet(p))
}

fn is_octet(s: &str) -> bool {
    if s.is_empty() || s.len() > 3 || !s.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    if s.len() > 1 && s.starts_with('0') {
        return false;
    }
    s.parse::<u16>().is_ok_and(|v| v <= 255)
}

fn canonical_scheme(raw: &str) -> Result<String, UriError> {
    let ok = raw
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic())
        && raw
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '+' | '.' | '-'));
    if !ok {
        return Err(UriError::BadScheme(raw.to_string()));
    }
    Ok(raw.to_ascii_lowercase())
}

/// Endpoints are host-like: dot-separated labels, canonically lowercase.
/// Dotted-quad technology addresses fit the same shape.
fn canonical_endpoint(raw: &str) -> Result<String, UriError> {
    let valid = !raw.is_empty()
        && raw.split('.').all(is_plain_label);
    if !valid {
        return Err(UriError::BadEndpoint(raw.to_string()));
    }
    Ok(raw.to_ascii_lowercase())
}

fn parse_port(raw: &str) -> Result<u16, UriError> {
    if raw.is_empty() || !raw.bytes().all(|b| b.is_ascii_digit()) {
        return Err(UriError::BadPort(raw.to_string()));
    }
    raw.parse::<u16>()
        .map_err(|_| UriError::BadPort(raw.to_string()))
}

fn parse_group_labels(clause: &str) -> Result<Vec<String>, UriError> {
    // A dotted quad is a single technology-address label, not a hierarchy.
    if is_dotted_quad(clause) {
        return Ok(vec![clause.to_string()]);
    }
    let mut labels = Vec::new();
    for (i, raw) in clause.split('.').enumerate() {
        if raw == "*" {
            if i != 0 {
                return Err(UriError::IllegalWildcard);
            }
            labels.push(raw.to_string());
        } else if is_plain_label(raw) {
            if raw.contains('*') {
                return Err(UriError::IllegalWildcard);
            }
            labels.push(raw.to_string());
        } else if raw.contains('*') {
            return Err(UriError::IllegalWildcard);
        } else {
            return Err(UriError::BadLabel(raw.to_string()));
        }
    }
    Ok(labels)
}

fn validate_credentials(raw: &str) -> Result<String, UriError> {
    let ok = !raw.is_empty()
        && raw
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'-' | b'_' | b'='));
    if !ok {
        return Err(UriError::BadCredentials(raw.to_string()));
    }
    Ok(raw.to_string())
}

fn parse_instantiation(raw: &str) -> Result<(Instantiation, Option<u16>), UriError> {
    if raw.is_empty() {
        return Err(UriError::EmptyInstantiation);
    }
    if let Some(body) = raw.strip_prefix('{') {
        let (inside, after) = body.split_once('}').ok_or(UriError::UnbalancedBraces)?;
        let port = match after {
            "" => None,
            p => Some(parse_port(p.strip_prefix(':').ok_or(UriError::UnbalancedBraces)?)?),
        };
        if inside.is_empty() {
            return Err(UriError::EmptySet);
        }
        let inst = Instantiation::explicit_set(inside.split(','))?;
        return Ok((inst, port));
    }
    if raw.contains('}') {
        return Err(UriError::UnbalancedBraces);
    }
    if let Some(body) = raw.strip_prefix("bf:") {
        return parse_filter(body);
    }
    match raw.split_once(':') {
        Some((ep, p)) => Ok((
            Instantiation::Single(canonical_endpoint(ep)?),
            Some(parse_port(p)?),
        )),
        None => Ok((Instantiation::Single(canonical_endpoint(raw)?), None)),
    }
}

/// Filter clause: `bf:<m>:<k>:<base64url bits>`, optionally followed by
/// `:<port>`. The parameters travel with the name so any party can test
/// membership.
fn parse_filter(body: &str) -> Result<(Instantiation, Option<u16>), UriError> {
    let bad = |msg: &str| UriError::BadFilter(msg.to_string());
    let (m_raw, rest) = body.split_once(':').ok_or_else(|| bad("missing hash count"))?;
    let (k_raw, rest) = rest.split_once(':').ok_or_else(|| bad("missing bit payload"))?;
    let (bits_raw, port) = match rest.split_once(':') {
        Some((b, p)) => (b, Some(parse_port(p)?)),
        None => (rest, None),
    };
    let m: usize = m_raw.parse().map_err(|_| bad("bit length is not a number"))?;
    let k: u32 = k_raw.parse().map_err(|_| bad("hash count is not a number"))?;
    let bytes = URL_SAFE_NO_PAD
        .decode(bits_raw)
        .map_err(|_| bad("bit payload is not base64url"))?;
    let filter = BloomFilter::from_parts(m, k, bytes).map_err(|e| bad(&e.to_string()))?;
    Ok((Instantiation::FilterSet(filter), port))
}

/// Parses a group name into its canonical structured form.
pub fn parse(text: &str) -> Result<GroupUri, UriError> {
    let (scheme_raw, rest) = text
        .split_once("://")
        .ok_or(UriError::BadSchemeSeparator)?;
    let scheme = canonical_scheme(scheme_raw)?;

    let (body, sec_credentials) = match rest.split_once('/') {
        Some((b, c)) => (b, Some(validate_credentials(c)?)),
        None => (rest, None),
    };

    let (group_part, inst_part) = match body.split_once('@') {
        Some((g, i)) => {
            if i.contains('@') {
                return Err(UriError::MultipleAt);
            }
            (g, Some(i))
        }
        None => (body, None),
    };

    let (group_clause, port_before) = match group_part.split_once(':') {
        Some((g, p)) => (g, Some(parse_port(p)?)),
        None => (group_part, None),
    };
    if group_clause.is_empty() {
        return Err(UriError::EmptyGroup);
    }
    let group_labels = parse_group_labels(group_clause)?;

    let (instantiation, port_after) = match inst_part {
        Some(i) => parse_instantiation(i)?,
        None => (Instantiation::Empty, None),
    };

    let port = match (port_before, port_after) {
        (Some(_), Some(_)) => return Err(UriError::DuplicatePort),
        (a, b) => a.or(b),
    };

    let uri = GroupUri {
        scheme,
        group_labels,
        instantiation,
        port,
        sec_credentials,
    };
    uri.validate()?;
    Ok(uri)
}

/// Parses and re-serializes, yielding the canonical text.
pub fn canonicalize(text: &str) -> Result<String, UriError> {
    Ok(parse(text)?.to_string())
}

impl GroupUri {
    /// Checks every structural invariant of the name.
    pub fn validate(&self) -> Result<(), UriError> {
        canonical_scheme(&self.scheme).and_then(|c| {
            if c == self.scheme {
                Ok(())
            } else {
                Err(UriError::BadScheme(self.scheme.clone()))
            }
        })?;
        if self.group_labels.is_empty() {
            return Err(UriError::EmptyGroup);
        }
        let joined = self.group_labels.join(".");
        if self.group_labels.len() == 1 {
            let l = &self.group_labels[0];
            if l != "*" && !is_plain_label(l) && !is_dotted_quad(l) {
                return Err(UriError::BadLabel(l.clone()));
            }
        } else {
            for (i, l) in self.group_labels.iter().enumerate() {
                if l == "*" {
                    if i != 0 {
                        return Err(UriError::IllegalWildcard);
                    }
                } else if !is_plain_label(l) {
                    return Err(UriError::BadLabel(l.clone()));
                }
            }
            // Multi-label lists whose joined form reads as a dotted quad
            // would not round-trip; the quad is a single-label name.
            if is_dotted_quad(&joined) {
                return Err(UriError::AmbiguousQuad(joined));
            }
        }
        match &self.instantiation {
            Instantiation::Empty => {}
            Instantiation::Single(e) => {
                if canonical_endpoint(e)? != *e {
                    return Err(UriError::BadEndpoint(e.clone()));
                }
            }
            Instantiation::ExplicitSet(set) => {
                if set.is_empty() {
                    return Err(UriError::EmptySet);
                }
                for e in set {
                    if canonical_endpoint(e)? != *e {
                        return Err(UriError::BadEndpoint(e.clone()));
                    }
                }
            }
            Instantiation::FilterSet(_) => {}
        }
        if let Some(c) = &self.sec_credentials {
            validate_credentials(c)?;
        }
        Ok(())
    }

    /// True when the most-specific label is the publish wildcard.
    pub fn is_wildcard(&self) -> bool {
        self.group_labels.first().is_some_and(|l| l == "*")
    }

    /// A concrete name addresses one publication: no wildcard, and an
    /// instantiation that is either absent or a single endpoint.
    pub fn is_concrete(&self) -> bool {
        !self.is_wildcard()
            && matches!(
                self.instantiation,
                Instantiation::Empty | Instantiation::Single(_)
            )
    }

    /// Canonical text form (same as `Display`).
    pub fn canonical_string(&self) -> String {
        self.to_string()
    }

    /// Returns a copy with the credential clause replaced.
    pub fn with_credentials(&self, cred: Option<String>) -> GroupUri {
        GroupUri {
            sec_credentials: cred,
            ..self.clone()
        }
    }
}

impl fmt::Display for GroupUri {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}://{}", self.scheme, self.group_labels.join("."))?;
        match &self.instantiation {
            Instantiation::Empty => {}
            Instantiation::Single(e) => write!(f, "@{e}")?,
            Instantiation::ExplicitSet(set) => {
                let members: Vec<&str> = set.iter().map(String::as_str).collect();
                write!(f, "@{{{}}}", members.join(","))?;
            }
            Instantiation::FilterSet(filter) => {
                write!(
                    f,
                    "@bf:{}:{}:{}",
                    filter.bit_len(),
                    filter.hash_count(),
                    URL_SAFE_NO_PAD.encode(filter.bit_bytes())
                )?;
            }
        }
        if let Some(p) = self.port {
            write!(f, ":{p}")?;
        }
        if let Some(c) = &self.sec_credentials {
            write!(f, "/{c}")?;
        }
        Ok(())
    }
}

impl std::str::FromStr for GroupUri {
    type Err = UriError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse(s)
    }
}

/// Stateless default mapping of a group name onto a technology identifier.
///
/// Only `mcast-ip` has a built-in rule: the group must be a dotted-quad
/// label inside 224.0.0.0/4. Everything else requires a mapping service and
/// reports [`MappingError::NoDefaultMapping`].
pub fn default_map(uri: &GroupUri) -> Result<TechBinding, MappingError> {
    if uri.scheme != "mcast-ip" {
        return Err(MappingError::NoDefaultMapping(uri.scheme.clone()));
    }
    let invalid = |group: &str, reason: &str| MappingError::InvalidTechAddress {
        technology: "mcast-ip".to_string(),
        group: group.to_string(),
        reason: reason.to_string(),
    };
    let joined = uri.group_labels.join(".");
    if uri.group_labels.len() != 1 || !is_dotted_quad(&joined) {
        return Err(invalid(&joined, "not a dotted-quad address"));
    }
    let first_octet: u16 = joined.split('.').next().unwrap().parse().unwrap();
    if !(224..=239).contains(&first_octet) {
        return Err(invalid(&joined, "outside the 224.0.0.0/4 multicast range"));
    }
    Ok(TechBinding {
        technology: "mcast-ip".to_string(),
        address: joined,
        port: uri.port,
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloom;
    use proptest::prelude::*;

    fn p(s: &str) -> GroupUri {
        parse(s).unwrap()
    }

    #[test]
    fn parses_default_mapped_name() {
        let u = p("mcast-ip://224.1.2.3:5000");
        assert_eq!(u.scheme, "mcast-ip");
        assert_eq!(u.group_labels, vec!["224.1.2.3"]);
        assert_eq!(u.instantiation, Instantiation::Empty);
        assert_eq!(u.port, Some(5000));
        assert_eq!(u.sec_credentials, None);
    }

    #[test]
    fn parses_single_instantiation() {
        let u = p("sip://hypnotic-talks@psychic.org");
        assert_eq!(u.scheme, "sip");
        assert_eq!(u.group_labels, vec!["hypnotic-talks"]);
        assert_eq!(
            u.instantiation,
            Instantiation::Single("psychic.org".to_string())
        );
        assert_eq!(u.port, None);
    }

    #[test]
    fn parses_source_specific_name_with_credentials() {
        let u = p("mcast-ip://224.10.20.30@1.2.3.4/groupkey");
        assert_eq!(u.group_labels, vec!["224.10.20.30"]);
        assert_eq!(u.instantiation, Instantiation::Single("1.2.3.4".to_string()));
        assert_eq!(u.sec_credentials.as_deref(), Some("groupkey"));
    }

    #[test]
    fn parses_explicit_set() {
        let u = p("opaque://news@{cnn.com,bbc.co.uk}");
        let expected: BTreeSet<String> =
            ["cnn.com", "bbc.co.uk"].iter().map(|s| s.to_string()).collect();
        assert_eq!(u.instantiation, Instantiation::ExplicitSet(expected));
    }

    #[test]
    fn empty_group_is_malformed() {
        assert!(matches!(parse("opaque://"), Err(UriError::EmptyGroup)));
        assert!(matches!(parse("opaque://:80"), Err(UriError::EmptyGroup)));
        assert!(matches!(parse("opaque://@x"), Err(UriError::EmptyGroup)));
    }

    #[test]
    fn malformed_variants() {
        assert!(matches!(parse("no-separator"), Err(UriError::BadSchemeSeparator)));
        assert!(matches!(parse("opaque://a.*.b@x"), Err(UriError::IllegalWildcard)));
        assert!(matches!(parse("opaque://news.*"), Err(UriError::IllegalWildcard)));
        assert!(matches!(parse("opaque://g:70000"), Err(UriError::BadPort(_))));
        assert!(matches!(
            parse("opaque://g@{a,b"),
            Err(UriError::UnbalancedBraces)
        ));
        assert!(matches!(parse("opaque://g@{}"), Err(UriError::EmptySet)));
        assert!(matches!(
            parse("opaque://g:1@x:2"),
            Err(UriError::DuplicatePort)
        ));
        assert!(matches!(parse("opaque://g@a@b"), Err(UriError::MultipleAt)));
        assert!(matches!(parse("opaque://g@"), Err(UriError::EmptyInstantiation)));
    }

    #[test]
    fn canonicalizes_scheme_and_endpoint_case() {
        assert_eq!(
            canonicalize("MCAST-IP://224.0.1.1:4000").unwrap(),
            "mcast-ip://224.0.1.1:4000"
        );
        assert_eq!(
            canonicalize("opaque://News@CNN.com").unwrap(),
            "opaque://News@cnn.com"
        );
    }

    #[test]
    fn port_accepted_before_instantiation() {
        assert_eq!(
            canonicalize("opaque://news:80@cnn.com").unwrap(),
            "opaque://news@cnn.com:80"
        );
    }

    #[test]
    fn explicit_set_sorted_and_deduplicated() {
        assert_eq!(
            canonicalize("opaque://n@{b.com,a.com,B.com}").unwrap(),
            "opaque://n@{a.com,b.com}"
        );
    }

    #[test]
    fn five_reference_names_round_trip_byte_identically() {
        for s in [
            "mcast-ip://224.1.2.3:5000",
            "mcast-ip://224.0.1.1:4000",
            "sip://hypnotic-talks@psychic.org",
            "mcast-ip://224.10.20.30@1.2.3.4/groupkey",
            "opaque://news@cnn.com",
        ] {
            assert_eq!(p(s).to_string(), s);
            assert_eq!(canonicalize(s).unwrap(), s);
        }
    }

    #[test]
    fn filter_clause_round_trips() {
        let filter = bloom::filter_of(64, 3, ["cnn.com", "bbc.co.uk"]).unwrap();
        let uri = GroupUri {
            scheme: "opaque".to_string(),
            group_labels: vec!["news".to_string()],
            instantiation: Instantiation::FilterSet(filter),
            port: Some(9),
            sec_credentials: None,
        };
        let text = uri.to_string();
        assert!(text.starts_with("opaque://news@bf:64:3:"));
        assert!(text.ends_with(":9"));
        assert_eq!(p(&text), uri);
    }

    #[test]
    fn canonicalize_is_idempotent() {
        for s in [
            "OPAQUE://News@CNN.com:80/abc",
            "mcast-ip://224.1.2.3:5000",
            "opaque://n@{B.com,a.com}",
        ] {
            let once = canonicalize(s).unwrap();
            assert_eq!(canonicalize(&once).unwrap(), once);
        }
    }

    #[test]
    fn default_map_examples() {
        let b = default_map(&p("mcast-ip://224.1.2.3:5000")).unwrap();
        assert_eq!(
            b,
            TechBinding {
                technology: "mcast-ip".to_string(),
                address: "224.1.2.3".to_string(),
                port: Some(5000),
            }
        );
        assert!(matches!(
            default_map(&p("mcast-ip://10.0.0.1:80")),
            Err(MappingError::InvalidTechAddress { .. })
        ));
        assert!(matches!(
            default_map(&p("sip://hypnotic-talks@psychic.org")),
            Err(MappingError::NoDefaultMapping(_))
        ));
        assert!(matches!(
            default_map(&p("mcast-ip://news")),
            Err(MappingError::InvalidTechAddress { .. })
        ));
    }

    #[test]
    fn default_map_is_pure() {
        let u = p("mcast-ip://239.9.9.9");
        assert_eq!(default_map(&u), default_map(&u));
    }

    #[test]
    fn wildcard_only_as_whole_first_label() {
        assert!(p("opaque://*@cnn.com").is_wildcard());
        assert!(p("opaque://*.blockbuster@studio.example").is_wildcard());
        assert!(matches!(parse("opaque://a*b"), Err(UriError::IllegalWildcard)));
    }

    #[test]
    fn multi_label_quad_collision_rejected() {
        let u = GroupUri {
            scheme: "opaque".to_string(),
            group_labels: vec!["224".into(), "1".into(), "2".into(), "3".into()],
            instantiation: Instantiation::Empty,
            port: None,
            sec_credentials: None,
        };
        assert!(matches!(u.validate(), Err(UriError::AmbiguousQuad(_))));
    }

    proptest! {
        #[test]
        fn parse_serialize_round_trip(uri in testgen::uri()) {
            let text = uri.to_string();
            prop_assert_eq!(parse(&text).unwrap(), uri);
        }

        #[test]
        fn canonicalization_idempotent(uri in testgen::uri()) {
            let once = canonicalize(&uri.to_string()).unwrap();
            prop_assert_eq!(canonicalize(&once).unwrap(), once);
        }

        #[test]
        fn serialization_is_canonical(uri in testgen::uri()) {
            let text = uri.to_string();
            prop_assert_eq!(canonicalize(&text).unwrap(), text);
        }
    }
}
