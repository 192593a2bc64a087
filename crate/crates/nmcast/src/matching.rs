//! Subscription coverage: does a subscription name cover a publication name?
//!
//! Hierarchical labels aggregate from the right: a subscription's labels must
//! be a suffix of the publication's labels, so `blockbuster` covers
//! `Q2.blockbuster` which covers `EL1.Q2.blockbuster`, never the other way
//! around. Instantiations narrow the publisher side: an absent instantiation
//! covers every source (any-source semantics), a single endpoint covers only
//! itself, and explicit or filter sets cover their members — with the usual
//! false positives for filters. A growing source set thereby shades smoothly
//! from single-source into any-source behavior.
//!
//! Publisher-side wildcards (`*@cnn.com`) are not part of the coverage
//! relation; they expand over the registered groups via [`expand_wildcard`].

use crate::naming::{GroupUri, Instantiation};

/// Outcome of a coverage check, with the failing dimension when negative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    Covers,
    DifferentScheme,
    GroupMismatch,
    InstantiationMismatch,
    PortMismatch,
    /// The subscription carries a wildcard or the publication is not a
    /// concrete name; such pairs are outside the relation.
    NotComparable,
}

impl Coverage {
    pub fn holds(self) -> bool {
        self == Coverage::Covers
    }
}

/// Errors from wildcard expansion.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MatchError {
    #[error("publication {0:?} has no wildcard to expand")]
    NotAWildcard(String),
}

/// Suffix test on wildcard-free label lists: the shorter, less specific
/// subscription aggregates every refinement.
pub fn group_covers(sub_labels: &[String], pub_labels: &[String]) -> bool {
    sub_labels.len() <= pub_labels.len()
        && pub_labels[pub_labels.len() - sub_labels.len()..] == *sub_labels
}

/// Does the subscription's instantiation admit a publication from
/// `pub_endpoint`?
pub fn inst_covers(sub_inst: &Instantiation, pub_endpoint: &str) -> bool {
    match sub_inst {
        Instantiation::Empty => true,
        Instantiation::Single(e) => e == pub_endpoint,
        Instantiation::ExplicitSet(set) => set.contains(pub_endpoint),
        Instantiation::FilterSet(filter) => filter.contains(pub_endpoint),
    }
}

fn instantiation_admits(sub_inst: &Instantiation, pub_inst: &Instantiation) -> bool {
    match pub_inst {
        // A publication without a named source is covered only by
        // any-source subscriptions.
        Instantiation::Empty => sub_inst.is_empty(),
        Instantiation::Single(e) => inst_covers(sub_inst, e),
        _ => false,
    }
}

/// Full coverage check with a diagnostic outcome.
pub fn coverage(sub: &GroupUri, publication: &GroupUri) -> Coverage {
    if sub.is_wildcard() || !publication.is_concrete() {
        return Coverage::NotComparable;
    }
    if sub.scheme != publication.scheme {
        return Coverage::DifferentScheme;
    }
    if !group_covers(&sub.group_labels, &publication.group_labels) {
        return Coverage::GroupMismatch;
    }
    if !instantiation_admits(&sub.instantiation, &publication.instantiation) {
        return Coverage::InstantiationMismatch;
    }
    match sub.port {
        None => Coverage::Covers,
        Some(p) if publication.port == Some(p) => Coverage::Covers,
        Some(_) => Coverage::PortMismatch,
    }
}

/// Convenience boolean form of [`coverage`].
pub fn covers(sub: &GroupUri, publication: &GroupUri) -> bool {
    coverage(sub, publication).holds()
}

/// Expands a publisher-side wildcard over the currently registered concrete
/// groups: every group with the same scheme and instantiation whose labels
/// refine the wildcard's remaining labels.
pub fn expand_wildcard<'a>(
    publication: &GroupUri,
    active_groups: impl IntoIterator<Item = &'a GroupUri>,
) -> Result<Vec<GroupUri>, MatchError> {
    if !publication.is_wildcard() {
        return Err(MatchError::NotAWildcard(publication.to_string()));
    }
    let remainder = &publication.group_labels[1..];
    let mut out: Vec<GroupUri> = active_groups
        .into_iter()
        .filter(|g| {
            !g.is_wildcard()
                && g.scheme == publication.scheme
                && g.instantiation == publication.instantiation
                && g.group_labels.len() > remainder.len()
                && group_covers(remainder, &g.group_labels)
                && (publication.port.is_none() || g.port == publication.port)
        })
        .cloned()
        .collect();
    out.sort_by_key(|g| g.to_string());
    out.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloom;
    use crate::naming::parse;

    fn p(s: &str) -> GroupUri {
        parse(s).unwrap()
    }

    fn labels(s: &str) -> Vec<String> {
        s.split('.').map(str::to_string).collect()
    }

    #[test]
    fn layered_video_aggregation() {
        assert!(group_covers(&labels("blockbuster"), &labels("Q2.blockbuster")));
        assert!(group_covers(
            &labels("Q2.blockbuster"),
            &labels("EL1.Q2.blockbuster")
        ));
        assert!(group_covers(
            &labels("blockbuster"),
            &labels("EL1.Q2.blockbuster")
        ));
        assert!(!group_covers(
            &labels("EL1.Q2.blockbuster"),
            &labels("blockbuster")
        ));
        // Equal-length names only match exactly.
        assert!(!group_covers(&labels("Q1.blockbuster"), &labels("Q2.blockbuster")));
    }

    #[test]
    fn instantiation_variants() {
        assert!(inst_covers(&Instantiation::Empty, "cnn.com"));
        assert!(inst_covers(
            &Instantiation::Single("cnn.com".into()),
            "cnn.com"
        ));
        assert!(!inst_covers(
            &Instantiation::Single("cnn.com".into()),
            "bbc.co.uk"
        ));
        let set = Instantiation::explicit_set(["cnn.com", "bbc.co.uk"]).unwrap();
        assert!(inst_covers(&set, "cnn.com"));
        assert!(!inst_covers(&set, "reuters.com"));
        let filter = bloom::filter_of(256, 4, ["cnn.com"]).unwrap();
        assert!(inst_covers(&Instantiation::FilterSet(filter), "cnn.com"));
    }

    #[test]
    fn news_aggregates_all_channels() {
        let sub = p("opaque://news");
        assert!(covers(&sub, &p("opaque://news@cnn.com")));
        assert!(covers(&sub, &p("opaque://news@bbc.co.uk")));
        assert!(!covers(&p("opaque://news@cnn.com"), &p("opaque://politics@cnn.com")));
    }

    #[test]
    fn coverage_is_reflexive_on_concrete_names() {
        for s in [
            "opaque://news@cnn.com",
            "mcast-ip://224.1.2.3:5000",
            "sip://hypnotic-talks@psychic.org",
        ] {
            let u = p(s);
            assert!(covers(&u, &u), "{s} should cover itself");
        }
    }

    #[test]
    fn cross_scheme_never_covers() {
        assert_eq!(
            coverage(&p("opaque://news"), &p("sip://news@cnn.com")),
            Coverage::DifferentScheme
        );
    }

    #[test]
    fn port_rules() {
        assert!(covers(&p("opaque://news"), &p("opaque://news@cnn.com:80")));
        assert!(covers(&p("opaque://news:80"), &p("opaque://news@cnn.com:80")));
        assert_eq!(
            coverage(&p("opaque://news:80"), &p("opaque://news@cnn.com:81")),
            Coverage::PortMismatch
        );
        assert_eq!(
            coverage(&p("opaque://news:80"), &p("opaque://news@cnn.com")),
            Coverage::PortMismatch
        );
    }

    #[test]
    fn wildcard_subscriptions_are_not_comparable() {
        assert_eq!(
            coverage(&p("opaque://*@cnn.com"), &p("opaque://news@cnn.com")),
            Coverage::NotComparable
        );
    }

    #[test]
    fn expand_wildcard_selective_broadcast() {
        let active = vec![
            p("opaque://politics@cnn.com"),
            p("opaque://economics@cnn.com"),
            p("opaque://news@bbc.co.uk"),
        ];
        let hits = expand_wildcard(&p("opaque://*@cnn.com"), &active).unwrap();
        let names: Vec<String> = hits.iter().map(|g| g.to_string()).collect();
        assert_eq!(
            names,
            vec!["opaque://economics@cnn.com", "opaque://politics@cnn.com"]
        );
    }

    #[test]
    fn expand_wildcard_empty_universe() {
        assert!(expand_wildcard(&p("opaque://*@cnn.com"), &[]).unwrap().is_empty());
    }

    #[test]
    fn expand_wildcard_with_remaining_labels() {
        let active = vec![p("opaque://EL1.Q1.blockbuster@studio.example")];
        let hits =
            expand_wildcard(&p("opaque://*.blockbuster@studio.example"), &active).unwrap();
        assert_eq!(hits, active);
        // The bare aggregate itself is not a channel under the wildcard.
        let aggregate = vec![p("opaque://blockbuster@studio.example")];
        assert!(expand_wildcard(&p("opaque://*.blockbuster@studio.example"), &aggregate)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn expand_non_wildcard_errors() {
        assert!(matches!(
            expand_wildcard(&p("opaque://news"), &[]),
            Err(MatchError::NotAWildcard(_))
        ));
    }

    #[test]
    fn filter_coverage_superset_of_explicit() {
        let members = ["cnn.com", "bbc.co.uk", "reuters.com"];
        let explicit = Instantiation::explicit_set(members).unwrap();
        let filter =
            Instantiation::FilterSet(bloom::filter_of(512, 5, members).unwrap());
        for candidate in ["cnn.com", "bbc.co.uk", "reuters.com", "ap.org", "afp.fr"] {
            if inst_covers(&explicit, candidate) {
                assert!(inst_covers(&filter, candidate));
            }
        }
    }

    #[test]
    fn shrinking_specificity_grows_coverage() {
        // S1 ⊆ S2 ⊆ Empty: covered publications grow monotonically.
        let s1 = Instantiation::explicit_set(["cnn.com"]).unwrap();
        let s2 = Instantiation::explicit_set(["cnn.com", "bbc.co.uk"]).unwrap();
        let s3 = Instantiation::Empty;
        let endpoints = ["cnn.com", "bbc.co.uk", "reuters.com"];
        let count = |inst: &Instantiation| {
            endpoints.iter().filter(|e| inst_covers(inst, e)).count()
        };
        assert!(count(&s1) <= count(&s2));
        assert!(count(&s2) <= count(&s3));
    }

    mod props {
        use super::*;
        use crate::naming::testgen;
        use proptest::prelude::*;

        /// Derives a concrete name that covers `base` by construction:
        /// suffix labels, equal-or-dropped port, equal-or-widened
        /// instantiation.
        fn generalize(
            base: &GroupUri,
            label_cut: usize,
            drop_port: bool,
            widen_inst: bool,
        ) -> GroupUri {
            let cut = label_cut % base.group_labels.len();
            let mut labels: Vec<String> = base.group_labels[cut..].to_vec();
            if labels.len() > 1 && crate::naming::parse(&format!("x://{}", labels.join("."))).is_err()
            {
                // Suffix collided with the dotted-quad form; keep it whole.
                labels = base.group_labels.clone();
            }
            let instantiation = if widen_inst {
                Instantiation::Empty
            } else {
                base.instantiation.clone()
            };
            GroupUri {
                scheme: base.scheme.clone(),
                group_labels: labels,
                instantiation,
                port: if drop_port { None } else { base.port },
                sec_credentials: None,
            }
        }

        proptest! {
            #[test]
            fn reflexive_on_concrete(u in testgen::concrete_uri()) {
                prop_assert!(covers(&u, &u));
            }

            #[test]
            fn transitive_along_generalization_chains(
                c in testgen::concrete_uri(),
                cut_b in 0usize..4,
                cut_a in 0usize..4,
                drop_b in proptest::bool::ANY,
                drop_a in proptest::bool::ANY,
                widen_b in proptest::bool::ANY,
                widen_a in proptest::bool::ANY,
            ) {
                let b = generalize(&c, cut_b, drop_b, widen_b);
                let a = generalize(&b, cut_a, drop_a, widen_a);
                prop_assert!(covers(&b, &c));
                prop_assert!(covers(&a, &b));
                prop_assert!(covers(&a, &c), "transitivity: {a} ⊒ {b} ⊒ {c}");
            }

            #[test]
            fn monotone_under_refinement(
                c in testgen::concrete_uri(),
                cut in 0usize..4,
                drop_port in proptest::bool::ANY,
                widen in proptest::bool::ANY,
                label in "[A-Za-z][A-Za-z0-9_-]{0,7}",
            ) {
                let sub = generalize(&c, cut, drop_port, widen);
                prop_assert!(covers(&sub, &c));
                // Prepend a more specific label: still covered.
                let mut refined = c.clone();
                refined.group_labels.insert(0, label);
                prop_assert!(covers(&sub, &refined));
            }

            #[test]
            fn filter_set_covers_at_least_explicit_set(
                members in proptest::collection::btree_set(testgen::endpoint(), 1..5),
                probes in proptest::collection::vec(testgen::endpoint(), 1..8),
            ) {
                let explicit = Instantiation::ExplicitSet(members.clone());
                let filter = Instantiation::FilterSet(
                    crate::bloom::filter_of(512, 4, members.iter().map(String::as_str)).unwrap(),
                );
                for probe in members.iter().map(String::as_str).chain(probes.iter().map(String::as_str)) {
                    if inst_covers(&explicit, probe) {
                        prop_assert!(inst_covers(&filter, probe));
                    }
                }
            }

            #[test]
            fn nested_sets_cover_monotonically(
                s1 in proptest::collection::btree_set(testgen::endpoint(), 1..4),
                extra in proptest::collection::btree_set(testgen::endpoint(), 0..4),
                probes in proptest::collection::vec(testgen::endpoint(), 1..8),
            ) {
                let mut s2 = s1.clone();
                s2.extend(extra);
                let i1 = Instantiation::ExplicitSet(s1);
                let i2 = Instantiation::ExplicitSet(s2);
                for probe in &probes {
                    if inst_covers(&i1, probe) {
                        prop_assert!(inst_covers(&i2, probe));
                    }
                    if inst_covers(&i2, probe) {
                        prop_assert!(inst_covers(&Instantiation::Empty, probe));
                    }
                }
            }
        }
    }
}
