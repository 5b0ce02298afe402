use std::collections::HashSet;

use proptest::prelude::*;
use scatter_core::gateway::{CompletionRequest, Decoding};
use scatter_core::model::{builtin_lifecycle_fixture, Segment};
use scatter_core::prompts::{Bindings, PromptRegistry, Role};
use scatter_core::scatter::{coupling_strength, segment_similarity};
use scatter_core::text::jaccard;

fn segment(markers: &std::collections::BTreeSet<String>, description: &str) -> Segment {
    Segment::new("s", "S", description, markers.iter().cloned())
}

fn word_set() -> impl Strategy<Value = std::collections::BTreeSet<String>> {
    proptest::collection::btree_set("[a-h]{1,3}", 1..6)
}

proptest! {
    #[test]
    fn similarity_is_symmetric_and_bounded(
        a in word_set(), b in word_set(),
        da in "[a-h ]{0,20}", db in "[a-h ]{0,20}",
    ) {
        let (x, y) = (segment(&a, &da), segment(&b, &db));
        let s = segment_similarity(&x, &y);
        prop_assert_eq!(s, segment_similarity(&y, &x));
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(segment_similarity(&x, &x), 1.0);
    }

    #[test]
    fn jaccard_matches_set_definition(a in word_set(), b in word_set()) {
        let inter = a.intersection(&b).count() as f64;
        let union = a.union(&b).count() as f64;
        prop_assert_eq!(jaccard(&a, &b), inter / union);
    }

    #[test]
    fn coupling_is_monotone_under_superset(
        markers in word_set(),
        words in proptest::collection::vec("[a-h]{1,3}", 0..8),
        more in proptest::collection::vec("[a-h]{1,3}", 0..8),
    ) {
        let seg = segment(&markers, "");
        let text = words.join(" ");
        let superset = format!("{text} {}", more.join(" "));
        let base = coupling_strength(&text, &seg).unwrap();
        prop_assert!((0.0..=1.0).contains(&base));
        prop_assert!(coupling_strength(&superset, &seg).unwrap() >= base);
        let all = markers.iter().cloned().collect::<Vec<_>>().join(" ");
        prop_assert_eq!(coupling_strength(&all, &seg).unwrap(), 1.0);
    }

    #[test]
    fn render_is_pure(variant in 0usize..20, innovation in ".{0,40}") {
        let prompts = PromptRegistry::builtin();
        let spec = builtin_lifecycle_fixture();
        let bindings = Bindings::for_segment(&spec, &spec.segments[1])
            .set("innovation", innovation.clone())
            .set("context", "ctx");
        for role in [Role::Gen, Role::Apply, Role::Scope, Role::Direct] {
            let once = prompts.render(role, variant, &bindings).unwrap();
            prop_assert_eq!(&once, &prompts.render(role, variant, &bindings).unwrap());
        }
    }

    #[test]
    fn digest_tracks_every_field(prompt in ".{0,30}", t in 0.0f64..2.0, seed in proptest::option::of(0i64..5)) {
        let decoding = Decoding { temperature: t, seed, ..Decoding::default() };
        let base = CompletionRequest::new(Role::Gen, prompt.clone(), &decoding);
        prop_assert_eq!(base.digest(), CompletionRequest::new(Role::Gen, prompt.clone(), &decoding).digest());
        prop_assert_ne!(base.digest(), CompletionRequest::new(Role::Apply, prompt.clone(), &decoding).digest());
        prop_assert_ne!(base.digest(), CompletionRequest::new(Role::Gen, format!("{prompt}."), &decoding).digest());
        let hotter = Decoding { temperature: t + 0.5, ..decoding.clone() };
        prop_assert_ne!(base.digest(), CompletionRequest::new(Role::Gen, prompt, &hotter).digest());
    }
}

#[test]
fn builtin_prompt_digests_do_not_collide() {
    let prompts = PromptRegistry::builtin();
    let spec = builtin_lifecycle_fixture();
    let decoding = Decoding::default();
    let mut prompts_seen = HashSet::new();
    let mut digests = HashSet::new();
    for role in Role::ALL {
        for variant in 0..prompts.variant_count(role) {
            for segment in &spec.segments {
                let bindings = Bindings::for_segment(&spec, segment)
                    .set("innovation", "x")
                    .set("context", "y")
                    .set("previous_output", "z");
                let prompt = prompts.render(role, variant, &bindings).unwrap();
                let digest = CompletionRequest::new(role, prompt.clone(), &decoding).digest();
                if prompts_seen.insert((role, prompt)) {
                    assert!(digests.insert(digest), "digest collision");
                }
            }
        }
    }
    assert!(digests.len() > 300);
    assert!(digests.iter().all(|d| d.len() == 64));
}
