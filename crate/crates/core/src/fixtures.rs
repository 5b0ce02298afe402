//! Shipped fixtures and the default mock rulebook.
//!
//! The rulebook answers the lifecycle and desk demos and reproduces the 20
//! published rounds of the Method A / Method B comparison: rules for round
//! `r` are keyed on the opener line of prompt variant `r - 1`, so a mock or
//! replayed experiment yields exactly [`REFERENCE_ROUNDS`].

use serde_json::json;

use crate::eval::{ExperimentAborted, Harness};
use crate::gateway::{Cassette, Gateway, MockRule, Rulebook};
use crate::model::{builtin_lifecycle_fixture, InnovationInput, Mode, ProcessSpec, Segment};
use crate::prompts::{PromptRegistry, Role};
use crate::scatter::ScatterConfig;

/// Per round: (A items, A stages, B items, B stages).
pub const REFERENCE_ROUNDS: [[usize; 4]; 20] = [
    [5, 1, 7, 5],
    [4, 2, 6, 5],
    [5, 2, 5, 4],
    [6, 3, 6, 4],
    [6, 1, 7, 4],
    [7, 1, 7, 5],
    [5, 2, 6, 4],
    [5, 2, 6, 4],
    [8, 1, 6, 4],
    [5, 2, 6, 5],
    [6, 2, 6, 4],
    [7, 3, 6, 5],
    [8, 2, 7, 4],
    [4, 1, 6, 3],
    [5, 3, 5, 3],
    [8, 1, 6, 4],
    [6, 2, 8, 3],
    [7, 2, 7, 5],
    [5, 1, 7, 3],
    [8, 3, 6, 4],
];

pub fn embedded_contract_innovation() -> InnovationInput {
    InnovationInput::new(
        "embedded smart contract: combine the deployment and the first invocation into a single step",
        "In the standard lifecycle a contract is deployed in its own creation transaction and is \
         only called afterwards through separate invocation transactions.",
    )
}

/// Three desk parts whose feature sets give surface/legs similarity 0.6 and
/// surface/drawers similarity 0.2.
pub fn desk_fixture() -> ProcessSpec {
    ProcessSpec {
        name: "desk".to_string(),
        mode: Mode::Spatial,
        segments: vec![
            Segment::new(
                "surface",
                "Surface",
                "Wood surface coating finish.",
                ["surface", "coating", "finish", "wood"],
            ),
            Segment::new(
                "legs",
                "Legs",
                "Wood legs coating finish.",
                ["legs", "wood", "coating", "finish"],
            ),
            Segment::new("drawers", "Drawers", "Wood drawers.", ["drawers", "wood"]),
        ],
    }
}

pub fn desk_coating_innovation() -> InnovationInput {
    InnovationInput::new(
        "A new surface-coating technique improves the durability and appearance of the desk surface.",
        "The desk surface, legs and drawers are all finished separately with a standard varnish.",
    )
}

const LIFECYCLE_DIFF: &str = "Summary: Combine contract deployment and the first invocation into one transaction instead of two separate steps.\nOrigin: deployment";
const LIFECYCLE_GEN: &str = "Merge any lifecycle step with the immediately following step so that both complete in a single transaction.";
const LIFECYCLE_SCOPE: &str = "LOCAL: deployment";

const DESK_DIFF: &str =
    "Summary: Apply a new durable coating finish to the desk surface.\nOrigin: surface";
const DESK_GEN: &str =
    "Apply the durable protective coating finish to any component that shares the same material.";

/// Adapted change per non-origin lifecycle stage.
const LIFECYCLE_APPLY: [(&str, &str); 4] = [
    (
        "Instantiation",
        "Fold instantiation into the transaction of the step that follows it, so storage initialization happens during the first call.",
    ),
    (
        "Invocation",
        "Batch the first invocation with the next dependent call so the follow-up execution reuses the same transaction.",
    ),
    (
        "Termination",
        "Merge termination with the final validation step so the contract is disabled and its closing state is verified in one transaction.",
    ),
    (
        "Validation",
        "Combine validation with the preceding step so state checks run atomically inside the transaction that produced the state.",
    ),
];

const DIRECT_ITEMS: [&str; 8] = [
    "Precompute constructor arguments off-chain so the combined deploy-and-call transaction carries less calldata.",
    "Cache the address derived at deployment so the first call needs no separate lookup.",
    "Reuse a verified bytecode template for repeated deployments of the same embedded contract.",
    "Pack the initial storage writes so the first invocation spends less gas.",
    "Bundle the first user call with deployment for contracts that are used exactly once.",
    "Use deterministic deployment addresses so clients can prepare the first call in advance.",
    "Skip redundant initializer checks when deployment and the first call are atomic.",
    "Emit one combined event for deployment and first execution to simplify indexing.",
];

/// Stages Method A tags, most localized first.
const DIRECT_STAGES: [&str; 3] = ["deployment", "invocation", "instantiation"];

const EXTRA_ITEMS: [&str; 5] = [
    "Reuse the merged transaction's signature check for the follow-up step.",
    "Share a single gas estimate across the merged steps.",
    "Emit one combined event for the merged steps.",
    "Roll back both merged steps together when either fails.",
    "Prepare the follow-up step's inputs before submitting the merged transaction.",
];

fn item_block(items: &[(String, Vec<&str>)]) -> String {
    let records: Vec<_> = items
        .iter()
        .map(|(d, s)| json!({ "description": d, "stages": s }))
        .collect();
    format!(
        "```json\n{}\n```\n",
        serde_json::to_string_pretty(&records).expect("item block serializes")
    )
}

/// Direct-prompt reply for a 1-based published round.
pub fn direct_reply(round: usize) -> String {
    let [items, stages, _, _] = REFERENCE_ROUNDS[(round - 1) % REFERENCE_ROUNDS.len()];
    let list: Vec<(String, Vec<&str>)> = (0..items)
        .map(|k| {
            (
                DIRECT_ITEMS[(k + round - 1) % DIRECT_ITEMS.len()].to_string(),
                vec![DIRECT_STAGES[k % stages]],
            )
        })
        .collect();
    format!(
        "Here are generalized optimizations inspired by embedded smart contracts:\n\n{}",
        item_block(&list)
    )
}

/// Apply replies for a 1-based published round, keyed by stage display name.
/// Applicable stages plus the origin item give the round's stage count; the
/// surplus items ride along as extra item blocks.
pub fn apply_replies(round: usize) -> Vec<(&'static str, String)> {
    let [_, _, items, stages] = REFERENCE_ROUNDS[(round - 1) % REFERENCE_ROUNDS.len()];
    let applicable_count = stages - 1;
    let rotation = (round - 1) % LIFECYCLE_APPLY.len();
    let mut order: Vec<usize> = (0..LIFECYCLE_APPLY.len()).collect();
    order.rotate_left(rotation);
    let applicable: Vec<usize> = {
        let mut chosen = order[..applicable_count].to_vec();
        chosen.sort_unstable();
        chosen
    };

    let mut extras: Vec<Vec<String>> = vec![Vec::new(); LIFECYCLE_APPLY.len()];
    for k in 0..items - stages {
        let target = applicable[k % applicable.len()];
        extras[target].push(EXTRA_ITEMS[k % EXTRA_ITEMS.len()].to_string());
    }

    LIFECYCLE_APPLY
        .iter()
        .enumerate()
        .map(|(i, (name, text))| {
            let reply = if !applicable.contains(&i) {
                format!(
                    "NOT-APPLICABLE: {} has no following step whose work could be merged into it without weakening its guarantees.",
                    name
                )
            } else if extras[i].is_empty() {
                text.to_string()
            } else {
                let id = name.to_lowercase();
                let list: Vec<(String, Vec<&str>)> = extras[i]
                    .iter()
                    .map(|d| (d.clone(), vec![id.as_str()]))
                    .collect();
                format!("{text}\n\nFurther improvements:\n\n{}", item_block(&list))
            };
            (*name, reply)
        })
        .collect()
}

fn target_line(name: &str) -> String {
    format!("Target stage: {name}\n")
}

/// The default mock rulebook for `prompts`. Variant-keyed rules come first;
/// round-1 answers serve as fallbacks for templates without an opener line.
pub fn builtin_rulebook(prompts: &PromptRegistry) -> Rulebook {
    let mut book = Rulebook::default();

    book.push(MockRule::new(
        Role::Diff,
        &["surface-coating technique"],
        DESK_DIFF,
    ));
    book.push(MockRule::new(
        Role::Gen,
        &["durable coating finish to the desk surface"],
        DESK_GEN,
    ));
    book.push(MockRule::new(
        Role::Scope,
        &["shares the same material"],
        "LOCAL: surface",
    ));
    book.push(MockRule::new(
        Role::Apply,
        &["shares the same material", &target_line("Legs")],
        "Coat the legs with the same durable protective finish, sanding the wood first so the coating bonds evenly.",
    ));
    book.push(MockRule::new(
        Role::Apply,
        &["shares the same material", &target_line("Drawers")],
        "Apply the protective finish to the drawer fronts only; the inner wood stays untreated.",
    ));

    book.push(MockRule::new(
        Role::Diff,
        &["first invocation into a single step"],
        LIFECYCLE_DIFF,
    ));
    book.push(MockRule::new(
        Role::Gen,
        &["deployment and the first invocation"],
        LIFECYCLE_GEN,
    ));
    book.push(MockRule::new(
        Role::Scope,
        &["immediately following step"],
        LIFECYCLE_SCOPE,
    ));

    for round in 1..=REFERENCE_ROUNDS.len() {
        let direct = prompts.variant_for_round(Role::Direct, round);
        if let Some(opener) = prompts
            .template(Role::Direct, direct)
            .ok()
            .and_then(|t| t.opener())
        {
            book.push(MockRule::new(
                Role::Direct,
                &[opener, "first invocation into a single step"],
                direct_reply(round),
            ));
        }
        let apply = prompts.variant_for_round(Role::Apply, round);
        if let Some(opener) = prompts
            .template(Role::Apply, apply)
            .ok()
            .and_then(|t| t.opener())
        {
            for (name, reply) in apply_replies(round) {
                book.push(MockRule::new(
                    Role::Apply,
                    &[opener, "immediately following step", &target_line(name)],
                    reply,
                ));
            }
        }
    }

    book.push(MockRule::new(
        Role::Direct,
        &["first invocation into a single step"],
        direct_reply(1),
    ));
    for (name, reply) in apply_replies(1) {
        book.push(MockRule::new(
            Role::Apply,
            &["immediately following step", &target_line(name)],
            reply,
        ));
    }
    book
}

/// Records the 20-round lifecycle experiment against the builtin rulebook
/// with default decoding. This is the content of the shipped reference
/// cassette.
pub fn record_reference_cassette(prompts: &PromptRegistry) -> Result<Cassette, ExperimentAborted> {
    let gateway = Gateway::mock(builtin_rulebook(prompts)).recording();
    let harness = Harness::new(&gateway, prompts, ScatterConfig::default());
    harness.run_experiment(
        REFERENCE_ROUNDS.len(),
        &embedded_contract_innovation(),
        &builtin_lifecycle_fixture(),
        |_| {},
    )?;
    Ok(gateway.cassette().expect("recording gateway"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_process_spec;

    #[test]
    fn table_means() {
        let n = REFERENCE_ROUNDS.len() as f64;
        let col = |i: usize| REFERENCE_ROUNDS.iter().map(|r| r[i]).sum::<usize>() as f64 / n;
        assert_eq!([col(0), col(1), col(2), col(3)], [6.0, 1.85, 6.3, 4.1]);
    }

    #[test]
    fn fixtures_validate() {
        validate_process_spec(desk_fixture()).unwrap();
        let desk = desk_fixture();
        embedded_contract_innovation()
            .validate(&crate::model::builtin_lifecycle_fixture())
            .unwrap();
        desk_coating_innovation().validate(&desk).unwrap();
    }

    #[test]
    fn apply_replies_match_round_shape() {
        for round in 1..=20 {
            let [_, _, items, stages] = REFERENCE_ROUNDS[round - 1];
            let replies = apply_replies(round);
            let applicable = replies
                .iter()
                .filter(|(_, r)| !r.starts_with("NOT-APPLICABLE"))
                .count();
            assert_eq!(applicable + 1, stages, "round {round}");
            let extras: usize = replies
                .iter()
                .map(|(_, r)| r.matches("\"description\"").count())
                .sum();
            assert_eq!(applicable + 1 + extras, items, "round {round}");
        }
    }
}
