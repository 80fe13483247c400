use proptest::prelude::*;
use xicm_core::demo_store::{Demonstration, ObjectRecord, Pose7, WorkspaceBounds};
use xicm_core::discretizer::QuantizedPose;
use xicm_core::gateway::{echo_nearest_backend, CompletionBackend, EchoNearestBackend};
use xicm_core::keyframe::{KeyActionSequence, Keyframe};
use xicm_core::prompt::{build_prompt, parse_prediction, system_prompt, DemoBlock, PromptBundle, SelectedDemo};

const GOLDEN_K2: &str = include_str!("fixtures/prompt_k2.txt");

fn unit_ws() -> WorkspaceBounds {
    WorkspaceBounds::new([0.0; 3], [1.0; 3], 100).unwrap()
}

fn demo(id: &str, language: &str, objects: &[(&str, [f64; 3])]) -> Demonstration {
    Demonstration {
        id: id.into(),
        task_name: id.into(),
        language: language.into(),
        observations: vec![],
        actions: vec![],
        objects: objects.iter().map(|(n, c)| ObjectRecord::new(n, *c).unwrap()).collect(),
    }
}

fn keys(id: &str, poses: &[Pose7]) -> KeyActionSequence {
    KeyActionSequence {
        demo_id: id.into(),
        keyframes: poses
            .iter()
            .enumerate()
            .map(|(i, p)| Keyframe {
                timestep: i as u32 + 1,
                action: *p,
            })
            .collect(),
    }
}

#[test]
fn k2_prompt_matches_golden_file() {
    let stack = demo("stack_0000", "stack the block", &[("block", [0.525, 0.505, 0.195]), ("green block", [0.305, 0.405, 0.055])]);
    let stack_keys = keys(
        "stack_0000",
        &[
            Pose7::new([0.535, 0.575, 0.175], [0.0, 180.0, 265.0], false),
            Pose7::new([0.305, 0.405, 0.105], [0.0, 180.0, 0.0], true),
        ],
    );
    let push = demo("push_0000", "push the button", &[]);
    let push_keys = keys("push_0000", &[Pose7::new([0.705, 0.205, 0.305], [0.0, 180.0, 0.0], false)]);
    // selection order is irrelevant: blocks sort by similarity
    let selected = [
        SelectedDemo { demo: &push, keyframes: &push_keys, similarity: 0.4 },
        SelectedDemo { demo: &stack, keyframes: &stack_keys, similarity: 0.9 },
    ];
    let query = [ObjectRecord::new("lever", [0.455, 0.655, 0.025]).unwrap()];
    let bundle = build_prompt(&selected, "push the lever", &query, &unit_ws()).unwrap();
    assert_eq!(bundle.rendered, GOLDEN_K2);
    assert_eq!(bundle.rendered, bundle.render());
}

#[test]
fn k1_prompt_puts_the_query_last() {
    let d = demo("d", "close the lid", &[("lid", [0.0, 0.0, 0.0])]);
    let k = keys("d", &[Pose7::new([0.0; 3], [0.0; 3], true)]);
    let bundle = build_prompt(
        &[SelectedDemo { demo: &d, keyframes: &k, similarity: 1.0 }],
        "open the lid",
        &[],
        &unit_ws(),
    )
    .unwrap();
    assert_eq!(bundle.demo_blocks.len(), 1);
    let expected_tail = "Task: close the lid\nObjects: lid: [0, 0, 0]\nActions:\n[0, 0, 0, 0, 0, 0, 1]\n\n\
                         Task: open the lid\nObjects: (no objects)\nActions:\n";
    assert!(bundle.rendered.ends_with(expected_tail), "{}", bundle.rendered);
    assert!(bundle.rendered.starts_with(&system_prompt(100)));
}

fn block_strategy() -> impl Strategy<Value = DemoBlock> {
    (
        0u8..6,
        0usize..4,
        prop::collection::vec(prop::array::uniform7(0i64..72), 1..4),
    )
        .prop_map(|(id, sim, raw)| DemoBlock {
            demo_id: format!("demo_{id}"),
            language: format!("task {id}"),
            objects: vec![],
            actions: raw
                .into_iter()
                .map(|mut v| {
                    v[6] %= 2;
                    QuantizedPose::from_array(v, 100).unwrap()
                })
                .collect(),
            // few distinct values so ties are common
            similarity: [0.9, 0.5, 0.5, 0.1][sim],
        })
}

proptest! {
    #[test]
    fn rendering_is_permutation_invariant(
        blocks in prop::collection::vec(block_strategy(), 1..8),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        // unique ids, as in a real dataset
        let mut blocks = blocks;
        blocks.sort_by(|a, b| a.demo_id.cmp(&b.demo_id));
        blocks.dedup_by(|a, b| a.demo_id == b.demo_id);
        let mut shuffled = blocks.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let a = PromptBundle::new("SYS".into(), blocks, "q".into(), vec![]);
        let b = PromptBundle::new("SYS".into(), shuffled, "q".into(), vec![]);
        prop_assert_eq!(&a.rendered, &b.rendered);
        for w in a.demo_blocks.windows(2) {
            prop_assert!(
                w[0].similarity > w[1].similarity
                    || (w[0].similarity == w[1].similarity && w[0].demo_id < w[1].demo_id)
            );
        }
    }

    #[test]
    fn echo_round_trips_the_first_block(blocks in prop::collection::vec(block_strategy(), 1..5)) {
        let bundle = PromptBundle::new("SYS".into(), blocks, "q".into(), vec![]);
        let text = echo_nearest_backend(&bundle).unwrap();
        prop_assert_eq!(parse_prediction(&text).unwrap().actions, bundle.demo_blocks[0].actions.clone());
        let record = EchoNearestBackend.complete(&bundle).unwrap();
        prop_assert_eq!(record.response_text, text);
    }
}
