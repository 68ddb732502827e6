use npi_core::knapsack::knapsack_schema;
use npi_core::search::search_schema;
use npi_core::sort::{bubble_insertion_schema, quicksort_schema, swap_with_next};
use npi_core::vm::{ArgKind, Instruction, InstructionSchema, InstructionType};
use proptest::prelude::*;

fn schemas() -> Vec<&'static InstructionSchema> {
    vec![
        bubble_insertion_schema(),
        quicksort_schema(),
        search_schema(),
        knapsack_schema(),
    ]
}

#[test]
fn round_trip_every_instruction_of_every_schema() {
    for s in schemas() {
        let width = s.encoding_width().unwrap();
        let all = s.enumerate().unwrap();
        assert_eq!(all.len() as u128, s.action_count().unwrap());
        for ins in &all {
            let enc = s.encode_prev_action(Some(ins)).unwrap();
            assert_eq!(enc.len(), width);
            assert_eq!(enc[width - 1], 0.0);
            assert_eq!(s.decode_prev_action(&enc).unwrap().as_ref(), Some(ins));
        }
        let none = s.encode_prev_action(None).unwrap();
        assert_eq!(s.decode_prev_action(&none).unwrap(), None);
    }
}

#[test]
fn action_counts() {
    assert_eq!(bubble_insertion_schema().action_count().unwrap(), 28);
    assert_eq!(quicksort_schema().action_count().unwrap(), 2096);
    assert_eq!(search_schema().action_count().unwrap(), 8 + 16 + 64 + 4 + 1);
    assert_eq!(knapsack_schema().action_count().unwrap(), 6);
}

#[test]
fn swap_with_next_under_quicksort_has_two_bits() {
    let enc = quicksort_schema()
        .encode_prev_action(Some(&swap_with_next(2)))
        .unwrap();
    assert_eq!(enc.len(), 58);
    let hot: Vec<usize> = (0..58).filter(|&k| enc[k] != 0.0).collect();
    // type 0 one-hot, then the first argument block starts right after six type bits
    assert_eq!(hot, vec![0, 6 + 2]);
}

#[test]
fn distinct_instructions_have_distinct_encodings() {
    let s = quicksort_schema();
    let mut seen = std::collections::HashSet::new();
    for ins in s.enumerate().unwrap() {
        let enc = s.encode_prev_action(Some(&ins)).unwrap();
        let key: Vec<u8> = enc.iter().map(|&x| x as u8).collect();
        assert!(seen.insert(key));
    }
}

fn arb_kind() -> impl Strategy<Value = ArgKind> {
    prop_oneof![Just(ArgKind::Bool), (1usize..5).prop_map(ArgKind::Int)]
}

const NAMES: [&str; 4] = ["T0", "T1", "T2", "T3"];

fn arb_schema() -> impl Strategy<Value = InstructionSchema> {
    prop::collection::vec(prop::collection::vec(arb_kind(), 0..4), 1..5).prop_map(|types| {
        let types = types
            .into_iter()
            .enumerate()
            .map(|(i, args)| InstructionType::new(NAMES[i], args))
            .collect();
        InstructionSchema::new("random", types).unwrap()
    })
}

proptest! {
    #[test]
    fn random_small_schemas_round_trip(s in arb_schema()) {
        let width = s.encoding_width().unwrap();
        let expected: usize = s.num_types()
            + s.types().iter().flat_map(|t| &t.args).map(|k| k.encoding_width().unwrap()).sum::<usize>()
            + 1;
        prop_assert_eq!(width, expected);
        for ins in s.enumerate().unwrap() {
            let enc = s.encode_prev_action(Some(&ins)).unwrap();
            prop_assert_eq!(enc.len(), width);
            prop_assert_eq!(s.decode_prev_action(&enc).unwrap(), Some(ins));
        }
    }

    #[test]
    fn out_of_range_arguments_are_rejected(v in 4usize..100) {
        let bad = Instruction::new(0, vec![v]);
        prop_assert!(bubble_insertion_schema().validate(&bad).is_err());
        prop_assert!(bubble_insertion_schema().encode_prev_action(Some(&bad)).is_err());
    }
}
