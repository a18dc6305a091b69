mod common;

#[test]
fn random_replies_always_end_with_an_answer() {
    common::fuzz_episodes(300).unwrap();
}
