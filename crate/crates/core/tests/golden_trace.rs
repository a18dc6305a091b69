mod common;

#[test]
fn poster_episode_matches_golden_file() {
    common::golden_trace().unwrap();
}
