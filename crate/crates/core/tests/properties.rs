mod common;

#[test]
fn cost_arithmetic() {
    common::cost_table().unwrap();
}

#[test]
fn grid_tiles_exactly() {
    common::grid_geometry(2_000).unwrap();
}

#[test]
fn sir_schema() {
    common::sir_schema().unwrap();
}

#[test]
fn thresholds() {
    common::thresholds().unwrap();
}
