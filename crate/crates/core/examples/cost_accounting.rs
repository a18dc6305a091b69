//! Prices a ledger with exact decimals, per iteration and in total.
//!
//! cargo run --example cost_accounting

use std::str::FromStr;

use rust_decimal::Decimal;

use sirloop::cost::{cost_by_iteration, total_cost, CostLedger, LedgerEntry, ModelPrice, PriceTable};

fn d(s: &str) -> Decimal {
    Decimal::from_str(s).unwrap()
}

fn main() {
    let prices = PriceTable::from_toml_str(
        r#"
        ["vision-3b"]
        input_per_1k = "0.0003"
        output_per_1k = "0.0005"
        "#,
    )
    .expect("price table")
    .with("text-8b", ModelPrice::new(d("0.0005"), d("0.0008")));

    let mut ledger = CostLedger::new();
    let calls = [
        ("vision-3b", 1, 12_000, 1_200),
        ("text-8b", 1, 3_000, 900),
        ("vision-3b", 2, 8_000, 800),
        ("text-8b", 2, 3_000, 1_100),
    ];
    for (model, iter, input, output) in calls {
        ledger.record(LedgerEntry {
            model: model.into(),
            outer_iteration: iter,
            input_tokens: input,
            output_tokens: output,
            approximate: false,
        });
    }

    for (iter, c) in cost_by_iteration(&ledger, &prices).expect("all models priced") {
        println!("iteration {iter}: input ${} output ${} total ${}", c.input_usd, c.output_usd, c.total_usd);
    }
    let total = total_cost(&ledger, &prices).expect("all models priced");
    println!("episode: input ${} output ${} total ${}", total.input_usd, total.output_usd, total.total_usd);

    ledger.record(LedgerEntry {
        model: "mystery".into(),
        outer_iteration: 3,
        input_tokens: 1,
        output_tokens: 1,
        approximate: false,
    });
    println!("with an unpriced model: {}", total_cost(&ledger, &prices).unwrap_err());
}
