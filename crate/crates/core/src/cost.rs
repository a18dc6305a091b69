//! Token ledger and per-1000-token pricing in exact decimal arithmetic.

use std::collections::BTreeMap;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Deserializer, Serialize};

/// Fractional digits kept for every monetary amount.
pub const MONEY_SCALE: u32 = 10;

#[derive(Debug, thiserror::Error)]
pub enum CostError {
    #[error("no price for model `{0}`")]
    UnknownModel(String),
    #[error("negative price for model `{0}`")]
    NegativePrice(String),
    #[error("reading price table: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing price table: {0}")]
    Parse(String),
}

fn decimal_any<'de, D: Deserializer<'de>>(d: D) -> Result<Decimal, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Str(String),
        Int(i64),
        Float(f64),
    }
    let text = match Raw::deserialize(d)? {
        Raw::Str(s) => s,
        Raw::Int(i) => i.to_string(),
        // shortest round-trip form, e.g. 0.0003 -> "0.0003"
        Raw::Float(f) => f.to_string(),
    };
    text.trim().parse().map_err(serde::de::Error::custom)
}

/// USD per 1000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPrice {
    #[serde(deserialize_with = "decimal_any")]
    pub input_per_1k: Decimal,
    #[serde(deserialize_with = "decimal_any")]
    pub output_per_1k: Decimal,
}

impl ModelPrice {
    pub fn new(input_per_1k: Decimal, output_per_1k: Decimal) -> Self {
        Self {
            input_per_1k,
            output_per_1k,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable {
    pub models: BTreeMap<String, ModelPrice>,
}

impl PriceTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, model: impl Into<String>, price: ModelPrice) -> Self {
        self.models.insert(model.into(), price);
        self
    }

    pub fn get(&self, model: &str) -> Option<&ModelPrice> {
        self.models.get(model)
    }

    fn validated(self) -> Result<Self, CostError> {
        for (name, p) in &self.models {
            if p.input_per_1k.is_sign_negative() || p.output_per_1k.is_sign_negative() {
                return Err(CostError::NegativePrice(name.clone()));
            }
        }
        Ok(self)
    }

    pub fn from_json_str(s: &str) -> Result<Self, CostError> {
        serde_json::from_str::<Self>(s)
            .map_err(|e| CostError::Parse(e.to_string()))?
            .validated()
    }

    pub fn from_toml_str(s: &str) -> Result<Self, CostError> {
        toml::from_str::<Self>(s)
            .map_err(|e| CostError::Parse(e.to_string()))?
            .validated()
    }

    /// `.toml` files are read as TOML, anything else as JSON.
    pub fn load(path: &Path) -> Result<Self, CostError> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            _ => Self::from_json_str(&text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub model: String,
    pub outer_iteration: u32,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub approximate: bool,
}

/// Entries in call order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub entries: Vec<LedgerEntry>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, entry: LedgerEntry) {
        self.entries.push(entry);
    }

    pub fn concat(&self, other: &CostLedger) -> CostLedger {
        let mut entries = self.entries.clone();
        entries.extend(other.entries.iter().cloned());
        CostLedger { entries }
    }

    pub fn input_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.input_tokens).sum()
    }

    pub fn output_tokens(&self) -> u64 {
        self.entries.iter().map(|e| e.output_tokens).sum()
    }

    pub fn any_approximate(&self) -> bool {
        self.entries.iter().any(|e| e.approximate)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub input_usd: Decimal,
    pub output_usd: Decimal,
    pub total_usd: Decimal,
}

impl std::ops::Add for CostBreakdown {
    type Output = CostBreakdown;

    fn add(self, rhs: Self) -> Self {
        CostBreakdown {
            input_usd: (self.input_usd + rhs.input_usd).normalize(),
            output_usd: (self.output_usd + rhs.output_usd).normalize(),
            total_usd: (self.total_usd + rhs.total_usd).normalize(),
        }
    }
}

fn tokens_cost(tokens: u64, per_1k: Decimal) -> Decimal {
    (Decimal::from(tokens) * per_1k / Decimal::ONE_THOUSAND)
        .round_dp(MONEY_SCALE)
        .normalize()
}

fn entry_cost(entry: &LedgerEntry, prices: &PriceTable) -> Result<CostBreakdown, CostError> {
    let price = prices
        .get(&entry.model)
        .ok_or_else(|| CostError::UnknownModel(entry.model.clone()))?;
    let input_usd = tokens_cost(entry.input_tokens, price.input_per_1k);
    let output_usd = tokens_cost(entry.output_tokens, price.output_per_1k);
    Ok(CostBreakdown {
        input_usd,
        output_usd,
        total_usd: input_usd + output_usd,
    })
}

/// Sum over entries of `tokens_in/1000 * price_in + tokens_out/1000 * price_out`.
pub fn total_cost(ledger: &CostLedger, prices: &PriceTable) -> Result<CostBreakdown, CostError> {
    ledger
        .entries
        .iter()
        .try_fold(CostBreakdown::default(), |acc, e| Ok(acc + entry_cost(e, prices)?))
}

/// Subtotals keyed by outer iteration.
pub fn cost_by_iteration(
    ledger: &CostLedger,
    prices: &PriceTable,
) -> Result<BTreeMap<u32, CostBreakdown>, CostError> {
    let mut out: BTreeMap<u32, CostBreakdown> = BTreeMap::new();
    for e in &ledger.entries {
        let c = entry_cost(e, prices)?;
        let slot = out.entry(e.outer_iteration).or_default();
        *slot = *slot + c;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    fn d(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    fn entry(model: &str, iter: u32, i: u64, o: u64) -> LedgerEntry {
        LedgerEntry {
            model: model.into(),
            outer_iteration: iter,
            input_tokens: i,
            output_tokens: o,
            approximate: false,
        }
    }

    #[test]
    fn empty_ledger_costs_nothing() {
        let c = total_cost(&CostLedger::new(), &PriceTable::new()).unwrap();
        assert_eq!(c, CostBreakdown::default());
    }

    #[test]
    fn hand_arithmetic() {
        // 1000 in at 0.001/1k = 0.001; 500 out at 0.002/1k = 0.001
        let prices = PriceTable::new().with("m", ModelPrice::new(d("0.001"), d("0.002")));
        let mut ledger = CostLedger::new();
        ledger.record(entry("m", 1, 1000, 500));
        let c = total_cost(&ledger, &prices).unwrap();
        assert_eq!(c.input_usd, d("0.001"));
        assert_eq!(c.output_usd, d("0.001"));
        assert_eq!(c.total_usd, d("0.002"));
    }

    #[test]
    fn unknown_model() {
        let mut ledger = CostLedger::new();
        ledger.record(entry("ghost", 1, 1, 1));
        assert!(matches!(total_cost(&ledger, &PriceTable::new()), Err(CostError::UnknownModel(m)) if m == "ghost"));
    }

    #[test]
    fn price_files() {
        let json = PriceTable::from_json_str(r#"{"a": {"input_per_1k": 0.0003, "output_per_1k": "0.0009"}}"#).unwrap();
        assert_eq!(json.get("a").unwrap().input_per_1k, d("0.0003"));
        assert_eq!(json.get("a").unwrap().output_per_1k, d("0.0009"));
        let toml = PriceTable::from_toml_str("[\"qwen3-8b\"]\ninput_per_1k = 0.0005\noutput_per_1k = 2\n").unwrap();
        assert_eq!(toml.get("qwen3-8b").unwrap().input_per_1k, d("0.0005"));
        assert_eq!(toml.get("qwen3-8b").unwrap().output_per_1k, d("2"));
        assert!(matches!(
            PriceTable::from_json_str(r#"{"a": {"input_per_1k": -1, "output_per_1k": 0}}"#),
            Err(CostError::NegativePrice(_))
        ));
    }

    #[test]
    fn per_iteration_subtotals_sum_to_total() {
        let prices = PriceTable::new()
            .with("t", ModelPrice::new(d("0.0003"), d("0.0009")))
            .with("r", ModelPrice::new(d("0.0005"), d("0.002")));
        let mut ledger = CostLedger::new();
        ledger.record(entry("t", 1, 1234, 99));
        ledger.record(entry("r", 1, 777, 31));
        ledger.record(entry("t", 2, 5, 1));
        let by_iter = cost_by_iteration(&ledger, &prices).unwrap();
        assert_eq!(by_iter.len(), 2);
        let sum = by_iter.values().fold(CostBreakdown::default(), |a, b| a + *b);
        assert_eq!(sum, total_cost(&ledger, &prices).unwrap());
    }
}
