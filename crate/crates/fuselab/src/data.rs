//! Mixed quantitative/categorical tabular data shared by the emulator and
//! the fusion layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One categorical variable and its admissible levels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CatVar {
    pub name: String,
    pub levels: Vec<String>,
}

impl CatVar {
    pub fn new(name: impl Into<String>, levels: Vec<String>) -> Self {
        CatVar { name: name.into(), levels }
    }

    pub fn cardinality(&self) -> usize {
        self.levels.len()
    }
}

/// Column layout of a mixed dataset: named quantitative columns followed by
/// categorical variables with declared cardinalities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub quant: Vec<String>,
    pub cats: Vec<CatVar>,
}

impl Schema {
    pub fn quantitative(names: &[&str]) -> Self {
        Schema { quant: names.iter().map(|s| s.to_string()).collect(), cats: vec![] }
    }

    pub fn with_cat(mut self, cat: CatVar) -> Self {
        self.cats.push(cat);
        self
    }

    pub fn dx(&self) -> usize {
        self.quant.len()
    }

    pub fn dt(&self) -> usize {
        self.cats.len()
    }

    /// Total number of categorical levels across variables.
    pub fn total_levels(&self) -> usize {
        self.cats.iter().map(|c| c.cardinality()).sum()
    }

    pub fn cat_index(&self, name: &str) -> Option<usize> {
        self.cats.iter().position(|c| c.name == name)
    }

    pub fn check_levels(&self, levels: &[usize]) -> Result<()> {
        if levels.len() != self.cats.len() {
            return Err(Error::domain(format!(
                "expected {} categorical indices, got {}",
                self.cats.len(),
                levels.len()
            )));
        }
        for (cat, &lvl) in self.cats.iter().zip(levels) {
            if lvl >= cat.cardinality() {
                return Err(Error::domain(format!(
                    "level index {lvl} out of range for `{}` (cardinality {})",
                    cat.name,
                    cat.cardinality()
                )));
            }
        }
        Ok(())
    }
}

/// One input point: quantitative coordinates plus categorical level indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedInput {
    pub quant: Vec<f64>,
    pub levels: Vec<usize>,
}

impl MixedInput {
    pub fn quantitative(quant: Vec<f64>) -> Self {
        MixedInput { quant, levels: vec![] }
    }

    pub fn new(quant: Vec<f64>, levels: Vec<usize>) -> Self {
        MixedInput { quant, levels }
    }
}

/// Rows of (input, response) under a uniform schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedDataset {
    pub schema: Schema,
    pub inputs: Vec<MixedInput>,
    pub responses: Vec<f64>,
}

impl MixedDataset {
    pub fn new(schema: Schema, inputs: Vec<MixedInput>, responses: Vec<f64>) -> Result<Self> {
        if inputs.len() != responses.len() {
            return Err(Error::domain(format!(
                "{} inputs but {} responses",
                inputs.len(),
                responses.len()
            )));
        }
        for (i, input) in inputs.iter().enumerate() {
            if input.quant.len() != schema.dx() {
                return Err(Error::domain(format!(
                    "row {i}: expected {} quantitative columns, got {}",
                    schema.dx(),
                    input.quant.len()
                )));
            }
            schema.check_levels(&input.levels)?;
            if input.quant.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("row {i}: non-finite input value")));
            }
        }
        if responses.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite response value"));
        }
        Ok(MixedDataset { schema, inputs, responses })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Rows whose level of categorical `cat` equals `level`.
    pub fn filter_by_level(&self, cat: usize, level: usize) -> MixedDataset {
        let mut inputs = Vec::new();
        let mut responses = Vec::new();
        for (input, &y) in self.inputs.iter().zip(&self.responses) {
            if input.levels[cat] == level {
                inputs.push(input.clone());
                responses.push(y);
            }
        }
        MixedDataset { schema: self.schema.clone(), inputs, responses }
    }

    /// Subset by row index, preserving order.
    pub fn select(&self, rows: &[usize]) -> MixedDataset {
        MixedDataset {
            schema: self.schema.clone(),
            inputs: rows.iter().map(|&i| self.inputs[i].clone()).collect(),
            responses: rows.iter().map(|&i| self.responses[i]).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_rejects_bad_levels() {
        let schema = Schema::quantitative(&["a"]).with_cat(CatVar::new(
            "src",
            vec!["one".into(), "two".into()],
        ));
        assert!(schema.check_levels(&[0]).is_ok());
        assert!(schema.check_levels(&[2]).is_err());
        assert!(schema.check_levels(&[0, 0]).is_err());
    }

    #[test]
    fn dataset_validates_rows() {
        let schema = Schema::quantitative(&["a", "b"]);
        let ok = MixedDataset::new(
            schema.clone(),
            vec![MixedInput::quantitative(vec![1.0, 2.0])],
            vec![3.0],
        );
        assert!(ok.is_ok());
        let bad = MixedDataset::new(
            schema.clone(),
            vec![MixedInput::quantitative(vec![1.0])],
            vec![3.0],
        );
        assert!(bad.is_err());
        let nan = MixedDataset::new(
            schema,
            vec![MixedInput::quantitative(vec![1.0, f64::NAN])],
            vec![3.0],
        );
        assert!(nan.is_err());
    }
}
