use std::fmt;

use serde::{Deserialize, Serialize};

/// One traced layer. Shapes exclude the batch axis.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub name: String,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShapeTrace {
    pub rows: Vec<TraceRow>,
}

pub fn dims(shape: &[usize]) -> String {
    shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("×")
}

impl ShapeTrace {
    pub(crate) fn push(&mut self, name: impl Into<String>, input: &[usize], output: &[usize], params: usize) {
        self.rows.push(TraceRow {
            name: name.into(),
            input: input.to_vec(),
            output: output.to_vec(),
            params,
        });
    }

    pub fn total_params(&self) -> usize {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn row(&self, name: &str) -> Option<&TraceRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

impl fmt::Display for ShapeTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
        writeln!(f, "{:<width$}  {:>14}  {:>14}  {:>10}", "layer", "input", "output", "params")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<width$}  {:>14}  {:>14}  {:>10}",
                r.name,
                dims(&r.input),
                dims(&r.output),
                r.params
            )?;
        }
        write!(f, "{:<width$}  {:>14}  {:>14}  {:>10}", "total", "", "", self.total_params())
    }
}
