use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Per-task losses evaluated before training (row 0) and after every episode
/// (row `j`), plus the visiting order of each epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalGrid {
    tasks: usize,
    rows: Vec<Vec<f64>>,
    permutations: Vec<Vec<usize>>,
}

impl EvalGrid {
    pub fn new(tasks: usize, initial: Vec<f64>) -> Result<Self> {
        let mut g = Self {
            tasks,
            rows: Vec::new(),
            permutations: Vec::new(),
        };
        g.push_row(initial)?;
        Ok(g)
    }

    /// Grid with an identity permutation logged for every complete epoch.
    pub fn fixed(tasks: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut it = rows.into_iter();
        let first = it.next().ok_or_else(|| Error::Contract("grid needs at least one row".into()))?;
        let mut g = Self::new(tasks, first)?;
        for r in it {
            g.push_row(r)?;
        }
        for _ in 0..(g.rows.len() - 1) / tasks {
            g.log_permutation((0..tasks).collect());
        }
        Ok(g)
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.tasks {
            return Err(Error::Contract(format!("grid row has {} entries, expected {}", row.len(), self.tasks)));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "evaluation" });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn log_permutation(&mut self, order: Vec<usize>) {
        self.permutations.push(order);
    }

    pub fn set_permutations(&mut self, permutations: Vec<Vec<usize>>) {
        self.permutations = permutations;
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn permutations(&self) -> &[Vec<usize>] {
        &self.permutations
    }

    /// Complete epochs covered by the rows.
    pub fn epochs(&self) -> usize {
        (self.rows.len() - 1) / self.tasks
    }

    pub fn is_fixed_order(&self) -> bool {
        self.permutations.iter().all(|p| p.iter().enumerate().all(|(i, &t)| i == t))
    }

    /// `eval_index,task_1,...,task_T`, one row per evaluation. Values use the
    /// shortest representation that round-trips.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("eval_index");
        for t in 1..=self.tasks {
            write!(s, ",task_{t}").unwrap();
        }
        s.push('\n');
        for (j, row) in self.rows.iter().enumerate() {
            write!(s, "{j}").unwrap();
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    /// Parses [`EvalGrid::to_csv`] output; the permutation log is supplied
    /// separately.
    pub fn from_csv(text: &str, permutations: Vec<Vec<usize>>) -> Result<Self> {
        let bad = |m: String| Error::Input(format!("malformed grid CSV: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"eval_index") || cols.len() < 2 {
            return Err(bad(format!("unexpected header `{header}`")));
        }
        let tasks = cols.len() - 1;
        let mut rows = Vec::new();
        for (j, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != tasks + 1 || fields[0].parse::<usize>().ok() != Some(j) {
                return Err(bad(format!("row {j}")));
            }
            let row = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| bad(format!("value `{f}` in row {j}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(bad("no data rows".into()));
        }
        let mut it = rows.into_iter();
        let mut g = Self::new(tasks, it.next().unwrap())?;
        for r in it {
            g.push_row(r)?;
        }
        g.permutations = permutations;
        Ok(g)
    }
}
