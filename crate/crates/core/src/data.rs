//! In-memory datasets and their CSV form.
//!
//! The CSV header uses role prefixes: `x1..`, `y`, `a1..`, `w1..`, `z1..`
//! and an optional `group` column. Hidden variables and structural noise are
//! kept only in memory.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub a: Option<DMatrix<f64>>,
    pub w: Option<DMatrix<f64>>,
    pub z: Option<DMatrix<f64>>,
    pub groups: Option<Vec<String>>,
    /// Original names of the `X` columns, when known.
    pub x_names: Vec<String>,
    /// Hidden block, only filled when simulated with the test flag.
    pub h: Option<DMatrix<f64>>,
    /// Structural noise `eps`, only filled when simulated with the test flag.
    pub eps: Option<DMatrix<f64>>,
}

fn default_names(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|i| format!("{prefix}{i}")).collect()
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::dim("rows of X and Y", y.len(), x.nrows()));
        }
        let x_names = default_names("x", x.ncols());
        Ok(Dataset {
            x,
            y,
            a: None,
            w: None,
            z: None,
            groups: None,
            x_names,
            h: None,
            eps: None,
        })
    }

    fn check_rows(&self, m: &DMatrix<f64>, what: &str) -> Result<()> {
        if m.nrows() != self.n() {
            return Err(Error::dim(format!("rows of {what}"), self.n(), m.nrows()));
        }
        Ok(())
    }

    pub fn with_a(mut self, a: DMatrix<f64>) -> Result<Self> {
        self.check_rows(&a, "A")?;
        self.a = Some(a);
        Ok(self)
    }

    pub fn with_w(mut self, w: DMatrix<f64>) -> Result<Self> {
        self.check_rows(&w, "W")?;
        self.w = Some(w);
        Ok(self)
    }

    pub fn with_z(mut self, z: DMatrix<f64>) -> Result<Self> {
        self.check_rows(&z, "Z")?;
        self.z = Some(z);
        Ok(self)
    }

    pub fn with_groups(mut self, groups: Vec<String>) -> Result<Self> {
        if groups.len() != self.n() {
            return Err(Error::dim("group labels", self.n(), groups.len()));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn with_x_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.x.ncols() {
            return Err(Error::dim("X column names", self.x.ncols(), names.len()));
        }
        self.x_names = names;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d_x(&self) -> usize {
        self.x.ncols()
    }

    /// Rows selected by `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)]);
        Dataset {
            x: pick(&self.x),
            y: DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]),
            a: self.a.as_ref().map(pick),
            w: self.w.as_ref().map(pick),
            z: self.z.as_ref().map(pick),
            groups: self
                .groups
                .as_ref()
                .map(|g| idx.iter().map(|&i| g[i].clone()).collect()),
            x_names: self.x_names.clone(),
            h: self.h.as_ref().map(pick),
            eps: self.eps.as_ref().map(pick),
        }
    }

    /// Distinct group labels in order of first appearance.
    pub fn group_levels(&self) -> Vec<String> {
        let mut levels: Vec<String> = Vec::new();
        if let Some(g) = &self.groups {
            for label in g {
                if !levels.contains(label) {
                    levels.push(label.clone());
                }
            }
        }
        levels
    }

    fn header(&self) -> Vec<String> {
        let mut h = default_names("x", self.d_x());
        h.push("y".into());
        for (prefix, block) in [("a", &self.a), ("w", &self.w), ("z", &self.z)] {
            if let Some(b) = block {
                h.extend(default_names(prefix, b.ncols()));
            }
        }
        if self.groups.is_some() {
            h.push("group".into());
        }
        h
    }

    pub fn write_csv_to<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(out);
        wr.write_record(self.header())?;
        let mut record = Vec::new();
        for i in 0..self.n() {
            record.clear();
            record.extend(self.x.row(i).iter().map(|v| format!("{v:e}")));
            record.push(format!("{:e}", self.y[i]));
            for b in [&self.a, &self.w, &self.z].into_iter().flatten() {
                record.extend(b.row(i).iter().map(|v| format!("{v:e}")));
            }
            if let Some(g) = &self.groups {
                record.push(g[i].clone());
            }
            wr.write_record(&record)?;
        }
        wr.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        Self::read_csv_from(file)
    }

    /// Reads the role-prefixed format written by [`Dataset::write_csv`].
    pub fn read_csv_from<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(input);
        let header: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut roles = Vec::with_capacity(header.len());
        for name in &header {
            let role = if name == "y" {
                'y'
            } else if name == "group" {
                'g'
            } else {
                let mut chars = name.chars();
                match (chars.next(), chars.as_str().parse::<usize>()) {
                    (Some(c @ ('x' | 'a' | 'w' | 'z')), Ok(_)) => c,
                    _ => {
                        return Err(Error::Data(format!(
                            "unrecognised column '{name}'; expected x<i>, y, a<i>, w<i>, z<i> or group"
                        )))
                    }
                }
            };
            roles.push(role);
        }
        let count = |r: char| roles.iter().filter(|&&c| c == r).count();
        if count('y') != 1 || count('x') == 0 {
            return Err(Error::Data("CSV needs one 'y' column and at least one 'x' column".into()));
        }
        let mut cols: [Vec<f64>; 5] = Default::default();
        let slot = |r: char| match r {
            'x' => 0,
            'y' => 1,
            'a' => 2,
            'w' => 3,
            _ => 4,
        };
        let mut groups = Vec::new();
        let mut n = 0;
        for (line, record) in rd.records().enumerate() {
            let record = record?;
            for (j, field) in record.iter().enumerate() {
                let role = roles[j];
                if role == 'g' {
                    groups.push(field.to_string());
                    continue;
                }
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Data(format!(
                        "row {}: column '{}' is not numeric: '{field}'",
                        line + 1,
                        header[j]
                    ))
                })?;
                cols[slot(role)].push(v);
            }
            n += 1;
        }
        let block = |c: &[f64], d: usize| DMatrix::from_row_slice(n, d, c);
        let mut data = Dataset::new(block(&cols[0], count('x')), DVector::from_vec(cols[1].clone()))?;
        if count('a') > 0 {
            data = data.with_a(block(&cols[2], count('a')))?;
        }
        if count('w') > 0 {
            data = data.with_w(block(&cols[3], count('w')))?;
        }
        if count('z') > 0 {
            data = data.with_z(block(&cols[4], count('z')))?;
        }
        if count('g') > 0 {
            data = data.with_groups(groups)?;
        }
        Ok(data)
    }
}
