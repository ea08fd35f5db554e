use std::io::Write;
use std::path::Path;

/// Rectangular table of reals with `key: value` metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultSeries {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// written in order, one `# key: value` line each
    pub metadata: Vec<(String, String)>,
}

#[derive(Debug, thiserror::Error)]
pub enum SeriesError {
    #[error("row {row} has {got} values for {want} columns")]
    Ragged { row: usize, got: usize, want: usize },
    #[error("column '{column}' is not strictly increasing at row {row}")]
    NotIncreasing { column: String, row: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Twelve significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.11e}")
}

impl ResultSeries {
    pub fn new(columns: &[&str]) -> Self {
        ResultSeries { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new(), metadata: Vec::new() }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        self.rows.push(row);
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.push((key.into(), value.into()));
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    /// Rectangular, and a leading `t_s` column strictly increasing.
    pub fn check(&self) -> Result<(), SeriesError> {
        for (i, r) in self.rows.iter().enumerate() {
            if r.len() != self.columns.len() {
                return Err(SeriesError::Ragged { row: i, got: r.len(), want: self.columns.len() });
            }
        }
        if self.columns.first().is_some_and(|c| c == "t_s") {
            for i in 1..self.rows.len() {
                if !(self.rows[i][0] > self.rows[i - 1][0]) {
                    return Err(SeriesError::NotIncreasing { column: "t_s".into(), row: i });
                }
            }
        }
        Ok(())
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), SeriesError> {
        self.check()?;
        for (k, v) in &self.metadata {
            // multi-line values (the resolved config) continue on indented comment lines
            let mut lines = v.lines();
            writeln!(w, "# {k}: {}", lines.next().unwrap_or(""))?;
            for l in lines {
                writeln!(w, "#   {l}")?;
            }
        }
        writeln!(w, "{}", self.columns.join(","))?;
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| num(*v)).collect();
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String, SeriesError> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(String::from_utf8(buf).expect("CSV is ASCII"))
    }
}

pub fn write_csv(rs: &ResultSeries, path: &Path) -> Result<(), SeriesError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    rs.write(&mut f)?;
    f.flush()?;
    Ok(())
}

/// Rows of a CSV written by [`write_csv`]: (column names, rows), metadata skipped.
pub fn read_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or("no column header")?;
    let columns: Vec<String> = header.split(',').map(str::to_string).collect();
    let mut rows = Vec::new();
    for (i, l) in lines.enumerate() {
        let row = l
            .split(',')
            .map(|c| c.parse::<f64>().map_err(|e| format!("data row {}: {e}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((columns, rows))
}
