//! CSV and key-value serialization with a fixed 17-significant-digit number format.

use std::io::Write;

use crate::CliError;

pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// In-memory CSV table; trailing `#` comment lines may follow the rows.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
    comments: Vec<String>,
}

impl Table {
    pub fn new(header: &[&str]) -> Result<Self, CliError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Self {
            writer,
            comments: Vec::new(),
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn numbers(&mut self, values: &[f64]) -> Result<(), CliError> {
        self.row(values.iter().map(|&v| num(v)))
    }

    pub fn comment(&mut self, line: impl Into<String>) {
        self.comments.push(line.into());
    }

    pub fn into_bytes(self) -> Result<Vec<u8>, CliError> {
        let mut bytes = self
            .writer
            .into_inner()
            .map_err(|e| CliError::Io(e.into_error()))?;
        for c in self.comments {
            writeln!(bytes, "# {c}")?;
        }
        Ok(bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(num(0.1), "1.0000000000000001e-1");
        assert_eq!(num(1.367154164), "1.3671541640000000e0");
        let back: f64 = num(std::f64::consts::PI).parse().unwrap();
        assert_eq!(back, std::f64::consts::PI);
    }

    #[test]
    fn comments_follow_rows() {
        let mut t = Table::new(&["a", "b"]).unwrap();
        t.numbers(&[1.0, 2.0]).unwrap();
        t.comment("done");
        let text = String::from_utf8(t.into_bytes().unwrap()).unwrap();
        assert_eq!(
            text,
            "a,b\n1.0000000000000000e0,2.0000000000000000e0\n# done\n"
        );
    }
}
