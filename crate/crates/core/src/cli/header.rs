use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use super::{TOOL, VERSION};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::profiler::{HeadLabel, HeadPartition};

/// Columns holding wall-clock measurements. They are the only values that
/// differ between two runs of the same recorded command.
pub const VOLATILE: [&str; 3] = ["micros", "tokens_per_second", "speedup_vs_full"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub n_layers: usize,
    pub n_heads: usize,
    pub labels: Vec<String>,
}

impl PartitionRecord {
    pub fn from_partition(p: &HeadPartition) -> Self {
        Self {
            n_layers: p.n_layers(),
            n_heads: p.n_heads(),
            labels: p.labels().iter().map(|l| l.to_string()).collect(),
        }
    }

    pub fn to_partition(&self) -> Result<HeadPartition> {
        let labels = self
            .labels
            .iter()
            .map(|l| l.parse::<HeadLabel>())
            .collect::<Result<Vec<_>>>()?;
        HeadPartition::new(self.n_layers, self.n_heads, labels)
    }
}

/// Everything needed to re-run the command that wrote a file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: toml::Table,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionRecord>,
}

impl RunRecord {
    pub fn new<A: Serialize>(
        command: &str,
        args: &A,
        model: Option<&ModelConfig>,
        partition: Option<&HeadPartition>,
    ) -> Result<Self> {
        let args = toml::Table::try_from(args)
            .map_err(|e| Error::Consistency(format!("cannot record settings: {e}")))?;
        Ok(Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            args,
            model: model.cloned(),
            partition: partition.map(PartitionRecord::from_partition),
        })
    }

    pub fn args_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        self.args
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| Error::Input(format!("header settings: {}", e.message())))
    }

    /// The record as `# `-prefixed lines.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let body = toml::to_string(self).map_err(|e| Error::Consistency(format!("cannot record settings: {e}")))?;
        for line in body.lines() {
            if line.is_empty() {
                writeln!(out, "#")?;
            } else {
                writeln!(out, "# {line}")?;
            }
        }
        Ok(())
    }
}

/// Reads the leading `#` block of a file written by this tool.
pub fn read_header<R: Read>(input: R) -> Result<RunRecord> {
    let mut body = String::new();
    for line in BufReader::new(input).lines() {
        let line = line?;
        let Some(rest) = line.strip_prefix('#') else {
            break;
        };
        body.push_str(rest.strip_prefix(' ').unwrap_or(rest));
        body.push('\n');
    }
    if body.trim().is_empty() {
        return Err(Error::Input("file has no run header".into()));
    }
    let record: RunRecord =
        toml::from_str(&body).map_err(|e| Error::Input(format!("run header: {}", e.message())))?;
    if record.tool != TOOL {
        return Err(Error::Input(format!("header written by {:?}, not {TOOL}", record.tool)));
    }
    Ok(record)
}

/// Replaces every value in a [`VOLATILE`] column with `*`, leaving all
/// other bytes alone. Header lines and files without such columns pass
/// through unchanged.
pub fn mask_volatile(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut masked: Option<Vec<usize>> = None;
    for line in text.split_inclusive('\n') {
        if line.starts_with('#') {
            out.push_str(line);
            continue;
        }
        let (content, newline) = match line.strip_suffix('\n') {
            Some(c) => (c, "\n"),
            None => (line, ""),
        };
        match &masked {
            None => {
                let cols: Vec<usize> = content
                    .split(',')
                    .enumerate()
                    .filter(|(_, c)| VOLATILE.contains(c))
                    .map(|(i, _)| i)
                    .collect();
                masked = Some(cols);
                out.push_str(line);
            }
            Some(cols) => {
                let cells: Vec<&str> = content
                    .split(',')
                    .enumerate()
                    .map(|(i, c)| if cols.contains(&i) { "*" } else { c })
                    .collect();
                out.push_str(&cells.join(","));
                out.push_str(newline);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        #[derive(Serialize)]
        struct A {
            x: usize,
            y: f64,
        }
        let r = RunRecord::new("profile", &A { x: 3, y: 0.8 }, Some(&ModelConfig::toy()), None).unwrap();
        let mut buf = Vec::new();
        r.write(&mut buf).unwrap();
        buf.extend_from_slice(b"layer,head\n0,0\n");
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.lines().take_while(|l| l.starts_with('#')).count() > 3);
        assert_eq!(read_header(&buf[..]).unwrap(), r);
    }

    #[test]
    fn masking() {
        let t = "# a\nstep,token,micros\n0,5,123\n1,6,99\n";
        assert_eq!(mask_volatile(t), "# a\nstep,token,micros\n0,5,*\n1,6,*\n");
        assert_eq!(mask_volatile("x,y\n1,2\n"), "x,y\n1,2\n");
    }

    #[test]
    fn missing_header() {
        assert!(matches!(read_header(&b"layer,head\n"[..]), Err(Error::Input(_))));
        assert!(read_header(&b"# tool = [\n"[..]).is_err());
    }
}
