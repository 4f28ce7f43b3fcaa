//! CSV tables and the binary model container.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{Cell, ColumnData, ColumnKind, Schema, Table};
use crate::error::{Error, Result};
use crate::model::Model;

/// Reads a headered CSV. Columns are matched to the schema by name and
/// returned in schema order. Every cell must be present; continuous cells
/// must parse as finite numbers. Discrete columns without a category list in
/// the schema get one in order of first appearance.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Table> {
    read_csv(BufReader::new(File::open(path)?), schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let mut position = Vec::with_capacity(schema.len());
    for c in &schema.columns {
        let at = header
            .iter()
            .position(|h| h.trim() == c.name)
            .ok_or_else(|| Error::Schema(format!("CSV header has no column `{}`", c.name)))?;
        position.push(at);
    }
    if header.len() != schema.len() {
        let extra: Vec<&str> = header
            .iter()
            .filter(|h| schema.index_of(h.trim()).is_none())
            .collect();
        return Err(Error::Schema(format!("CSV header has columns not in the schema: {extra:?}")));
    }

    let mut cats: Vec<Vec<String>> = schema.columns.iter().map(|c| c.categories().to_vec()).collect();
    let mut lookup: Vec<HashMap<String, u32>> = cats
        .iter()
        .map(|v| v.iter().enumerate().map(|(i, s)| (s.clone(), i as u32)).collect())
        .collect();
    let open: Vec<bool> = schema
        .columns
        .iter()
        .map(|c| c.kind == ColumnKind::Discrete && c.categories.is_none())
        .collect();
    let mut columns: Vec<ColumnData> = schema
        .columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Continuous => ColumnData::Continuous(Vec::new()),
            ColumnKind::Discrete => ColumnData::Discrete(Vec::new()),
        })
        .collect();

    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(Error::parse(line, rec.len().min(header.len()) + 1, "wrong number of fields"));
        }
        for (j, &at) in position.iter().enumerate() {
            let raw = rec[at].trim();
            let col = at + 1;
            if raw.is_empty() {
                return Err(Error::parse(line, col, format!("missing value in `{}`", schema.columns[j].name)));
            }
            match &mut columns[j] {
                ColumnData::Continuous(v) => {
                    let x: f64 = raw
                        .parse()
                        .map_err(|_| Error::parse(line, col, format!("`{raw}` is not a number")))?;
                    if !x.is_finite() {
                        return Err(Error::parse(line, col, format!("`{raw}` is not finite")));
                    }
                    v.push(x);
                }
                ColumnData::Discrete(v) => {
                    let k = match lookup[j].get(raw) {
                        Some(&k) => k,
                        None if open[j] => {
                            let k = cats[j].len() as u32;
                            cats[j].push(raw.to_string());
                            lookup[j].insert(raw.to_string(), k);
                            k
                        }
                        None => {
                            return Err(Error::parse(
                                line,
                                col,
                                format!("`{raw}` is not a category of `{}`", schema.columns[j].name),
                            ))
                        }
                    };
                    v.push(k);
                }
            }
        }
    }

    let mut resolved = schema.clone();
    for (j, c) in resolved.columns.iter_mut().enumerate() {
        if open[j] {
            c.categories = Some(std::mem::take(&mut cats[j]));
        }
    }
    Table::new(resolved, columns)
}

pub fn write_csv(table: &Table, path: impl AsRef<Path>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_csv_to(table, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn write_csv_to<W: Write>(table: &Table, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(table.schema().columns.iter().map(|c| c.name.as_str()))?;
    let mut fields = Vec::with_capacity(table.n_cols());
    for r in 0..table.n_rows() {
        fields.clear();
        for cell in table.row(r) {
            fields.push(match cell {
                Cell::Num(x) => format!("{x:?}"),
                Cell::Cat(s) => s,
            });
        }
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

pub const MODEL_MAGIC: &[u8; 4] = b"TSYN";
pub const MODEL_VERSION: u32 = 1;

/// Layout: magic, u32 version, u64 header length, UTF-8 JSON header, then
/// the network parameters as f64. All integers and floats little-endian.
pub fn write_model<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(model)?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for p in model.param_sets() {
        for v in p.export() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_model<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::ModelFile("file is too short".into()))?;
    if &magic != MODEL_MAGIC {
        return Err(Error::ModelFile("not a model file (bad magic)".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != MODEL_VERSION {
        return Err(Error::ModelFile(format!(
            "format version {version} is not supported (expected {MODEL_VERSION})"
        )));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let len = u64::from_le_bytes(b8);
    let mut header = Vec::new();
    (&mut r).take(len).read_to_end(&mut header)?;
    if header.len() as u64 != len {
        return Err(Error::ModelFile("truncated header".into()));
    }
    let mut model: Model = serde_json::from_slice(&header)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() % 8 != 0 {
        return Err(Error::ModelFile("payload is not a whole number of f64 values".into()));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    let mut at = 0;
    for p in model.param_sets_mut() {
        at += p
            .import(&values[at..])
            .map_err(|_| Error::ModelFile("truncated parameter payload".into()))?;
    }
    if at != values.len() {
        return Err(Error::ModelFile(format!("{} trailing payload values", values.len() - at)));
    }
    Ok(model)
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    write_model(model, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    read_model(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ColumnSpec;

    fn schema() -> Schema {
        Schema::new(vec![
            ColumnSpec::continuous("x"),
            ColumnSpec {
                categories: None,
                ..ColumnSpec::discrete("c", vec![])
            },
        ])
        .unwrap()
    }

    #[test]
    fn reads_in_schema_order_and_discovers_categories() {
        let text = "c,x\nb,1.5\na,-2\nb,3e2\n";
        let t = read_csv(text.as_bytes(), &schema()).unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.continuous(0).unwrap(), &[1.5, -2.0, 300.0]);
        assert_eq!(t.schema().columns[1].categories(), &["b".to_string(), "a".to_string()]);
        let mut out = Vec::new();
        write_csv_to(&t, &mut out).unwrap();
        let back = read_csv(out.as_slice(), t.schema()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn located_errors() {
        let err = read_csv("x,c\n1,a\noops,b\n".as_bytes(), &schema()).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (3, 1)),
            e => panic!("{e}"),
        }
        assert!(matches!(
            read_csv("x,c\n1,\n".as_bytes(), &schema()).unwrap_err(),
            Error::Parse { line: 2, column: 2, .. }
        ));
        assert!(matches!(read_csv("x,d\n1,a\n".as_bytes(), &schema()), Err(Error::Schema(_))));
        assert!(matches!(read_csv("x,c,z\n1,a,2\n".as_bytes(), &schema()), Err(Error::Schema(_))));
        let closed = Schema::new(vec![ColumnSpec::continuous("x"), ColumnSpec::discrete("c", vec!["a".into()])]).unwrap();
        assert!(matches!(read_csv("x,c\n1,q\n".as_bytes(), &closed), Err(Error::Parse { .. })));
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(matches!(read_model(&b"NOPE0000"[..]), Err(Error::ModelFile(_))));
        let mut bytes = MODEL_MAGIC.to_vec();
        bytes.extend(9u32.to_le_bytes());
        bytes.extend(0u64.to_le_bytes());
        assert!(matches!(read_model(bytes.as_slice()), Err(Error::ModelFile(_))));
    }
}
