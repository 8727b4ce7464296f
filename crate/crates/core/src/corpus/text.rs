use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, FunctionRecord, ProgramRecord};
use crate::error::{Error, Result};

pub const CORPUS_VERSION: u32 = 1;
const FORMAT_TAG: &str = "proghash-corpus";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    d: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    program_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    function_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    loc: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    nos: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    embedding: Option<Vec<f32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_label: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_id: Option<String>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let file = File::open(path.as_ref())?;
    read_corpus(BufReader::new(file))
}

/// Parses a corpus. Nothing is returned unless every line parses and the
/// whole corpus validates.
pub fn read_corpus<R: BufRead>(reader: R) -> Result<Corpus> {
    let mut lines = reader.lines();
    let header_text = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "missing header line".into(),
            })
        }
    };
    let header: Header = serde_json::from_str(&header_text).map_err(|e| Error::Parse {
        line: 1,
        message: format!("bad header: {e}"),
    })?;
    if header.format != FORMAT_TAG {
        return Err(Error::Parse {
            line: 1,
            message: format!("unknown format tag {:?}", header.format),
        });
    }
    if header.version != CORPUS_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported corpus version {}", header.version),
        });
    }

    let mut programs: Vec<ProgramRecord> = Vec::new();
    let mut index_of: HashMap<String, usize> = HashMap::new();

    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let text = line?;
        if text.trim().is_empty() {
            continue;
        }
        let rec: Line = serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;

        let slot = *index_of.entry(rec.program_id.clone()).or_insert_with(|| {
            programs.push(ProgramRecord::new(rec.program_id.clone(), Vec::new()));
            programs.len() - 1
        });
        let program = &mut programs[slot];
        if let Some(class_id) = rec.class_id {
            match &program.class_id {
                Some(existing) if *existing != class_id => {
                    return Err(Error::Validation(format!(
                        "line {lineno}: program {:?} has conflicting class_id {:?} vs {:?}",
                        program.program_id, existing, class_id
                    )));
                }
                _ => program.class_id = Some(class_id),
            }
        }

        let Some(function_id) = rec.function_id else {
            if rec.loc.is_some() || rec.nos.is_some() || rec.embedding.is_some() {
                return Err(Error::Parse {
                    line: lineno,
                    message: "function fields present without function_id".into(),
                });
            }
            continue;
        };
        let missing = |field: &str| Error::Parse {
            line: lineno,
            message: format!("function {function_id:?} is missing field {field:?}"),
        };
        let loc = rec.loc.ok_or_else(|| missing("loc"))?;
        let nos = rec.nos.ok_or_else(|| missing("nos"))?;
        let embedding = rec.embedding.ok_or_else(|| missing("embedding"))?;
        program.functions.push(FunctionRecord {
            function_id,
            embedding,
            loc,
            nos,
            class_label: rec.class_label,
        });
    }

    Corpus::new(header.d, programs)
}

pub fn save_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_corpus(corpus, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_corpus<W: Write>(corpus: &Corpus, mut w: W) -> Result<()> {
    let header = Header {
        format: FORMAT_TAG.into(),
        version: CORPUS_VERSION,
        d: corpus.d(),
    };
    writeln!(w, "{}", to_json(&header)?)?;
    for program in corpus.programs() {
        if program.functions.is_empty() {
            let line = Line {
                program_id: program.program_id.clone(),
                function_id: None,
                loc: None,
                nos: None,
                embedding: None,
                class_label: None,
                class_id: program.class_id.clone(),
            };
            writeln!(w, "{}", to_json(&line)?)?;
        }
        for f in &program.functions {
            let line = Line {
                program_id: program.program_id.clone(),
                function_id: Some(f.function_id.clone()),
                loc: Some(f.loc),
                nos: Some(f.nos),
                embedding: Some(f.embedding.clone()),
                class_label: f.class_label,
                class_id: program.class_id.clone(),
            };
            writeln!(w, "{}", to_json(&line)?)?;
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::validation(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"format":"proghash-corpus","version":1,"d":4}"#;

    fn parse(text: &str) -> Result<Corpus> {
        read_corpus(text.as_bytes())
    }

    #[test]
    fn header_only_is_empty_corpus() {
        let c = parse(&format!("{HEADER}\n")).unwrap();
        assert!(c.is_empty());
        assert_eq!(c.d(), 4);
    }

    #[test]
    fn single_function_program() {
        let text = format!(
            "{HEADER}\n{}\n",
            r#"{"program_id":"p","function_id":"f","loc":3,"nos":1,"embedding":[1,0,0,0.5]}"#
        );
        let c = parse(&text).unwrap();
        assert_eq!(c.len(), 1);
        let p = &c.programs()[0];
        assert_eq!(p.program_id, "p");
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions[0].embedding, vec![1.0, 0.0, 0.0, 0.5]);
        assert_eq!((p.functions[0].loc, p.functions[0].nos), (3, 1));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!(
            "{HEADER}\n{}\nnot json\n",
            r#"{"program_id":"p","function_id":"f","loc":3,"nos":1,"embedding":[1,0,0,0]}"#
        );
        match parse(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_loc_is_a_parse_error() {
        let text = format!(
            "{HEADER}\n{}\n",
            r#"{"program_id":"p","function_id":"f","loc":-3,"nos":1,"embedding":[1,0,0,0]}"#
        );
        assert!(matches!(parse(&text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn dimension_mismatch_names_function() {
        let text = format!(
            "{HEADER}\n{}\n",
            r#"{"program_id":"p","function_id":"odd_one","loc":3,"nos":1,"embedding":[1,0]}"#
        );
        let err = parse(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("odd_one"));
    }

    #[test]
    fn overflowing_float_rejected() {
        let text = format!(
            "{HEADER}\n{}\n",
            r#"{"program_id":"p","function_id":"f","loc":3,"nos":1,"embedding":[1e60,0,0,0]}"#
        );
        assert!(parse(&text).is_err());
    }

    #[test]
    fn conflicting_class_ids_rejected() {
        let text = format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"program_id":"p","class_id":"a"}"#, r#"{"program_id":"p","class_id":"b"}"#
        );
        assert!(matches!(parse(&text), Err(Error::Validation(_))));
    }

    #[test]
    fn missing_header_is_parse_error() {
        assert!(matches!(parse(""), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_program_round_trips() {
        let c = Corpus::new(2, vec![ProgramRecord::new("e", vec![]).with_class_id("k")]).unwrap();
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), c);
    }
}
