//! Line-delimited JSON datasets, one [`Sample`] per line:
//! `{"id", "image": {"sha256", "path"?, "b64"?}, "question", "answer"?, "membership"?}`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::oracle::Sample;

/// Reads and validates a dataset. Blank lines are skipped; relative image
/// paths resolve against the dataset's directory.
pub fn load_dataset(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let mut seen = HashSet::new();
    let mut samples = Vec::new();
    for (index, line) in BufReader::new(file).lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let mut sample: Sample = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if sample.id.is_empty() {
            return Err(parse_err("empty sample id".into()));
        }
        sample
            .image
            .verify()
            .map_err(|e| parse_err(format!("sample {}: {e}", sample.id)))?;
        if let Some(p) = &sample.image.path {
            if p.is_relative() {
                sample.image.path = Some(base.join(p));
            }
        }
        if !seen.insert(sample.id.clone()) {
            return Err(parse_err(format!("duplicate sample id {}", sample.id)));
        }
        samples.push(sample);
    }
    Ok(samples)
}

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).expect("sample serializes");
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Fails unless every sample carries image bytes or a readable image path,
/// naming the first sample that does not.
pub fn require_image_content(samples: &[Sample]) -> Result<()> {
    for s in samples {
        if s.image.bytes.is_none() && !s.image.path.as_ref().is_some_and(|p| p.exists()) {
            return Err(Error::invalid(format!("sample {} has no image content", s.id)));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::ImageRef;
    use std::fs;

    fn sample(id: &str) -> Sample {
        Sample {
            id: id.into(),
            image: ImageRef::from_bytes(id.as_bytes().to_vec()),
            question: "q?".into(),
            answer: Some(format!("answer {id}")),
            membership: Some(true),
        }
    }

    #[test]
    fn empty_file_gives_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(&p, "").unwrap();
        assert!(load_dataset(&p).unwrap().is_empty());
    }

    #[test]
    fn order_is_preserved() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let samples = vec![sample("c"), sample("a"), sample("b")];
        write_dataset(&p, &samples).unwrap();
        assert_eq!(load_dataset(&p).unwrap(), samples);
    }

    #[test]
    fn answer_is_optional() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let hash = crate::oracle::sample::sha256_hex(b"x");
        fs::write(&p, format!("{{\"id\":\"x\",\"image\":{{\"sha256\":\"{hash}\",\"b64\":\"eA==\"}},\"question\":\"q\"}}\n")).unwrap();
        let loaded = load_dataset(&p).unwrap();
        assert_eq!(loaded[0].answer, None);
        assert_eq!(loaded[0].membership, None);
    }

    #[test]
    fn malformed_line_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let good = serde_json::to_string(&sample("a")).unwrap();
        fs::write(&p, format!("{good}\n{{not json\n")).unwrap();
        match load_dataset(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_bad_hashes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&p, &[sample("a"), sample("a")]).unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Parse { line: 2, .. })));
        let mut forged = sample("b");
        forged.image.sha256 = "ff".repeat(32);
        write_dataset(&p, &[forged]).unwrap();
        assert!(matches!(load_dataset(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn missing_image_content_names_the_sample() {
        let mut s = sample("hash-only");
        s.image.bytes = None;
        let err = require_image_content(&[sample("ok"), s]).unwrap_err();
        assert!(err.to_string().contains("hash-only"));
    }
}
