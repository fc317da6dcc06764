use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Dataset, ImageRef, Sample};
use crate::{Error, Result};

pub const HEADER: [&str; 5] = ["path", "subject", "label", "view", "instance_id"];

fn read_names(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    if names.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "no names listed".into(),
        });
    }
    Ok(names)
}

fn intern(names: &mut Vec<String>, index: &mut HashMap<String, usize>, name: &str) -> usize {
    *index.entry(name.to_string()).or_insert_with(|| {
        names.push(name.to_string());
        names.len() - 1
    })
}

/// Reads `path,subject,label,view,instance_id` rows plus the sibling
/// `classes.txt` and `views.txt`. Image paths resolve against the manifest's
/// directory and are not opened here.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let class_names = read_names(&dir.join("classes.txt"))?;
    let view_names = read_names(&dir.join("views.txt"))?;
    let class_idx: HashMap<&str, usize> = class_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let view_idx: HashMap<&str, usize> = view_names.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();

    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(1, e.to_string()))?;
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().map(str::trim).ne(HEADER) {
        return Err(parse_err(1, format!("header must be {:?}, got {:?}", HEADER.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }

    let (mut instance_names, mut subject_names) = (Vec::new(), Vec::new());
    let (mut inst_idx, mut subj_idx) = (HashMap::new(), HashMap::new());
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != HEADER.len() {
            return Err(parse_err(line, format!("expected {} fields, found {}", HEADER.len(), record.len())));
        }
        let f: Vec<&str> = record.iter().map(str::trim).collect();
        if let Some(i) = f.iter().position(|v| v.is_empty()) {
            return Err(parse_err(line, format!("empty {} field", HEADER[i])));
        }
        let label = *class_idx
            .get(f[2])
            .ok_or_else(|| parse_err(line, format!("label {:?} is not listed in classes.txt", f[2])))?;
        let view = *view_idx
            .get(f[3])
            .ok_or_else(|| parse_err(line, format!("view {:?} is not listed in views.txt", f[3])))?;
        samples.push(Sample {
            image: ImageRef::Path(dir.join(f[0])),
            label,
            view,
            subject: intern(&mut subject_names, &mut subj_idx, f[1]),
            instance: intern(&mut instance_names, &mut inst_idx, f[4]),
            labeled: true,
        });
    }
    let ds = Dataset {
        samples,
        class_names,
        view_names,
        instance_names,
        subject_names,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes the manifest and sidecar name lists for images already stored at
/// `relative_paths` under `dir`.
pub fn write_manifest(ds: &Dataset, dir: &Path, relative_paths: &[String]) -> Result<()> {
    let path = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::invalid(format!("{}: {e}", path.display()));
    w.write_record(HEADER).map_err(csv_err)?;
    for (s, rel) in ds.samples.iter().zip(relative_paths) {
        w.write_record([
            rel.as_str(),
            &ds.subject_names[s.subject],
            &ds.class_names[s.label],
            &ds.view_names[s.view],
            &ds.instance_names[s.instance],
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    for (file, names) in [("classes.txt", &ds.class_names), ("views.txt", &ds.view_names)] {
        let p = dir.join(file);
        fs::write(&p, names.join("\n") + "\n").map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(rows: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("classes.txt"), "angry\nhappy\n").unwrap();
        fs::write(dir.path().join("views.txt"), "FL\nHL\nS\nHR\nFR\n").unwrap();
        let p = dir.path().join("manifest.csv");
        fs::write(&p, format!("path,subject,label,view,instance_id\n{rows}")).unwrap();
        (dir, p)
    }

    #[test]
    fn parses_rows() {
        let (_d, p) = fixture("imgs/s01_ang_FL.png,s01,angry,FL,s01_ang\nimgs/s01_ang_S.png,s01,angry,S,s01_ang\n");
        let ds = load_manifest(&p).unwrap();
        assert_eq!(ds.len(), 2);
        let s = &ds.samples[0];
        assert_eq!(ds.class_names[s.label], "angry");
        assert_eq!(ds.view_names[s.view], "FL");
        assert_eq!(ds.instance_names[s.instance], "s01_ang");
        assert_eq!(ds.subject_names[s.subject], "s01");
        assert_eq!(ds.frontal_view(), 2);
        assert_eq!(ds.incomplete_groups(), 1);
        assert!(matches!(&s.image, ImageRef::Path(p) if p.ends_with("imgs/s01_ang_FL.png")));
    }

    #[test]
    fn malformed_row_reports_line() {
        let (_d, p) = fixture("a.png,s01,angry,FL,s01_ang\nb.png,s01,angry\n");
        match load_manifest(&p).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        let (_d, p) = fixture("a.png,s01,sad,FL,s01_ang\n");
        assert!(matches!(load_manifest(&p).unwrap_err(), Error::Parse { line: 2, .. }));
    }

    #[test]
    fn inconsistent_group_is_integrity_error() {
        let (_d, p) = fixture("a.png,s01,angry,FL,g1\nb.png,s01,happy,S,g1\n");
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)), "{err}");
    }

    #[test]
    fn bad_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("classes.txt"), "a\n").unwrap();
        fs::write(dir.path().join("views.txt"), "S\n").unwrap();
        let p = dir.path().join("m.csv");
        fs::write(&p, "path,label,subject,view,instance_id\n").unwrap();
        assert!(matches!(load_manifest(&p).unwrap_err(), Error::Parse { line: 1, .. }));
    }
}
