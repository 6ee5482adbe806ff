//! Manifest CSV with header `ref_path,dist_path,mos`, one record per line.

use std::path::Path;

use crate::data::{Dataset, ImagePairRecord};
use crate::error::{Error, Result};

const HEADER: [&str; 3] = ["ref_path", "dist_path", "mos"];

/// Reads a manifest, preserving file order. Paths stay verbatim; relative
/// ones later resolve against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Manifest {
            path: display.clone(),
            line: 0,
            msg: e.to_string(),
        })?;

    let headers = reader.headers().map_err(|e| Error::Manifest {
        path: display.clone(),
        line: 1,
        msg: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::Manifest {
            path: display,
            line: 1,
            msg: format!(
                "expected header `{}`, got `{}`",
                HEADER.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }

    let mut records = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| Error::Manifest {
            path: display.clone(),
            line: e
                .position()
                .map(|p| p.line())
                .unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 3 {
            return Err(Error::Manifest {
                path: display,
                line,
                msg: format!("expected 3 fields, got {}", record.len()),
            });
        }
        let mos: f64 = record[2].trim().parse().map_err(|_| Error::Manifest {
            path: display.clone(),
            line,
            msg: format!("mos `{}` is not a number", &record[2]),
        })?;
        if !mos.is_finite() {
            return Err(Error::Manifest {
                path: display,
                line,
                msg: format!("mos `{}` is not finite", &record[2]),
            });
        }
        if record[0].is_empty() || record[1].is_empty() {
            return Err(Error::Manifest {
                path: display,
                line,
                msg: "empty path field".into(),
            });
        }
        records.push(ImagePairRecord {
            reference_path: record[0].to_string(),
            distorted_path: record[1].to_string(),
            mos,
        });
    }

    let base_dir = path
        .parent()
        .map(|p| p.to_path_buf())
        .unwrap_or_default();
    Ok(Dataset::from_records(records, base_dir))
}

/// Writes a manifest that `load_manifest` accepts; record paths are emitted
/// verbatim, so write-load-write is byte stable.
pub fn write_manifest(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Manifest {
        path: path.display().to_string(),
        line: 0,
        msg: e.to_string(),
    })?;
    writer
        .write_record(HEADER)
        .and_then(|_| {
            for r in dataset.records() {
                writer.write_record([
                    r.reference_path.as_str(),
                    r.distorted_path.as_str(),
                    &r.mos.to_string(),
                ])?;
            }
            writer.flush()?;
            Ok(())
        })
        .map_err(|e| Error::Manifest {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_line_manifest_in_file_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(
            &p,
            "ref_path,dist_path,mos\nr0.ppm,d0.ppm,4.2\nr1.ppm,d1.ppm,1.0\nr0.ppm,d2.ppm,3.4\n",
        )
        .unwrap();
        let ds = load_manifest(&p).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.records()[0].distorted_path, "d0.ppm");
        assert_eq!(ds.records()[2].mos, 3.4);
        assert_eq!(ds.label_range(), Some((1.0, 4.2)));
        assert_eq!(ds.reference_groups(), vec!["r0.ppm", "r1.ppm"]);
        assert_eq!(ds.resolve("d0.ppm"), dir.path().join("d0.ppm"));
    }

    #[test]
    fn header_only_file_loads_empty_and_training_rejects_it() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "ref_path,dist_path,mos\n").unwrap();
        let ds = load_manifest(&p).unwrap();
        assert!(ds.is_empty());
        assert!(matches!(
            ds.require_non_empty("training"),
            Err(Error::EmptyDataset { .. })
        ));
    }

    #[test]
    fn bad_mos_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "ref_path,dist_path,mos\nr,d,4.0\nr,d,oops\n").unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("line 3") && err.contains("oops"), "{err}");
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "a,b,c\nr,d,4.0\n").unwrap();
        let err = load_manifest(&p).unwrap_err().to_string();
        assert!(err.contains("expected header"), "{err}");
    }

    #[test]
    fn kadid_shape_manifest_has_81_reference_groups() {
        // 81 references x 125 distortions = 10,125 rows.
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("kadid.csv");
        let mut s = String::from("ref_path,dist_path,mos\n");
        for r in 1..=81 {
            for d in 1..=125 {
                s.push_str(&format!("I{r:02}.png,I{r:02}_{d:03}.png,{}\n", 1.0 + (d % 5) as f64));
            }
        }
        std::fs::write(&p, s).unwrap();
        let ds = load_manifest(&p).unwrap();
        assert_eq!(ds.len(), 10_125);
        assert_eq!(ds.reference_groups().len(), 81);
    }

    #[test]
    fn write_load_write_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::from_records(
            vec![
                ImagePairRecord {
                    reference_path: "images/r0.ppm".into(),
                    distorted_path: "images/d0.ppm".into(),
                    mos: 4.2,
                },
                ImagePairRecord {
                    reference_path: "images/r1.ppm".into(),
                    distorted_path: "images/d1.ppm".into(),
                    mos: 1.0,
                },
            ],
            dir.path().to_path_buf(),
        );
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_manifest(&p1, &ds).unwrap();
        let loaded = load_manifest(&p1).unwrap();
        assert_eq!(loaded.records(), ds.records());
        write_manifest(&p2, &loaded).unwrap();
        assert_eq!(
            std::fs::read(&p1).unwrap(),
            std::fs::read(&p2).unwrap()
        );
    }
}
