//! ASCII cloud formats: CSV (`x y z [r g b] [label]`, comma or whitespace
//! separated) and ASCII PLY 1.0 with optional uchar red/green/blue and an
//! optional int label property.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::PointCloud;
use crate::error::{Error, Result};
use crate::linalg::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Csv,
    PlyAscii,
}

impl CloudFormat {
    pub fn from_path(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::Csv,
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let cloud = match format {
        CloudFormat::Csv => read_csv(reader)?,
        CloudFormat::PlyAscii => read_ply(reader)?,
    };
    cloud.validate()?;
    Ok(cloud)
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    match format {
        CloudFormat::Csv => write_csv(cloud, &mut w),
        CloudFormat::PlyAscii => write_ply(cloud, &mut w),
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .collect()
}

fn parse_coord(tok: &str, line_no: usize, what: &str) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line: line_no,
        message: format!("cannot parse {what} from {tok:?}"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line: line_no,
            message: format!("non-finite {what} value {tok:?}"),
        });
    }
    Ok(v)
}

fn read_csv<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut positions = Vec::new();
    let mut colors: Vec<Vec3> = Vec::new();
    let mut labels: Vec<Option<u32>> = Vec::new();
    let mut has_colors = None;
    let mut has_labels = None;

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let fields = split_fields(&line);
        if fields.is_empty() {
            continue;
        }
        // header detection: a non-numeric first token on the first record
        if positions.is_empty() && has_colors.is_none() && fields[0].parse::<f64>().is_err() {
            continue;
        }
        let (hc, hl) = match fields.len() {
            3 => (false, false),
            4 => (false, true),
            6 => (true, false),
            7 => (true, true),
            n => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 3, 4, 6 or 7 columns, found {n}"),
                })
            }
        };
        match (has_colors, has_labels) {
            (None, None) => {
                has_colors = Some(hc);
                has_labels = Some(hl);
            }
            (Some(c), Some(l)) if c == hc && l == hl => {}
            _ => {
                return Err(Error::Parse {
                    line: line_no,
                    message: "inconsistent column count across records".into(),
                })
            }
        }
        let x = parse_coord(fields[0], line_no, "x")?;
        let y = parse_coord(fields[1], line_no, "y")?;
        let z = parse_coord(fields[2], line_no, "z")?;
        positions.push(Vec3::new(x, y, z));
        let mut next = 3;
        if hc {
            let r = parse_coord(fields[3], line_no, "r")?;
            let g = parse_coord(fields[4], line_no, "g")?;
            let b = parse_coord(fields[5], line_no, "b")?;
            colors.push(Vec3::new(r, g, b));
            next = 6;
        }
        if hl {
            let raw: i64 = fields[next].parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("cannot parse label from {:?}", fields[next]),
            })?;
            labels.push(if raw < 0 { None } else { Some(raw as u32) });
        }
    }

    if positions.is_empty() {
        return Err(Error::Parse { line: 0, message: "no records".into() });
    }
    let class_count = labels
        .iter()
        .flatten()
        .map(|&k| k as usize + 1)
        .max()
        .unwrap_or(0);
    Ok(PointCloud {
        positions,
        colors: if has_colors == Some(true) { Some(colors) } else { None },
        labels: if has_labels == Some(true) { Some(labels) } else { None },
        class_count,
    })
}

fn write_csv(cloud: &PointCloud, w: &mut impl Write) -> Result<()> {
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        write!(w, "{} {} {}", p.x, p.y, p.z)?;
        if let Some(c) = &cloud.colors {
            write!(w, " {} {} {}", c[i].x, c[i].y, c[i].z)?;
        }
        if let Some(l) = &cloud.labels {
            match l[i] {
                Some(k) => write!(w, " {k}")?,
                None => write!(w, " -1")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

struct LineSource<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
}

impl<R: BufRead> LineSource<R> {
    fn next_line(&mut self) -> Result<String> {
        match self.lines.next() {
            Some(line) => {
                self.line_no += 1;
                Ok(line?)
            }
            None => {
                Err(Error::Parse { line: self.line_no, message: "unexpected end of file".into() })
            }
        }
    }
}

fn read_ply<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut src = LineSource { lines: reader.lines(), line_no: 0 };

    let magic = src.next_line()?;
    if magic.trim() != "ply" {
        return Err(Error::Parse { line: 1, message: "missing ply magic".into() });
    }
    let format = src.next_line()?;
    if format.trim() != "format ascii 1.0" {
        return Err(Error::Parse {
            line: 2,
            message: format!("unsupported format {:?} (only ascii 1.0)", format.trim()),
        });
    }

    // elements in declared order; only "vertex" is interpreted
    let mut elements: Vec<(String, usize, Vec<String>)> = Vec::new();
    loop {
        let line = src.next_line()?;
        let t = line.trim();
        if t == "end_header" {
            break;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        match fields.first().copied() {
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                if fields.len() != 3 {
                    return Err(Error::Parse { line: src.line_no, message: "bad element line".into() });
                }
                let count: usize = fields[2].parse().map_err(|_| Error::Parse {
                    line: src.line_no,
                    message: format!("bad element count {:?}", fields[2]),
                })?;
                elements.push((fields[1].to_string(), count, Vec::new()));
            }
            Some("property") => match elements.last_mut() {
                Some(el) => el.2.push(fields.last().unwrap().to_string()),
                None => {
                    return Err(Error::Parse {
                        line: src.line_no,
                        message: "property before element".into(),
                    })
                }
            },
            Some(other) => {
                return Err(Error::Parse {
                    line: src.line_no,
                    message: format!("unknown header keyword {other:?}"),
                })
            }
        }
    }

    let mut cloud = None;
    for (name, count, props) in &elements {
        if name == "vertex" {
            let ix = props.iter().position(|p| p == "x");
            let iy = props.iter().position(|p| p == "y");
            let iz = props.iter().position(|p| p == "z");
            let (ix, iy, iz) = match (ix, iy, iz) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => {
                    return Err(Error::Parse {
                        line: src.line_no,
                        message: "vertex element lacks x/y/z".into(),
                    })
                }
            };
            let ir = props.iter().position(|p| p == "red");
            let ig = props.iter().position(|p| p == "green");
            let ib = props.iter().position(|p| p == "blue");
            let il = props.iter().position(|p| p == "label");
            let has_rgb = ir.is_some() && ig.is_some() && ib.is_some();

            let mut positions = Vec::with_capacity(*count);
            let mut colors = Vec::new();
            let mut labels = Vec::new();
            for _ in 0..*count {
                let line = src.next_line()?;
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.len() != props.len() {
                    return Err(Error::Parse {
                        line: src.line_no,
                        message: format!(
                            "expected {} vertex properties, found {}",
                            props.len(),
                            fields.len()
                        ),
                    });
                }
                let x = parse_coord(fields[ix], src.line_no, "x")?;
                let y = parse_coord(fields[iy], src.line_no, "y")?;
                let z = parse_coord(fields[iz], src.line_no, "z")?;
                positions.push(Vec3::new(x, y, z));
                if has_rgb {
                    let chan = |i: usize, what: &str| -> Result<f64> {
                        let v: u32 = fields[i].parse().map_err(|_| Error::Parse {
                            line: src.line_no,
                            message: format!("cannot parse {what} from {:?}", fields[i]),
                        })?;
                        if v > 255 {
                            return Err(Error::Parse {
                                line: src.line_no,
                                message: format!("{what} channel {v} exceeds 255"),
                            });
                        }
                        Ok(v as f64 / 255.0)
                    };
                    let r = chan(ir.unwrap(), "red")?;
                    let g = chan(ig.unwrap(), "green")?;
                    let b = chan(ib.unwrap(), "blue")?;
                    colors.push(Vec3::new(r, g, b));
                }
                if let Some(i) = il {
                    let raw: i64 = fields[i].parse().map_err(|_| Error::Parse {
                        line: src.line_no,
                        message: format!("cannot parse label from {:?}", fields[i]),
                    })?;
                    labels.push(if raw < 0 { None } else { Some(raw as u32) });
                }
            }
            let class_count = labels
                .iter()
                .flatten()
                .map(|&k| k as usize + 1)
                .max()
                .unwrap_or(0);
            cloud = Some(PointCloud {
                positions,
                colors: if has_rgb { Some(colors) } else { None },
                labels: if il.is_some() { Some(labels) } else { None },
                class_count,
            });
        } else {
            // skip records of foreign elements
            for _ in 0..*count {
                src.next_line()?;
            }
        }
    }
    cloud.ok_or(Error::Parse { line: src.line_no, message: "no vertex element".into() })
}

fn write_ply(cloud: &PointCloud, w: &mut impl Write) -> Result<()> {
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    if cloud.colors.is_some() {
        writeln!(w, "property uchar red")?;
        writeln!(w, "property uchar green")?;
        writeln!(w, "property uchar blue")?;
    }
    if cloud.labels.is_some() {
        writeln!(w, "property int label")?;
    }
    writeln!(w, "end_header")?;
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        write!(w, "{} {} {}", p.x, p.y, p.z)?;
        if let Some(c) = &cloud.colors {
            let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
            write!(w, " {} {} {}", q(c[i].x), q(c[i].y), q(c[i].z))?;
        }
        if let Some(l) = &cloud.labels {
            match l[i] {
                Some(k) => write!(w, " {k}")?,
                None => write!(w, " -1")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn csv(content: &str) -> Result<PointCloud> {
        read_csv(Cursor::new(content.as_bytes().to_vec()))
    }

    fn ply(content: &str) -> Result<PointCloud> {
        read_ply(Cursor::new(content.as_bytes().to_vec()))
    }

    #[test]
    fn csv_three_points_positions_only() {
        let cloud = csv("0 0 0\n1 0 0\n0 1 0\n").unwrap();
        assert_eq!(cloud.len(), 3);
        assert!(cloud.colors.is_none());
        assert!(cloud.labels.is_none());
        assert_eq!(cloud.positions[1], Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn csv_accepts_commas_and_header() {
        let cloud = csv("x,y,z,label\n1,2,3,0\n4,5,6,1\n").unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.labels.as_ref().unwrap()[1], Some(1));
        assert_eq!(cloud.class_count, 2);
    }

    #[test]
    fn csv_nan_coordinate_is_a_parse_error_naming_the_line() {
        let err = csv("0 0 0\nnan 0 0\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_malformed_record_reports_line() {
        let err = csv("0 0 0\n1 2\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ply_colors_are_scaled_to_unit_range() {
        let text = "ply\nformat ascii 1.0\nelement vertex 4\n\
                    property float x\nproperty float y\nproperty float z\n\
                    property uchar red\nproperty uchar green\nproperty uchar blue\n\
                    end_header\n\
                    0 0 0 255 0 0\n1 0 0 0 255 0\n0 1 0 0 0 255\n1 1 0 51 102 153\n";
        let cloud = ply(text).unwrap();
        assert_eq!(cloud.len(), 4);
        let c = cloud.colors.as_ref().unwrap();
        assert_eq!(c[0], Vec3::new(1.0, 0.0, 0.0));
        assert!((c[3].x - 0.2).abs() < 1e-12);
        assert!((c[3].y - 0.4).abs() < 1e-12);
        assert!((c[3].z - 0.6).abs() < 1e-12);
    }

    #[test]
    fn ply_roundtrip_preserves_labels() {
        let mut cloud = PointCloud::new(vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.5, 0.0, 2.0),
        ]);
        cloud.labels = Some(vec![Some(4), None]);
        cloud.class_count = 5;
        let mut buf = Vec::new();
        write_ply(&cloud, &mut buf).unwrap();
        let back = ply(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.positions, cloud.positions);
        assert_eq!(back.labels, cloud.labels);
    }

    #[test]
    fn csv_roundtrip_with_colors() {
        let mut cloud = PointCloud::new(vec![Vec3::new(0.25, -1.0, 3.5)]);
        cloud.colors = Some(vec![Vec3::new(0.5, 0.25, 1.0)]);
        let mut buf = Vec::new();
        write_csv(&cloud, &mut buf).unwrap();
        let back = csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.positions, cloud.positions);
        assert_eq!(back.colors, cloud.colors);
    }
}
