//! JSONL interchange and LabelImg VOC-XML import/export.
//!
//! JSONL: one record per line,
//! `{"image": str, "width": int, "height": int, "objects": [{"category": str, "bbox": [xmin, ymin, xmax, ymax]}]}`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, ImageRecord, ObjectLabel};
use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    VocXml,
}

impl Format {
    /// `.jsonl`/`.json` files are JSONL; directories and `.xml` files are VOC.
    pub fn detect(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ if path.is_dir() => Format::VocXml,
            Some("xml") => Format::VocXml,
            _ => Format::Jsonl,
        }
    }
}

/// How category names in a file map onto ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CategorySpec {
    /// Fixed table; names outside it are an error.
    Fixed(Vec<String>),
    /// Build the table from names in order of first appearance.
    Discover,
}

impl Default for CategorySpec {
    fn default() -> Self {
        CategorySpec::Fixed(super::default_categories())
    }
}

struct CategoryResolver {
    names: Vec<String>,
    growable: bool,
}

impl CategoryResolver {
    fn new(spec: &CategorySpec) -> Self {
        match spec {
            CategorySpec::Fixed(names) => CategoryResolver {
                names: names.clone(),
                growable: false,
            },
            CategorySpec::Discover => CategoryResolver {
                names: Vec::new(),
                growable: true,
            },
        }
    }

    fn resolve(&mut self, name: &str) -> Result<usize> {
        if let Some(i) = self.names.iter().position(|n| n == name) {
            return Ok(i);
        }
        if self.growable {
            self.names.push(name.to_string());
            return Ok(self.names.len() - 1);
        }
        Err(Error::UnknownCategory {
            name: name.to_string(),
            known: self.names.clone(),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct JsonObject {
    category: String,
    bbox: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    image: String,
    width: u32,
    height: u32,
    objects: Vec<JsonObject>,
}

fn finish_record(mut record: ImageRecord, source: &Path, line: usize) -> Result<ImageRecord> {
    if record.width == 0 || record.height == 0 {
        return Err(Error::Parse {
            file: source.to_path_buf(),
            line,
            message: format!("image `{}` has zero width or height", record.image),
        });
    }
    let clamped = record.clamp_labels();
    if clamped > 0 {
        log::warn!(
            "{}:{}: clamped {} box(es) of `{}` into {}x{}",
            source.display(),
            line,
            clamped,
            record.image,
            record.width,
            record.height
        );
    }
    Ok(record)
}

pub fn load_jsonl(path: &Path, categories: &CategorySpec) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut resolver = CategoryResolver::new(categories);
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            file: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        let mut record = ImageRecord::new(raw.image, raw.width, raw.height);
        for obj in raw.objects {
            record.labels.push(ObjectLabel {
                category: resolver.resolve(&obj.category)?,
                bbox: BBox::from(obj.bbox),
            });
        }
        records.push(finish_record(record, path, line_no)?);
    }
    Ok(Dataset {
        records,
        categories: resolver.names,
        base_dir: path.parent().map(Path::to_path_buf),
    })
}

pub fn save_jsonl(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in &dataset.records {
        let raw = JsonRecord {
            image: r.image.clone(),
            width: r.width,
            height: r.height,
            objects: r
                .labels
                .iter()
                .map(|l| JsonObject {
                    category: dataset.categories[l.category].clone(),
                    bbox: l.bbox.to_array(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &raw)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn xml_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("xml"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads one LabelImg XML file or every `*.xml` in a directory (sorted by name).
pub fn load_voc(path: &Path, categories: &CategorySpec) -> Result<Dataset> {
    let mut resolver = CategoryResolver::new(categories);
    let mut records = Vec::new();
    for file in xml_files(path)? {
        let text = fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        records.push(parse_voc(&file, &text, &mut resolver)?);
    }
    let base_dir = if path.is_dir() {
        Some(path.to_path_buf())
    } else {
        path.parent().map(Path::to_path_buf)
    };
    Ok(Dataset {
        records,
        categories: resolver.names,
        base_dir,
    })
}

fn parse_voc(file: &Path, text: &str, resolver: &mut CategoryResolver) -> Result<ImageRecord> {
    let doc = roxmltree::Document::parse(text).map_err(|e| Error::Parse {
        file: file.to_path_buf(),
        line: e.pos().row as usize,
        message: e.to_string(),
    })?;
    let line_of = |node: roxmltree::Node| doc.text_pos_at(node.range().start).row as usize;
    let err = |node: roxmltree::Node, message: String| Error::Parse {
        file: file.to_path_buf(),
        line: line_of(node),
        message,
    };
    let required = |node, name: &str| {
        xml_child(node, name).ok_or_else(|| {
            err(
                node,
                format!("<{}> is missing element <{name}>", node.tag_name().name()),
            )
        })
    };
    let number = |node, name: &str| -> Result<f64> {
        let n = required(node, name)?;
        let t = n.text().unwrap_or("").trim();
        t.parse::<f64>()
            .map_err(|_| err(n, format!("<{name}> is not a number: `{t}`")))
    };

    let root = doc.root_element();
    let size = required(root, "size")?;
    let width = number(size, "width")?;
    let height = number(size, "height")?;
    let image = match xml_child(root, "filename").and_then(|n| n.text()) {
        Some(t) => t.trim().to_string(),
        None => file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let mut record = ImageRecord::new(image, width as u32, height as u32);
    for obj in root.children().filter(|c| c.has_tag_name("object")) {
        let name_node = required(obj, "name")?;
        let name = name_node.text().unwrap_or("").trim();
        let category = resolver.resolve(name)?;
        let bb = required(obj, "bndbox")?;
        let bbox = BBox::new(
            number(bb, "xmin")?,
            number(bb, "ymin")?,
            number(bb, "xmax")?,
            number(bb, "ymax")?,
        );
        record.labels.push(ObjectLabel { category, bbox });
    }
    finish_record(record, file, line_of(root))
}

type XmlNode<'a, 'input> = roxmltree::Node<'a, 'input>;

fn xml_child<'a, 'input>(node: XmlNode<'a, 'input>, name: &str) -> Option<XmlNode<'a, 'input>> {
    node.children().find(|c| c.has_tag_name(name))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Writes one LabelImg-style XML file per record into `dir`.
pub fn save_voc(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut used = HashSet::new();
    for (i, r) in dataset.records.iter().enumerate() {
        let stem = Path::new(&r.image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("image{i}"));
        let stem = if used.insert(stem.clone()) {
            stem
        } else {
            format!("{stem}_{i}")
        };
        let mut xml = String::new();
        let _ = writeln!(xml, "<annotation>");
        let _ = writeln!(xml, "\t<filename>{}</filename>", xml_escape(&r.image));
        let _ = writeln!(
            xml,
            "\t<size>\n\t\t<width>{}</width>\n\t\t<height>{}</height>\n\t\t<depth>3</depth>\n\t</size>",
            r.width, r.height
        );
        for l in &r.labels {
            let b = &l.bbox;
            let _ = writeln!(
                xml,
                "\t<object>\n\t\t<name>{}</name>\n\t\t<bndbox>\n\t\t\t<xmin>{}</xmin>\n\t\t\t<ymin>{}</ymin>\n\t\t\t<xmax>{}</xmax>\n\t\t\t<ymax>{}</ymax>\n\t\t</bndbox>\n\t</object>",
                xml_escape(&dataset.categories[l.category]),
                b.xmin.round(),
                b.ymin.round(),
                b.xmax.round(),
                b.ymax.round()
            );
        }
        let _ = writeln!(xml, "</annotation>");
        let path = dir.join(format!("{stem}.xml"));
        fs::write(&path, xml).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

pub fn load(path: &Path, format: Format, categories: &CategorySpec) -> Result<Dataset> {
    match format {
        Format::Jsonl => load_jsonl(path, categories),
        Format::VocXml => load_voc(path, categories),
    }
}

pub fn save(dataset: &Dataset, path: &Path, format: Format) -> Result<()> {
    match format {
        Format::Jsonl => save_jsonl(dataset, path),
        Format::VocXml => save_voc(dataset, path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_CRACK: &str = r#"<annotation>
	<folder>imgs</folder>
	<filename>bridge_001.jpg</filename>
	<size>
		<width>1280</width>
		<height>960</height>
		<depth>3</depth>
	</size>
	<object>
		<name>crack</name>
		<pose>Unspecified</pose>
		<bndbox>
			<xmin>10</xmin>
			<ymin>20</ymin>
			<xmax>30</xmax>
			<ymax>40</ymax>
		</bndbox>
	</object>
</annotation>
"#;

    #[test]
    fn voc_fixture_single_crack() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bridge_001.xml");
        fs::write(&p, ONE_CRACK).unwrap();
        let ds = load_voc(&p, &CategorySpec::default()).unwrap();
        assert_eq!(ds.len(), 1);
        let r = &ds.records[0];
        assert_eq!((r.width, r.height), (1280, 960));
        assert_eq!(r.image, "bridge_001.jpg");
        assert_eq!(r.labels.len(), 1);
        assert_eq!(r.labels[0].category, 0);
        assert_eq!(r.labels[0].bbox, BBox::new(10.0, 20.0, 30.0, 40.0));
    }

    #[test]
    fn voc_missing_bndbox_names_element() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.xml");
        let start = ONE_CRACK.find("\t\t<bndbox>").unwrap();
        let end = ONE_CRACK.find("</bndbox>").unwrap() + "</bndbox>".len();
        let broken = format!("{}{}", &ONE_CRACK[..start], &ONE_CRACK[end..]);
        fs::write(&p, broken).unwrap();
        let err = load_voc(&p, &CategorySpec::default()).unwrap_err();
        match &err {
            Error::Parse { line, message, .. } => {
                assert!(message.contains("bndbox"), "{message}");
                assert_eq!(*line, 9, "points at the <object> element");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn voc_unknown_category() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.xml");
        fs::write(&p, ONE_CRACK.replace(">crack<", ">rust<")).unwrap();
        let err = load_voc(&p, &CategorySpec::default()).unwrap_err();
        assert!(matches!(err, Error::UnknownCategory { .. }));
    }

    #[test]
    fn voc_save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xml");
        fs::write(&p, ONE_CRACK).unwrap();
        let ds = load_voc(&p, &CategorySpec::default()).unwrap();
        let out = dir.path().join("out");
        save_voc(&ds, &out).unwrap();
        let back = load_voc(&out, &CategorySpec::default()).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn jsonl_parse_error_has_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(
            &p,
            "{\"image\":\"a.png\",\"width\":4,\"height\":4,\"objects\":[]}\n{\"image\": 3}\n",
        )
        .unwrap();
        match load_jsonl(&p, &CategorySpec::default()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn jsonl_clamps_out_of_frame_boxes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(
            &p,
            "{\"image\":\"a.png\",\"width\":10,\"height\":10,\"objects\":[{\"category\":\"crack\",\"bbox\":[-2,1,12,5]}]}\n",
        )
        .unwrap();
        let ds = load_jsonl(&p, &CategorySpec::default()).unwrap();
        assert_eq!(ds.records[0].labels[0].bbox, BBox::new(0.0, 1.0, 10.0, 5.0));
    }

    #[test]
    fn discover_builds_table_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        fs::write(
            &p,
            "{\"image\":\"a\",\"width\":10,\"height\":10,\"objects\":[{\"category\":\"b\",\"bbox\":[0,0,1,1]},{\"category\":\"a\",\"bbox\":[0,0,1,1]}]}\n",
        )
        .unwrap();
        let ds = load_jsonl(&p, &CategorySpec::Discover).unwrap();
        assert_eq!(ds.categories, vec!["b".to_string(), "a".to_string()]);
    }
}
