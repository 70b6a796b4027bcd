//! Correspondence-set files: a self-describing text format with a commented
//! header block (schema version, intrinsics flag, coordinate scale, column
//! list, optional ground-truth model) followed by one record per line.
//! Readers accept any minor revision of a known major version and reject the
//! rest.

use crate::geometry::{Correspondence, Model3x3, ModelKind};
use nalgebra::Matrix3;
use std::fs;
use std::path::Path;
use thiserror::Error;

pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_MINOR: u32 = 0;

#[derive(Debug, Error, PartialEq)]
pub enum SceneIoError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unsupported format major version {major} (reader supports {FORMAT_MAJOR})")]
    VersionUnsupported { major: u32 },
    #[error("missing header field `{0}`")]
    MissingHeader(&'static str),
    #[error("records are inconsistent: {0}")]
    Inconsistent(&'static str),
    #[error("io: {0}")]
    Io(String),
}

/// A parsed correspondence file: records plus the header metadata needed to
/// interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceFile {
    pub correspondences: Vec<Correspondence>,
    /// Multiplier mapping the stored coordinates to the working frame;
    /// records are stored as written, callers apply it when needed.
    pub scale: f64,
    /// Whether coordinates are already calibrated (identity intrinsics).
    pub identity_intrinsics: bool,
    pub gt_model: Option<Model3x3>,
}

fn has_ratio(corrs: &[Correspondence]) -> Result<bool, SceneIoError> {
    let with = corrs.iter().filter(|c| c.ratio.is_some()).count();
    if with == 0 {
        Ok(false)
    } else if with == corrs.len() {
        Ok(true)
    } else {
        Err(SceneIoError::Inconsistent("ratio present on some records but not all"))
    }
}

fn has_label(corrs: &[Correspondence]) -> Result<bool, SceneIoError> {
    let with = corrs.iter().filter(|c| c.gt_inlier.is_some()).count();
    if with == 0 {
        Ok(false)
    } else if with == corrs.len() {
        Ok(true)
    } else {
        Err(SceneIoError::Inconsistent("label present on some records but not all"))
    }
}

/// Serializes records with their header block. Optional columns are written
/// when every record carries them and rejected when only some do.
pub fn correspondences_to_string(
    file: &CorrespondenceFile,
) -> Result<String, SceneIoError> {
    let corrs = &file.correspondences;
    let ratio = has_ratio(corrs)?;
    let label = has_label(corrs)?;
    let mut fields = vec!["x1", "y1", "x2", "y2"];
    if ratio {
        fields.push("ratio");
    }
    if label {
        fields.push("label");
    }
    let mut out = String::new();
    out.push_str(&format!("# correspondences v{FORMAT_MAJOR}.{FORMAT_MINOR}\n"));
    out.push_str(&format!(
        "# intrinsics: {}\n",
        if file.identity_intrinsics { "identity" } else { "none" }
    ));
    out.push_str(&format!("# scale: {}\n", file.scale));
    out.push_str(&format!("# fields: {}\n", fields.join(",")));
    if let Some(gt) = &file.gt_model {
        let kind = match gt.kind {
            ModelKind::Essential => "essential",
            ModelKind::Fundamental => "fundamental",
        };
        let cells: Vec<String> =
            gt.m.transpose().iter().map(|v| format!("{v}")).collect();
        out.push_str(&format!("# gt_model: {kind} {}\n", cells.join(" ")));
    }
    for c in corrs {
        let mut row = format!("{},{},{},{}", c.x1, c.y1, c.x2, c.y2);
        if ratio {
            row.push_str(&format!(",{}", c.ratio.expect("checked above")));
        }
        if label {
            row.push_str(if c.gt_inlier.expect("checked above") { ",1" } else { ",0" });
        }
        out.push_str(&row);
        out.push('\n');
    }
    Ok(out)
}

fn parse_f64(token: &str, line: usize, what: &str) -> Result<f64, SceneIoError> {
    token.trim().parse::<f64>().map_err(|_| SceneIoError::Malformed {
        line,
        reason: format!("{what}: `{token}` is not a number"),
    })
}

/// Parses the text form. Header lines start with `#`; the version line must
/// come first and an unknown major version is refused outright.
pub fn parse_correspondences(text: &str) -> Result<CorrespondenceFile, SceneIoError> {
    let mut scale: Option<f64> = None;
    let mut identity: Option<bool> = None;
    let mut fields: Option<Vec<String>> = None;
    let mut version_seen = false;
    let mut gt_model: Option<Model3x3> = None;
    let mut correspondences = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("correspondences v") {
                let mut parts = v.trim().split('.');
                let major: u32 = parts
                    .next()
                    .and_then(|p| p.parse().ok())
                    .ok_or(SceneIoError::Malformed {
                        line: line_no,
                        reason: format!("unparseable version `{v}`"),
                    })?;
                if major != FORMAT_MAJOR {
                    return Err(SceneIoError::VersionUnsupported { major });
                }
                version_seen = true;
            } else if let Some(v) = rest.strip_prefix("intrinsics:") {
                identity = Some(match v.trim() {
                    "identity" => true,
                    "none" => false,
                    other => {
                        return Err(SceneIoError::Malformed {
                            line: line_no,
                            reason: format!("unknown intrinsics flag `{other}`"),
                        })
                    }
                });
            } else if let Some(v) = rest.strip_prefix("scale:") {
                scale = Some(parse_f64(v, line_no, "scale")?);
            } else if let Some(v) = rest.strip_prefix("fields:") {
                fields = Some(v.trim().split(',').map(|f| f.trim().to_string()).collect());
            } else if let Some(v) = rest.strip_prefix("gt_model:") {
                let tokens: Vec<&str> = v.split_whitespace().collect();
                if tokens.len() != 10 {
                    return Err(SceneIoError::Malformed {
                        line: line_no,
                        reason: format!("gt_model needs kind + 9 entries, got {}", tokens.len()),
                    });
                }
                let kind = match tokens[0] {
                    "essential" => ModelKind::Essential,
                    "fundamental" => ModelKind::Fundamental,
                    other => {
                        return Err(SceneIoError::Malformed {
                            line: line_no,
                            reason: format!("unknown model kind `{other}`"),
                        })
                    }
                };
                let mut cells = [0.0f64; 9];
                for (c, t) in cells.iter_mut().zip(&tokens[1..]) {
                    *c = parse_f64(t, line_no, "gt_model entry")?;
                }
                let m = Matrix3::from_row_slice(&cells);
                gt_model = Some(Model3x3 { kind, m });
            }
            // Unrecognized comment lines pass through as annotations.
            continue;
        }

        if !version_seen {
            return Err(SceneIoError::MissingHeader("correspondences version line"));
        }
        let fields = fields.as_ref().ok_or(SceneIoError::MissingHeader("fields"))?;
        let tokens: Vec<&str> = line.split(',').collect();
        if tokens.len() != fields.len() {
            return Err(SceneIoError::Malformed {
                line: line_no,
                reason: format!("expected {} fields, got {}", fields.len(), tokens.len()),
            });
        }
        let mut c = Correspondence::new(0.0, 0.0, 0.0, 0.0);
        for (name, token) in fields.iter().zip(&tokens) {
            match name.as_str() {
                "x1" => c.x1 = parse_f64(token, line_no, "x1")?,
                "y1" => c.y1 = parse_f64(token, line_no, "y1")?,
                "x2" => c.x2 = parse_f64(token, line_no, "x2")?,
                "y2" => c.y2 = parse_f64(token, line_no, "y2")?,
                "ratio" => c.ratio = Some(parse_f64(token, line_no, "ratio")?),
                "label" => {
                    c.gt_inlier = Some(match token.trim() {
                        "1" => true,
                        "0" => false,
                        other => {
                            return Err(SceneIoError::Malformed {
                                line: line_no,
                                reason: format!("label must be 0 or 1, got `{other}`"),
                            })
                        }
                    })
                }
                other => {
                    return Err(SceneIoError::Malformed {
                        line: line_no,
                        reason: format!("unknown field `{other}`"),
                    })
                }
            }
        }
        correspondences.push(c);
    }

    if !version_seen {
        return Err(SceneIoError::MissingHeader("correspondences version line"));
    }
    Ok(CorrespondenceFile {
        correspondences,
        scale: scale.ok_or(SceneIoError::MissingHeader("scale"))?,
        identity_intrinsics: identity.ok_or(SceneIoError::MissingHeader("intrinsics"))?,
        gt_model,
    })
}

pub fn save_correspondences(
    path: impl AsRef<Path>,
    file: &CorrespondenceFile,
) -> Result<(), SceneIoError> {
    let text = correspondences_to_string(file)?;
    fs::write(path, text).map_err(|e| SceneIoError::Io(e.to_string()))
}

pub fn load_correspondences(path: impl AsRef<Path>) -> Result<CorrespondenceFile, SceneIoError> {
    let text = fs::read_to_string(path).map_err(|e| SceneIoError::Io(e.to_string()))?;
    parse_correspondences(&text)
}
