//! In-context coverage projection: marks uncovered lines of the focal source
//! with a trailing comment, and removes those marks again.
//!
//! Only bytes are appended (`" " + marker` before each marked line's
//! terminator), so [`strip_markers`] is an exact inverse of
//! [`project_uncovered`] for any source in which no line already ends with
//! `" " + marker`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MARKER: &str = "#uncovered";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationConfig {
    pub marker_text: String,
    pub comment_prefix: String,
    /// Lines of context kept around marked lines by [`render_state`];
    /// `None` keeps the whole file.
    pub context_window: Option<usize>,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            marker_text: DEFAULT_MARKER.to_owned(),
            comment_prefix: "#".to_owned(),
            context_window: None,
        }
    }
}

impl AnnotationConfig {
    pub fn with_marker(marker: impl Into<String>) -> Result<Self> {
        let cfg = AnnotationConfig {
            marker_text: marker.into(),
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.marker_text.is_empty() || self.marker_text.contains(['\n', '\r']) {
            return Err(Error::InvalidConfig(
                "marker text must be nonempty and single-line".into(),
            ));
        }
        if !self.marker_text.starts_with(&self.comment_prefix) {
            return Err(Error::InvalidConfig(format!(
                "marker `{}` must start with the comment prefix `{}`",
                self.marker_text, self.comment_prefix
            )));
        }
        Ok(())
    }

    fn suffix(&self) -> String {
        format!(" {}", self.marker_text)
    }
}

/// Splits `text` into `(content, terminator)` pairs. A trailing terminator
/// does not start a new line.
fn split_lines(text: &str) -> Vec<(&str, &str)> {
    text.split_inclusive('\n')
        .map(|line| {
            if let Some(body) = line.strip_suffix("\r\n") {
                (body, "\r\n")
            } else if let Some(body) = line.strip_suffix('\n') {
                (body, "\n")
            } else {
                (line, "")
            }
        })
        .collect()
}

/// Appends `" " + marker` to every line in `executable \ covered`
/// (1-based line numbers).
pub fn project_uncovered(
    source: &str,
    executable: &BTreeSet<usize>,
    covered: &BTreeSet<usize>,
    cfg: &AnnotationConfig,
) -> Result<String> {
    cfg.validate()?;
    let lines = split_lines(source);
    let out_of_range: Vec<usize> = executable
        .iter()
        .chain(covered)
        .copied()
        .filter(|&n| n == 0 || n > lines.len())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if !out_of_range.is_empty() {
        return Err(Error::LineOutOfRange {
            lines: out_of_range,
            line_count: lines.len(),
        });
    }
    let stray: Vec<usize> = covered.difference(executable).copied().collect();
    if !stray.is_empty() {
        return Err(Error::InvalidInput(format!(
            "covered lines {stray:?} are not executable"
        )));
    }

    let suffix = cfg.suffix();
    let mut out = String::with_capacity(source.len() + suffix.len() * executable.len());
    for (i, (body, term)) in lines.into_iter().enumerate() {
        out.push_str(body);
        let n = i + 1;
        if executable.contains(&n) && !covered.contains(&n) {
            out.push_str(&suffix);
        }
        out.push_str(term);
    }
    Ok(out)
}

/// Removes one trailing `" " + marker` from every line that ends with it.
pub fn strip_markers(annotated: &str, cfg: &AnnotationConfig) -> String {
    let suffix = cfg.suffix();
    let mut out = String::with_capacity(annotated.len());
    for (body, term) in split_lines(annotated) {
        out.push_str(body.strip_suffix(suffix.as_str()).unwrap_or(body));
        out.push_str(term);
    }
    out
}

/// 1-based numbers of the lines that carry a trailing marker.
pub fn marked_lines(annotated: &str, cfg: &AnnotationConfig) -> BTreeSet<usize> {
    let suffix = cfg.suffix();
    split_lines(annotated)
        .into_iter()
        .enumerate()
        .filter(|(_, (body, _))| body.ends_with(suffix.as_str()))
        .map(|(i, _)| i + 1)
        .collect()
}

/// State text shown to a generator: the projected source, cut down to the
/// configured context window around marked lines. Elided runs become a
/// single `"<prefix> ..."` line.
pub fn render_state(
    source: &str,
    executable: &BTreeSet<usize>,
    covered: &BTreeSet<usize>,
    cfg: &AnnotationConfig,
) -> Result<String> {
    let projected = project_uncovered(source, executable, covered, cfg)?;
    let Some(window) = cfg.context_window else {
        return Ok(projected);
    };
    let marked = marked_lines(&projected, cfg);
    let lines = split_lines(&projected);
    let keep = |n: usize| {
        marked
            .range(n.saturating_sub(window)..=n + window)
            .next()
            .is_some()
    };
    let mut out = String::new();
    let mut eliding = false;
    for (i, (body, term)) in lines.into_iter().enumerate() {
        if keep(i + 1) {
            out.push_str(body);
            out.push_str(if term.is_empty() { "\n" } else { term });
            eliding = false;
        } else if !eliding {
            out.push_str(&cfg.comment_prefix);
            out.push_str(" ...\n");
            eliding = true;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(xs: &[usize]) -> BTreeSet<usize> {
        xs.iter().copied().collect()
    }

    #[test]
    fn marks_only_uncovered_lines() {
        let src = "def f(x):\n    y = x + 1\n    return y\n";
        let cfg = AnnotationConfig::default();
        let out = project_uncovered(src, &set(&[1, 2, 3]), &set(&[1, 3]), &cfg).unwrap();
        assert_eq!(out, "def f(x):\n    y = x + 1 #uncovered\n    return y\n");
        assert_eq!(marked_lines(&out, &cfg), set(&[2]));
        assert_eq!(strip_markers(&out, &cfg), src);
    }

    #[test]
    fn fully_covered_is_identity() {
        let src = "a = 1\r\nb = 2";
        let e = set(&[1, 2]);
        let out = project_uncovered(src, &e, &e, &AnnotationConfig::default()).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn crlf_and_missing_final_newline() {
        let src = "a = 1\r\nb = 2";
        let cfg = AnnotationConfig::default();
        let out = project_uncovered(src, &set(&[1, 2]), &set(&[]), &cfg).unwrap();
        assert_eq!(out, "a = 1 #uncovered\r\nb = 2 #uncovered");
        assert_eq!(strip_markers(&out, &cfg), src);
    }

    #[test]
    fn out_of_range_lines_rejected() {
        let src = "a\nb\n";
        match project_uncovered(src, &set(&[0, 2, 3]), &set(&[]), &AnnotationConfig::default()) {
            Err(Error::LineOutOfRange { lines, line_count }) => {
                assert_eq!(lines, vec![0, 3]);
                assert_eq!(line_count, 2);
            }
            other => panic!("expected range error, got {other:?}"),
        }
        assert!(project_uncovered(src, &set(&[1]), &set(&[2]), &AnnotationConfig::default())
            .is_err());
    }

    #[test]
    fn marker_inside_string_literal_survives_strip() {
        let src = "s = \"look #uncovered\"\nt = 'x #uncovered'  # keep\n";
        let cfg = AnnotationConfig::default();
        let out = project_uncovered(src, &set(&[1, 2]), &set(&[2]), &cfg).unwrap();
        assert_eq!(out.lines().next().unwrap(), "s = \"look #uncovered\" #uncovered");
        assert_eq!(strip_markers(&out, &cfg), src);
        assert_eq!(strip_markers(src, &cfg), src);
    }

    #[test]
    fn custom_marker_and_validation() {
        let cfg = AnnotationConfig {
            marker_text: "// uncovered".into(),
            comment_prefix: "//".into(),
            context_window: None,
        };
        let out = project_uncovered("x++;\n", &set(&[1]), &set(&[]), &cfg).unwrap();
        assert_eq!(out, "x++; // uncovered\n");
        assert!(AnnotationConfig::with_marker("").is_err());
        assert!(AnnotationConfig::with_marker("#a\nb").is_err());
        assert!(AnnotationConfig::with_marker("uncovered").is_err());
    }

    #[test]
    fn context_window_elides_far_lines() {
        let src: String = (1..=9).map(|i| format!("l{i}\n")).collect();
        let cfg = AnnotationConfig {
            context_window: Some(1),
            ..Default::default()
        };
        let exec = set(&[1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let covered = set(&[1, 2, 3, 4, 6, 7, 8, 9]);
        let text = render_state(&src, &exec, &covered, &cfg).unwrap();
        assert_eq!(text, "# ...\nl4\nl5 #uncovered\nl6\n# ...\n");
    }
}
