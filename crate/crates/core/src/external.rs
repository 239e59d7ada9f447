//! Running configured external commands (decoder, depth estimator, feature
//! extractor).

use std::process::Command;

use crate::error::{PadError, Result};

/// Substitutes `{name}` placeholders in every whitespace-separated token of
/// `template` and runs the result without a shell.
pub fn run_template(template: &str, vars: &[(&str, String)]) -> Result<()> {
    let argv: Vec<String> = template
        .split_whitespace()
        .map(|tok| {
            vars.iter()
                .fold(tok.to_string(), |t, (k, v)| t.replace(&format!("{{{k}}}"), v))
        })
        .collect();
    let (program, args) = argv.split_first().ok_or_else(|| PadError::External {
        command: template.to_string(),
        message: "empty command template".into(),
    })?;
    let rendered = argv.join(" ");
    log::debug!("running {rendered}");
    let output = Command::new(program)
        .args(args)
        .output()
        .map_err(|e| PadError::External {
            command: rendered.clone(),
            message: e.to_string(),
        })?;
    if !output.status.success() {
        return Err(PadError::External {
            command: rendered,
            message: format!(
                "{}: {}",
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            ),
        });
    }
    Ok(())
}

/// Replaces `{name}` placeholders in a path template.
pub fn fill(template: &str, vars: &[(&str, String)]) -> String {
    vars.iter()
        .fold(template.to_string(), |t, (k, v)| t.replace(&format!("{{{k}}}"), v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fills_placeholders() {
        let s = fill("{sample_id}/{index}.pfm", &[("sample_id", "a".into()), ("index", "3".into())]);
        assert_eq!(s, "a/3.pfm");
    }

    #[test]
    fn failing_command_reports_status() {
        let err = run_template("false", &[]).unwrap_err();
        assert!(matches!(err, PadError::External { .. }));
        assert!(run_template("true {x}", &[("x", "1".into())]).is_ok());
        assert!(run_template("  ", &[]).is_err());
    }
}
