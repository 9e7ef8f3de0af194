use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::Duration;

use wait_timeout::ChildExt;

use super::ErrorReport;
use crate::error::{Error, Result};

/// Runs a syntax-only compile of `source` and keeps the diagnostics that are
/// errors. Warnings and notes are dropped.
pub(super) fn compile(
    source: &str,
    template: &str,
    timeout: Duration,
    scratch: Option<&Path>,
) -> Result<ErrorReport> {
    let unavailable = |msg: String| Error::OracleUnavailable(msg);

    let mut builder = tempfile::Builder::new();
    builder.prefix("tokenfix-").suffix(".c");
    let mut src_file = match scratch {
        Some(dir) => builder.tempfile_in(dir),
        None => builder.tempfile(),
    }
    .map_err(|e| unavailable(format!("cannot create scratch file: {e}")))?;
    src_file.write_all(source.as_bytes())?;
    src_file.flush()?;
    let src_path = src_file.path().to_string_lossy().into_owned();

    let mut argv = template
        .split_whitespace()
        .map(|arg| arg.replace("{src}", &src_path));
    let program = argv
        .next()
        .ok_or_else(|| unavailable("empty compiler command".into()))?;

    // Diagnostics go to a file so a chatty compiler cannot fill a pipe and
    // stall until the timeout.
    let mut log = tempfile::tempfile()?;
    let mut child = Command::new(&program)
        .args(argv)
        .stdin(Stdio::null())
        .stdout(Stdio::from(log.try_clone()?))
        .stderr(Stdio::from(log.try_clone()?))
        .spawn()
        .map_err(|e| unavailable(format!("cannot run {program}: {e}")))?;

    let status = match child.wait_timeout(timeout)? {
        Some(status) => status,
        None => {
            let _ = child.kill();
            let _ = child.wait();
            return Err(unavailable(format!(
                "{program} timed out after {:.1}s",
                timeout.as_secs_f64()
            )));
        }
    };

    let output = read_all(&mut log)?;
    let messages: Vec<String> = output
        .lines()
        .filter(|line| is_error_line(line))
        .map(str::to_string)
        .collect();

    if !status.success() && messages.is_empty() {
        return Err(unavailable(format!(
            "{program} failed ({status}) without error diagnostics: {}",
            output.lines().next().unwrap_or("")
        )));
    }
    Ok(ErrorReport { messages })
}

fn read_all(file: &mut File) -> Result<String> {
    file.seek(SeekFrom::Start(0))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    Ok(String::from_utf8_lossy(&buf).into_owned())
}

/// gcc and clang prefix errors with `file:line:col: error:` (or
/// `fatal error:`).
pub(super) fn is_error_line(line: &str) -> bool {
    line.contains(": error:") || line.contains(": fatal error:")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classifies_diagnostics() {
        assert!(is_error_line("a.c:4:14: error: expected ')' before ';' token"));
        assert!(is_error_line("a.c:1:10: fatal error: x.h: No such file"));
        assert!(!is_error_line("a.c:3:5: warning: unused variable 'x'"));
        assert!(!is_error_line("a.c:3:5: note: declared here"));
    }

    #[test]
    fn missing_compiler_is_unavailable() {
        let err = compile(
            "int main(){}",
            "definitely-not-a-compiler-xyz {src}",
            Duration::from_secs(5),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::OracleUnavailable(_)), "{err}");
    }

    #[test]
    fn timeout_is_unavailable() {
        let err = compile("", "sleep 3", Duration::from_millis(100), None).unwrap_err();
        assert!(err.to_string().contains("timed out"), "{err}");
    }
}
