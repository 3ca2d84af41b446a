//! LSP base-protocol framing: `Content-Length` headers over a byte stream.

use serde_json::Value;
use std::io::{self, BufRead, Write};

pub fn write_frame(w: &mut impl Write, msg: &Value) -> io::Result<()> {
    let body = serde_json::to_vec(msg)?;
    write!(w, "Content-Length: {}\r\n\r\n", body.len())?;
    w.write_all(&body)?;
    w.flush()
}

/// Reads one message. `Ok(None)` on a clean end of stream.
pub fn read_frame(r: &mut impl BufRead) -> io::Result<Option<Value>> {
    let mut length: Option<usize> = None;
    let mut line = String::new();
    let mut first = true;
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return if first {
                Ok(None)
            } else {
                Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "stream ended inside a header",
                ))
            };
        }
        first = false;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() {
            break;
        }
        if let Some((name, value)) = trimmed.split_once(':') {
            if name.trim().eq_ignore_ascii_case("content-length") {
                length = Some(value.trim().parse().map_err(|_| {
                    io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("bad Content-Length '{}'", value.trim()),
                    )
                })?);
            }
        }
    }
    let n = length.ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "missing Content-Length"))?;
    let mut body = vec![0; n];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn round_trip() {
        let mut buf = Vec::new();
        write_frame(
            &mut buf,
            &json!({"jsonrpc": "2.0", "id": 1, "method": "x", "params": {"s": "é"}}),
        )
        .unwrap();
        write_frame(&mut buf, &json!({"jsonrpc": "2.0", "method": "y"})).unwrap();
        assert!(buf.starts_with(b"Content-Length: "));
        let mut r = io::BufReader::new(&buf[..]);
        assert_eq!(read_frame(&mut r).unwrap().unwrap()["params"]["s"], "é");
        assert_eq!(read_frame(&mut r).unwrap().unwrap()["method"], "y");
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn truncated_body_errors() {
        let mut r = io::BufReader::new(&b"Content-Length: 10\r\n\r\n{}"[..]);
        assert!(read_frame(&mut r).is_err());
    }
}
