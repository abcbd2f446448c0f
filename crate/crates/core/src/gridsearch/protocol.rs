use std::io::{ErrorKind, Read, Write};

use serde::{Deserialize, Serialize};

use super::{JobResult, JobSpec};
use crate::error::{Error, Result};

/// Largest accepted frame body.
pub const MAX_FRAME: usize = 16 << 20;

/// Wire messages. Each is sent as a 4-byte big-endian length followed by
/// that many bytes of JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    GetJob {
        worker_id: String,
    },
    Job {
        spec: JobSpec,
    },
    /// No job is free right now, but the run is not finished; ask again later.
    Wait {
        ms: u64,
    },
    Done,
    Result {
        result: JobResult,
    },
    Ok,
    Error {
        message: String,
    },
}

pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<()> {
    let body = serde_json::to_vec(msg)?;
    if body.len() > MAX_FRAME {
        return Err(Error::Protocol(format!("frame of {} bytes is too large", body.len())));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame. `Ok(None)` means the peer closed the connection cleanly
/// between frames.
pub fn read_message(r: &mut impl Read) -> Result<Option<Message>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(Error::Protocol(format!("frame of {len} bytes is too large")));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(serde_json::from_slice(&body)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_names() {
        let m = Message::GetJob { worker_id: "w1".into() };
        assert_eq!(
            serde_json::to_string(&m).unwrap(),
            r#"{"type":"get_job","worker_id":"w1"}"#
        );
        assert_eq!(serde_json::to_string(&Message::Done).unwrap(), r#"{"type":"done"}"#);
        assert_eq!(serde_json::to_string(&Message::Ok).unwrap(), r#"{"type":"ok"}"#);
    }

    #[test]
    fn frames_round_trip() {
        let msgs = vec![
            Message::GetJob { worker_id: "a".into() },
            Message::Wait { ms: 5 },
            Message::Result {
                result: JobResult {
                    job_id: 3,
                    accuracy: 0.5,
                    worker_id: "a".into(),
                    train_seconds: 0.25,
                },
            },
        ];
        let mut buf = Vec::new();
        for m in &msgs {
            write_message(&mut buf, m).unwrap();
        }
        let mut r = buf.as_slice();
        for m in &msgs {
            assert_eq!(read_message(&mut r).unwrap().as_ref(), Some(m));
        }
        assert_eq!(read_message(&mut r).unwrap(), None);
    }

    #[test]
    fn oversized_frame_rejected() {
        let buf = (MAX_FRAME as u32 + 1).to_be_bytes();
        assert!(matches!(read_message(&mut &buf[..]), Err(Error::Protocol(_))));
    }
}
