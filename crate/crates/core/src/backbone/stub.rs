//! Bundled stub model server speaking the remote backbone protocol.
//!
//! Single-threaded HTTP/1.1 over `std::net`; one request per connection.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use super::remote::{decode_png, TensorPayload};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum StubReply {
    /// Return this text for every generate request.
    Fixed(String),
    /// Score = mean channel value of the first frame, formatted with 3 decimals.
    MeanBrightness,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StubFault {
    /// Drop the payload field (`text` or `hidden_states`) from replies.
    OmitField,
    /// Reply with a protocol-level `error` object.
    ServerError { code: String, message: String },
    /// Reply with a body that is not JSON.
    Garbage,
    /// Sleep before replying.
    Stall(Duration),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubConfig {
    pub reply: StubReply,
    pub hidden_dim: usize,
    pub fault: Option<StubFault>,
}

impl Default for StubConfig {
    fn default() -> Self {
        StubConfig {
            reply: StubReply::Fixed("0.50".into()),
            hidden_dim: 16,
            fault: None,
        }
    }
}

pub struct StubServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    served: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Bind to an ephemeral localhost port.
    pub fn start(config: StubConfig) -> Result<Self> {
        Self::bind("127.0.0.1:0", config)
    }

    pub fn bind(addr: &str, config: StubConfig) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let served = Arc::new(AtomicUsize::new(0));
        let (stop2, served2) = (stop.clone(), served.clone());
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                if let Ok(stream) = conn {
                    let _ = handle_connection(stream, &config);
                    served2.fetch_add(1, Ordering::SeqCst);
                }
            }
        });
        Ok(StubServer {
            addr,
            stop,
            served,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}/v1/engagement", self.addr)
    }

    pub fn requests_served(&self) -> usize {
        self.served.load(Ordering::SeqCst)
    }

    /// Block the calling thread serving requests until the process exits.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn handle_connection(mut stream: TcpStream, config: &StubConfig) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    if line.is_empty() {
        return Ok(());
    }
    let mut content_length = 0usize;
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h)? == 0 || h == "\r\n" || h == "\n" {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.trim().eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    let (status, reply) = if line.starts_with("POST ") {
        respond(&body, config)
    } else {
        (405, json!({"error": {"code": "method", "message": "POST only"}}).to_string())
    };
    if let Some(StubFault::Stall(d)) = &config.fault {
        std::thread::sleep(*d);
    }
    let reason = if status == 200 { "OK" } else { "Error" };
    let head = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        reply.len()
    );
    stream.write_all(head.as_bytes())?;
    stream.write_all(reply.as_bytes())?;
    stream.flush()?;
    let _ = stream.shutdown(Shutdown::Write);
    Ok(())
}

fn respond(body: &[u8], config: &StubConfig) -> (u16, String) {
    match &config.fault {
        Some(StubFault::Garbage) => return (200, "<<not json>>".into()),
        Some(StubFault::ServerError { code, message }) => {
            return (200, json!({"error": {"code": code, "message": message}}).to_string())
        }
        _ => {}
    }
    let req: Value = match serde_json::from_slice(body) {
        Ok(v) => v,
        Err(e) => return (400, json!({"error": {"code": "bad_request", "message": e.to_string()}}).to_string()),
    };
    let omit = matches!(config.fault, Some(StubFault::OmitField));
    let prompt = req.get("prompt").and_then(Value::as_str).unwrap_or_default();
    let frames: Vec<&str> = req
        .get("frames")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).collect())
        .unwrap_or_default();
    match req.get("mode").and_then(Value::as_str) {
        Some("generate") => {
            let text = match &config.reply {
                StubReply::Fixed(t) => t.clone(),
                StubReply::MeanBrightness => match first_frame_mean(&frames) {
                    Some(m) => format!("{m:.3}"),
                    None => return (400, json!({"error": {"code": "bad_request", "message": "no decodable frames"}}).to_string()),
                },
            };
            if omit {
                (200, json!({"result": text}).to_string())
            } else {
                (200, json!({"text": text}).to_string())
            }
        }
        Some("hidden") => {
            if omit {
                return (200, json!({"text": "unexpected"}).to_string());
            }
            // deterministic pseudo-features seeded by the request content
            let mut state = fnv(prompt.as_bytes()) ^ frames.iter().fold(0, |h, f| h ^ fnv(f.as_bytes()));
            let rows = 4 + frames.len();
            let d = config.hidden_dim.max(1);
            let values = (0..rows * d).map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
            });
            let payload = TensorPayload::from_matrix_f32(rows, d, values);
            (200, json!({"hidden_states": payload}).to_string())
        }
        _ => (400, json!({"error": {"code": "bad_request", "message": "mode must be hidden or generate"}}).to_string()),
    }
}

fn first_frame_mean(frames: &[&str]) -> Option<f64> {
    let bytes = B64.decode(frames.first()?).ok()?;
    decode_png(&bytes).ok().map(|f| f.mean())
}

fn fnv(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}
