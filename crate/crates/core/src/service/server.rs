use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{SystemTime, UNIX_EPOCH};

use super::wire::{format_error, format_resolution, parse_request, MutationReply, WireRequest, MAX_REQUEST_LEN};
use super::zone::export_zone;
use crate::registry::{Prepared, RegistryError, SharedRegistry};
use crate::resolver::{resolve, ResolveOptions};
use crate::Timestamp;

pub type Clock = Arc<dyn Fn() -> Timestamp + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
}

fn mutation_reply(result: Result<Prepared, RegistryError>) -> String {
    match result {
        Ok(p) => MutationReply { handle: p.record.handle, seq: p.record.seq, state: p.record.state.name().into() }
            .to_string(),
        Err(e) => format_error(e.code(), &e.detail()),
    }
}

/// Answers one request line. Never panics on any input.
pub fn handle_request(registry: &SharedRegistry, line: &str, now: Timestamp) -> String {
    let request = match parse_request(line) {
        Ok(r) => r,
        Err(e) => return format_error("BAD_REQUEST", &e.0),
    };
    match request {
        WireRequest::Update(req) => mutation_reply(registry.apply(&req, now)),
        WireRequest::CreateSponsored { password } => mutation_reply(registry.create_sponsored(&password, now)),
        WireRequest::Resolve { handle, labels, unsafe_ok } => {
            let options = ResolveOptions { allow_compromised: unsafe_ok, ..Default::default() };
            match registry.read(|reg| resolve(reg, &handle, &labels, now, options)) {
                Ok(r) => format_resolution(&r),
                Err(e) => format_error(e.code(), &e.detail()),
            }
        }
        WireRequest::ExportZone { origin } => match registry.read(|reg| export_zone(reg, &origin, now)) {
            Ok(zone) => format!("OK {}", hex::encode(zone)),
            Err(e) => format_error("BAD_REQUEST", &e.to_string()),
        },
    }
}

/// Reads one `\n`-terminated line of at most `MAX_REQUEST_LEN` bytes.
/// `Ok(None)` at end of stream; an overlong line is drained and reported.
fn read_request<R: BufRead>(reader: &mut R) -> io::Result<Option<Result<String, &'static str>>> {
    let mut buf = Vec::new();
    let limit = MAX_REQUEST_LEN as u64 + 2;
    reader.by_ref().take(limit).read_until(b'\n', &mut buf)?;
    if buf.is_empty() {
        return Ok(None);
    }
    if buf.last() != Some(&b'\n') {
        if buf.len() as u64 == limit {
            // Skip the rest of the line so the next request starts clean.
            let mut sink = Vec::new();
            loop {
                sink.clear();
                let n = reader.by_ref().take(64 * 1024).read_until(b'\n', &mut sink)?;
                if n == 0 || sink.last() == Some(&b'\n') {
                    break;
                }
            }
            return Ok(Some(Err("request-too-long")));
        }
        // Final line without a terminator.
    } else {
        buf.pop();
        if buf.last() == Some(&b'\r') {
            buf.pop();
        }
    }
    if buf.len() > MAX_REQUEST_LEN {
        return Ok(Some(Err("request-too-long")));
    }
    Ok(Some(String::from_utf8(buf).map_err(|_| "not-utf8")))
}

fn serve_connection(stream: TcpStream, registry: &SharedRegistry, clock: &Clock) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    while let Some(request) = read_request(&mut reader)? {
        let mut reply = match request {
            Ok(line) => handle_request(registry, &line, clock()),
            Err(why) => format_error("BAD_REQUEST", why),
        };
        reply.push('\n');
        writer.write_all(reply.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

/// A running server. Dropping it without [`ServerHandle::shutdown`] leaves
/// it running until the process exits.
#[derive(Debug)]
pub struct ServerHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    /// Stops accepting connections and waits for the accept loop to exit.
    /// Connections already open finish their current request. Every
    /// accepted update is already on disk, so nothing is lost.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.local_addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` and serves `registry`, one thread per connection.
pub fn serve<A: ToSocketAddrs>(addr: A, registry: Arc<SharedRegistry>, clock: Clock) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local_addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let accept_thread = thread::spawn(move || {
        for stream in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let registry = Arc::clone(&registry);
            let clock = Arc::clone(&clock);
            thread::spawn(move || {
                let _ = serve_connection(stream, &registry, &clock);
            });
        }
    });
    Ok(ServerHandle { local_addr, stop, accept_thread: Some(accept_thread) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::Registry;

    #[test]
    fn overlong_lines_are_drained() {
        let mut input = vec![b'a'; MAX_REQUEST_LEN + 10];
        input.extend_from_slice(b"\nNEXT\n");
        let mut reader = BufReader::new(&input[..]);
        assert_eq!(read_request(&mut reader).unwrap(), Some(Err("request-too-long")));
        assert_eq!(read_request(&mut reader).unwrap(), Some(Ok("NEXT".to_string())));
        assert_eq!(read_request(&mut reader).unwrap(), None);
    }

    #[test]
    fn exact_limit_is_accepted() {
        let mut input = vec![b'a'; MAX_REQUEST_LEN];
        input.extend_from_slice(b"\r\n");
        let mut reader = BufReader::new(&input[..]);
        assert!(matches!(read_request(&mut reader).unwrap(), Some(Ok(line)) if line.len() == MAX_REQUEST_LEN));
    }

    #[test]
    fn protocol_errors() {
        let reg = SharedRegistry::in_memory(Registry::new());
        assert_eq!(handle_request(&reg, "FROB x", 0), "ERR BAD_REQUEST unknown-verb");
        assert_eq!(
            handle_request(&reg, "RESOLVE h1g5k0061A38F9A3540B9 0", 0),
            "ERR NOT_FOUND h1g5k0061A38F9A3540B9 chain=h1g5k0061A38F9A3540B9"
        );
        assert_eq!(
            handle_request(&reg, "EXPORT-ZONE handleroot.nicesponsor.org", 0),
            format!("OK {}", hex::encode("; origin handleroot.nicesponsor.org.\n"))
        );
    }
}
