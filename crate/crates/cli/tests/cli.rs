use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::thread;

use onhs::registry::{Registry, SharedRegistry};
use onhs::service::{serve, Client};

const NOW: &str = "1900000000";

struct Out {
    code: i32,
    stdout: String,
    stderr: String,
}

fn onhs(args: &[&str], env: &[(&str, &Path)]) -> Out {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_onhs"));
    cmd.args(args).env_remove("ONHS_SECRET_KEY_FILE").env_remove("ONHS_PASSWORD_FILE").env_remove("ONHS_SERVER");
    for (k, v) in env {
        cmd.env(k, v);
    }
    let out = cmd.output().unwrap();
    Out {
        code: out.status.code().unwrap(),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.txt"))
}

/// Generates a 512-bit key in `dir`; returns (secret path, public path, handle).
fn keygen(dir: &Path, name: &str) -> (PathBuf, PathBuf, String) {
    let (sec, public) = (dir.join(format!("{name}.sec")), dir.join(format!("{name}.pub")));
    let out = onhs(
        &["keygen", "--alg", "5", "--bits", "512", "--out", sec.to_str().unwrap(), "--pub", public.to_str().unwrap()],
        &[],
    );
    assert_eq!(out.code, 0, "{}", out.stderr);
    (sec, public, out.stdout.trim().to_string())
}

struct Server {
    child: Child,
    addr: String,
}

impl Server {
    fn spawn(extra: &[&str]) -> Self {
        let mut child = Command::new(env!("CARGO_BIN_EXE_onhs"))
            .args(["serve", "--listen", "127.0.0.1:0", "--now", NOW])
            .args(extra)
            .stdout(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
        let addr = line.trim().strip_prefix("listening ").expect("listening line").to_string();
        Server { child, addr }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

#[test]
fn keygen_then_derive() {
    let dir = tempfile::tempdir().unwrap();
    let (sec, public, handle) = keygen(dir.path(), "k");
    assert!(handle.starts_with("h1g5k") && handle.len() == 21, "{handle}");
    let derived = onhs(&["derive", "--pub", public.to_str().unwrap(), "--len", "16"], &[]);
    assert_eq!((derived.code, derived.stdout.trim()), (0, handle.as_str()));
    let long = onhs(&["derive", "--pub", public.to_str().unwrap(), "--len", "40"], &[]);
    assert!(long.stdout.trim().ends_with(&handle[5..]));
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        assert_eq!(std::fs::metadata(&sec).unwrap().permissions().mode() & 0o777, 0o600);
    }
}

#[test]
fn simulate_bundled_scenarios() {
    for name in ["route-sharing", "topology-break", "address-mobility", "name-capture"] {
        let out = onhs(&["simulate", scenario(name).to_str().unwrap()], &[]);
        assert_eq!(out.code, 0, "{name}: {}{}", out.stdout, out.stderr);
        assert!(out.stdout.contains("PASS") && !out.stdout.contains("FAIL"));
    }
    let capture = onhs(&["simulate", scenario("name-capture").to_str().unwrap()], &[]).stdout;
    assert!(capture.contains("ydnac"), "{capture}");
}

#[test]
fn simulate_reports_failures() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "LINK a b\nQUERY-ROUTE a a!b EXPECT a\n").unwrap();
    let out = onhs(&["simulate", bad.to_str().unwrap()], &[]);
    assert_eq!(out.code, 2);
    assert!(out.stdout.contains("FAIL") && out.stderr.contains("SCENARIO_FAILED"));
    std::fs::write(&bad, "FROB\n").unwrap();
    let out = onhs(&["simulate", bad.to_str().unwrap()], &[]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("SCRIPT_ERROR"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(onhs(&["frobnicate"], &[]).code, 1);
    assert_eq!(onhs(&["derive"], &[]).code, 1);
    assert_eq!(onhs(&["assign", "h1g5k0061A38F9A3540B9", "not-a-number", "192.0.2.7"], &[]).code, 1);
    assert_eq!(onhs(&[], &[]).code, 1);
    assert_eq!(onhs(&["--help"], &[]).code, 0);
}

#[test]
fn resolve_missing_handle_against_server() {
    let server = Server::spawn(&[]);
    let out = onhs(
        &["resolve", "h1g5k0123456789ABCDEF", "--root", "handleroot.example.org", "--server", &server.addr],
        &[],
    );
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("NOT_FOUND"), "{}", out.stderr);
}

#[test]
fn full_flow_against_server() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("registry.log");
    let (sec, _, handle) = keygen(dir.path(), "owner");
    let server = Server::spawn(&["--log", log.to_str().unwrap()]);
    let key_env = [("ONHS_SECRET_KEY_FILE", sec.as_path())];
    let s = server.addr.as_str();

    let created = onhs(&["create", "--server", s], &key_env);
    assert_eq!(created.stdout.trim(), format!("OK {handle} seq=0 state=active"), "{}", created.stderr);
    let assigned = onhs(&["assign", &handle, "1", "192.0.2.7", "--ttl", "3600", "--server", s, "--now", NOW], &key_env);
    assert_eq!(assigned.code, 0, "{}", assigned.stderr);
    let www = onhs(&["assign", &handle, "2", "192.0.2.80", "--labels", "www", "--server", s, "--now", NOW], &key_env);
    assert_eq!(www.code, 0, "{}", www.stderr);

    let stale = onhs(&["assign", &handle, "2", "192.0.2.9", "--server", s, "--now", NOW], &key_env);
    assert_eq!(stale.code, 2);
    assert!(stale.stderr.contains("SEQ_REPLAY last=2"), "{}", stale.stderr);

    let r = onhs(&["resolve", &handle, "--server", s, "--strict", "--now", NOW], &[]);
    assert_eq!((r.code, r.stdout.trim()), (0, format!("192.0.2.7 ttl=3600 chain={handle} verified=1").as_str()));
    let fqdn = format!("www.{handle}.handleroot.example.org.");
    let r = onhs(&["resolve", &fqdn, "--server", s, "--now", NOW], &[]);
    assert!(r.stdout.starts_with("192.0.2.80 ttl=3600"), "{}{}", r.stdout, r.stderr);

    let zone = onhs(&["export-zone", "--server", s, "--root", "handleroot.nicesponsor.org"], &[]);
    assert!(zone.stdout.starts_with("; origin handleroot.nicesponsor.org.\n"));
    assert!(zone.stdout.contains(&format!("{handle}.handleroot.nicesponsor.org. 3600 IN A 192.0.2.7\n")));

    // Missing key material is an operation error, not a prompt.
    let nokey = onhs(&["cancel", &handle, "3", "--server", s], &[]);
    assert_eq!(nokey.code, 2);
    assert!(nokey.stderr.contains("ONHS_SECRET_KEY_FILE"));

    // The server's log is usable offline.
    drop(server);
    let offline = onhs(&["resolve", &handle, "--log", log.to_str().unwrap(), "--now", NOW], &[]);
    assert_eq!(offline.stdout.trim(), format!("192.0.2.7 ttl=3600 chain={handle} verified=1"), "{}", offline.stderr);
}

#[test]
fn local_log_and_sponsor_handles() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("local.log");
    let pw = dir.path().join("pw");
    std::fs::write(&pw, "grampa\n").unwrap();
    let l = log.to_str().unwrap();
    let pw_env = [("ONHS_PASSWORD_FILE", pw.as_path())];
    let created = onhs(&["create", "--log", l, "--now", NOW], &pw_env);
    assert_eq!(created.code, 0, "{}", created.stderr);
    let handle = created.stdout.split(' ').nth(1).unwrap().to_string();
    assert!(handle.starts_with("h0") && handle.len() == 17);

    let assigned = onhs(&["assign", &handle, "1", "192.0.2.33", "--log", l, "--now", NOW], &pw_env);
    assert_eq!(assigned.code, 0, "{}", assigned.stderr);
    let r = onhs(&["resolve", &handle, "--log", l, "--now", NOW], &[]);
    assert_eq!(r.stdout.trim(), format!("192.0.2.33 ttl=3600 chain={handle} verified=0"));
    // Nothing to verify, so strict mode refuses it.
    assert_eq!(onhs(&["resolve", &handle, "--log", l, "--now", NOW, "--strict"], &[]).code, 2);

    std::fs::write(&pw, "wrong\n").unwrap();
    let denied = onhs(&["assign", &handle, "2", "192.0.2.34", "--log", l, "--now", NOW], &pw_env);
    assert_eq!(denied.code, 2);
    assert!(denied.stderr.contains("BAD_SIGNATURE"));
}

fn rewriting_proxy(upstream: SocketAddr, from: &'static str, to: &'static str) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for client in listener.incoming() {
            let mut client = client.unwrap();
            let mut request = String::new();
            BufReader::new(client.try_clone().unwrap()).read_line(&mut request).unwrap();
            let mut server = TcpStream::connect(upstream).unwrap();
            server.write_all(request.as_bytes()).unwrap();
            let mut reply = String::new();
            BufReader::new(server).read_line(&mut reply).unwrap();
            client.write_all(reply.replacen(from, to, 1).as_bytes()).unwrap();
        }
    });
    addr
}

#[test]
fn rewritten_address_fails_strict_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let (sec, _, handle) = keygen(dir.path(), "k");
    let registry = Arc::new(SharedRegistry::in_memory(Registry::new()));
    let server = serve("127.0.0.1:0", registry, Arc::new(|| 1_900_000_000)).unwrap();
    let s = server.local_addr().to_string();
    let key_env = [("ONHS_SECRET_KEY_FILE", sec.as_path())];
    assert_eq!(onhs(&["create", "--server", &s], &key_env).code, 0);
    assert_eq!(onhs(&["assign", &handle, "1", "192.0.2.7", "--server", &s, "--now", NOW], &key_env).code, 0);

    let proxy = rewriting_proxy(server.local_addr(), "OK 192.0.2.7 ", "OK 198.51.100.1 ").to_string();
    let lax = onhs(&["resolve", &handle, "--server", &proxy], &[]);
    assert_eq!(lax.code, 0);
    assert!(lax.stdout.contains("198.51.100.1") && lax.stdout.contains("verified=0"), "{}", lax.stdout);
    let strict = onhs(&["resolve", &handle, "--server", &proxy, "--strict"], &[]);
    assert_eq!(strict.code, 2);
    assert!(strict.stdout.contains("verified=0"));

    // The same reply checked offline with `verify`.
    let raw = Client::new(server.local_addr()).unwrap().request(&format!("RESOLVE {handle} 0")).unwrap();
    let good = dir.path().join("good.reply");
    std::fs::write(&good, format!("{raw}\n")).unwrap();
    assert_eq!(onhs(&["verify", &handle, "--input", good.to_str().unwrap()], &[]).code, 0);
    let bad = dir.path().join("bad.reply");
    std::fs::write(&bad, raw.replacen("ttl=3600", "ttl=9999", 1)).unwrap();
    let out = onhs(&["verify", &handle, "--input", bad.to_str().unwrap()], &[]);
    assert_eq!((out.code, out.stdout.trim()), (2, "verified=0"));
    server.shutdown();
}
