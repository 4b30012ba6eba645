use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use onhs::crypto::{derive_handle, generate_keypair, KeyPair, DEFAULT_RSA_BITS};
use onhs::handle::{extract_fqdn, labels_from_text, parse_handle, Handle, RECOMMENDED_DIGEST_LEN};
use onhs::refmodel::run_scenario;
use onhs::registry::{Address, Operation, Owner, Registry, SharedRegistry, Update, UpdateRequest};
use onhs::resolver::{resolve, verify_result, verify_result_strict, ResolutionResult, ResolveOptions};
use onhs::service::{self, response_verifies, Client};
use onhs::Timestamp;

const DEFAULT_ROOT: &str = "handleroot.example.org";
const DEFAULT_LISTEN: &str = "127.0.0.1:7353";

#[derive(Parser)]
#[command(name = "onhs", version, about = "Open network handle registry client and server")]
struct Cli {
    /// Domain the handle tree lives under.
    #[arg(long, global = true, default_value = DEFAULT_ROOT)]
    root: String,
    /// Registry server, host:port. Without it, commands work on --log/--snapshot.
    #[arg(long, global = true, env = "ONHS_SERVER")]
    server: Option<String>,
    /// Append-only update log.
    #[arg(long, global = true)]
    log: Option<PathBuf>,
    /// Registry snapshot.
    #[arg(long, global = true)]
    snapshot: Option<PathBuf>,
    /// Check every redirection signature and fail on unverified answers.
    #[arg(long, global = true)]
    strict: bool,
    /// Current time in Unix seconds (defaults to the system clock).
    #[arg(long, global = true, hide = true)]
    now: Option<Timestamp>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct KeyArgs {
    /// Secret key file.
    #[arg(long, env = "ONHS_SECRET_KEY_FILE", hide_env_values = true)]
    key: Option<PathBuf>,
    /// File holding the password of a sponsor handle.
    #[arg(long, env = "ONHS_PASSWORD_FILE", hide_env_values = true)]
    password_file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key pair.
    Keygen {
        #[arg(long, default_value_t = 5)]
        alg: u16,
        #[arg(long, default_value_t = DEFAULT_RSA_BITS)]
        bits: usize,
        /// Where to write the secret key.
        #[arg(long)]
        out: PathBuf,
        /// Where to write the public key.
        #[arg(long = "pub")]
        public: PathBuf,
        #[arg(long, default_value_t = RECOMMENDED_DIGEST_LEN)]
        len: usize,
    },
    /// Print the handle of a public key.
    Derive {
        #[arg(long = "pub")]
        public: PathBuf,
        #[arg(long, default_value_t = RECOMMENDED_DIGEST_LEN)]
        len: usize,
    },
    /// Register a handle: self-signed with --key, or a sponsor handle with --password-file.
    Create {
        #[command(flatten)]
        auth: KeyArgs,
        #[arg(long, default_value_t = RECOMMENDED_DIGEST_LEN)]
        len: usize,
    },
    /// Bind a handle (or a label path under it) to an address.
    Assign {
        handle: String,
        seq: u64,
        address: String,
        /// Label path such as `www.mail`; `@` for the handle itself.
        #[arg(long, default_value = "@")]
        labels: String,
        #[arg(long, default_value_t = 3600)]
        ttl: u32,
        /// Absolute expiry; defaults to one day from now.
        #[arg(long)]
        expiry: Option<Timestamp>,
        #[command(flatten)]
        auth: KeyArgs,
    },
    /// Redirect a handle to another until the expiry.
    Delegate {
        handle: String,
        seq: u64,
        target: String,
        #[arg(long)]
        expiry: Option<Timestamp>,
        #[command(flatten)]
        auth: KeyArgs,
    },
    /// Retire a handle for good.
    Cancel {
        handle: String,
        seq: u64,
        #[command(flatten)]
        auth: KeyArgs,
    },
    /// Permanently forward a handle to another.
    Transfer {
        handle: String,
        seq: u64,
        target: String,
        #[command(flatten)]
        auth: KeyArgs,
    },
    /// Mark a handle's key as compromised; resolution then refuses it unless --unsafe.
    Compromise {
        handle: String,
        seq: u64,
        #[command(flatten)]
        auth: KeyArgs,
    },
    /// Resolve a handle or a name under --root.
    Resolve {
        target: String,
        labels: Vec<String>,
        /// Return the last binding of a compromised handle.
        #[arg(long = "unsafe")]
        unsafe_ok: bool,
    },
    /// Check a raw RESOLVE reply (from --input or stdin) for the given query.
    Verify {
        handle: String,
        labels: Vec<String>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long = "unsafe")]
        unsafe_ok: bool,
    },
    /// Print the registry as a zone under --root.
    ExportZone,
    /// Run the registry server.
    Serve {
        #[arg(long, default_value = DEFAULT_LISTEN)]
        listen: String,
    },
    /// Replay a reference-model scenario script.
    Simulate { script: PathBuf },
}

/// An operation failure: exit status 2.
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn fail<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}

impl Cli {
    fn now(&self) -> Timestamp {
        self.now
            .unwrap_or_else(|| SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()))
    }

    fn client(&self) -> Result<Option<Client>, Failure> {
        match &self.server {
            Some(addr) => Ok(Some(Client::new(addr.as_str())?.strict(self.strict))),
            None => Ok(None),
        }
    }

    /// Snapshot (if any) with the log (if any) replayed on top.
    fn open_local(&self, writable: bool) -> Result<SharedRegistry, Failure> {
        if self.log.is_none() && self.snapshot.is_none() {
            return fail("BAD_REQUEST give --server, --log or --snapshot");
        }
        let base = match &self.snapshot {
            Some(path) => Registry::from_snapshot(&read_text(path)?)?,
            None => Registry::new(),
        };
        match &self.log {
            Some(path) if writable || path.exists() => Ok(SharedRegistry::open(base, path)?),
            Some(_) => Ok(SharedRegistry::in_memory(base)),
            None if writable => fail("BAD_REQUEST local updates need --log"),
            None => Ok(SharedRegistry::in_memory(base)),
        }
    }

    /// Sends an update to the server, or applies it to the local log.
    fn submit(&self, req: &UpdateRequest) -> Outcome {
        if let Some(client) = self.client()? {
            let reply = client.submit(req)?;
            println!("{reply}");
        } else {
            let reg = self.open_local(true)?;
            let p = reg.apply(req, self.now())?;
            println!("OK {} seq={} state={}", p.record.handle, p.record.seq, p.record.state.name());
        }
        Ok(())
    }

    fn handle_arg(&self, text: &str) -> Result<Handle, Failure> {
        if text.contains('.') {
            let fqdn = extract_fqdn(text, &self.root)?;
            if !fqdn.labels.is_empty() {
                return fail(format!("BAD_REQUEST give labels separately: {text}"));
            }
            Ok(fqdn.handle)
        } else {
            Ok(parse_handle(text)?)
        }
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure(format!("IO_ERROR {}: {e}", path.display())))
}

fn write_secret(path: &Path, text: &str) -> Outcome {
    let mut options = fs::OpenOptions::new();
    options.write(true).create(true).truncate(true);
    #[cfg(unix)]
    std::os::unix::fs::OpenOptionsExt::mode(&mut options, 0o600);
    let mut file = options.open(path).map_err(|e| Failure(format!("IO_ERROR {}: {e}", path.display())))?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

/// Public key file: `alg=<code>` then the key in lowercase hex.
fn read_public(path: &Path) -> Result<(u16, Vec<u8>), Failure> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    let alg = lines
        .next()
        .and_then(|l| l.strip_prefix("alg="))
        .and_then(|a| a.parse().ok())
        .ok_or_else(|| Failure(format!("BAD_KEY {}: missing alg= line", path.display())))?;
    let key = lines
        .next()
        .and_then(|l| hex::decode(l.trim()).ok())
        .ok_or_else(|| Failure(format!("BAD_KEY {}: missing key hex", path.display())))?;
    Ok((alg, key))
}

enum Signer {
    Key(KeyPair),
    Password(String),
}

impl KeyArgs {
    fn signer(&self) -> Result<Signer, Failure> {
        match (&self.key, &self.password_file) {
            (Some(path), None) => Ok(Signer::Key(KeyPair::from_secret_text(&read_text(path)?)?)),
            (None, Some(path)) => {
                let text = read_text(path)?;
                let pw = text.strip_suffix('\n').unwrap_or(&text);
                if pw.is_empty() {
                    return fail("BAD_REQUEST empty password file");
                }
                Ok(Signer::Password(pw.to_string()))
            }
            (Some(_), Some(_)) => fail("BAD_REQUEST give either --key or --password-file, not both"),
            (None, None) => fail("BAD_REQUEST set ONHS_SECRET_KEY_FILE or pass --key / --password-file"),
        }
    }

    fn authorize(&self, update: Update) -> Result<UpdateRequest, Failure> {
        Ok(match self.signer()? {
            Signer::Key(kp) => update.sign(&kp),
            Signer::Password(pw) => update.with_password(pw),
        })
    }
}

fn print_resolution(r: &ResolutionResult) {
    let chain: Vec<String> = r.chain.iter().map(Handle::to_string).collect();
    let mut line = format!(
        "{} ttl={} chain={} verified={}",
        r.address,
        r.ttl_seconds,
        chain.join(","),
        u8::from(r.verified)
    );
    if r.compromised {
        line.push_str(" compromised=1");
    }
    println!("{line}");
}

fn run(cli: Cli) -> Outcome {
    let now = cli.now();
    let default_expiry = now + 86_400;
    match &cli.command {
        Command::Keygen { alg, bits, out, public, len } => {
            let kp = generate_keypair(*alg, *bits, None)?;
            let handle = kp.handle(*len)?;
            write_secret(out, &kp.to_secret_text())?;
            fs::write(public, format!("alg={alg}\n{}\n", hex::encode(kp.public_key_bytes())))?;
            println!("{handle}");
        }
        Command::Derive { public, len } => {
            let (alg, key) = read_public(public)?;
            println!("{}", derive_handle(&key, alg, *len)?);
        }
        Command::Create { auth, len } => match auth.signer()? {
            Signer::Key(kp) => {
                let handle = kp.handle(*len)?;
                let owner = Owner::PublicKey(kp.public_key_bytes().to_vec());
                cli.submit(&Update::new(handle, 0, Operation::Create { owner }).sign(&kp))?;
            }
            Signer::Password(pw) => {
                if let Some(client) = cli.client()? {
                    println!("{}", client.create_sponsored(&pw)?);
                } else {
                    let p = cli.open_local(true)?.create_sponsored(&pw, now)?;
                    println!("OK {} seq=0 state={}", p.record.handle, p.record.state.name());
                }
            }
        },
        Command::Assign { handle, seq, address, labels, ttl, expiry, auth } => {
            let address: Address = address.parse()?;
            let labels = labels_from_text(labels)?;
            let op = Operation::Assign { labels, address, ttl: *ttl, expiry: expiry.unwrap_or(default_expiry) };
            cli.submit(&auth.authorize(Update::new(cli.handle_arg(handle)?, *seq, op))?)?;
        }
        Command::Delegate { handle, seq, target, expiry, auth } => {
            let op = Operation::Delegate { target: cli.handle_arg(target)?, expiry: expiry.unwrap_or(default_expiry) };
            cli.submit(&auth.authorize(Update::new(cli.handle_arg(handle)?, *seq, op))?)?;
        }
        Command::Cancel { handle, seq, auth } => {
            cli.submit(&auth.authorize(Update::new(cli.handle_arg(handle)?, *seq, Operation::Cancel))?)?;
        }
        Command::Transfer { handle, seq, target, auth } => {
            let op = Operation::Transfer { target: cli.handle_arg(target)? };
            cli.submit(&auth.authorize(Update::new(cli.handle_arg(handle)?, *seq, op))?)?;
        }
        Command::Compromise { handle, seq, auth } => {
            cli.submit(&auth.authorize(Update::new(cli.handle_arg(handle)?, *seq, Operation::Compromise))?)?;
        }
        Command::Resolve { target, labels, unsafe_ok } => {
            let (handle, labels) = if target.contains('.') {
                let fqdn = extract_fqdn(target, &cli.root)?;
                let mut all = fqdn.labels;
                all.extend(labels.iter().cloned());
                (fqdn.handle, all)
            } else {
                (parse_handle(target)?, labels.clone())
            };
            let result = match cli.client()? {
                // The client verifies on its own; the server's claim is ignored.
                Some(client) => client.resolve(&handle, &labels, *unsafe_ok)?.result,
                None => {
                    let reg = cli.open_local(false)?;
                    let options = ResolveOptions { allow_compromised: *unsafe_ok, ..Default::default() };
                    let mut r = reg.read(|reg| resolve(reg, &handle, &labels, now, options))?;
                    r.verified = if cli.strict { verify_result_strict(&r) } else { verify_result(&r) };
                    r
                }
            };
            print_resolution(&result);
            if cli.strict && !result.verified {
                return fail("UNVERIFIED answer failed end-to-end verification");
            }
        }
        Command::Verify { handle, labels, input, unsafe_ok } => {
            let text = match input {
                Some(path) => read_text(path)?,
                None => {
                    let mut s = String::new();
                    io::stdin().read_to_string(&mut s)?;
                    s
                }
            };
            let line = text.strip_suffix('\n').unwrap_or(&text);
            let handle = cli.handle_arg(handle)?;
            if response_verifies(line, &handle, labels, *unsafe_ok, cli.strict) {
                println!("verified=1");
            } else {
                println!("verified=0");
                return fail("UNVERIFIED reply does not verify");
            }
        }
        Command::ExportZone => {
            let zone = match cli.client()? {
                Some(client) => client.export_zone(&cli.root)?,
                None => cli.open_local(false)?.read(|reg| service::export_zone(reg, &cli.root, now))?,
            };
            print!("{zone}");
        }
        Command::Serve { listen } => {
            let registry = match (&cli.log, &cli.snapshot) {
                (None, None) => SharedRegistry::in_memory(Registry::new()),
                _ => cli.open_local(cli.log.is_some())?,
            };
            let clock = match cli.now {
                Some(t) => Arc::new(move || t) as service::Clock,
                None => service::system_clock(),
            };
            let server = service::serve(listen.as_str(), Arc::new(registry), clock)?;
            println!("listening {}", server.local_addr());
            io::stdout().flush()?;
            server.wait();
        }
        Command::Simulate { script } => {
            let outcome = run_scenario(&read_text(script)?)?;
            for line in &outcome.log {
                println!("{line}");
            }
            let failed = outcome.failures().count();
            if failed > 0 {
                return fail(format!("SCENARIO_FAILED {failed} of {} expectations", outcome.assertions.len()));
            }
            println!("ok {} expectations", outcome.assertions.len());
        }
    }
    Ok(())
}
