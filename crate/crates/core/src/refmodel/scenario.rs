//! Line-oriented scenario scripts.
//!
//! One event per line; `#` starts a comment; tokens are separated by
//! whitespace and may be double-quoted to contain spaces.
//!
//! ```text
//! ROUTER r
//! LINK a b                                  network administration
//! UNLINK a b                                network administration
//! MOVE host n1.n2.n3.n4                     network administration
//! BIND-HANDLE handle n1.n2.n3.n4            handle owner
//! BIND-NAME community name handle           community
//! QUERY-ROUTE start route EXPECT outcome
//! QUERY-CONCAT route route EXPECT outcome
//! QUERY-ADDRESS start n1.n2.n3.n4 EXPECT outcome
//! QUERY-HANDLE start handle EXPECT outcome
//! QUERY-NAME start community name EXPECT outcome
//! ```
//!
//! A query outcome is the router reached (a route for `QUERY-CONCAT`) or an
//! error code such as `NOT_ADJACENT`. Each event produces one log line
//! prefixed with a step counter.

use std::collections::BTreeMap;

use super::generate::converged_tables;
use super::names::{Directory, HandleTable, DEFAULT_NAME_TTL};
use super::{concat_routes, deliver_by_route, parse_route, route_by_address, Address32, Network, RefError, RouterId, Topology};
use crate::handle::{parse_handle, Handle};

/// Scripts shipped with the crate, by name.
pub const BUNDLED_SCENARIOS: [(&str, &str); 4] = [
    ("route-sharing", include_str!("../../../../scenarios/route-sharing.txt")),
    ("topology-break", include_str!("../../../../scenarios/topology-break.txt")),
    ("address-mobility", include_str!("../../../../scenarios/address-mobility.txt")),
    ("name-capture", include_str!("../../../../scenarios/name-capture.txt")),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssertionResult {
    pub step: usize,
    pub line: usize,
    pub expected: String,
    pub actual: String,
}

impl AssertionResult {
    pub fn passed(&self) -> bool {
        self.expected == self.actual
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScenarioOutcome {
    pub log: Vec<String>,
    pub assertions: Vec<AssertionResult>,
}

impl ScenarioOutcome {
    pub fn passed(&self) -> bool {
        self.assertions.iter().all(AssertionResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssertionResult> {
        self.assertions.iter().filter(|a| !a.passed())
    }
}

#[derive(Debug, Default)]
struct World {
    topology: Topology,
    owners: BTreeMap<Address32, RouterId>,
    handles: HandleTable,
    names: Directory,
}

impl World {
    /// The address layer with converged tables for the current topology.
    fn network(&self) -> Network {
        let mut local: BTreeMap<RouterId, Vec<(Address32, Address32)>> = BTreeMap::new();
        for (addr, owner) in &self.owners {
            local.entry(owner.clone()).or_default().push((*addr, *addr));
        }
        Network {
            topology: self.topology.clone(),
            tables: converged_tables(&Network { topology: self.topology.clone(), ..Default::default() }, &self.owners),
            local,
        }
    }

    fn reach_address(&self, start: &str, dst: Address32) -> Result<RouterId, RefError> {
        let net = self.network();
        let max_hops = self.topology.routers().count();
        let route = route_by_address(&net, start, dst, max_hops)?;
        Ok(route.last().expect("routes from route_by_address are non-empty").clone())
    }

    fn reach_handle(&self, start: &str, handle: &Handle) -> Result<RouterId, RefError> {
        let entry = self.handles.lookup(handle)?;
        self.reach_address(start, entry.address)
    }
}

fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut token = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(ch) => token.push(ch),
                    None => return Err("unterminated quote".into()),
                }
            }
            tokens.push(token);
        } else {
            let mut token = String::new();
            while let Some(&ch) = chars.peek() {
                if ch.is_whitespace() {
                    break;
                }
                if ch == '"' {
                    return Err("quote inside a token".into());
                }
                token.push(ch);
                chars.next();
            }
            tokens.push(token);
        }
    }
    Ok(tokens)
}

fn outcome<T: ToString>(r: Result<T, RefError>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => e.code().to_string(),
    }
}

fn show(tokens: &[String]) -> String {
    tokens
        .iter()
        .map(|t| if t.is_empty() || t.contains(char::is_whitespace) { format!("{t:?}") } else { t.clone() })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Replays `script`. Syntax errors and references to unknown routers are
/// `SCRIPT_ERROR`; failed expectations are reported in the outcome.
pub fn run_scenario(script: &str) -> Result<ScenarioOutcome, RefError> {
    let mut world = World::default();
    let mut out = ScenarioOutcome::default();

    for (idx, raw) in script.lines().enumerate() {
        let line_no = idx + 1;
        let content = raw.split_once('#').map_or(raw, |(before, _)| before).trim();
        if content.is_empty() {
            continue;
        }
        let err = |reason: String| RefError::Script { line: line_no, reason };
        let mut tokens = tokenize(content).map_err(err)?;

        let expected = match tokens.iter().position(|t| t == "EXPECT") {
            Some(pos) => {
                if pos + 2 != tokens.len() {
                    return Err(err("EXPECT takes exactly one outcome".into()));
                }
                let value = tokens.pop().expect("checked length");
                tokens.pop();
                Some(value)
            }
            None => None,
        };
        let verb = tokens[0].as_str();
        let args = &tokens[1..];
        let is_query = verb.starts_with("QUERY-");
        if is_query != expected.is_some() {
            return Err(err(format!("{verb}: queries and only queries take EXPECT")));
        }
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(err(format!("{verb} takes {n} arguments")))
            }
        };
        let router = |name: &str| {
            if world.topology.has_router(name) {
                Ok(name.to_string())
            } else {
                Err(err(format!("unknown router {name}")))
            }
        };
        let address = |text: &str| text.parse::<Address32>().map_err(|e| err(e.to_string()));
        let handle = |text: &str| parse_handle(text).map_err(|e| err(e.to_string()));

        let (authority, result) = match verb {
            "ROUTER" => {
                arity(1)?;
                world.topology.add_router(&args[0]).map_err(|e| err(e.to_string()))?;
                ("network", "ok".to_string())
            }
            "LINK" => {
                arity(2)?;
                world.topology.link(&args[0], &args[1]).map_err(|e| err(e.to_string()))?;
                ("network", "ok".to_string())
            }
            "UNLINK" => {
                arity(2)?;
                if !world.topology.unlink(&args[0], &args[1]) {
                    return Err(err(format!("no link {} {}", args[0], args[1])));
                }
                ("network", "ok".to_string())
            }
            "MOVE" => {
                arity(2)?;
                let host = router(&args[0])?;
                let addr = address(&args[1])?;
                world.owners.retain(|_, owner| *owner != host);
                world.owners.insert(addr, host);
                ("network", "ok".to_string())
            }
            "BIND-HANDLE" => {
                arity(2)?;
                let h = handle(&args[0])?;
                world.handles.bind(h, address(&args[1])?, DEFAULT_NAME_TTL);
                ("owner", "ok".to_string())
            }
            "BIND-NAME" => {
                arity(3)?;
                let h = handle(&args[2])?;
                world.names.community_mut(&args[0]).rebind_name(&args[1], h);
                ("community", "ok".to_string())
            }
            "QUERY-ROUTE" => {
                arity(2)?;
                let start = router(&args[0])?;
                let route = parse_route(&args[1]).map_err(|e| err(e.to_string()))?;
                ("query", outcome(deliver_by_route(&world.topology, &start, &route)))
            }
            "QUERY-CONCAT" => {
                arity(2)?;
                let a = parse_route(&args[0]).map_err(|e| err(e.to_string()))?;
                let b = parse_route(&args[1]).map_err(|e| err(e.to_string()))?;
                ("query", outcome(concat_routes(&a, &b)))
            }
            "QUERY-ADDRESS" => {
                arity(2)?;
                let start = router(&args[0])?;
                ("query", outcome(world.reach_address(&start, address(&args[1])?)))
            }
            "QUERY-HANDLE" => {
                arity(2)?;
                let start = router(&args[0])?;
                ("query", outcome(world.reach_handle(&start, &handle(&args[1])?)))
            }
            "QUERY-NAME" => {
                arity(3)?;
                let start = router(&args[0])?;
                let r = world
                    .names
                    .resolve(&args[1], &args[2])
                    .map(|e| e.handle.clone())
                    .and_then(|h| world.reach_handle(&start, &h));
                ("query", outcome(r))
            }
            other => return Err(err(format!("unknown event {other}"))),
        };

        let step = out.log.len() + 1;
        let mut entry = format!("{step:04} {} [{authority}] -> {result}", show(&tokens));
        if let Some(expected) = expected {
            let assertion = AssertionResult { step, line: line_no, expected, actual: result };
            entry.push_str(&format!(
                " EXPECT {} {}",
                assertion.expected,
                if assertion.passed() { "PASS" } else { "FAIL" }
            ));
            out.assertions.push(assertion);
        }
        out.log.push(entry);
    }
    Ok(out)
}
