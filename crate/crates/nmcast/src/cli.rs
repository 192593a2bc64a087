//! Command-line front end: name tooling, key and certificate tooling, and
//! scenario execution.
//!
//! Every command is non-interactive and prints a single JSON object to
//! stdout (or `--out FILE`): exit 0 on success, 1 on a domain error
//! (reported as `{"error": …}`), 2 on a usage error. JSON output has sorted
//! keys and stable number formatting, so identical inputs produce identical
//! bytes. Setting `NMC_NO_COLOR` suppresses any terminal decoration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::identity::{
    self, GroupIdentity, KeyPair, Lifetime, PacketSigner, SignedPacket, SourceCertificate,
    KEY_LEN, KEY_MAGIC,
};
use crate::matching::{self, Coverage};
use crate::naming;
use crate::routing::StrategyKind;
use crate::simnet::{self, RunMetrics, ScenarioFile, Topology};

/// Name-oriented multicast tooling.
#[derive(Debug, Parser)]
#[command(name = "nmcast", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse a group name and report its canonical structure.
    Parse {
        uri: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Apply the stateless default mapping of a name to a technology.
    Map {
        uri: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Check whether a subscription name covers a publication name.
    Covers {
        sub: String,
        publication: String,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Create a group key file and report the derived group identity.
    Keygen {
        /// Seed string; must carry at least 32 bytes.
        #[arg(long)]
        seed: String,
        #[arg(long, default_value_t = 0)]
        counter: u64,
        /// Key file to write (magic "NMK1" + 32 key bytes).
        #[arg(long)]
        out: PathBuf,
    },
    /// Issue a source-admission certificate for a group.
    Cert {
        /// Controller key file.
        #[arg(long)]
        controller_key: PathBuf,
        #[arg(long, default_value_t = 0)]
        counter: u64,
        /// Source public key, hex (64 chars). Alternative: --source-key.
        #[arg(long, conflicts_with = "source_key")]
        source_pub: Option<String>,
        /// Source key file to take the public key from.
        #[arg(long)]
        source_key: Option<PathBuf>,
        #[arg(long, requires = "not_after")]
        not_before: Option<u64>,
        #[arg(long, requires = "not_before")]
        not_after: Option<u64>,
        /// Certificate file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sign a payload as a packet.
    Sign {
        /// Signer key file (controller without --cert, source with it).
        #[arg(long)]
        key: PathBuf,
        /// Group counter (controller mode).
        #[arg(long, default_value_t = 0)]
        counter: u64,
        /// Certificate file: sign as an admitted source.
        #[arg(long)]
        cert: Option<PathBuf>,
        #[arg(long)]
        uri: String,
        #[arg(long, conflicts_with = "payload_file", default_value = "")]
        payload: String,
        #[arg(long)]
        payload_file: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seq: u64,
        /// Packet file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify a packet file; exit 0 only on an accepted packet.
    Verify {
        #[arg(long)]
        packet: PathBuf,
        /// Verification clock in seconds (default: system time).
        #[arg(long)]
        now: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run a scenario over a topology and report metrics.
    Sim {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        /// Override the scenario's strategy.
        #[arg(long)]
        strategy: Option<String>,
        /// Override the rendezvous point.
        #[arg(long)]
        rp: Option<u32>,
        /// Override the cache set, comma-separated node ids.
        #[arg(long)]
        caches: Option<String>,
        /// Override the reflector node.
        #[arg(long)]
        reflector: Option<u32>,
        /// Run each named strategy on the same scenario and compare.
        #[arg(long)]
        compare: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct OutArgs {
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format; csv is available for sim per-link tables.
    #[arg(long, default_value = "json")]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// What a command produced and how the process should exit.
#[derive(Debug)]
pub struct CommandOutput {
    pub body: String,
    pub exit: i32,
    pub out_file: Option<PathBuf>,
}

struct DomainError(String);

impl<E: std::error::Error> From<E> for DomainError {
    fn from(e: E) -> Self {
        DomainError(e.to_string())
    }
}

type CmdResult = Result<(Value, i32), DomainError>;

fn stable_json(value: &Value) -> String {
    // serde_json maps are BTree-backed: keys come out sorted.
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

/// Parses argv and executes; returns the process exit code. Usage errors
/// print to stderr and exit 2 (clap's convention).
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    use clap::error::ErrorKind;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let output = execute(cli.command);
    match &output.out_file {
        Some(path) => {
            if let Err(e) = fs::write(path, output.body.as_bytes()) {
                eprintln!("cannot write {}: {e}", path.display());
                return 1;
            }
        }
        None => print!("{}", output.body),
    }
    output.exit
}

/// Executes one command, producing its report and exit code.
pub fn execute(command: Command) -> CommandOutput {
    let (out_args, result) = dispatch(command);
    let (out_file, format) = match out_args {
        Some(o) => (o.out, o.format),
        None => (None, OutputFormat::Json),
    };
    match result {
        Ok((value, exit)) => {
            let body = match format {
                OutputFormat::Json => stable_json(&value),
                OutputFormat::Csv => match to_csv(&value) {
                    Some(csv) => csv,
                    None => {
                        return CommandOutput {
                            body: stable_json(&json!({
                                "error": "--format csv is only available for sim reports"
                            })),
                            exit: 2,
                            out_file,
                        }
                    }
                },
            };
            CommandOutput {
                body,
                exit,
                out_file,
            }
        }
        Err(DomainError(message)) => CommandOutput {
            body: stable_json(&json!({ "error": message })),
            exit: 1,
            out_file,
        },
    }
}

fn dispatch(command: Command) -> (Option<OutArgs>, CmdResult) {
    match command {
        Command::Parse { uri, out } => (Some(out), cmd_parse(&uri)),
        Command::Map { uri, out } => (Some(out), cmd_map(&uri)),
        Command::Covers {
            sub,
            publication,
            out,
        } => (Some(out), cmd_covers(&sub, &publication)),
        Command::Keygen { seed, counter, out } => (None, cmd_keygen(&seed, counter, &out)),
        Command::Cert {
            controller_key,
            counter,
            source_pub,
            source_key,
            not_before,
            not_after,
            out,
        } => (
            None,
            cmd_cert(
                &controller_key,
                counter,
                source_pub.as_deref(),
                source_key.as_deref(),
                not_before.zip(not_after),
                &out,
            ),
        ),
        Command::Sign {
            key,
            counter,
            cert,
            uri,
            payload,
            payload_file,
            seq,
            out,
        } => (
            None,
            cmd_sign(
                &key,
                counter,
                cert.as_deref(),
                &uri,
                &payload,
                payload_file.as_deref(),
                seq,
                &out,
            ),
        ),
        Command::Verify { packet, now, out } => (Some(out), cmd_verify(&packet, now)),
        Command::Sim {
            topology,
            scenario,
            strategy,
            rp,
            caches,
            reflector,
            compare,
            seed,
            out,
        } => (
            Some(out),
            cmd_sim(
                &topology,
                &scenario,
                strategy.as_deref(),
                rp,
                caches.as_deref(),
                reflector,
                compare.as_deref(),
                seed,
            ),
        ),
    }
}

fn instantiation_json(inst: &crate::naming::Instantiation) -> Value {
    use crate::naming::Instantiation::*;
    match inst {
        Empty => json!({ "kind": "empty" }),
        Single(e) => json!({ "kind": "single", "endpoint": e }),
        ExplicitSet(set) => json!({
            "kind": "set",
            "endpoints": set.iter().collect::<Vec<_>>(),
        }),
        FilterSet(f) => json!({
            "kind": "filter",
            "m": f.bit_len(),
            "k": f.hash_count(),
        }),
    }
}

fn cmd_parse(uri: &str) -> CmdResult {
    let parsed = naming::parse(uri)?;
    Ok((
        json!({
            "canonical": parsed.to_string(),
            "scheme": parsed.scheme,
            "group_labels": parsed.group_labels,
            "instantiation": instantiation_json(&parsed.instantiation),
            "port": parsed.port,
            "sec_credentials": parsed.sec_credentials,
            "wildcard": parsed.is_wildcard(),
        }),
        0,
    ))
}

fn cmd_map(uri: &str) -> CmdResult {
    let parsed = naming::parse(uri)?;
    let binding = naming::default_map(&parsed)?;
    Ok((
        json!({
            "technology": binding.technology,
            "address": binding.address,
            "port": binding.port,
        }),
        0,
    ))
}

fn coverage_reason(c: Coverage) -> &'static str {
    match c {
        Coverage::Covers => "covers",
        Coverage::DifferentScheme => "different-scheme",
        Coverage::GroupMismatch => "group-mismatch",
        Coverage::InstantiationMismatch => "instantiation-mismatch",
        Coverage::PortMismatch => "port-mismatch",
        Coverage::NotComparable => "not-comparable",
    }
}

fn cmd_covers(sub: &str, publication: &str) -> CmdResult {
    let sub = naming::parse(sub)?;
    let publication = naming::parse(publication)?;
    let outcome = matching::coverage(&sub, &publication);
    let mut report = json!({
        "covers": outcome.holds(),
        "sub": sub.to_string(),
        "publication": publication.to_string(),
    });
    if !outcome.holds() {
        report["reason"] = json!(coverage_reason(outcome));
    }
    Ok((report, 0))
}

fn write_key_file(path: &Path, keys: &KeyPair) -> Result<(), DomainError> {
    let mut bytes = Vec::with_capacity(4 + KEY_LEN);
    bytes.extend_from_slice(KEY_MAGIC);
    bytes.extend_from_slice(&keys.signing_bytes());
    fs::write(path, bytes)?;
    Ok(())
}

fn read_key_file(path: &Path) -> Result<KeyPair, DomainError> {
    let bytes = fs::read(path)?;
    if bytes.len() != 4 + KEY_LEN || &bytes[..4] != KEY_MAGIC {
        return Err(DomainError(format!(
            "{} is not a key file (expected magic NMK1 + {KEY_LEN} key bytes)",
            path.display()
        )));
    }
    let raw: [u8; KEY_LEN] = bytes[4..].try_into().unwrap();
    Ok(KeyPair::from_signing_bytes(&raw))
}

fn hex_encode(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn hex_decode32(s: &str) -> Result<[u8; 32], DomainError> {
    let bad = || DomainError(format!("{s:?} is not 64 hex characters"));
    if s.len() != 64 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad());
    }
    let mut out = [0u8; 32];
    for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
        let hi = (chunk[0] as char).to_digit(16).ok_or_else(bad)?;
        let lo = (chunk[1] as char).to_digit(16).ok_or_else(bad)?;
        out[i] = (hi * 16 + lo) as u8;
    }
    Ok(out)
}

fn identity_report(id: &GroupIdentity) -> Value {
    json!({
        "counter": id.counter(),
        "group_id": id.credential(),
        "public_key": hex_encode(&id.keys().public_key()),
    })
}

fn cmd_keygen(seed: &str, counter: u64, out: &Path) -> CmdResult {
    let id = identity::create_group_identity(seed.as_bytes(), counter)?;
    write_key_file(out, id.keys())?;
    let mut report = identity_report(&id);
    report["file"] = json!(out.display().to_string());
    Ok((report, 0))
}

fn cmd_cert(
    controller_key: &Path,
    counter: u64,
    source_pub: Option<&str>,
    source_key: Option<&Path>,
    lifetime: Option<(u64, u64)>,
    out: &Path,
) -> CmdResult {
    let controller = GroupIdentity::from_keys(read_key_file(controller_key)?, counter);
    let source_pub = match (source_pub, source_key) {
        (Some(hex), None) => hex_decode32(hex)?,
        (None, Some(path)) => read_key_file(path)?.public_key(),
        _ => {
            return Err(DomainError(
                "provide exactly one of --source-pub or --source-key".into(),
            ))
        }
    };
    let lifetime = lifetime.map(|(not_before, not_after)| Lifetime {
        not_before,
        not_after,
    });
    let cert = identity::issue_certificate(&controller, &source_pub, lifetime);
    fs::write(out, cert.encode())?;
    Ok((
        json!({
            "file": out.display().to_string(),
            "group_id": controller.credential(),
            "source_id": hex_encode(&cert.source_id),
            "not_before": lifetime.map(|l| l.not_before),
            "not_after": lifetime.map(|l| l.not_after),
        }),
        0,
    ))
}

#[allow(clippy::too_many_arguments)]
fn cmd_sign(
    key: &Path,
    counter: u64,
    cert: Option<&Path>,
    uri: &str,
    payload: &str,
    payload_file: Option<&Path>,
    seq: u64,
    out: &Path,
) -> CmdResult {
    let keys = read_key_file(key)?;
    let payload: Vec<u8> = match payload_file {
        Some(path) => fs::read(path)?,
        None => payload.as_bytes().to_vec(),
    };
    let certificate = match cert {
        Some(path) => Some(SourceCertificate::decode(&fs::read(path)?)?),
        None => None,
    };
    let pkt = match &certificate {
        None => {
            let id = GroupIdentity::from_keys(keys, counter);
            identity::sign_packet(&PacketSigner::Controller(&id), uri, seq, &payload)?
        }
        Some(certificate) => identity::sign_packet(
            &PacketSigner::Source {
                keys: &keys,
                certificate,
            },
            uri,
            seq,
            &payload,
        )?,
    };
    fs::write(out, pkt.encode())?;
    Ok((
        json!({
            "file": out.display().to_string(),
            "group_id": base64_url(&pkt.group_id),
            "seq": pkt.seq,
            "uri": pkt.group_uri,
            "payload_bytes": pkt.payload.len(),
            "signed_as": if pkt.certificate.is_some() { "source" } else { "controller" },
        }),
        0,
    ))
}

fn base64_url(bytes: &[u8]) -> String {
    use base64::engine::general_purpose::URL_SAFE_NO_PAD;
    use base64::Engine;
    URL_SAFE_NO_PAD.encode(bytes)
}

fn cmd_verify(packet: &Path, now: Option<u64>) -> CmdResult {
    let bytes = fs::read(packet)?;
    let pkt = SignedPacket::decode(&bytes)?;
    let now = now.unwrap_or_else(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0)
    });
    let verdict = identity::verify_packet(&pkt, now);
    let report = json!({
        "verdict": verdict,
        "group_id": base64_url(&pkt.group_id),
        "uri": pkt.group_uri,
        "seq": pkt.seq,
        "signed_as": if pkt.certificate.is_some() { "source" } else { "controller" },
        "now": now,
    });
    Ok((report, if verdict.is_accepted() { 0 } else { 1 }))
}

fn metrics_json(metrics: &RunMetrics) -> Value {
    serde_json::to_value(metrics).expect("metrics serialize")
}

fn parse_node_list(text: &str) -> Result<Vec<u32>, DomainError> {
    text.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .map_err(|_| DomainError(format!("{s:?} is not a node id")))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_sim(
    topology: &Path,
    scenario: &Path,
    strategy: Option<&str>,
    rp: Option<u32>,
    caches: Option<&str>,
    reflector: Option<u32>,
    compare: Option<&str>,
    seed: Option<u64>,
) -> CmdResult {
    let topo = Topology::from_json(&fs::read_to_string(topology)?)?;
    let scenario = ScenarioFile::from_json(&fs::read_to_string(scenario)?)?;
    let mut config = scenario.strategy.clone();
    if let Some(s) = strategy {
        config.strategy = s.parse::<StrategyKind>()?;
    }
    if let Some(rp) = rp {
        config.rp = Some(rp);
    }
    if let Some(caches) = caches {
        config.caches = parse_node_list(caches)?.into_iter().collect();
    }
    if let Some(r) = reflector {
        config.reflector = Some(r);
    }
    let seed = seed.or(scenario.seed).unwrap_or(0);

    match compare {
        None => {
            let metrics = simnet::run(&topo, &scenario.events, &config, seed)?;
            Ok((metrics_json(&metrics), 0))
        }
        Some(list) => {
            let mut runs = BTreeMap::new();
            let mut table = BTreeMap::new();
            for name in list.split(',').filter(|s| !s.is_empty()) {
                let kind = name.trim().parse::<StrategyKind>()?;
                let mut cfg = config.clone();
                cfg.strategy = kind;
                let metrics = simnet::run(&topo, &scenario.events, &cfg, seed)?;
                table.insert(
                    kind.name().to_string(),
                    json!({
                        "control_messages": metrics.control_messages,
                        "deliveries": metrics.total_deliveries(),
                        "duplicate_count": metrics.duplicate_count,
                        "link_transmissions": metrics.link_transmissions,
                        "max_link_stress": metrics.max_link_stress,
                        "mean_path_stretch": metrics.mean_path_stretch,
                    }),
                );
                runs.insert(kind.name().to_string(), metrics_json(&metrics));
            }
            Ok((json!({ "runs": runs, "table": table }), 0))
        }
    }
}

/// Per-link CSV for sim reports: single run or one block per compared
/// strategy.
fn to_csv(value: &Value) -> Option<String> {
    fn links_csv(prefix: &str, metrics: &Value, out: &mut String) -> Option<()> {
        for entry in metrics.get("per_link")?.as_array()? {
            out.push_str(&format!(
                "{}{},{},{}\n",
                prefix,
                entry.get("u")?.as_u64()?,
                entry.get("v")?.as_u64()?,
                entry.get("transmissions")?.as_u64()?
            ));
        }
        Some(())
    }
    let mut out = String::new();
    if let Some(runs) = value.get("runs").and_then(Value::as_object) {
        out.push_str("strategy,u,v,transmissions\n");
        for (name, metrics) in runs {
            links_csv(&format!("{name},"), metrics, &mut out)?;
        }
        return Some(out);
    }
    if value.get("per_link").is_some() {
        out.push_str("u,v,transmissions\n");
        links_csv("", value, &mut out)?;
        return Some(out);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_reports_fields() {
        let out = execute(Command::Parse {
            uri: "mcast-ip://224.1.2.3:5000".into(),
            out: OutArgs { out: None, format: OutputFormat::Json },
        });
        assert_eq!(out.exit, 0);
        let v: Value = serde_json::from_str(&out.body).unwrap();
        assert_eq!(v["scheme"], "mcast-ip");
        assert_eq!(v["port"], 5000);
        assert_eq!(v["canonical"], "mcast-ip://224.1.2.3:5000");
    }

    #[test]
    fn map_unmappable_scheme_is_domain_error() {
        let out = execute(Command::Map {
            uri: "sip://x@y".into(),
            out: OutArgs { out: None, format: OutputFormat::Json },
        });
        assert_eq!(out.exit, 1);
        let v: Value = serde_json::from_str(&out.body).unwrap();
        assert!(v["error"].as_str().unwrap().contains("no stateless"));
    }

    #[test]
    fn covers_reports_reason() {
        let out = execute(Command::Covers {
            sub: "opaque://news:80".into(),
            publication: "opaque://news@cnn.com:81".into(),
            out: OutArgs { out: None, format: OutputFormat::Json },
        });
        assert_eq!(out.exit, 0);
        let v: Value = serde_json::from_str(&out.body).unwrap();
        assert_eq!(v["covers"], false);
        assert_eq!(v["reason"], "port-mismatch");
    }

    #[test]
    fn json_keys_are_sorted() {
        let out = execute(Command::Parse {
            uri: "opaque://news@cnn.com".into(),
            out: OutArgs { out: None, format: OutputFormat::Json },
        });
        // Top-level keys sit at two spaces of indent in pretty output.
        let keys: Vec<&str> = out
            .body
            .lines()
            .filter(|l| l.starts_with("  \""))
            .filter_map(|l| l.trim().strip_prefix('"'))
            .filter_map(|l| l.split('"').next())
            .collect();
        assert!(!keys.is_empty());
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }
}
