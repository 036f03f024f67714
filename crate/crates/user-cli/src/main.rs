use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use dt_core::{Core, CoreConfig};
use gateway::{BridgeMap, Gateway, GatewayConfig, KeyStore, SharedKeys};
use ome_factory::FactoryConfig;
use plc_control::DeviceNode;
use serde_json::{json, Value};
use tag_protocol::{Scopes, SingleKey};
use tokio::net::TcpListener;
use user_cli::client::ApiClient;
use user_cli::net::{self, API_PORT, DEVICE_PORT, GATEWAY_PORT};
use user_cli::stack::{CORE_KEY_ID, CORE_SECRET, DEVICE_KEY_ID, DEVICE_SECRET};
use user_cli::{bundled, replay, run_scenario, RunOptions, Scenario, Verdict, BUNDLED};

/// `println!` that tolerates a closed stdout, e.g. when piped to `head`.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(name = "dtf", version, about = "Drive and inspect the drone line digital twin")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args, Clone)]
struct ApiArg {
    /// Twin API address.
    #[arg(long, default_value = "127.0.0.1:8080", global = true)]
    api: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario in-process on a simulated clock.
    Run {
        /// A `.scn` file or the name of a bundled scenario.
        scenario: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Factory override, `key=value`. Repeatable.
        #[arg(long = "config", value_name = "KEY=VALUE")]
        config: Vec<String>,
        /// Write the trace here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Re-run the scenario embedded in a trace and compare.
    Replay { trace: PathBuf },
    /// List the bundled scenarios.
    Scenarios,
    /// Device, gateway and twin in one process, over loopback sockets.
    Serve {
        #[arg(long = "config", value_name = "KEY=VALUE")]
        config: Vec<String>,
        #[arg(long, default_value_t = SocketAddrArg(net::local(API_PORT)))]
        listen_api: SocketAddrArg,
        #[arg(long, default_value_t = DEVICE_PORT)]
        device_port: u16,
        #[arg(long, default_value_t = GATEWAY_PORT)]
        gateway_port: u16,
    },
    /// The simulated line and its PLC, serving tags.
    Device {
        #[arg(long, default_value = "0.0.0.0:47808")]
        listen: String,
        #[arg(long = "config", value_name = "KEY=VALUE")]
        config: Vec<String>,
        /// Credentials the gateway must present, `id:secret`.
        #[arg(long, default_value = "gateway:device-secret")]
        key: String,
    },
    /// The gateway between twin and device.
    Gateway {
        /// Gateway config file; flags below apply when absent.
        #[arg(long)]
        file: Option<PathBuf>,
        #[arg(long, default_value = gateway::DEFAULT_LISTEN)]
        listen: String,
        #[arg(long, default_value = gateway::DEFAULT_DEVICE)]
        device: String,
        #[arg(long, default_value = "gateway:device-secret")]
        device_key: String,
        /// North application key, `id:secret`, granted every scope.
        #[arg(long, default_value = "twin:twin-secret")]
        key: String,
        /// Stations on the line, for the default mirror bridge.
        #[arg(long, default_value_t = 6)]
        stations: usize,
    },
    /// The twin: connects to the gateway and serves the HTTP API.
    Core {
        #[arg(long, default_value = "127.0.0.1:47809")]
        gateway: String,
        #[arg(long, default_value_t = SocketAddrArg(net::local(API_PORT)))]
        listen_api: SocketAddrArg,
        #[arg(long, default_value = "twin:twin-secret")]
        key: String,
        #[arg(long, default_value_t = 6)]
        stations: usize,
        #[arg(long, default_value_t = 50)]
        tick_ms: u64,
    },
    /// Submit a mission: `pass <k>` or `elevator <k> up|down`.
    Mission {
        kind: String,
        station: usize,
        direction: Option<String>,
        #[arg(long, default_value = "twin")]
        origin: String,
        /// Wait for a terminal state.
        #[arg(long)]
        wait: bool,
        #[command(flatten)]
        api: ApiArg,
    },
    /// Missions, or one mission.
    Status {
        id: Option<u64>,
        #[command(flatten)]
        api: ApiArg,
    },
    /// Thing properties, or one Thing.
    Tags {
        thing: Option<String>,
        #[command(flatten)]
        api: ApiArg,
    },
    /// Engage or release a station's operator interlock.
    Interlock {
        station: usize,
        state: OnOff,
        #[command(flatten)]
        api: ApiArg,
    },
    /// Energy, material and waste between two ticks.
    Kpi {
        #[arg(long)]
        from: Option<u64>,
        #[arg(long)]
        to: Option<u64>,
        #[command(flatten)]
        api: ApiArg,
    },
    /// Synchronisation metrics.
    Metrics {
        #[command(flatten)]
        api: ApiArg,
    },
    /// Estimated pallet positions.
    Estimates {
        #[command(flatten)]
        api: ApiArg,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum OnOff {
    On,
    Off,
}

#[derive(Clone, Copy)]
struct SocketAddrArg(std::net::SocketAddr);

impl std::fmt::Display for SocketAddrArg {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::str::FromStr for SocketAddrArg {
    type Err = std::net::AddrParseError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(SocketAddrArg)
    }
}

fn pairs(items: &[String]) -> anyhow::Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .with_context(|| format!("expected KEY=VALUE, got `{kv}`"))
        })
        .collect()
}

fn factory_config(items: &[String]) -> anyhow::Result<FactoryConfig> {
    let mut cfg = FactoryConfig::default();
    for (k, v) in pairs(items)? {
        cfg.set(&k, &v).map_err(anyhow::Error::msg)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn split_key(key: &str) -> anyhow::Result<(&str, &str)> {
    key.split_once(':').with_context(|| format!("expected id:secret, got `{key}`"))
}

fn load_scenario(arg: &str) -> anyhow::Result<Scenario> {
    let path = PathBuf::from(arg);
    if path.exists() {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        return text.parse().with_context(|| format!("in {}", path.display()));
    }
    bundled(arg).with_context(|| format!("no file or bundled scenario named `{arg}`"))
}

fn print_json(v: &Value) {
    say!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn cmd_run(scenario: &str, seed: Option<u64>, config: &[String], out: Option<PathBuf>, as_json: bool) -> anyhow::Result<bool> {
    let s = load_scenario(scenario)?;
    let opts = RunOptions {
        seed,
        config: pairs(config)?,
        record_ledger: false,
    };
    let o = run_scenario(&s, &opts)?;
    if let Some(path) = out {
        std::fs::write(&path, o.trace.join("\n") + "\n").with_context(|| format!("writing {}", path.display()))?;
    }
    if as_json {
        print_json(&json!({
            "name": o.name,
            "seed": o.seed,
            "passed": o.passed(),
            "failures": o.failures,
            "missions": o.missions,
            "metrics": o.metrics,
            "kpi": o.kpi,
            "mirror_mismatches": o.mirror_mismatches,
            "interlock_violations": o.interlock_violations,
        }));
        return Ok(o.passed());
    }
    say!(
        "{} (seed {}): {} ticks in {} ms",
        o.name,
        o.seed,
        o.stack.tick(),
        o.wall.as_millis()
    );
    for (n, m) in o.missions.as_array().into_iter().flatten().enumerate() {
        say!(
            "  mission {} at tick {}: {} {} from {} -> {}{}",
            n + 1,
            m["tick"],
            m["kind"].as_str().unwrap_or("?"),
            m["station"],
            m["origin"].as_str().unwrap_or("?"),
            m["state"].as_str().unwrap_or("?"),
            m["reason"].as_str().map(|r| format!(" ({r})")).unwrap_or_default(),
        );
    }
    let sync = &o.metrics["sync"];
    let mean = |h: &Value| match (h["sum"].as_f64(), h["count"].as_f64()) {
        (Some(s), Some(c)) if c > 0.0 => format!("{:.1} ms", s / c),
        _ => "n/a".to_string(),
    };
    say!(
        "  telemetry latency mean {}, mission rtt mean {}",
        mean(&sync["telemetry_latency_ms"]),
        mean(&sync["mission_rtt_ms"])
    );
    if !o.mirror_mismatches.is_empty() {
        say!("  mirror mismatches: {}", o.mirror_mismatches.len());
    }
    for v in &o.interlock_violations {
        say!("  interlock violation: {v}");
    }
    for f in &o.failures {
        say!("  FAIL {f}");
    }
    say!("{}", if o.passed() { "PASS" } else { "FAIL" });
    Ok(o.passed())
}

fn cmd_replay(path: &PathBuf) -> anyhow::Result<bool> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let lines: Vec<String> = text.lines().map(str::to_string).collect();
    let v = replay(&lines)?;
    say!("{v}");
    Ok(v == Verdict::Identical)
}

fn device_node(cfg: FactoryConfig, key: &str) -> anyhow::Result<DeviceNode> {
    let (id, secret) = split_key(key)?;
    Ok(DeviceNode::new(cfg, Arc::new(SingleKey::new(id, secret, Scopes::ALL)))?)
}

fn mirror_bridge(stations: usize) -> anyhow::Result<BridgeMap> {
    let cfg = FactoryConfig::uniform(stations, 1000);
    let node = device_node(cfg, "probe:probe")?;
    Ok(BridgeMap::mirror(
        node.server().names().map(|n| (n, node.server().access(n).expect("listed tag"))),
    ))
}

fn twin(key: &str, stations: usize) -> anyhow::Result<Core> {
    Ok(Core::new(CoreConfig::new(key.to_string(), stations))?)
}

async fn cmd_serve(config: &[String], api: SocketAddrArg, device_port: u16, gateway_port: u16) -> anyhow::Result<()> {
    let cfg = factory_config(config)?;
    let stations = cfg.station_count;
    let tick_ms = u64::from(cfg.tick_duration);
    let node = device_node(cfg, &format!("{DEVICE_KEY_ID}:{DEVICE_SECRET}"))?;
    let bridge = BridgeMap::mirror(
        node.server().names().map(|n| (n, node.server().access(n).expect("listed tag"))),
    );
    let mut keys = KeyStore::default();
    keys.insert_secret(CORE_KEY_ID, CORE_SECRET, Scopes::ALL);
    let gw = Gateway::new(
        SharedKeys::new(keys),
        gateway::Whitelist::default(),
        bridge,
        format!("{DEVICE_KEY_ID}:{DEVICE_SECRET}"),
    );
    let dev_listener = TcpListener::bind(net::local(device_port)).await?;
    let gw_listener = TcpListener::bind(net::local(gateway_port)).await?;
    let api_listener = TcpListener::bind(api.0).await?;
    let (dev_addr, gw_addr) = (dev_listener.local_addr()?, gw_listener.local_addr()?);
    eprintln!(
        "serving: device {dev_addr}, gateway {gw_addr}, api http://{}",
        api_listener.local_addr()?
    );
    let device = tokio::spawn(net::serve_device(Arc::new(Mutex::new(node)), dev_listener));
    let gateway = tokio::spawn(net::serve_gateway(Arc::new(Mutex::new(gw)), gw_listener, dev_addr.to_string()));
    let core = twin(&format!("{CORE_KEY_ID}:{CORE_SECRET}"), stations)?;
    let twin = tokio::spawn(net::serve_twin(core, gw_addr.to_string(), api_listener, tick_ms));
    tokio::select! {
        r = device => r??,
        r = gateway => r??,
        r = twin => r??,
    }
    Ok(())
}

async fn cmd_gateway(
    file: Option<PathBuf>,
    listen: String,
    device: String,
    device_key: String,
    key: String,
    stations: usize,
) -> anyhow::Result<()> {
    let cfg = match file {
        Some(p) => {
            let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
            GatewayConfig::parse(&text)?
        }
        None => {
            let (id, secret) = split_key(&key)?;
            let mut cfg = GatewayConfig {
                listen,
                device,
                device_credentials: device_key,
                ..GatewayConfig::default()
            };
            cfg.keys.insert_secret(id, secret, Scopes::ALL);
            cfg
        }
    };
    let bridge = match cfg.bridge {
        Some(b) => b,
        None => mirror_bridge(stations)?,
    };
    let gw = Gateway::new(SharedKeys::new(cfg.keys), cfg.whitelist, bridge, cfg.device_credentials);
    let listener = TcpListener::bind(&cfg.listen).await?;
    eprintln!("gateway: listening on {}, device {}", cfg.listen, cfg.device);
    net::serve_gateway(Arc::new(Mutex::new(gw)), listener, cfg.device).await
}

fn mission_body(kind: &str, station: usize, direction: Option<String>, origin: &str) -> anyhow::Result<Value> {
    let kind = match kind.to_ascii_lowercase().as_str() {
        "pass" | "passdockingstation" => "PassDockingStation",
        "elevator" | "elevatortransfer" => "ElevatorTransfer",
        other => bail!("unknown mission kind `{other}`; use pass or elevator"),
    };
    if kind == "ElevatorTransfer" && direction.is_none() {
        bail!("elevator missions need a direction, up or down");
    }
    Ok(json!({ "kind": kind, "station": station, "origin": origin, "direction": direction }))
}

fn runtime() -> anyhow::Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    match cli.cmd {
        Cmd::Run {
            scenario,
            seed,
            config,
            out,
            json,
        } => cmd_run(&scenario, seed, &config, out, json),
        Cmd::Replay { trace } => cmd_replay(&trace),
        Cmd::Scenarios => {
            for (name, text) in BUNDLED {
                let about = text.lines().next().and_then(|l| l.strip_prefix("# ")).unwrap_or("");
                say!("{name:14} {about}");
            }
            Ok(true)
        }
        Cmd::Serve {
            config,
            listen_api,
            device_port,
            gateway_port,
        } => runtime()?
            .block_on(cmd_serve(&config, listen_api, device_port, gateway_port))
            .map(|_| true),
        Cmd::Device { listen, config, key } => {
            let node = device_node(factory_config(&config)?, &key)?;
            runtime()?
                .block_on(async move {
                    let l = TcpListener::bind(&listen).await?;
                    eprintln!("device: listening on {listen}");
                    net::serve_device(Arc::new(Mutex::new(node)), l).await
                })
                .map(|_| true)
        }
        Cmd::Gateway {
            file,
            listen,
            device,
            device_key,
            key,
            stations,
        } => runtime()?
            .block_on(cmd_gateway(file, listen, device, device_key, key, stations))
            .map(|_| true),
        Cmd::Core {
            gateway,
            listen_api,
            key,
            stations,
            tick_ms,
        } => {
            let core = twin(&key, stations)?;
            runtime()?
                .block_on(async move {
                    let l = TcpListener::bind(listen_api.0).await?;
                    eprintln!("twin: api on http://{}", listen_api.0);
                    net::serve_twin(core, gateway, l, tick_ms).await
                })
                .map(|_| true)
        }
        Cmd::Mission {
            kind,
            station,
            direction,
            origin,
            wait,
            api,
        } => {
            let c = ApiClient::new(&api.api);
            let r = c.post("/missions", &mission_body(&kind, station, direction, &origin)?)?;
            if wait {
                let id = r["mission_id"].as_u64().context("no mission_id in reply")?;
                let m = c.wait_mission(id, Duration::from_secs(30))?;
                print_json(&m);
                return Ok(m["state"] == "Completed");
            }
            print_json(&r);
            Ok(true)
        }
        Cmd::Status { id, api } => {
            let c = ApiClient::new(&api.api);
            print_json(&match id {
                Some(id) => c.get(&format!("/missions/{id}"))?,
                None => c.get("/missions")?,
            });
            Ok(true)
        }
        Cmd::Tags { thing, api } => {
            let c = ApiClient::new(&api.api);
            print_json(&match thing {
                Some(t) => c.get(&format!("/things/{t}"))?,
                None => c.get("/things")?,
            });
            Ok(true)
        }
        Cmd::Interlock { station, state, api } => {
            let on = matches!(state, OnOff::On);
            print_json(&ApiClient::new(&api.api).post("/interlocks", &json!({ "station": station, "on": on }))?);
            Ok(true)
        }
        Cmd::Kpi { from, to, api } => {
            let mut q = Vec::new();
            if let Some(f) = from {
                q.push(format!("from={f}"));
            }
            if let Some(t) = to {
                q.push(format!("to={t}"));
            }
            let path = if q.is_empty() { "/kpi".to_string() } else { format!("/kpi?{}", q.join("&")) };
            print_json(&ApiClient::new(&api.api).get(&path)?);
            Ok(true)
        }
        Cmd::Metrics { api } => {
            print_json(&ApiClient::new(&api.api).get("/metrics/sync")?);
            Ok(true)
        }
        Cmd::Estimates { api } => {
            print_json(&ApiClient::new(&api.api).get("/estimates")?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("dtf: {e:#}");
            ExitCode::from(2)
        }
    }
}
