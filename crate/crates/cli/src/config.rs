//! Scenario configuration: TOML sections of `key = value` pairs.
//!
//! Every key has a default (0.2 dB/km fiber, detection 0.8, coupling 0.9, 10 GHz), so an empty
//! file is a valid configuration. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use qlinksim_core::diqkd::{log_grid, HeraldSchemeParams, RateSearch};
use qlinksim_core::optics::{DetectorKind, DetectorModel};
use qlinksim_core::repeater::{LinkArchitecture, RepeaterConfig};
use qlinksim_core::wcp::{ChannelModel, WcpProtocol};
use qlinksim_core::{SimError, Truncation};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Herald,
    DiqkdRate,
    WcpRate,
    RepeaterRate,
    ChshThreshold,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::Herald => "herald",
            Scenario::DiqkdRate => "diqkd-rate",
            Scenario::WcpRate => "wcp-rate",
            Scenario::RepeaterRate => "repeater-rate",
            Scenario::ChshThreshold => "chsh-threshold",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKindName {
    Threshold,
    NumberResolving,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeraldSection {
    pub pair_p: f64,
    pub bs_transmission: f64,
    pub distance_km: f64,
    pub attenuation_db_per_km: f64,
    pub extra_loss_db: f64,
    pub coupling: f64,
    pub detection_eff: f64,
    pub dark_prob: f64,
    pub detector: DetectorKindName,
    pub repetition_rate_hz: f64,
    pub on_demand: bool,
    pub sps_pair_p: f64,
    pub on_demand_p1: f64,
    pub on_demand_p2: f64,
    pub n_max: u8,
}

impl Default for HeraldSection {
    fn default() -> Self {
        let p = HeraldSchemeParams::default();
        Self {
            pair_p: p.pair_p,
            bs_transmission: p.bs_transmission,
            distance_km: p.channel.length_km,
            attenuation_db_per_km: p.channel.attenuation_db_per_km,
            extra_loss_db: p.extra_loss_db,
            coupling: p.coupling,
            detection_eff: p.station_detectors.efficiency(),
            dark_prob: p.station_detectors.dark_prob(),
            detector: DetectorKindName::Threshold,
            repetition_rate_hz: p.repetition_rate,
            on_demand: p.on_demand,
            sps_pair_p: p.sps_pair_p,
            on_demand_p1: p.on_demand_p1,
            on_demand_p2: p.on_demand_p2,
            n_max: Truncation::default().n_max(),
        }
    }
}

/// Log-spaced grids scanned by `diqkd-rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub pair_p_min: f64,
    pub pair_p_max: f64,
    pub pair_p_steps: usize,
    pub bs_transmission_min: f64,
    pub bs_transmission_max: f64,
    pub bs_transmission_steps: usize,
    pub sps_pair_p_min: f64,
    pub sps_pair_p_max: f64,
    pub sps_pair_p_steps: usize,
}

impl Default for SearchSection {
    fn default() -> Self {
        let s = RateSearch::default();
        let ends = |v: &[f64]| (v[0], v[v.len() - 1], v.len());
        let (pair_p_min, pair_p_max, pair_p_steps) = ends(&s.pair_p);
        let (bs_transmission_min, bs_transmission_max, bs_transmission_steps) = ends(&s.bs_transmission);
        let (sps_pair_p_min, sps_pair_p_max, sps_pair_p_steps) = ends(&s.sps_pair_p);
        Self {
            pair_p_min,
            pair_p_max,
            pair_p_steps,
            bs_transmission_min,
            bs_transmission_max,
            bs_transmission_steps,
            sps_pair_p_min,
            sps_pair_p_max,
            sps_pair_p_steps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WcpProtocolName {
    Bb84,
    Sarg,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WcpSection {
    pub protocol: WcpProtocolName,
    pub distance_km: f64,
    pub attenuation_db_per_km: f64,
    pub detector_eff: f64,
    pub repetition_rate_hz: f64,
}

impl Default for WcpSection {
    fn default() -> Self {
        Self {
            protocol: WcpProtocolName::Both,
            distance_km: 25.0,
            attenuation_db_per_km: ChannelModel::DEFAULT_ATTENUATION,
            detector_eff: 0.8,
            repetition_rate_hz: 10e9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchitectureName {
    Dlcz,
    Sps,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RepeaterSection {
    pub architectures: Vec<ArchitectureName>,
    pub total_length_km: f64,
    pub link_count: u32,
    pub attenuation_db_per_km: f64,
    pub fiber_speed_km_s: f64,
    pub detector_eff: f64,
    pub memory_eff: f64,
    pub fidelity_target: f64,
    pub dlcz_error_constant: f64,
    pub sps_error_constant: f64,
    /// DLCZ pair probability; the largest allowed value when absent.
    pub dlcz_p: Option<f64>,
    pub p1: f64,
    pub p2: f64,
    /// Single-photon-source beamsplitter ratio; optimized when absent.
    pub beta: Option<f64>,
}

impl Default for RepeaterSection {
    fn default() -> Self {
        let c = RepeaterConfig::default();
        Self {
            architectures: vec![ArchitectureName::Dlcz, ArchitectureName::Sps],
            total_length_km: c.total_length_km,
            link_count: c.link_count,
            attenuation_db_per_km: c.attenuation_db_per_km,
            fiber_speed_km_s: c.fiber_speed_km_s,
            detector_eff: c.detector_eff,
            memory_eff: c.memory_eff,
            fidelity_target: c.fidelity_target,
            dlcz_error_constant: c.dlcz_error_constant,
            sps_error_constant: c.sps_error_constant,
            dlcz_p: None,
            p1: 0.95,
            p2: 1e-4,
            beta: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepScale {
    Linear,
    Log,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Dotted key of the swept parameter, e.g. `herald.distance_km`.
    pub path: String,
    pub start: f64,
    pub stop: f64,
    pub steps: usize,
    #[serde(default = "default_scale")]
    pub scale: SweepScale,
}

fn default_scale() -> SweepScale {
    SweepScale::Linear
}

impl SweepSection {
    pub fn values(&self) -> Vec<f64> {
        match (self.steps, self.scale) {
            (0, _) => Vec::new(),
            (1, _) => vec![self.start],
            (n, SweepScale::Linear) => (0..n)
                .map(|i| self.start + (self.stop - self.start) * i as f64 / (n - 1) as f64)
                .collect(),
            (n, SweepScale::Log) => log_grid(self.start, self.stop, n),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub scenario: Option<Scenario>,
    pub herald: HeraldSection,
    pub search: SearchSection,
    pub wcp: WcpSection,
    pub repeater: RepeaterSection,
    pub sweep: Option<SweepSection>,
}

/// Builds core parameter types from a section, naming keys as in the file.
impl ScenarioConfig {
    pub fn herald_params(&self) -> Result<HeraldSchemeParams, (String, SimError)> {
        let h = &self.herald;
        let kind = match h.detector {
            DetectorKindName::Threshold => DetectorKind::Threshold,
            DetectorKindName::NumberResolving => DetectorKind::NumberResolving,
        };
        let station = DetectorModel::new(kind, h.detection_eff, h.dark_prob).map_err(|e| {
            let key = match &e {
                SimError::OutOfRange { name: "efficiency", .. } => "detection_eff",
                _ => "dark_prob",
            };
            (format!("herald.{key}"), e)
        })?;
        let channel = ChannelModel::new(h.distance_km, h.attenuation_db_per_km).map_err(|e| {
            let key = match &e {
                SimError::OutOfRange { name: "length_km", .. } => "distance_km",
                _ => "attenuation_db_per_km",
            };
            (format!("herald.{key}"), e)
        })?;
        let params = HeraldSchemeParams {
            pair_p: h.pair_p,
            bs_transmission: h.bs_transmission,
            channel,
            extra_loss_db: h.extra_loss_db,
            coupling: h.coupling,
            station_detectors: station,
            repetition_rate: h.repetition_rate_hz,
            on_demand: h.on_demand,
            sps_pair_p: h.sps_pair_p,
            on_demand_p1: h.on_demand_p1,
            on_demand_p2: h.on_demand_p2,
        };
        params.validate().map_err(|e| {
            let key = match &e {
                SimError::OutOfRange {
                    name: "repetition_rate",
                    ..
                } => "repetition_rate_hz".to_string(),
                SimError::OutOfRange { name: "p", .. } => "sps_pair_p".to_string(),
                SimError::OutOfRange { name: "p1", .. } => "on_demand_p1".to_string(),
                SimError::OutOfRange {
                    name: "p2" | "p1 + p2", ..
                } => "on_demand_p2".to_string(),
                SimError::OutOfRange { name, .. } => name.to_string(),
                _ => "pair_p".to_string(),
            };
            (format!("herald.{key}"), e)
        })?;
        Ok(params)
    }

    pub fn truncation(&self) -> Result<Truncation, (String, SimError)> {
        Truncation::new(self.herald.n_max).map_err(|e| ("herald.n_max".to_string(), e))
    }

    pub fn rate_search(&self) -> Result<RateSearch, (String, SimError)> {
        let s = &self.search;
        let grid = |key: &str, lo: f64, hi: f64, steps: usize| {
            if !(lo > 0.0 && hi >= lo && hi <= 1.0 && steps >= 1) {
                return Err((
                    format!("search.{key}_min"),
                    SimError::OutOfRange {
                        name: "grid",
                        value: lo,
                        expected: "0 < min <= max <= 1 and steps >= 1",
                    },
                ));
            }
            Ok(log_grid(lo, hi, steps))
        };
        Ok(RateSearch {
            pair_p: grid("pair_p", s.pair_p_min, s.pair_p_max, s.pair_p_steps)?,
            bs_transmission: grid(
                "bs_transmission",
                s.bs_transmission_min,
                s.bs_transmission_max,
                s.bs_transmission_steps,
            )?,
            sps_pair_p: grid("sps_pair_p", s.sps_pair_p_min, s.sps_pair_p_max, s.sps_pair_p_steps)?,
            truncation: self.truncation()?,
        })
    }

    pub fn wcp_channel(&self) -> Result<ChannelModel, (String, SimError)> {
        let w = &self.wcp;
        let channel = ChannelModel::new(w.distance_km, w.attenuation_db_per_km).map_err(|e| {
            let key = match &e {
                SimError::OutOfRange { name: "length_km", .. } => "distance_km",
                _ => "attenuation_db_per_km",
            };
            (format!("wcp.{key}"), e)
        })?;
        let check = |key: &str, v: f64, lo: f64, hi: f64, expected: &'static str| {
            if v.is_finite() && v >= lo && v <= hi {
                Ok(())
            } else {
                Err((
                    format!("wcp.{key}"),
                    SimError::OutOfRange {
                        name: "value",
                        value: v,
                        expected,
                    },
                ))
            }
        };
        check("detector_eff", w.detector_eff, 0.0, 1.0, "0 <= eta <= 1")?;
        check(
            "repetition_rate_hz",
            w.repetition_rate_hz,
            f64::MIN_POSITIVE,
            f64::MAX,
            "rate > 0",
        )?;
        Ok(channel)
    }

    pub fn wcp_protocols(&self) -> Vec<WcpProtocol> {
        match self.wcp.protocol {
            WcpProtocolName::Bb84 => vec![WcpProtocol::Bb84],
            WcpProtocolName::Sarg => vec![WcpProtocol::Sarg],
            WcpProtocolName::Both => vec![WcpProtocol::Bb84, WcpProtocol::Sarg],
        }
    }

    pub fn repeater_config(&self) -> Result<RepeaterConfig, (String, SimError)> {
        let r = &self.repeater;
        let config = RepeaterConfig {
            total_length_km: r.total_length_km,
            link_count: r.link_count,
            attenuation_db_per_km: r.attenuation_db_per_km,
            fiber_speed_km_s: r.fiber_speed_km_s,
            detector_eff: r.detector_eff,
            memory_eff: r.memory_eff,
            fidelity_target: r.fidelity_target,
            dlcz_error_constant: r.dlcz_error_constant,
            sps_error_constant: r.sps_error_constant,
        };
        config.validate().map_err(|e| {
            let key = match &e {
                SimError::OutOfRange { name, .. } => name.to_string(),
                _ => "link_count".to_string(),
            };
            (format!("repeater.{key}"), e)
        })?;
        Ok(config)
    }
}

impl ScenarioConfig {
    /// DLCZ with `dlcz_p` (if set) and the single-photon source, checked for
    /// range. An unset `beta` is validated at 0.5.
    pub fn link_architectures(&self) -> Result<(Option<LinkArchitecture>, LinkArchitecture), (String, SimError)> {
        let r = &self.repeater;
        let dlcz = r.dlcz_p.map(|p| LinkArchitecture::Dlcz { p });
        if let Some(arch) = dlcz {
            arch.validate().map_err(|e| ("repeater.dlcz_p".to_string(), e))?;
        }
        let sps = LinkArchitecture::Sps {
            p1: r.p1,
            p2: r.p2,
            beta: r.beta.unwrap_or(0.5),
        };
        sps.validate().map_err(|e| {
            let key = match &e {
                SimError::OutOfRange { name, .. } => name.to_string(),
                _ => "p1".to_string(),
            };
            (format!("repeater.{key}"), e)
        })?;
        Ok((dlcz, sps))
    }
}

/// Configuration after overrides, expanded into one config per sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedConfig {
    pub scenario: Scenario,
    pub base: ScenarioConfig,
    /// Swept key and its values, in sweep order.
    pub sweep: Option<(String, Vec<f64>)>,
    pub points: Vec<ScenarioConfig>,
    /// SHA-256 of the canonical effective configuration.
    pub digest: String,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]`, if the file sets it.
fn line_of_key(text: &str, path: &str) -> Option<usize> {
    let (section, key) = path.rsplit_once('.').unwrap_or(("", path));
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            current = name.trim().to_string();
            continue;
        }
        if current == section {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn toml_error(text: &str, e: &toml::de::Error) -> CliError {
    let msg = e.message().trim_end().to_string();
    match e.span() {
        Some(span) => CliError::Config(format!("line {}: {msg}", line_of_offset(text, span.start))),
        None => CliError::Config(msg),
    }
}

/// Parses a configuration file without overrides.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    toml::from_str(text).map_err(|e| toml_error(text, &e))
}

fn override_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), CliError> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts
        .pop()
        .filter(|k| !k.is_empty())
        .ok_or_else(|| CliError::Config(format!("empty key in `{path}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{path}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn from_table(table: &toml::Table, context: &str) -> Result<ScenarioConfig, CliError> {
    ScenarioConfig::deserialize(toml::Value::Table(table.clone()))
        .map_err(|e| CliError::Config(format!("{context}: {}", e.message().trim_end())))
}

fn check_ranges(
    cfg: &ScenarioConfig,
    scenario: Scenario,
    text: &str,
    overridden: &[&str],
    context: &str,
) -> Result<(), CliError> {
    let result = match scenario {
        Scenario::Herald => cfg.herald_params().and(cfg.truncation()).map(|_| ()),
        Scenario::DiqkdRate => cfg.herald_params().and(cfg.rate_search()).map(|_| ()),
        Scenario::WcpRate => cfg.wcp_channel().map(|_| ()),
        Scenario::RepeaterRate => cfg.repeater_config().and(cfg.link_architectures()).map(|_| ()),
        Scenario::ChshThreshold => Ok(()),
    };
    result.map_err(|(key, e)| {
        let at = match line_of_key(text, &key) {
            _ if overridden.contains(&key.as_str()) => "--set ".to_string(),
            Some(line) => format!("line {line}: "),
            None => String::new(),
        };
        CliError::Config(format!("{at}{context}`{key}`: {e}"))
    })
}

/// Parses `text`, applies `--set key=value` overrides and expands the sweep.
pub fn resolve(text: &str, overrides: &[String], scenario: Scenario) -> Result<ResolvedConfig, CliError> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    for o in overrides {
        let (key, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set `{o}`: expected key=value")))?;
        set_path(&mut table, key.trim(), override_value(raw.trim()))?;
    }
    let mut base = match from_table(&table, "--set") {
        Ok(cfg) => cfg,
        Err(e) => return Err(parse_config(text).err().unwrap_or(e)),
    };
    if let Some(s) = base.scenario {
        if s != scenario {
            return Err(CliError::Config(format!(
                "line {}: config is for `{}`, not `{}`",
                line_of_key(text, "scenario").unwrap_or(1),
                s.name(),
                scenario.name()
            )));
        }
    }
    base.scenario = Some(scenario);
    let overridden: Vec<&str> = overrides
        .iter()
        .filter_map(|o| o.split_once('='))
        .map(|(k, _)| k.trim())
        .collect();
    check_ranges(&base, scenario, text, &overridden, "")?;

    let mut points = Vec::new();
    let sweep = match &base.sweep {
        None => {
            points.push(base.clone());
            None
        }
        Some(sweep) => {
            if scenario == Scenario::ChshThreshold {
                return Err(CliError::Config(format!(
                    "line {}: chsh-threshold takes no sweep",
                    line_of_key(text, "sweep.path").unwrap_or(1)
                )));
            }
            let bad = !(sweep.start.is_finite() && sweep.stop.is_finite())
                || (sweep.scale == SweepScale::Log && !(sweep.start > 0.0 && sweep.stop > 0.0));
            if bad {
                return Err(CliError::Config(format!(
                    "{}`sweep.start`/`sweep.stop` must be finite, and positive for a log sweep",
                    line_of_key(text, "sweep.start")
                        .map(|l| format!("line {l}: "))
                        .unwrap_or_default()
                )));
            }
            if sweep.path.starts_with("sweep.") || sweep.path == "scenario" {
                return Err(CliError::Config(format!(
                    "`sweep.path` = `{}` cannot be swept",
                    sweep.path
                )));
            }
            let values = sweep.values();
            let mut probe = table.clone();
            set_path(&mut probe, &sweep.path, toml::Value::Float(sweep.start))
                .map_err(|e| CliError::Config(format!("`sweep.path`: {e}")))?;
            from_table(&probe, &format!("`sweep.path` = `{}`", sweep.path))?;
            for &v in &values {
                let mut t = table.clone();
                set_path(&mut t, &sweep.path, toml::Value::Float(v))?;
                let mut cfg = from_table(&t, &format!("sweep {} = {v}", sweep.path))?;
                cfg.scenario = Some(scenario);
                check_ranges(&cfg, scenario, "", &[], &format!("sweep {} = {v}: ", sweep.path))?;
                points.push(cfg);
            }
            Some((sweep.path.clone(), values))
        }
    };
    let canonical = toml::to_string(&base).map_err(|e| CliError::Config(e.to_string()))?;
    let digest = hex::encode(Sha256::digest(canonical.as_bytes()));
    Ok(ResolvedConfig {
        scenario,
        base,
        sweep,
        points,
        digest,
    })
}
