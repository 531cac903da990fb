use rayon::prelude::*;

use qlinksim_core::diqkd::{detection_threshold, rate_vs_distance, run_herald_circuit, KeyRatePoint};
use qlinksim_core::repeater::{max_allowed_pair_prob, optimize_sps_beta, repeater_rate, LinkArchitecture};
use qlinksim_core::wcp::optimal_mu;
use qlinksim_core::SimError;

use crate::config::{ArchitectureName, ResolvedConfig, Scenario, ScenarioConfig};
use crate::table::{Cell, ResultTable};
use crate::CliError;

const DISTANCE_PATH: &str = "herald.distance_km";

fn columns(scenario: Scenario) -> Vec<&'static str> {
    match scenario {
        Scenario::Herald => vec![
            "distance_km",
            "variant",
            "pair_p",
            "bs_transmission",
            "herald_prob",
            "fidelity_to_bell",
            "bell_state",
            "subspace_prob",
            "heralded_rate_hz",
            "truncation_leak",
        ],
        Scenario::DiqkdRate => vec![
            "distance_km",
            "variant",
            "detection_eff",
            "herald_prob",
            "S",
            "qber",
            "key_rate_bits_per_s",
            "mode",
            "extra_loss_db",
            "pair_p",
            "bs_transmission",
            "sps_pair_p",
        ],
        Scenario::WcpRate => vec!["protocol", "distance_km", "t", "mu_opt", "rate_bits_per_s"],
        Scenario::RepeaterRate => vec!["architecture", "L_km", "N", "p", "rate_hz", "fidelity", "ratio", "beta"],
        Scenario::ChshThreshold => vec!["eta_threshold", "closed_form"],
    }
}

type Rows = Vec<Vec<Cell>>;

fn numerical(context: &str, key_hint: Option<String>, e: SimError) -> CliError {
    match (&e, key_hint) {
        (SimError::OutOfRange { .. }, Some(key)) => CliError::Config(format!("{context}: `{key}`: {e}")),
        (SimError::OutOfRange { .. }, None) => CliError::Config(format!("{context}: {e}")),
        _ => CliError::Numerical(format!("{context}: {e}")),
    }
}

fn key_error(context: &str) -> impl Fn((String, SimError)) -> CliError + '_ {
    move |(key, e)| numerical(context, Some(key), e)
}

fn herald_rows(cfg: &ScenarioConfig, context: &str) -> Result<Rows, CliError> {
    let params = cfg.herald_params().map_err(key_error(context))?;
    let truncation = cfg.truncation().map_err(key_error(context))?;
    let o = run_herald_circuit(&params, truncation).map_err(|e| numerical(context, None, e))?;
    Ok(vec![vec![
        Cell::Num(params.channel.length_km),
        Cell::Text(if params.on_demand { "on-demand" } else { "heralded" }.into()),
        Cell::Num(params.pair_p),
        Cell::Num(params.bs_transmission),
        Cell::Num(o.herald_probability),
        Cell::Num(o.fidelity_to_bell),
        Cell::Text(format!("{:?}", o.bell_state)),
        Cell::Num(o.conditional_state.subspace_probability()),
        Cell::Num(o.heralded_rate),
        Cell::Num(o.truncation_leak),
    ]])
}

fn key_rate_row(p: &KeyRatePoint) -> Vec<Cell> {
    vec![
        Cell::Num(p.distance_km),
        Cell::Text(p.variant.name().into()),
        Cell::Num(p.detection_eff),
        Cell::Num(p.herald_prob),
        Cell::Num(p.s),
        Cell::Num(p.qber),
        Cell::Num(p.key_rate_bits_per_s),
        Cell::Text(
            match p.mode {
                qlinksim_core::diqkd::DetectionMode::DeviceIndependent => "device-independent",
                qlinksim_core::diqkd::DetectionMode::TrustedDetectors => "trusted",
            }
            .into(),
        ),
        Cell::Num(p.extra_loss_db),
        Cell::Num(p.pair_p),
        Cell::Num(p.bs_transmission),
        Cell::Num(p.sps_pair_p),
    ]
}

fn diqkd_rows(cfg: &ScenarioConfig, distances: &[f64], context: &str) -> Result<Rows, CliError> {
    let params = cfg.herald_params().map_err(key_error(context))?;
    let search = cfg.rate_search().map_err(key_error(context))?;
    let points = rate_vs_distance(&params, distances, &search).map_err(|e| numerical(context, None, e))?;
    Ok(points.iter().map(key_rate_row).collect())
}

fn wcp_rows(cfg: &ScenarioConfig, context: &str) -> Result<Rows, CliError> {
    let channel = cfg.wcp_channel().map_err(key_error(context))?;
    cfg.wcp_protocols()
        .into_iter()
        .map(|protocol| {
            let opt = optimal_mu(protocol, &channel, cfg.wcp.detector_eff).map_err(|e| numerical(context, None, e))?;
            Ok(vec![
                Cell::Text(protocol.name().into()),
                Cell::Num(channel.length_km),
                Cell::Num(channel.transmission()),
                Cell::Num(opt.mu),
                Cell::Num(opt.rate_per_pulse * cfg.wcp.repetition_rate_hz),
            ])
        })
        .collect()
}

/// `ratio` is relative to DLCZ at the largest pair probability the fidelity
/// target allows.
fn repeater_rows(cfg: &ScenarioConfig, context: &str) -> Result<Rows, CliError> {
    let config = cfg.repeater_config().map_err(key_error(context))?;
    let (dlcz, _) = cfg.link_architectures().map_err(key_error(context))?;
    let fail = |e| numerical(context, None, e);
    let p_max =
        max_allowed_pair_prob(config.link_count, config.fidelity_target, config.dlcz_error_constant).map_err(fail)?;
    let reference = repeater_rate(&LinkArchitecture::Dlcz { p: p_max }, &config).map_err(fail)?;
    let mut rows = Vec::new();
    for arch in &cfg.repeater.architectures {
        let (p, beta, rate) = match arch {
            ArchitectureName::Dlcz => {
                let arch = dlcz.unwrap_or(LinkArchitecture::Dlcz { p: p_max });
                (
                    arch.emission_probability(),
                    None,
                    repeater_rate(&arch, &config).map_err(fail)?,
                )
            }
            ArchitectureName::Sps => {
                let (p1, p2) = (cfg.repeater.p1, cfg.repeater.p2);
                let (beta, rate) = match cfg.repeater.beta {
                    Some(beta) => (beta, repeater_rate(&LinkArchitecture::Sps { p1, p2, beta }, &config)),
                    None => optimize_sps_beta(p1, p2, &config)
                        .map(|(b, r)| (b, Ok(r)))
                        .map_err(fail)?,
                };
                (p1, Some(beta), rate.map_err(fail)?)
            }
        };
        rows.push(vec![
            Cell::Text(match arch {
                ArchitectureName::Dlcz => "dlcz".into(),
                ArchitectureName::Sps => "sps".into(),
            }),
            Cell::Num(config.total_length_km),
            Cell::Int(config.link_count as u64),
            Cell::Num(p),
            Cell::Num(rate.rate_hz),
            Cell::Num(rate.fidelity),
            Cell::Num(rate.rate_hz / reference.rate_hz),
            beta.map_or(Cell::Text(String::new()), Cell::Num),
        ]);
    }
    Ok(rows)
}

fn chsh_rows() -> Rows {
    vec![vec![
        Cell::Num(detection_threshold()),
        Cell::Num(2.0 / (1.0 + std::f64::consts::SQRT_2)),
    ]]
}

/// Runs every sweep point and collects rows in sweep order.
pub fn run_scenario(resolved: &ResolvedConfig) -> Result<ResultTable, CliError> {
    let scenario = resolved.scenario;
    let name = scenario.name();
    let contexts: Vec<String> = match &resolved.sweep {
        None => vec![name.to_string()],
        Some((path, values)) => values.iter().map(|v| format!("{name} at {path} = {v}")).collect(),
    };
    let rows: Rows = match (scenario, &resolved.sweep) {
        (Scenario::ChshThreshold, _) => chsh_rows(),
        (Scenario::DiqkdRate, Some((path, values))) if path == DISTANCE_PATH => {
            log::info!("{name}: {} distances", values.len());
            diqkd_rows(&resolved.base, values, name)?
        }
        _ => {
            let per_point: Vec<Rows> = resolved
                .points
                .par_iter()
                .zip(contexts.par_iter())
                .map(|(cfg, context)| {
                    log::debug!("{context}");
                    match scenario {
                        Scenario::Herald => herald_rows(cfg, context),
                        Scenario::DiqkdRate => diqkd_rows(cfg, &[cfg.herald.distance_km], context),
                        Scenario::WcpRate => wcp_rows(cfg, context),
                        Scenario::RepeaterRate => repeater_rows(cfg, context),
                        Scenario::ChshThreshold => unreachable!(),
                    }
                })
                .collect::<Result<_, _>>()?;
            per_point.into_iter().flatten().collect()
        }
    };
    Ok(ResultTable {
        scenario: name.to_string(),
        digest: resolved.digest.clone(),
        columns: columns(scenario),
        rows,
    })
}
