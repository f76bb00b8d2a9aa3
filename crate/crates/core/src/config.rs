//! Scenario configuration: defaults, TOML documents and dotted-key overrides.
//!
//! Precedence is defaults, then file values, then overrides. Unknown keys are
//! rejected. Powers are given in dBm here and converted to watts once, when a
//! [`PowerModel`] is built.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::channel::PathLossModel;
use crate::error::{Error, Result};
use crate::model::{dbm_to_watts, PowerModel, RadioConfig};
use crate::scalar::Real;
use crate::solver::{LambdaMode, SolverParams};

/// Environment variable naming a config file used when none is given.
pub const CONFIG_ENV: &str = "EEMRELAY_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioSection {
    pub n_users: usize,
    pub n_subcarriers: usize,
    pub n_relays: usize,
    pub subcarrier_bw_hz: f64,
    pub noise_psd_dbm_hz: f64,
    pub snr_gap_db: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Default for RadioSection {
    fn default() -> Self {
        RadioSection {
            n_users: 8,
            n_subcarriers: 32,
            n_relays: 3,
            subcarrier_bw_hz: 12e3,
            noise_psd_dbm_hz: -174.0,
            snr_gap_db: 0.0,
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PowerSection {
    pub p_c_bs: f64,
    pub p_c_rn: f64,
    pub xi_bs: f64,
    pub xi_rn: f64,
    pub p_max_dbm: f64,
}

impl Default for PowerSection {
    fn default() -> Self {
        PowerSection {
            p_c_bs: 60.0,
            p_c_rn: 20.0,
            xi_bs: 2.6,
            xi_rn: 5.0,
            p_max_dbm: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySection {
    pub cell_radius_km: f64,
    /// BS-to-RN distance over the cell radius.
    pub d_r: f64,
}

impl Default for GeometrySection {
    fn default() -> Self {
        GeometrySection {
            cell_radius_km: 1.5,
            d_r: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub master_seed: u64,
    pub radio: RadioSection,
    pub power: PowerSection,
    pub geometry: GeometrySection,
    pub pathloss: PathLossModel,
    pub solver: SolverParams,
}

impl SystemConfig {
    pub fn p_max_watts(&self) -> f64 {
        dbm_to_watts(self.power.p_max_dbm)
    }

    pub fn radio_config<T: Real>(&self) -> RadioConfig<T> {
        let r = &self.radio;
        RadioConfig {
            n_subcarriers: r.n_subcarriers,
            n_users: r.n_users,
            n_relays: r.n_relays,
            subcarrier_bw_hz: T::lit(r.subcarrier_bw_hz),
            noise_psd_dbm_hz: T::lit(r.noise_psd_dbm_hz),
            snr_gap_db: T::lit(r.snr_gap_db),
            weights: match &r.weights {
                Some(w) => w.iter().map(|&x| T::lit(x)).collect(),
                None => vec![T::one(); r.n_users],
            },
        }
    }

    pub fn power_model<T: Real>(&self) -> PowerModel<T> {
        let p = &self.power;
        PowerModel {
            p_c_bs: T::lit(p.p_c_bs),
            p_c_rn: T::lit(p.p_c_rn),
            xi_bs: T::lit(p.xi_bs),
            xi_rn: T::lit(p.xi_rn),
            p_max: T::lit(self.p_max_watts()),
        }
    }

    /// Cross-field validation; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        let r = &self.radio;
        if r.n_users == 0 {
            return Err(Error::validation("radio.n_users", "must be >= 1"));
        }
        if r.n_subcarriers == 0 {
            return Err(Error::validation("radio.n_subcarriers", "must be >= 1"));
        }
        if !(r.subcarrier_bw_hz > 0.0) {
            return Err(Error::validation("radio.subcarrier_bw_hz", "must be > 0"));
        }
        if !r.noise_psd_dbm_hz.is_finite() {
            return Err(Error::validation(
                "radio.noise_psd_dbm_hz",
                "must be finite",
            ));
        }
        if !r.snr_gap_db.is_finite() {
            return Err(Error::validation("radio.snr_gap_db", "must be finite"));
        }
        if let Some(w) = &r.weights {
            if w.len() != r.n_users {
                return Err(Error::validation(
                    "radio.weights",
                    format!("expected {} entries, got {}", r.n_users, w.len()),
                ));
            }
            if w.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::validation("radio.weights", "weights must be >= 0"));
            }
        }

        let p = &self.power;
        if !(p.xi_bs > 1.0) {
            return Err(Error::validation(
                "power.xi_bs",
                format!("must satisfy xi > 1, got {}", p.xi_bs),
            ));
        }
        if !(p.xi_rn > 1.0) {
            return Err(Error::validation(
                "power.xi_rn",
                format!("must satisfy xi > 1, got {}", p.xi_rn),
            ));
        }
        if !(p.p_c_bs >= 0.0) {
            return Err(Error::validation("power.p_c_bs", "must be >= 0"));
        }
        if !(p.p_c_rn >= 0.0) {
            return Err(Error::validation("power.p_c_rn", "must be >= 0"));
        }
        if !p.p_max_dbm.is_finite() {
            return Err(Error::validation("power.p_max_dbm", "must be finite"));
        }

        let g = &self.geometry;
        if !(g.cell_radius_km > 0.0) {
            return Err(Error::validation("geometry.cell_radius_km", "must be > 0"));
        }
        if r.n_relays > 0 && !(g.d_r > 0.0 && g.d_r < 1.0) {
            return Err(Error::validation(
                "geometry.d_r",
                format!("must lie in (0, 1) when relays are present, got {}", g.d_r),
            ));
        }

        self.pathloss.validate()?;

        let s = &self.solver;
        if s.i_outer_max == 0 {
            return Err(Error::validation("solver.i_outer_max", "must be >= 1"));
        }
        if s.i_inner_max == 0 {
            return Err(Error::validation("solver.i_inner_max", "must be >= 1"));
        }
        if !(s.eps_outer > 0.0) {
            return Err(Error::validation("solver.eps_outer", "must be > 0"));
        }
        if !(s.eps_inner > 0.0) {
            return Err(Error::validation("solver.eps_inner", "must be > 0"));
        }
        if !(s.lambda_init > 0.0) {
            return Err(Error::validation("solver.lambda_init", "must be > 0"));
        }
        if let Some(step) = s.lambda_step {
            if !(step > 0.0) {
                return Err(Error::validation("solver.lambda_step", "must be > 0"));
            }
        } else if s.lambda_mode == LambdaMode::Subgradient && !(self.p_max_watts() > 0.0) {
            return Err(Error::validation(
                "solver.lambda_step",
                "cannot derive a default step",
            ));
        }
        Ok(())
    }

    /// Applies a TOML table on top of this config.
    pub fn merged(&self, overlay: &Table) -> Result<Self> {
        let mut base = Value::try_from(self).map_err(|e| Error::Parse(e.to_string()))?;
        merge(&mut base, Value::Table(overlay.clone()));
        let cfg: SystemConfig = base.try_into().map_err(map_de_error)?;
        Ok(cfg)
    }

    /// Applies one `dotted.key = value` override. The value is read as a TOML
    /// literal, falling back to a bare string.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Self> {
        let v = parse_literal(value);
        let mut table = Table::new();
        insert_dotted(&mut table, key, v)?;
        self.merged(&table)
    }
}

fn parse_literal(s: &str) -> Value {
    match format!("v = {s}").parse::<Table>() {
        Ok(mut t) => t
            .remove("v")
            .unwrap_or_else(|| Value::String(s.to_string())),
        Err(_) => Value::String(s.to_string()),
    }
}

fn insert_dotted(table: &mut Table, key: &str, v: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::validation(key, "malformed key"));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::validation(key, "path crosses a scalar value"))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), v);
    Ok(())
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Table(b), Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn map_de_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    // "unknown field `foo`, expected one of ..."
    let key = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<config>".to_string());
    Error::validation(key, msg)
}

/// Parses a TOML document into an overlay table; errors carry line numbers.
pub fn parse_document(text: &str) -> Result<Table> {
    text.parse::<Table>()
        .map_err(|e| Error::Parse(e.to_string()))
}

/// Defaults, then the file at `path` (if any), then `overrides` in order.
/// The result is fully validated.
pub fn load_config(path: Option<&Path>, overrides: &[(String, String)]) -> Result<SystemConfig> {
    let mut cfg = SystemConfig::default();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)?;
        cfg = cfg.merged(&parse_document(&text)?)?;
    }
    for (k, v) in overrides {
        cfg = cfg.with_override(k, v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_document_gives_reference_defaults() {
        let cfg = SystemConfig::default()
            .merged(&parse_document("").unwrap())
            .unwrap();
        assert_eq!(cfg, SystemConfig::default());
        assert_eq!(cfg.radio.subcarrier_bw_hz, 12e3);
        assert_eq!(cfg.power.p_c_bs, 60.0);
        assert_eq!(cfg.power.p_c_rn, 20.0);
        assert_eq!(cfg.power.xi_bs, 2.6);
        assert_eq!(cfg.power.xi_rn, 5.0);
        assert_eq!(cfg.radio.noise_psd_dbm_hz, -174.0);
        assert_eq!(cfg.radio.snr_gap_db, 0.0);
        assert_eq!(cfg.solver.i_outer_max, 10);
        assert_eq!(cfg.solver.i_inner_max, 100);
        assert_eq!(cfg.solver.eps_outer, 1e-8);
        assert_eq!(cfg.solver.eps_inner, 1e-8);
        cfg.validate().unwrap();
    }

    #[test]
    fn xi_below_one_is_rejected() {
        let cfg = SystemConfig::default()
            .with_override("power.xi_bs", "0.9")
            .unwrap();
        match cfg.validate() {
            Err(Error::Validation { key, reason }) => {
                assert_eq!(key, "power.xi_bs");
                assert!(reason.contains("xi > 1"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn overrides_win_over_file() {
        let mut f = tempfile_in_target("prec.toml");
        writeln!(f.1, "[power]\np_max_dbm = 0\n[radio]\nn_users = 3").unwrap();
        drop(f.1);
        let cfg = load_config(Some(&f.0), &[("power.p_max_dbm".into(), "20".into())]).unwrap();
        assert_eq!(cfg.power.p_max_dbm, 20.0);
        assert_eq!(cfg.radio.n_users, 3);
        std::fs::remove_file(&f.0).ok();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = SystemConfig::default()
            .merged(&parse_document("[radio]\nn_userz = 3").unwrap())
            .unwrap_err();
        match err {
            Error::Validation { key, .. } => assert_eq!(key, "n_userz"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(SystemConfig::default().with_override("bogus", "1").is_err());
    }

    #[test]
    fn parse_errors_carry_line_info() {
        let err = parse_document("[radio]\nn_users = = 3\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn pathloss_keys_override() {
        let cfg = SystemConfig::default()
            .with_override("pathloss.rn_ue_nlos.intercept_db", "111.7")
            .unwrap()
            .with_override("pathloss.rn_ue_nlos.slope_db", "36.7")
            .unwrap();
        assert_eq!(cfg.pathloss.rn_ue_nlos.intercept_db, 111.7);
        assert_eq!(cfg.pathloss.rn_ue_nlos.slope_db, 36.7);
        let bad = cfg
            .with_override("pathloss.rn_ue_nlos.slope_db", "-1")
            .unwrap();
        assert!(bad.validate().is_err());
    }

    #[test]
    fn relay_ratio_required_with_relays() {
        let cfg = SystemConfig::default()
            .with_override("geometry.d_r", "1.2")
            .unwrap();
        assert!(
            matches!(cfg.validate(), Err(Error::Validation { ref key, .. }) if key == "geometry.d_r")
        );
        let no_relays = cfg.with_override("radio.n_relays", "0").unwrap();
        no_relays.validate().unwrap();
    }

    #[test]
    fn solver_enum_keys() {
        let cfg = SystemConfig::default()
            .with_override("solver.lambda_mode", "subgradient")
            .unwrap()
            .with_override("solver.tie_break", "\"seeded-random\"")
            .unwrap();
        assert_eq!(cfg.solver.lambda_mode, LambdaMode::Subgradient);
        cfg.validate().unwrap();
    }

    fn tempfile_in_target(name: &str) -> (std::path::PathBuf, std::fs::File) {
        let dir = std::env::temp_dir().join(format!("eemrelay-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        let f = std::fs::File::create(&path).unwrap();
        (path, f)
    }
}
