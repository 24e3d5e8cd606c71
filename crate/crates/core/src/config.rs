//! Flat `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::harness::{DataMode, ExperimentConfig, InitialDataSpec, NoiseCheckConfig, ProbeConfig};
use crate::schemes::{HighForm, ManakovNonlinearity, SchemeId};
use crate::trees::Order;

/// `(key, default, description)`
pub const KEYS: &[(&str, &str, &str)] = &[
    ("scheme", "low", "low | additive | high | manakov | exp-euler"),
    ("reference", "auto", "reference scheme; auto picks high for NLS and manakov for Manakov"),
    ("dim", "1", "spatial dimension"),
    ("k_max", "auto", "Fourier cutoff K; auto gives 32 for NLS and 16 for Manakov"),
    ("lambda", "1", "focusing sign, -1 or 1"),
    ("cubic", "true", "include the cubic term"),
    ("gamma", "0.1", "Manakov noise strength"),
    ("sigma_phi", "4", "noise smoothing exponent in (1+|k|^2)^(-sigma/2)"),
    ("phi_amplitude", "0.1", "overall factor on the smoothing operator"),
    ("high_form", "display", "display | duhamel"),
    ("manakov_nonlinearity", "coupled", "coupled | componentwise"),
    ("horizon", "auto", "final time T; auto gives 1 for NLS and 2^-10 for Manakov"),
    ("n_steps", "16,32,64,128,256,512", "coarse step counts"),
    ("n_fine", "4096", "reference step count"),
    ("path_substeps", "4", "Brownian increments per reference step"),
    ("samples", "64", "Monte Carlo sample count"),
    ("seed", "2024", "master seed"),
    ("norm_s", "auto", "error norm regularity; auto gives 1 (low, additive, exp-euler), 2 (high), 3 (manakov)"),
    ("norm_p", "2", "error norm integrability"),
    ("data_n", "auto", "initial data Sobolev index; auto follows norm_s"),
    ("data_eps", "0.1", "initial data regularity margin"),
    ("data_amplitude", "0.5", "initial data amplitude"),
    ("data_mode", "random-phase", "random-phase | deterministic"),
    ("data_seed", "1", "initial data seed"),
    ("sim_steps", "256", "simulate: step count"),
    ("sim_norms", "0,1", "simulate: Sobolev indices reported per step"),
    ("r", "3/2", "trees: maximal order"),
    ("probe_leaves", "1,2,3,1", "probe-t4: frequencies k1,k2,k3,k4"),
    ("probe_r", "2", "probe-t4: discretisation order"),
    ("probe_ts", "0.0625,0.03125,0.015625,0.0078125,0.00390625,0.001953125", "probe-t4: step sizes"),
    ("probe_k3", "2,4,8", "probe-t4: k3 ladder"),
    ("probe_k3_t", "0.015625", "probe-t4: step size for the k3 ladder"),
    ("probe_fine_steps", "256", "probe-t4: quadrature steps per interval"),
    ("probe_samples", "200", "probe-t4: Monte Carlo samples"),
    ("probe_sigma_phi", "2", "probe-t4: smoothing exponent"),
    ("nc_t", "0.5", "noise-check: interval length"),
    ("nc_moment_samples", "10000", "noise-check: samples for moment checks"),
    ("nc_moment_fine_steps", "1024", "noise-check: fine steps for path moments"),
    ("nc_identity_samples", "400", "noise-check: samples per ladder level"),
    ("nc_fine_ladder", "64,128,256,512", "noise-check: fine step counts"),
];

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _, _)| *k == key)
}

fn parse_value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|x| parse_value(key, x.trim())).collect()
}

impl RunConfig {
    /// Parse `key = value` lines; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{raw}'", i + 1)))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !known(key) {
            return Err(Error::Config(format!("unknown key '{key}'")));
        }
        if value.is_empty() {
            return Err(Error::Config(format!("empty value for {key}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn raw(&self, key: &str) -> &str {
        if let Some(v) = self.values.get(key) {
            return v;
        }
        KEYS.iter().find(|(k, _, _)| *k == key).map(|(_, d, _)| *d).expect("key listed in KEYS")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T> {
        parse_value(key, self.raw(key))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>> {
        parse_list(key, self.raw(key))
    }

    pub fn scheme(&self) -> Result<SchemeId> {
        self.get("scheme")
    }

    fn reference(&self, scheme: SchemeId) -> Result<SchemeId> {
        match self.raw("reference") {
            "auto" if scheme == SchemeId::Manakov => Ok(SchemeId::Manakov),
            "auto" => Ok(SchemeId::High),
            v => v.parse(),
        }
    }

    fn k_max(&self, scheme: SchemeId) -> Result<usize> {
        match self.raw("k_max") {
            "auto" if scheme == SchemeId::Manakov => Ok(16),
            "auto" => Ok(32),
            v => parse_value("k_max", v),
        }
    }

    fn horizon(&self, scheme: SchemeId) -> Result<f64> {
        match self.raw("horizon") {
            "auto" if scheme == SchemeId::Manakov => Ok(2f64.powi(-10)),
            "auto" => Ok(1.0),
            v => parse_value("horizon", v),
        }
    }

    fn norm_s(&self, scheme: SchemeId) -> Result<f64> {
        match self.raw("norm_s") {
            "auto" => Ok(match scheme {
                SchemeId::High => 2.0,
                SchemeId::Manakov => 3.0,
                _ => 1.0,
            }),
            v => parse_value("norm_s", v),
        }
    }

    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let scheme = self.scheme()?;
        let norm_s = self.norm_s(scheme)?;
        let data_n = match self.raw("data_n") {
            "auto" => norm_s,
            v => parse_value("data_n", v)?,
        };
        let cubic = match self.raw("cubic") {
            "true" | "on" | "1" => true,
            "false" | "off" | "0" => false,
            v => return Err(Error::Config(format!("invalid value '{v}' for cubic"))),
        };
        Ok(ExperimentConfig {
            scheme,
            reference: self.reference(scheme)?,
            dim: self.get("dim")?,
            k_max: self.k_max(scheme)?,
            lambda: self.get("lambda")?,
            cubic,
            gamma: self.get("gamma")?,
            sigma_phi: self.get("sigma_phi")?,
            phi_amplitude: self.get("phi_amplitude")?,
            high_form: self.get::<HighForm>("high_form")?,
            manakov_nonlinearity: self.get::<ManakovNonlinearity>("manakov_nonlinearity")?,
            horizon: self.horizon(scheme)?,
            n_steps: self.list("n_steps")?,
            n_fine: self.get("n_fine")?,
            path_substeps: self.get("path_substeps")?,
            samples: self.get("samples")?,
            seed: self.get("seed")?,
            norm_s,
            norm_p: self.get("norm_p")?,
            initial: InitialDataSpec {
                n: data_n,
                eps: self.get("data_eps")?,
                amplitude: self.get("data_amplitude")?,
                mode: self.get::<DataMode>("data_mode")?,
                seed: self.get("data_seed")?,
            },
        })
    }

    pub fn order(&self) -> Result<Order> {
        self.get("r")
    }

    pub fn probe(&self) -> Result<ProbeConfig> {
        let leaves: Vec<i64> = self.list("probe_leaves")?;
        let leaves: [i64; 4] = leaves
            .try_into()
            .map_err(|_| Error::Config("probe_leaves needs exactly four frequencies".into()))?;
        Ok(ProbeConfig {
            leaves,
            r: self.get("probe_r")?,
            ts: self.list("probe_ts")?,
            k3_ladder: self.list("probe_k3")?,
            k3_t: self.get("probe_k3_t")?,
            fine_steps: self.get("probe_fine_steps")?,
            samples: self.get("probe_samples")?,
            sigma_phi: self.get("probe_sigma_phi")?,
            seed: self.get("seed")?,
        })
    }

    pub fn noise_check(&self) -> Result<NoiseCheckConfig> {
        Ok(NoiseCheckConfig {
            t: self.get("nc_t")?,
            moment_samples: self.get("nc_moment_samples")?,
            moment_fine_steps: self.get("nc_moment_fine_steps")?,
            identity_samples: self.get("nc_identity_samples")?,
            fine_ladder: self.list("nc_fine_ladder")?,
            phi0: 1.0,
            seed: self.get("seed")?,
        })
    }

    /// Every key with its effective value, sorted, as `key = value`.
    pub fn canonical(&self) -> Vec<String> {
        let mut keys: Vec<&str> = KEYS.iter().map(|(k, _, _)| *k).collect();
        keys.sort_unstable();
        keys.into_iter().map(|k| format!("{k} = {}", self.raw(k))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_comments_and_overrides() {
        let mut c = RunConfig::parse("# a comment\nscheme = high  # trailing\n\nsamples=8\n").unwrap();
        assert_eq!(c.scheme().unwrap(), SchemeId::High);
        assert_eq!(c.get::<usize>("samples").unwrap(), 8);
        c.apply_override("samples=16").unwrap();
        assert_eq!(c.get::<usize>("samples").unwrap(), 16);
        let e = c.experiment().unwrap();
        assert_eq!((e.norm_s, e.initial.n, e.k_max, e.reference), (2.0, 2.0, 32, SchemeId::High));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(RunConfig::parse("nope = 1").is_err());
        assert!(RunConfig::parse("scheme").is_err());
        assert!(RunConfig::parse("samples = ").is_err());
        let c = RunConfig::parse("samples = many").unwrap();
        assert!(c.experiment().is_err());
        assert!(RunConfig::default().apply_override("x").is_err());
    }

    #[test]
    fn canonical_round_trips() {
        let c = RunConfig::parse("scheme = manakov\nn_steps = 8,16").unwrap();
        let echo = c.canonical().join("\n");
        let again = RunConfig::parse(&echo).unwrap();
        assert_eq!(again.canonical(), c.canonical());
        assert_eq!(again.experiment().unwrap().k_max, 16);
        let mut sorted = c.canonical();
        sorted.sort();
        assert_eq!(sorted, c.canonical());
    }

    #[test]
    fn typed_sections() {
        let c = RunConfig::default();
        let p = c.probe().unwrap();
        assert_eq!(p.leaves, [1, 2, 3, 1]);
        assert_eq!(p.ts.len(), 6);
        assert_eq!(c.order().unwrap(), Order(3));
        assert_eq!(c.noise_check().unwrap().fine_ladder, vec![64, 128, 256, 512]);
        let bad = RunConfig::parse("probe_leaves = 1,2").unwrap();
        assert!(bad.probe().is_err());
    }
}
