//! File formats: the repo-wide CMDP JSON schema and the empirical-model file.
//!
//! `model.json` uses nested row-major lists:
//! `{"num_states", "num_actions", "gamma", "b", "rho": [s],
//!   "transitions": [s][a][s'], "rewards": [s][a], "constraints": [s][a]}`.
//! The loader enforces the type invariants and reports violations with the
//! offending indices; malformed JSON keeps serde's line/column messages.

use crate::error::{Error, Result};
use crate::mdp::Cmdp;
use crate::sampling::EmpiricalModel;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmdpJson {
    pub num_states: usize,
    pub num_actions: usize,
    pub gamma: f64,
    pub b: f64,
    pub rho: Vec<f64>,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
    pub constraints: Vec<Vec<f64>>,
}

impl From<&Cmdp> for CmdpJson {
    fn from(c: &Cmdp) -> CmdpJson {
        let (s, a) = (c.num_states, c.num_actions);
        CmdpJson {
            num_states: s,
            num_actions: a,
            gamma: c.gamma,
            b: c.b,
            rho: c.rho.clone(),
            transitions: (0..s)
                .map(|si| (0..a).map(|ai| c.p_row(si, ai).to_vec()).collect())
                .collect(),
            rewards: (0..s)
                .map(|si| (0..a).map(|ai| c.rewards[si * a + ai]).collect())
                .collect(),
            constraints: (0..s)
                .map(|si| (0..a).map(|ai| c.constraints[si * a + ai]).collect())
                .collect(),
        }
    }
}

impl CmdpJson {
    pub fn into_cmdp(self) -> Result<Cmdp> {
        let (s, a) = (self.num_states, self.num_actions);
        let check_outer = |name: &str, len: usize| -> Result<()> {
            if len != s {
                return Err(Error::input(format!(
                    "{name}: {len} state entries, expected num_states = {s}"
                )));
            }
            Ok(())
        };
        check_outer("transitions", self.transitions.len())?;
        check_outer("rewards", self.rewards.len())?;
        check_outer("constraints", self.constraints.len())?;
        let mut transitions = Vec::with_capacity(s * a * s);
        for (si, by_action) in self.transitions.iter().enumerate() {
            if by_action.len() != a {
                return Err(Error::input(format!(
                    "transitions[{si}]: {} action rows, expected num_actions = {a}",
                    by_action.len()
                )));
            }
            for (ai, row) in by_action.iter().enumerate() {
                if row.len() != s {
                    return Err(Error::input(format!(
                        "transitions[{si}][{ai}]: {} entries, expected num_states = {s}",
                        row.len()
                    )));
                }
                transitions.extend_from_slice(row);
            }
        }
        let flatten = |name: &str, table: &[Vec<f64>]| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(s * a);
            for (si, row) in table.iter().enumerate() {
                if row.len() != a {
                    return Err(Error::input(format!(
                        "{name}[{si}]: {} entries, expected num_actions = {a}",
                        row.len()
                    )));
                }
                out.extend_from_slice(row);
            }
            Ok(out)
        };
        let rewards = flatten("rewards", &self.rewards)?;
        let constraints = flatten("constraints", &self.constraints)?;
        Cmdp::new(
            s,
            a,
            self.gamma,
            self.b,
            self.rho,
            transitions,
            rewards,
            constraints,
        )
    }
}

pub fn load_cmdp(path: &Path) -> Result<Cmdp> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    let json: CmdpJson = serde_json::from_str(&text)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    json.into_cmdp()
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

pub fn save_cmdp(cmdp: &Cmdp, path: &Path) -> Result<()> {
    let json = CmdpJson::from(cmdp);
    std::fs::write(path, serde_json::to_string_pretty(&json)?)?;
    Ok(())
}

/// `emp.json`: transition counts, sample size, seeds, perturbation magnitude,
/// shifted threshold, and the source model (so downstream verbs are
/// self-contained).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpJson {
    pub counts: Vec<Vec<Vec<u64>>>,
    pub n_per_sa: u64,
    pub master_seed: u64,
    pub perturb_seed: u64,
    pub omega: f64,
    pub b_prime: f64,
    pub model: CmdpJson,
}

impl EmpJson {
    pub fn from_model(emp: &EmpiricalModel, truth: &Cmdp) -> EmpJson {
        let (s, a) = (emp.num_states, emp.num_actions);
        EmpJson {
            counts: (0..s)
                .map(|si| {
                    (0..a)
                        .map(|ai| {
                            let base = (si * a + ai) * s;
                            emp.counts[base..base + s].to_vec()
                        })
                        .collect()
                })
                .collect(),
            n_per_sa: emp.n_per_sa,
            master_seed: emp.master_seed,
            perturb_seed: emp.perturb_seed,
            omega: emp.omega,
            b_prime: emp.b_prime,
            model: CmdpJson::from(truth),
        }
    }

    /// Reassembles the empirical model (p_hat, perturbed rewards) and the
    /// ground-truth CMDP.
    pub fn into_models(self) -> Result<(EmpiricalModel, Cmdp)> {
        let truth = self.model.into_cmdp()?;
        let (s, a) = (truth.num_states, truth.num_actions);
        if self.counts.len() != s {
            return Err(Error::input(format!(
                "counts: {} state entries, expected {s}",
                self.counts.len()
            )));
        }
        if self.n_per_sa == 0 {
            return Err(Error::input("n_per_sa must be positive"));
        }
        let mut counts = Vec::with_capacity(s * a * s);
        for (si, by_action) in self.counts.iter().enumerate() {
            if by_action.len() != a {
                return Err(Error::input(format!(
                    "counts[{si}]: {} action rows, expected {a}",
                    by_action.len()
                )));
            }
            for (ai, row) in by_action.iter().enumerate() {
                if row.len() != s {
                    return Err(Error::input(format!(
                        "counts[{si}][{ai}]: {} entries, expected {s}",
                        row.len()
                    )));
                }
                let total: u64 = row.iter().sum();
                if total != self.n_per_sa {
                    return Err(Error::input(format!(
                        "counts[{si}][{ai}] sums to {total}, expected n_per_sa = {}",
                        self.n_per_sa
                    )));
                }
                counts.extend_from_slice(row);
            }
        }
        let p_hat: Vec<f64> = counts
            .iter()
            .map(|&c| c as f64 / self.n_per_sa as f64)
            .collect();
        let r_p = crate::sampling::perturb_rewards(&truth.rewards, self.omega, self.perturb_seed)?;
        let emp = EmpiricalModel {
            num_states: s,
            num_actions: a,
            counts,
            n_per_sa: self.n_per_sa,
            p_hat,
            r_p,
            omega: self.omega,
            b_prime: self.b_prime,
            master_seed: self.master_seed,
            perturb_seed: self.perturb_seed,
            gamma: truth.gamma,
            rho: truth.rho.clone(),
            constraints: truth.constraints.clone(),
            c_max: truth.c_max,
        };
        Ok((emp, truth))
    }
}

pub fn load_emp(path: &Path) -> Result<(EmpiricalModel, Cmdp)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))?;
    let json: EmpJson = serde_json::from_str(&text)
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))?;
    json.into_models()
        .map_err(|e| Error::input(format!("{}: {e}", path.display())))
}

pub fn save_emp(emp: &EmpiricalModel, truth: &Cmdp, path: &Path) -> Result<()> {
    let json = EmpJson::from_model(emp, truth);
    std::fs::write(path, serde_json::to_string(&json)?)?;
    Ok(())
}
