//! A complete point in parameter space and its flat, named-column layout.

use serde::{Deserialize, Serialize};

use crate::linalg::Mat3;
use crate::model::{PersonDiagParams, PersonSgParams, PopulationParams};

/// Latent variables of one participant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonState {
    pub v_p: f64,
    pub w_a: f64,
    pub w_b: f64,
    pub t_p: f64,
    pub t_d: f64,
    pub w_d: f64,
    pub q: f64,
}

impl PersonState {
    pub const FIELDS: [&'static str; 7] = ["v_p", "w_a", "w_b", "t_p", "t_d", "w_d", "q"];

    pub fn diag(&self) -> PersonDiagParams {
        PersonDiagParams { v_p: self.v_p, w_a: self.w_a, w_b: self.w_b, t_p: self.t_p }
    }

    pub fn sg(&self) -> PersonSgParams {
        PersonSgParams { t_d: self.t_d, w_d: self.w_d, q: self.q }
    }

    pub fn from_parts(d: PersonDiagParams, g: PersonSgParams) -> Self {
        Self { v_p: d.v_p, w_a: d.w_a, w_b: d.w_b, t_p: d.t_p, t_d: g.t_d, w_d: g.w_d, q: g.q }
    }

    pub fn log_effects(&self) -> [f64; 3] {
        [self.v_p.ln(), self.w_a.ln(), self.w_b.ln()]
    }

    pub fn to_array(&self) -> [f64; 7] {
        [self.v_p, self.w_a, self.w_b, self.t_p, self.t_d, self.w_d, self.q]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self { v_p: a[0], w_a: a[1], w_b: a[2], t_p: a[3], t_d: a[4], w_d: a[5], q: a[6] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    pub pop: PopulationParams,
    pub persons: Vec<PersonState>,
}

/// Column names of the flattened state, fixed for a given dataset and
/// covariate wiring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateLayout {
    pub x_vp: Vec<String>,
    pub x_wa: Vec<String>,
    pub x_wb: Vec<String>,
    pub x_c: Vec<String>,
    pub person_ids: Vec<String>,
}

/// Scalar globals in flattening order, between the covariance entries and
/// the seroconversion block.
const SCALAR_GLOBALS: [&str; 13] = [
    "alpha0",
    "alpha1",
    "alpha0_sg",
    "alpha1_sg",
    "sigma_yy",
    "delta_q",
    "sigma_y_sg",
    "mu_td",
    "mu_lwd",
    "sigma_lwd",
    "gamma1",
    "gamma2",
    "beta_c0",
];

const SIGMA_NAMES: [&str; 6] = [
    "sigma_log[1,1]",
    "sigma_log[2,1]",
    "sigma_log[2,2]",
    "sigma_log[3,1]",
    "sigma_log[3,2]",
    "sigma_log[3,3]",
];

impl StateLayout {
    pub fn n_global(&self) -> usize {
        3 + 6 + self.x_vp.len() + self.x_wa.len() + self.x_wb.len() + SCALAR_GLOBALS.len() + self.x_c.len() + 2
    }

    pub fn n_columns(&self) -> usize {
        self.n_global() + PersonState::FIELDS.len() * self.person_ids.len()
    }

    pub fn global_names(&self) -> Vec<String> {
        let mut names: Vec<String> = ["mu_lvp", "mu_lwa", "mu_lwb"].iter().map(|s| s.to_string()).collect();
        names.extend(SIGMA_NAMES.iter().map(|s| s.to_string()));
        names.extend(self.x_vp.iter().map(|c| format!("beta_vp[{c}]")));
        names.extend(self.x_wa.iter().map(|c| format!("beta_wa[{c}]")));
        names.extend(self.x_wb.iter().map(|c| format!("beta_wb[{c}]")));
        names.extend(SCALAR_GLOBALS.iter().map(|s| s.to_string()));
        names.extend(self.x_c.iter().map(|c| format!("beta_c[{c}]")));
        names.push("kappa1".into());
        names.push("kappa2".into());
        names
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = self.global_names();
        for id in &self.person_ids {
            names.extend(PersonState::FIELDS.iter().map(|f| format!("{f}[{id}]")));
        }
        names
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.names().iter().position(|n| n == name)
    }

    pub fn person_offset(&self, person: usize) -> usize {
        self.n_global() + PersonState::FIELDS.len() * person
    }

    pub fn flatten(&self, s: &ParameterState) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_columns());
        self.flatten_into(s, &mut out);
        out
    }

    pub fn flatten_into(&self, s: &ParameterState, out: &mut Vec<f64>) {
        let p = &s.pop;
        out.extend([p.mu_lvp, p.mu_lwa, p.mu_lwb]);
        out.extend(p.sigma_log.lower_entries());
        out.extend(&p.beta_vp);
        out.extend(&p.beta_wa);
        out.extend(&p.beta_wb);
        out.extend([
            p.alpha0,
            p.alpha1,
            p.alpha0_sg,
            p.alpha1_sg,
            p.sigma_yy,
            p.delta_q,
            p.sigma_y_sg,
            p.mu_td,
            p.mu_lwd,
            p.sigma_lwd,
            p.gamma1,
            p.gamma2,
            p.beta_c0,
        ]);
        out.extend(&p.beta_c);
        out.extend([p.kappa1, p.kappa2]);
        for person in &s.persons {
            out.extend(person.to_array());
        }
    }

    pub fn unflatten(&self, row: &[f64]) -> Option<ParameterState> {
        if row.len() != self.n_columns() {
            return None;
        }
        let mut it = row.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        let mu = take(3);
        let sig = take(6);
        let beta_vp = take(self.x_vp.len());
        let beta_wa = take(self.x_wa.len());
        let beta_wb = take(self.x_wb.len());
        let sc = take(SCALAR_GLOBALS.len());
        let beta_c = take(self.x_c.len());
        let kap = take(2);
        let pop = PopulationParams {
            mu_lvp: mu[0],
            mu_lwa: mu[1],
            mu_lwb: mu[2],
            sigma_log: Mat3::from_lower_entries(sig.try_into().ok()?),
            beta_vp,
            beta_wa,
            beta_wb,
            alpha0: sc[0],
            alpha1: sc[1],
            alpha0_sg: sc[2],
            alpha1_sg: sc[3],
            sigma_yy: sc[4],
            delta_q: sc[5],
            sigma_y_sg: sc[6],
            mu_td: sc[7],
            mu_lwd: sc[8],
            sigma_lwd: sc[9],
            gamma1: sc[10],
            gamma2: sc[11],
            beta_c0: sc[12],
            beta_c,
            kappa1: kap[0],
            kappa2: kap[1],
        };
        let persons = (0..self.person_ids.len())
            .map(|_| {
                let v = take(7);
                PersonState::from_array(v.try_into().expect("row length checked"))
            })
            .collect();
        Some(ParameterState { pop, persons })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> StateLayout {
        StateLayout {
            x_vp: vec!["age".into(), "sex".into()],
            x_wa: vec![],
            x_wb: vec!["arm".into()],
            x_c: vec!["peak_vp".into()],
            person_ids: vec!["a".into(), "b".into()],
        }
    }

    fn state() -> ParameterState {
        let pop = PopulationParams {
            mu_lvp: 1.0,
            mu_lwa: 2.0,
            mu_lwb: 3.0,
            sigma_log: Mat3([[1.0, 0.1, 0.2], [0.1, 2.0, 0.3], [0.2, 0.3, 3.0]]),
            beta_vp: vec![0.5, -0.5],
            beta_wa: vec![],
            beta_wb: vec![0.25],
            alpha0: -5.0,
            alpha1: 7.0,
            alpha0_sg: -5.5,
            alpha1_sg: 7.5,
            sigma_yy: 0.5,
            delta_q: 0.25,
            sigma_y_sg: 0.6,
            mu_td: 0.5,
            mu_lwd: 1.4,
            sigma_lwd: 0.2,
            gamma1: 2.7,
            gamma2: 1.5,
            beta_c0: 1.1,
            beta_c: vec![0.2],
            kappa1: 2.3,
            kappa2: 0.16,
        };
        let p = PersonState { v_p: 5.0, w_a: 4.0, w_b: 10.0, t_p: 0.1, t_d: 0.5, w_d: 3.0, q: 0.6 };
        ParameterState { pop, persons: vec![p, PersonState { q: 0.3, ..p }] }
    }

    #[test]
    fn names_match_flat_length() {
        let l = layout();
        let names = l.names();
        assert_eq!(names.len(), l.n_columns());
        assert_eq!(l.flatten(&state()).len(), l.n_columns());
        let unique: std::collections::HashSet<_> = names.iter().collect();
        assert_eq!(unique.len(), names.len());
        assert_eq!(names[l.person_offset(1) + 6], "q[b]");
        assert_eq!(l.column("beta_c[peak_vp]"), Some(l.n_global() - 3));
    }

    #[test]
    fn flatten_round_trip() {
        let l = layout();
        let s = state();
        assert_eq!(l.unflatten(&l.flatten(&s)).unwrap(), s);
        assert!(l.unflatten(&[0.0; 3]).is_none());
    }
}
