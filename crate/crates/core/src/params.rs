//! Solver parameters, their defaults and range checks, and a flat
//! `key=value` interface used by the command line.

use thiserror::Error;

use crate::qcqp::QcqpTolerances;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("unknown parameter `{0}`")]
    UnknownKey(String),
    #[error("cannot parse `{value}` for parameter `{key}`")]
    BadValue { key: String, value: String },
    #[error("parameter `{key}` = {value} violates {range}")]
    OutOfRange {
        key: &'static str,
        value: f64,
        range: &'static str,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    /// Final optimality tolerance on `w_k`.
    pub eps: f64,
    /// Maximal bundle size; `None` means `n + 3`.
    pub bundle_max: Option<usize>,
    pub t0: f64,
    pub t0_hat: f64,
    pub m_l: f64,
    pub m_r: f64,
    pub m_f: f64,
    pub m_cap_f: f64,
    pub zeta: f64,
    pub theta: f64,
    pub c_s: f64,
    pub c_g: f64,
    pub c_g_hat: f64,
    pub c_g_bar: f64,
    pub c_g_bar_hat: f64,
    pub i_rho: usize,
    /// `None` means `max_iter + 1`, which disables the branch.
    pub i_l: Option<usize>,
    pub i_m: Option<usize>,
    pub i_r: Option<usize>,
    pub gamma1: f64,
    pub gamma2: f64,
    pub omega1: f64,
    pub omega2: f64,
    pub max_iter: usize,
    pub ls_max_iter: usize,
    pub qp_max_iter: usize,
    pub qp_kkt_tol: f64,
    pub qp_gap_tol: f64,
    /// Relative eigenvalue floor of the positive definite modification.
    pub pd_floor: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            eps: 1e-8,
            bundle_max: None,
            t0: 0.001,
            t0_hat: 0.001,
            m_l: 0.01,
            m_r: 0.5,
            m_f: 0.0,
            m_cap_f: 0.01,
            zeta: 0.01,
            theta: 1.0,
            c_s: 1e50,
            c_g: 1e50,
            c_g_hat: 1e50,
            c_g_bar: 1e50,
            c_g_bar_hat: 1e50,
            i_rho: 3,
            i_l: None,
            i_m: None,
            i_r: None,
            gamma1: 1.0,
            gamma2: 1.0,
            omega1: 2.0,
            omega2: 2.0,
            max_iter: 1000,
            ls_max_iter: 200,
            qp_max_iter: 200,
            qp_kkt_tol: 1e-9,
            qp_gap_tol: 1e-8,
            pd_floor: 1e-8,
        }
    }
}

/// Parameter keys accepted by [`SolverParams::set`], in rendering order.
pub const PARAM_KEYS: &[&str] = &[
    "eps", "M", "t0", "t0_hat", "m_L", "m_R", "m_f", "m_F", "zeta", "theta", "C_S", "C_G",
    "C_G_hat", "C_G_bar", "C_G_bar_hat", "i_rho", "i_l", "i_m", "i_r", "gamma1", "gamma2",
    "omega1", "omega2", "max_iter", "ls_max_iter", "qp_max_iter", "qp_kkt_tol", "qp_gap_tol",
    "pd_floor",
];

fn open(key: &'static str, v: f64, lo: f64, hi: f64, range: &'static str) -> Result<(), ParamError> {
    if v > lo && v < hi {
        Ok(())
    } else {
        Err(ParamError::OutOfRange { key, value: v, range })
    }
}

fn positive(key: &'static str, v: f64) -> Result<(), ParamError> {
    open(key, v, 0.0, f64::INFINITY, "(0, inf)")
}

impl SolverParams {
    pub fn bundle_capacity(&self, n: usize) -> usize {
        self.bundle_max.unwrap_or(n + 3)
    }

    pub fn qp_tolerances(&self) -> QcqpTolerances {
        QcqpTolerances {
            kkt_tol: self.qp_kkt_tol,
            gap_tol: self.qp_gap_tol,
            max_iter: self.qp_max_iter,
        }
    }

    pub fn line_search_switch(&self) -> usize {
        self.i_l.unwrap_or(self.max_iter + 1)
    }

    pub fn matrix_switch(&self) -> usize {
        self.i_m.unwrap_or(self.max_iter + 1)
    }

    pub fn reset_switch(&self) -> usize {
        self.i_r.unwrap_or(self.max_iter + 1)
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(ParamError::OutOfRange { key: "eps", value: self.eps, range: "[0, inf)" });
        }
        if let Some(m) = self.bundle_max {
            if m < 2 {
                return Err(ParamError::OutOfRange { key: "M", value: m as f64, range: "M >= 2" });
            }
        }
        open("t0", self.t0, 0.0, 1.0, "(0, 1)")?;
        open("t0_hat", self.t0_hat, 0.0, 1.0, "(0, 1)")?;
        open("m_L", self.m_l, 0.0, 0.5, "(0, 1/2)")?;
        open("m_R", self.m_r, self.m_l, 1.0, "(m_L, 1)")?;
        if !(0.0..=1.0).contains(&self.m_f) {
            return Err(ParamError::OutOfRange { key: "m_f", value: self.m_f, range: "[0, 1]" });
        }
        open("m_F", self.m_cap_f, 0.0, 1.0, "(0, 1)")?;
        open("zeta", self.zeta, 0.0, 0.5, "(0, 1/2)")?;
        if !(self.theta >= 1.0 && self.theta.is_finite()) {
            return Err(ParamError::OutOfRange { key: "theta", value: self.theta, range: "[1, inf)" });
        }
        positive("C_S", self.c_s)?;
        positive("C_G", self.c_g)?;
        positive("C_G_hat", self.c_g_hat)?;
        positive("C_G_bar", self.c_g_bar)?;
        positive("C_G_bar_hat", self.c_g_bar_hat)?;
        positive("gamma1", self.gamma1)?;
        positive("gamma2", self.gamma2)?;
        for (key, v) in [("omega1", self.omega1), ("omega2", self.omega2)] {
            if !(v >= 1.0 && v.is_finite()) {
                return Err(ParamError::OutOfRange { key, value: v, range: "[1, inf)" });
            }
        }
        for (key, v) in [("ls_max_iter", self.ls_max_iter), ("qp_max_iter", self.qp_max_iter)] {
            if v == 0 {
                return Err(ParamError::OutOfRange { key, value: 0.0, range: ">= 1" });
            }
        }
        positive("qp_kkt_tol", self.qp_kkt_tol)?;
        positive("qp_gap_tol", self.qp_gap_tol)?;
        open("pd_floor", self.pd_floor, 0.0, 1.0, "(0, 1)")?;
        Ok(())
    }

    /// Sets one parameter from its textual value. Does not validate ranges.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ParamError> {
        let bad = || ParamError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let float = || value.trim().parse::<f64>().map_err(|_| bad());
        let int = || value.trim().parse::<usize>().map_err(|_| bad());
        match key {
            "eps" => self.eps = float()?,
            "M" => self.bundle_max = Some(int()?),
            "t0" => self.t0 = float()?,
            "t0_hat" => self.t0_hat = float()?,
            "m_L" => self.m_l = float()?,
            "m_R" => self.m_r = float()?,
            "m_f" => self.m_f = float()?,
            "m_F" => self.m_cap_f = float()?,
            "zeta" => self.zeta = float()?,
            "theta" => self.theta = float()?,
            "C_S" => self.c_s = float()?,
            "C_G" => self.c_g = float()?,
            "C_G_hat" => self.c_g_hat = float()?,
            "C_G_bar" => self.c_g_bar = float()?,
            "C_G_bar_hat" => self.c_g_bar_hat = float()?,
            "i_rho" => self.i_rho = int()?,
            "i_l" => self.i_l = Some(int()?),
            "i_m" => self.i_m = Some(int()?),
            "i_r" => self.i_r = Some(int()?),
            "gamma1" => self.gamma1 = float()?,
            "gamma2" => self.gamma2 = float()?,
            "omega1" => self.omega1 = float()?,
            "omega2" => self.omega2 = float()?,
            "max_iter" => self.max_iter = int()?,
            "ls_max_iter" => self.ls_max_iter = int()?,
            "qp_max_iter" => self.qp_max_iter = int()?,
            "qp_kkt_tol" => self.qp_kkt_tol = float()?,
            "qp_gap_tol" => self.qp_gap_tol = float()?,
            "pd_floor" => self.pd_floor = float()?,
            _ => return Err(ParamError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Textual value of a parameter; `None` for unset optional parameters.
    pub fn get(&self, key: &str) -> Result<Option<String>, ParamError> {
        let f = |v: f64| Some(format!("{v:?}"));
        let u = |v: usize| Some(v.to_string());
        Ok(match key {
            "eps" => f(self.eps),
            "M" => self.bundle_max.and_then(u),
            "t0" => f(self.t0),
            "t0_hat" => f(self.t0_hat),
            "m_L" => f(self.m_l),
            "m_R" => f(self.m_r),
            "m_f" => f(self.m_f),
            "m_F" => f(self.m_cap_f),
            "zeta" => f(self.zeta),
            "theta" => f(self.theta),
            "C_S" => f(self.c_s),
            "C_G" => f(self.c_g),
            "C_G_hat" => f(self.c_g_hat),
            "C_G_bar" => f(self.c_g_bar),
            "C_G_bar_hat" => f(self.c_g_bar_hat),
            "i_rho" => u(self.i_rho),
            "i_l" => self.i_l.and_then(u),
            "i_m" => self.i_m.and_then(u),
            "i_r" => self.i_r.and_then(u),
            "gamma1" => f(self.gamma1),
            "gamma2" => f(self.gamma2),
            "omega1" => f(self.omega1),
            "omega2" => f(self.omega2),
            "max_iter" => u(self.max_iter),
            "ls_max_iter" => u(self.ls_max_iter),
            "qp_max_iter" => u(self.qp_max_iter),
            "qp_kkt_tol" => f(self.qp_kkt_tol),
            "qp_gap_tol" => f(self.qp_gap_tol),
            "pd_floor" => f(self.pd_floor),
            _ => return Err(ParamError::UnknownKey(key.to_string())),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let p = SolverParams::default();
        p.validate().unwrap();
        assert_eq!(p.bundle_capacity(2), 5);
        assert_eq!(p.line_search_switch(), p.max_iter + 1);
        assert_eq!((p.t0, p.t0_hat, p.m_l, p.m_r, p.m_cap_f), (0.001, 0.001, 0.01, 0.5, 0.01));
        assert_eq!((p.zeta, p.theta, p.i_rho), (0.01, 1.0, 3));
        assert_eq!((p.gamma1, p.gamma2, p.omega1, p.omega2), (1.0, 1.0, 2.0, 2.0));
        assert_eq!(p.c_g, 1e50);
    }

    #[test]
    fn range_checks() {
        let cases = [
            ("m_L", "0.6"),
            ("m_L", "0"),
            ("m_R", "0.005"),
            ("m_R", "1"),
            ("m_f", "1.5"),
            ("m_F", "1"),
            ("zeta", "0.5"),
            ("theta", "0.9"),
            ("t0", "1"),
            ("t0_hat", "0"),
            ("M", "1"),
            ("C_G", "0"),
            ("gamma1", "-1"),
            ("omega2", "0.5"),
            ("eps", "-1e-3"),
        ];
        for (k, v) in cases {
            let mut p = SolverParams::default();
            p.set(k, v).unwrap();
            assert!(
                matches!(p.validate(), Err(ParamError::OutOfRange { .. })),
                "{k}={v} should be rejected"
            );
        }
    }

    #[test]
    fn set_get_round_trip() {
        let mut p = SolverParams::default();
        p.set("m_R", "0.25").unwrap();
        p.set("i_l", "0").unwrap();
        for key in PARAM_KEYS {
            if let Some(v) = p.get(key).unwrap() {
                let mut q = SolverParams::default();
                q.set(key, &v).unwrap();
                assert_eq!(q.get(key).unwrap(), Some(v));
            }
        }
        assert_eq!(p.get("M").unwrap(), None);
        assert!(matches!(p.set("nope", "1"), Err(ParamError::UnknownKey(_))));
        assert!(matches!(p.set("m_L", "abc"), Err(ParamError::BadValue { .. })));
    }
}
