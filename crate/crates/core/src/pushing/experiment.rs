use serde::{Deserialize, Serialize};

use super::{
    directional_stress, simulate_and_solve, trajectory_diagnostics, ContactGeometry, PushingProblem, StepDiagnostics,
    StressRow, TrajectorySummary,
};
use crate::error::{Error, Result};
use crate::io::{config_hash, FlatConfig, Table};
use crate::linalg::op_norm;

/// Pushing benchmark run: the problem plus diagnostic budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushingConfig {
    pub problem: PushingProblem,
    pub mc_budget: usize,
    /// Pose for the directional stress; the terminal pose when absent.
    pub stress_k: Option<usize>,
    pub alphas: Vec<f64>,
}

impl Default for PushingConfig {
    fn default() -> Self {
        Self {
            problem: PushingProblem::default(),
            mc_budget: 20_000,
            stress_k: None,
            alphas: vec![1.0, 2.0, 4.0],
        }
    }
}

const CONFIG_KEYS: &[&str] = &[
    "n_steps",
    "half_width",
    "half_height",
    "corner_radius",
    "probe_radius",
    "q_diag",
    "body_twist",
    "probe_y_start",
    "probe_y_end",
    "initial_pose",
    "contacts",
    "seed",
    "mc_budget",
    "stress_k",
    "alphas",
];

fn triple(c: &FlatConfig, key: &str, default: [f64; 3]) -> Result<[f64; 3]> {
    let v = c.f64_list_or(key, &default)?;
    v.try_into()
        .map_err(|_| Error::Config(format!("`{key}` must have three entries")))
}

impl PushingConfig {
    pub fn from_flat(c: &FlatConfig) -> Result<Self> {
        c.check_known(CONFIG_KEYS)?;
        let d = Self::default();
        let p = &d.problem;
        let g = &p.geometry;
        let problem = PushingProblem {
            n_steps: c.usize_or("n_steps", p.n_steps)?,
            geometry: ContactGeometry {
                half_width: c.f64_or("half_width", g.half_width)?,
                half_height: c.f64_or("half_height", g.half_height)?,
                corner_radius: c.f64_or("corner_radius", g.corner_radius)?,
                probe_radius: c.f64_or("probe_radius", g.probe_radius)?,
            },
            q_diag: triple(c, "q_diag", p.q_diag)?,
            body_twist: triple(c, "body_twist", p.body_twist)?,
            probe_y_start: c.f64_or("probe_y_start", p.probe_y_start)?,
            probe_y_end: c.f64_or("probe_y_end", p.probe_y_end)?,
            initial_pose: triple(c, "initial_pose", p.initial_pose)?,
            contacts: c.bool_or("contacts", p.contacts)?,
            seed: c.u64_or("seed", p.seed)?,
        };
        let stress_k = match c.u64_or("stress_k", 0)? {
            0 => None,
            k => Some(k as usize),
        };
        let cfg = Self {
            problem,
            mc_budget: c.usize_or("mc_budget", d.mc_budget)?,
            stress_k,
            alphas: c.f64_list_or("alphas", &d.alphas)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.validate()?;
        if self.mc_budget < 1000 {
            return Err(Error::Config("mc_budget must be at least 1000".into()));
        }
        if let Some(k) = self.stress_k {
            if k == 0 || k >= self.problem.n_steps {
                return Err(Error::Config(format!("stress_k must lie in 1..{}", self.problem.n_steps)));
            }
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Config("alphas must be a nonempty list of positive numbers".into()));
        }
        Ok(())
    }

    pub fn stress_pose(&self) -> usize {
        self.stress_k.unwrap_or(self.problem.n_steps - 1)
    }
}

/// Results of one pushing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushingOutput {
    pub config_hash: String,
    pub rows: Vec<StepDiagnostics>,
    pub summary: TrajectorySummary,
    /// `max |S^T Sigma_con|` relative to `||Sigma_con||_op`, when the dense
    /// covariance is available.
    pub tangency: Option<f64>,
    pub stress: Vec<StressRow>,
}

pub fn run_pushing(cfg: &PushingConfig) -> Result<PushingOutput> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let (_, sol) = simulate_and_solve(&cfg.problem)?;
    let seed = cfg.problem.seed;
    let rows = trajectory_diagnostics(&sol, cfg.mc_budget, seed)?;
    let summary = TrajectorySummary::new(&sol, &rows);
    let tangency = sol.sigma_con.as_ref().map(|sc| {
        let st = sol.constraint_jacobian.transpose() * sc;
        st.amax() / op_norm(sc).max(f64::MIN_POSITIVE)
    });
    let stress = directional_stress(&sol, cfg.stress_pose(), &cfg.alphas, cfg.mc_budget, seed)?;
    Ok(PushingOutput {
        config_hash: hash,
        rows,
        summary,
        tangency,
        stress,
    })
}

pub fn diagnostics_table(out: &PushingOutput, seed: u64) -> Result<Table> {
    let mut t = Table::new(&[
        "k",
        "kappa_hat",
        "rho_hat",
        "s",
        "locality",
        "rho_mc",
        "delta_fro",
        "tr_unc_xy",
        "tr_con_xy",
        "reduction_pct",
        "failures",
        "seed",
        "config_hash",
    ]);
    for r in &out.rows {
        t.push(vec![
            r.k.into(),
            r.kappa_hat.into(),
            r.rho_hat.into(),
            r.s.into(),
            r.locality.into(),
            r.rho_mc.into(),
            r.delta_fro.into(),
            r.tr_unc_xy.into(),
            r.tr_con_xy.into(),
            r.reduction_pct.into(),
            r.failures.into(),
            seed.into(),
            out.config_hash.clone().into(),
        ])?;
    }
    Ok(t)
}

pub fn stress_table(out: &PushingOutput, seed: u64) -> Result<Table> {
    let mut t = Table::new(&[
        "k", "alpha", "mode", "alpha_n", "alpha_t", "rho_mc", "delta_fro", "seed", "config_hash",
    ]);
    for r in &out.stress {
        t.push(vec![
            r.k.into(),
            r.alpha.into(),
            r.mode.name().into(),
            r.alpha_n.into(),
            r.alpha_t.into(),
            r.rho_mc.into(),
            r.delta_fro.into(),
            seed.into(),
            out.config_hash.clone().into(),
        ])?;
    }
    Ok(t)
}
