//! Polak–Ribière (PR+) nonlinear conjugate gradient ascent on `C(ω)`.
//!
//! One call to [`update`] is one `Update(ω, s)` of the stage controller: it
//! computes a search direction and takes a single line-searched step. The
//! objective never decreases across an accepted step; when no step improves
//! the objective the update is rejected and the direction is restarted.

use crate::contrast::Objective;
use crate::error::{Error, Result};
use crate::warp::MotionParams;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Length (rad/s) of the first trial displacement of a window.
    pub initial_step: f64,
    /// Halvings tried before an update is rejected.
    pub max_halvings: u32,
    /// Doublings tried after a successful first trial.
    pub max_expansions: u32,
    /// Doublings of the first trial tried after every halving failed.
    pub max_probes: u32,
    /// Try the vertex of the fitted parabola after bracketing.
    pub parabolic: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            initial_step: 0.05,
            max_halvings: 8,
            max_expansions: 4,
            max_probes: 6,
            parabolic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptState {
    pub omega: MotionParams,
    /// Gradient at the start of the previous accepted update.
    pub prev_grad: Option<MotionParams>,
    pub direction: MotionParams,
    /// Length (rad/s) of the last accepted displacement, used as the next
    /// trial length.
    pub step: f64,
    pub iter: usize,
    /// Objective at `omega` under the current stage's evaluator, if known.
    pub current: Option<Objective>,
}

impl OptState {
    pub fn new(omega: MotionParams, cfg: &OptimizerConfig) -> Self {
        Self {
            omega,
            prev_grad: None,
            direction: MotionParams::ZERO,
            step: cfg.initial_step,
            iter: 0,
            current: None,
        }
    }

    /// Forget the conjugate direction, the cached objective and the step
    /// memory; the next update starts with a pure gradient step of the
    /// initial length under a new evaluator.
    pub fn enter_stage(&mut self, cfg: &OptimizerConfig) {
        self.step = cfg.initial_step;
        self.prev_grad = None;
        self.direction = MotionParams::ZERO;
        self.current = None;
    }
}

/// Initial estimate for a window: the previous window's result, or zero.
pub fn warm_start(prev_window_omega: Option<MotionParams>) -> MotionParams {
    prev_window_omega.unwrap_or(MotionParams::ZERO)
}

/// Accepted step along a direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub eta: f64,
    pub omega: MotionParams,
    pub objective: Objective,
}

pub trait LineSearch {
    /// Finds `η > 0` with `C(ω + η·d) > C(ω)`, or `None`.
    fn search(
        &mut self,
        eval: &mut dyn FnMut(&MotionParams) -> Result<Objective>,
        omega: &MotionParams,
        at_omega: &Objective,
        direction: &MotionParams,
        trial_length: f64,
    ) -> Result<Option<Step>>;
}

/// Halving backtracking with bounded doubling and a parabolic refinement.
#[derive(Debug, Clone, Copy)]
pub struct Backtracking {
    pub cfg: OptimizerConfig,
}

impl LineSearch for Backtracking {
    fn search(
        &mut self,
        eval: &mut dyn FnMut(&MotionParams) -> Result<Objective>,
        omega: &MotionParams,
        at_omega: &Objective,
        direction: &MotionParams,
        trial_length: f64,
    ) -> Result<Option<Step>> {
        let c0 = at_omega.variance;
        let slope = MotionParams(at_omega.gradient).dot(direction);
        let dnorm = direction.norm();
        if dnorm == 0.0 || !(slope > 0.0) {
            return Ok(None);
        }
        let mut try_eta = |eta: f64| -> Result<Step> {
            let w = *omega + eta * *direction;
            Ok(Step {
                eta,
                omega: w,
                objective: eval(&w)?,
            })
        };

        let mut eta = trial_length / dnorm;
        let mut best = try_eta(eta)?;
        if best.objective.variance > c0 {
            for _ in 0..self.cfg.max_expansions {
                let next = try_eta(best.eta * 2.0)?;
                if next.objective.variance > best.objective.variance {
                    best = next;
                } else {
                    break;
                }
            }
        } else {
            let first = eta;
            let mut found = false;
            for _ in 0..self.cfg.max_halvings {
                eta *= 0.5;
                let cand = try_eta(eta)?;
                if cand.objective.variance > c0 {
                    best = cand;
                    found = true;
                    break;
                }
            }
            eta = first;
            for _ in 0..self.cfg.max_probes {
                if found {
                    break;
                }
                eta *= 2.0;
                let cand = try_eta(eta)?;
                if cand.objective.variance > c0 {
                    best = cand;
                    found = true;
                }
            }
            if !found {
                return Ok(None);
            }
        }

        if self.cfg.parabolic {
            // C(t) ≈ c0 + slope·t − a·t² through the best point
            let t = best.eta;
            let a = (slope * t - (best.objective.variance - c0)) / (t * t);
            if a > 0.0 {
                let t_star = slope / (2.0 * a);
                if t_star.is_finite() && (t_star - t).abs() > 1e-3 * t && t_star < 4.0 * t {
                    let cand = try_eta(t_star)?;
                    if cand.objective.variance > best.objective.variance {
                        best = cand;
                    }
                }
            }
        }
        Ok(Some(best))
    }
}

/// One CG-PR update using the default backtracking line search.
pub fn update<F>(state: OptState, cfg: &OptimizerConfig, eval: F) -> Result<(OptState, Objective)>
where
    F: FnMut(&MotionParams) -> Result<Objective>,
{
    update_with(state, &mut Backtracking { cfg: *cfg }, eval)
}

pub fn update_with<F>(
    mut state: OptState,
    line_search: &mut dyn LineSearch,
    mut eval: F,
) -> Result<(OptState, Objective)>
where
    F: FnMut(&MotionParams) -> Result<Objective>,
{
    let here = match state.current {
        Some(obj) => obj,
        None => eval(&state.omega)?,
    };
    let g = MotionParams(here.gradient);
    if !g.is_finite() {
        return Err(Error::NonFiniteGradient(here.gradient));
    }
    state.iter += 1;
    state.current = Some(here);
    if g.0 == [0.0; 3] {
        return Ok((state, here));
    }

    let mut direction = g;
    if let Some(gp) = state.prev_grad {
        let denom = gp.dot(&gp);
        let beta_raw = if denom > 0.0 { g.dot(&(g - gp)) / denom } else { 0.0 };
        if beta_raw > 0.0 {
            direction = g + beta_raw * state.direction;
        }
    }
    if !(direction.dot(&g) > 0.0) {
        direction = g;
    }

    let mut found = line_search.search(&mut eval, &state.omega, &here, &direction, state.step)?;
    if found.is_none() && direction != g {
        direction = g;
        found = line_search.search(&mut eval, &state.omega, &here, &direction, state.step)?;
    }
    match found {
        Some(step) => {
            state.step = (step.eta * direction.norm()).max(f64::MIN_POSITIVE);
            state.omega = step.omega;
            state.prev_grad = Some(g);
            state.direction = direction;
            state.current = Some(step.objective);
            Ok((state, step.objective))
        }
        None => {
            // rejected: keep ω, restart from the gradient next time
            state.prev_grad = None;
            state.direction = g;
            state.step *= 0.5f64.powi(8);
            Ok((state, here))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// C(ω) = −(ω−ω*)ᵀA(ω−ω*)
    struct Quadratic {
        a: [[f64; 3]; 3],
        opt: MotionParams,
    }

    impl Quadratic {
        fn new() -> Self {
            Self {
                a: [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]],
                opt: MotionParams::new(0.7, -1.2, 0.4),
            }
        }

        fn apply(&self, v: &MotionParams) -> MotionParams {
            MotionParams(std::array::from_fn(|i| (0..3).map(|k| self.a[i][k] * v.0[k]).sum()))
        }

        fn eval(&self, w: &MotionParams) -> Result<Objective> {
            let e = *w - self.opt;
            let ae = self.apply(&e);
            Ok(Objective {
                variance: -e.dot(&ae),
                gradient: (-2.0 * ae).0,
            })
        }
    }

    /// Exact minimizer along d for the quadratic: t = (g·d)/(2 dᵀAd).
    struct ExactQuadraticSearch<'a>(&'a Quadratic);

    impl LineSearch for ExactQuadraticSearch<'_> {
        fn search(
            &mut self,
            eval: &mut dyn FnMut(&MotionParams) -> Result<Objective>,
            omega: &MotionParams,
            at_omega: &Objective,
            d: &MotionParams,
            _trial: f64,
        ) -> Result<Option<Step>> {
            let eta = MotionParams(at_omega.gradient).dot(d) / (2.0 * d.dot(&self.0.apply(d)));
            let w = *omega + eta * *d;
            Ok(Some(Step {
                eta,
                omega: w,
                objective: eval(&w)?,
            }))
        }
    }

    #[test]
    fn first_update_follows_gradient() {
        let q = Quadratic::new();
        let cfg = OptimizerConfig::default();
        let state = OptState::new(MotionParams::ZERO, &cfg);
        let g0 = q.eval(&MotionParams::ZERO).unwrap().gradient;
        let (s, _) = update(state, &cfg, |w| q.eval(w)).unwrap();
        assert_eq!(s.direction, MotionParams(g0));
        // displacement is parallel to g
        let disp = s.omega - MotionParams::ZERO;
        let cos = disp.dot(&MotionParams(g0)) / (disp.norm() * MotionParams(g0).norm());
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_is_stationary() {
        let q = Quadratic::new();
        let cfg = OptimizerConfig::default();
        let state = OptState::new(q.opt, &cfg);
        let before = q.eval(&q.opt).unwrap();
        let (s, obj) = update(state, &cfg, |w| q.eval(w)).unwrap();
        assert_eq!(s.omega, q.opt);
        assert_eq!(obj, before);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let cfg = OptimizerConfig::default();
        let state = OptState::new(MotionParams::ZERO, &cfg);
        let r = update(state, &cfg, |_| {
            Ok(Objective {
                variance: 1.0,
                gradient: [f64::NAN, 0.0, 0.0],
            })
        });
        assert!(matches!(r, Err(Error::NonFiniteGradient(_))));
    }

    #[test]
    fn converges_on_quadratic() {
        let q = Quadratic::new();
        let cfg = OptimizerConfig::default();
        let mut state = OptState::new(MotionParams::ZERO, &cfg);
        let mut prev = q.eval(&state.omega).unwrap().variance;
        for _ in 0..20 {
            let (s, obj) = update(state, &cfg, |w| q.eval(w)).unwrap();
            assert!(obj.variance >= prev - 1e-12);
            prev = obj.variance;
            state = s;
        }
        assert!((state.omega - q.opt).norm() < 1e-6, "{:?}", state.omega);
    }

    #[test]
    fn exact_line_search_terminates_in_three() {
        let q = Quadratic::new();
        let cfg = OptimizerConfig::default();
        let mut state = OptState::new(MotionParams::new(-1.0, 2.0, 3.0), &cfg);
        let mut ls = ExactQuadraticSearch(&q);
        for _ in 0..3 {
            state = update_with(state, &mut ls, |w| q.eval(w)).unwrap().0;
        }
        assert!((state.omega - q.opt).norm() < 1e-10, "{:?}", state.omega);
    }

    #[test]
    fn negative_beta_restarts_with_gradient() {
        // objective whose gradient flips so that g·(g − g_prev) < 0
        let cfg = OptimizerConfig::default();
        let mut state = OptState::new(MotionParams::ZERO, &cfg);
        state.prev_grad = Some(MotionParams::new(10.0, 0.0, 0.0));
        state.direction = MotionParams::new(10.0, 0.0, 0.0);
        let g = [1.0, 0.5, 0.0];
        let eval = |w: &MotionParams| {
            Ok(Objective {
                variance: g[0] * w.0[0] + g[1] * w.0[1] - 0.1 * w.dot(w),
                gradient: [g[0] - 0.2 * w.0[0], g[1] - 0.2 * w.0[1], -0.2 * w.0[2]],
            })
        };
        let (s, _) = update(state, &cfg, eval).unwrap();
        assert_eq!(s.direction, MotionParams(g));
    }

    #[test]
    fn rejected_step_keeps_omega() {
        // every move away from the start decreases the objective
        let cfg = OptimizerConfig::default();
        let state = OptState::new(MotionParams::ZERO, &cfg);
        let eval = |w: &MotionParams| {
            let moved = w.norm() > 0.0;
            Ok(Objective {
                variance: if moved { -1.0 } else { 0.0 },
                gradient: [1.0, 0.0, 0.0],
            })
        };
        let (s, obj) = update(state, &cfg, eval).unwrap();
        assert_eq!(s.omega, MotionParams::ZERO);
        assert_eq!(obj.variance, 0.0);
        assert_eq!(s.prev_grad, None);
    }

    #[test]
    fn probes_outward_past_a_local_spike() {
        // C dips just beyond ω=0 and exceeds C(0) only from |ω₀| = 0.3 on
        let cfg = OptimizerConfig::default();
        let state = OptState::new(MotionParams::ZERO, &cfg);
        let eval = |w: &MotionParams| {
            let t = w.0[0];
            let variance = if t == 0.0 { 1.0 } else { t - 0.3 + 1.0 - 1e-3 };
            Ok(Objective {
                variance,
                gradient: [1.0, 0.0, 0.0],
            })
        };
        let (s, obj) = update(state, &cfg, eval).unwrap();
        assert!(obj.variance > 1.0);
        // 0.05 · 2^3 is the first probe past 0.3
        assert!(s.omega.0[0] >= 0.4 - 1e-12, "{:?}", s.omega);
    }

    #[test]
    fn enter_stage_resets_step_length() {
        let cfg = OptimizerConfig::default();
        let mut state = OptState::new(MotionParams::ZERO, &cfg);
        state.step = 1e-12;
        state.prev_grad = Some(MotionParams::new(1.0, 0.0, 0.0));
        state.enter_stage(&cfg);
        assert_eq!(state.step, cfg.initial_step);
        assert_eq!(state.prev_grad, None);
        assert_eq!(state.current, None);
    }

    #[test]
    fn warm_start_passes_through() {
        assert_eq!(warm_start(None), MotionParams::ZERO);
        let w = MotionParams::new(1.0, 2.0, 3.0);
        assert_eq!(warm_start(Some(w)), w);
    }
}
