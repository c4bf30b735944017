//! Loss-surface and coefficient-surface sweeps over scalarized
//! single-step probabilities, plus numeric location of the sign changes
//! that the closed-form analysis predicts.
//!
//! Everything here evaluates closed forms on grids; no model is trained.
//! One-dimensional sweeps vary a single probability (or the `(u, eps)`
//! parametrization) with the rest held fixed; two-dimensional sweeps
//! tabulate the same-token gradient coefficient over `(u, eps)`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::analysis::{self, AnalysisError};
use crate::losses::{scalar_loss, LossMethod};

/// Margin keeping grid points away from domain boundaries where UL and
/// DPO factors diverge or vanish.
pub const GRID_MARGIN: f64 = 1e-4;

/// Default resolution per axis.
pub const DEFAULT_GRID_POINTS: usize = 200;

/// Bisection refinement width for crossing location.
pub const BISECT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LandscapeError {
    #[error("grid needs lo < hi with at least 2 points, got [{lo}, {hi}] with {n_points}")]
    BadGrid { lo: f64, hi: f64, n_points: usize },
    #[error("grid [{lo}, {hi}] leaves the {variable} domain [{dom_lo}, {dom_hi}]")]
    OutOfDomain { variable: &'static str, lo: f64, hi: f64, dom_lo: f64, dom_hi: f64 },
    #[error("fixed value {value} outside (0, 1)")]
    BadFixed { value: f64 },
    #[error("beta must be finite and non-negative, got {beta}")]
    BadBeta { beta: f64 },
}

/// Which scalar quantity a one-dimensional sweep varies.
///
/// `FPlus`/`FMinus` vary one step probability with the other fixed;
/// `U`/`Epsilon` vary the `(u, eps)` parametrization where the positive
/// side sits at `u` and the negative side at `u + eps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    FPlus,
    FMinus,
    U,
    Epsilon,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::FPlus => "f_plus",
            SweepVariable::FMinus => "f_minus",
            SweepVariable::U => "u",
            SweepVariable::Epsilon => "epsilon",
        }
    }

    fn domain(self) -> (f64, f64) {
        match self {
            SweepVariable::Epsilon => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

/// Evenly spaced closed grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub n_points: usize,
}

impl Grid {
    pub fn new(lo: f64, hi: f64, n_points: usize) -> Result<Self, LandscapeError> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi || n_points < 2 {
            return Err(LandscapeError::BadGrid { lo, hi, n_points });
        }
        Ok(Grid { lo, hi, n_points })
    }

    /// Default sweep grid for a variable: its domain shrunk by the margin.
    pub fn default_for(variable: SweepVariable) -> Self {
        let (lo, hi) = variable.domain();
        Grid {
            lo: lo + GRID_MARGIN,
            hi: hi - GRID_MARGIN,
            n_points: DEFAULT_GRID_POINTS,
        }
    }

    pub fn point(&self, i: usize) -> f64 {
        debug_assert!(i < self.n_points);
        self.lo + (self.hi - self.lo) * i as f64 / (self.n_points - 1) as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |i| self.point(i))
    }
}

/// One-dimensional sweep request.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub method: LossMethod,
    pub beta: f64,
    pub variable: SweepVariable,
    /// The non-swept quantity: the other probability for `FPlus`/`FMinus`
    /// sweeps, `eps` for a `U` sweep, `u` for an `Epsilon` sweep.
    pub fixed: f64,
    pub grid: Grid,
}

impl SweepSpec {
    /// Figure-style defaults: the full margin-shrunk domain, the non-swept
    /// probability at 0.1.
    pub fn standard(method: LossMethod, beta: f64, variable: SweepVariable) -> Self {
        let fixed = match variable {
            SweepVariable::Epsilon => 0.1,
            SweepVariable::U => 0.0,
            _ => 0.1,
        };
        SweepSpec { method, beta, variable, fixed, grid: Grid::default_for(variable) }
    }

    pub fn validate(&self) -> Result<(), LandscapeError> {
        if !self.beta.is_finite() || self.beta < 0.0 {
            return Err(LandscapeError::BadBeta { beta: self.beta });
        }
        Grid::new(self.grid.lo, self.grid.hi, self.grid.n_points)?;
        let (dom_lo, dom_hi) = self.variable.domain();
        if self.grid.lo < dom_lo || self.grid.hi > dom_hi {
            return Err(LandscapeError::OutOfDomain {
                variable: self.variable.name(),
                lo: self.grid.lo,
                hi: self.grid.hi,
                dom_lo,
                dom_hi,
            });
        }
        let fixed_ok = match self.variable {
            SweepVariable::U => self.fixed > -1.0 && self.fixed < 1.0,
            _ => self.fixed > 0.0 && self.fixed < 1.0,
        };
        if !fixed_ok {
            return Err(LandscapeError::BadFixed { value: self.fixed });
        }
        Ok(())
    }
}

/// A single evaluated sweep point. `clipped` marks grid values that had to
/// be pulled back inside the open loss domain before evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossPoint {
    pub value: f64,
    pub loss: f64,
    pub clipped: bool,
}

/// Overall direction of a loss curve along its grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
    Constant,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossSurface {
    pub spec: SweepSpec,
    pub points: Vec<LossPoint>,
    pub direction: Direction,
}

fn clip_unit(p: f64) -> (f64, bool) {
    if p < GRID_MARGIN {
        (GRID_MARGIN, true)
    } else if p > 1.0 - GRID_MARGIN {
        (1.0 - GRID_MARGIN, true)
    } else {
        (p, false)
    }
}

/// Evaluate the scalarized single-step loss along the grid.
pub fn loss_surface(spec: &SweepSpec) -> Result<LossSurface, LandscapeError> {
    spec.validate()?;
    let mut points = Vec::with_capacity(spec.grid.n_points);
    for value in spec.grid.points() {
        let (raw_pos, raw_neg) = match spec.variable {
            SweepVariable::FPlus => (value, spec.fixed),
            SweepVariable::FMinus => (spec.fixed, value),
            SweepVariable::U => (value, value + spec.fixed),
            SweepVariable::Epsilon => (spec.fixed, spec.fixed + value),
        };
        let (p_pos, c1) = clip_unit(raw_pos);
        let (p_neg, c2) = clip_unit(raw_neg);
        let loss = scalar_loss(spec.method, p_pos, p_neg, spec.beta);
        points.push(LossPoint { value, loss, clipped: c1 || c2 });
    }
    let direction = direction_of(&points);
    Ok(LossSurface { spec: clone_spec(spec), points, direction })
}

fn clone_spec(spec: &SweepSpec) -> SweepSpec {
    SweepSpec { grid: spec.grid, ..*spec }
}

fn direction_of(points: &[LossPoint]) -> Direction {
    let mut up = false;
    let mut down = false;
    for w in points.windows(2) {
        if w[1].loss > w[0].loss {
            up = true;
        } else if w[1].loss < w[0].loss {
            down = true;
        }
    }
    match (up, down) {
        (true, false) => Direction::Increasing,
        (false, true) => Direction::Decreasing,
        (false, false) => Direction::Constant,
        (true, true) => Direction::Mixed,
    }
}

/// One cell of a same-token coefficient surface. Cells whose `(u, u+eps)`
/// leave the open unit interval are flagged invalid and carry a NaN
/// coefficient instead of an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffCell {
    pub u: f64,
    pub eps: f64,
    pub coeff: f64,
    pub valid: bool,
}

/// Tabulate the same-token gradient coefficient over a `(u, eps)` grid.
/// Row-major in `u`, so output order is fixed by grid indices.
pub fn gradient_surface(
    method: LossMethod,
    beta: f64,
    u_grid: &Grid,
    eps_grid: &Grid,
) -> Vec<CoeffCell> {
    let mut cells = Vec::with_capacity(u_grid.n_points * eps_grid.n_points);
    for u in u_grid.points() {
        for eps in eps_grid.points() {
            match analysis::same_token_coeff(method, u, eps, beta) {
                Ok(coeff) => cells.push(CoeffCell { u, eps, coeff, valid: true }),
                Err(AnalysisError::UOutOfRange(_) | AnalysisError::FNegOutOfRange(_)) => {
                    cells.push(CoeffCell { u, eps, coeff: f64::NAN, valid: false })
                }
                Err(e) => unreachable!("coefficient grid hit {e}"),
            }
        }
    }
    cells
}

/// Fractions of valid cells with positive / negative coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignSummary {
    pub positive: f64,
    pub negative: f64,
    pub n_valid: usize,
}

pub fn sign_fractions(cells: &[CoeffCell]) -> SignSummary {
    let mut pos = 0usize;
    let mut neg = 0usize;
    let mut n_valid = 0usize;
    for c in cells {
        if !c.valid {
            continue;
        }
        n_valid += 1;
        if c.coeff > 0.0 {
            pos += 1;
        } else if c.coeff < 0.0 {
            neg += 1;
        }
    }
    let denom = n_valid.max(1) as f64;
    SignSummary { positive: pos as f64 / denom, negative: neg as f64 / denom, n_valid }
}

/// A located sign change of a gradient factor, with the closed-form
/// prediction beside the bisection result. Both are `None` when the factor
/// keeps one sign over the searched interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub description: String,
    pub variable: &'static str,
    pub predicted: Option<f64>,
    pub found: Option<f64>,
}

impl Crossing {
    /// Prediction and numeric search agree: same presence, and location
    /// within `tol` when present.
    pub fn agrees(&self, tol: f64) -> bool {
        match (self.predicted, self.found) {
            (Some(p), Some(f)) => (p - f).abs() < tol,
            (None, None) => true,
            _ => false,
        }
    }
}

/// Locate a sign change of `f` on `[lo, hi]` by bisection. Returns `None`
/// when the endpoint signs match (no bracketed crossing).
pub fn bisect(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Option<f64> {
    let (mut lo, mut hi) = (lo, hi);
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo.is_finite() && fhi.is_finite()) || flo == 0.0 && fhi == 0.0 {
        return None;
    }
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if (flo > 0.0) == (fhi > 0.0) {
        return None;
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

fn coeff_at(method: LossMethod, u: f64, eps: f64, beta: f64) -> f64 {
    analysis::same_token_coeff(method, u, eps, beta).expect("interior point")
}

/// Sign changes of each method's same-token coefficient, located by
/// bisection and paired with the closed-form prediction.
///
/// MLE and (for `beta <= 1`) ExMATE keep one sign over the searched
/// interior, so their entries carry no location.
pub fn zero_crossings(method: LossMethod, beta: f64) -> Vec<Crossing> {
    assert!(beta > 0.0 && beta.is_finite(), "crossing search needs beta > 0");
    let m = GRID_MARGIN;
    match method {
        LossMethod::Mle => {
            alloc::vec![Crossing {
                description: String::from("coefficient 1/u stays positive on (0, 1)"),
                variable: "u",
                predicted: None,
                found: bisect(|u| coeff_at(method, u, 0.0, beta), m, 1.0 - m, BISECT_TOL),
            }]
        }
        LossMethod::Ul => {
            let predicted = 1.0 / (1.0 + beta);
            alloc::vec![Crossing {
                description: format!(
                    "coefficient vanishes at u = 1/(1+beta) = {predicted} along eps = 0"
                ),
                variable: "u",
                predicted: Some(predicted),
                found: bisect(|u| coeff_at(method, u, 0.0, beta), m, 1.0 - m, BISECT_TOL),
            }]
        }
        LossMethod::Exmate => {
            let root = 1.0 / beta;
            let interior = root > m && root < 1.0 - m;
            alloc::vec![Crossing {
                description: if interior {
                    format!("coefficient vanishes at u = 1/beta = {root}, any eps")
                } else {
                    String::from("coefficient stays positive: 1/beta is not interior to (0, 1)")
                },
                variable: "u",
                predicted: interior.then_some(root),
                found: bisect(|u| coeff_at(method, u, 0.0, beta), m, 1.0 - m, BISECT_TOL),
            }]
        }
        LossMethod::Dpo => [0.2, 0.5, 0.8]
            .iter()
            .map(|&u| Crossing {
                description: format!("coefficient vanishes at eps = 0 for u = {u}"),
                variable: "epsilon",
                predicted: Some(0.0),
                found: bisect(
                    |eps| coeff_at(method, u, eps, beta),
                    -u + m,
                    1.0 - u - m,
                    BISECT_TOL,
                ),
            })
            .collect(),
    }
}
