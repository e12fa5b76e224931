//! Solver-agnostic cone-program representation and the adapter to the conic
//! solver backend.
//!
//! Programs are built from variables, sparse affine expressions and
//! constraints over three cones: zero (equality), nonnegative orthant and
//! second-order cone (first row bounds the Euclidean norm of the rest).
//! Objectives are linear. The backend is the Clarabel interior-point solver;
//! results are deterministic for identical inputs and tolerance settings. An
//! independent feasibility checker re-evaluates stored constraints against a
//! primal point, and a debug dump emits the program in a sparse text format
//! for cross-solver verification.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::DVector;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConicError {
    #[error("variable length must be positive")]
    ZeroLengthVariable,
    #[error("constraint references unknown variable id {id}")]
    UnknownVariable { id: usize },
    #[error("term column {col} out of range for variable {id} of length {len}")]
    ColumnOutOfRange { id: usize, col: usize, len: usize },
    #[error("term row {row} out of range for expression of {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("second-order cone requires at least 2 rows, got {rows}")]
    SocTooShort { rows: usize },
    #[error("objective must be a scalar expression, got {rows} rows")]
    NonScalarObjective { rows: usize },
    #[error("program has no variables")]
    NoVariables,
}

/// Handle to a variable block registered in a program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableHandle {
    id: usize,
    len: usize,
}

impl VariableHandle {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// One nonzero coefficient: `coeff` multiplies column `col` of variable
/// `var_id` and lands in row `row` of the expression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Term {
    pub row: usize,
    pub var_id: usize,
    pub col: usize,
    pub coeff: f64,
}

/// Sparse affine expression `sum coeffs * variables + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineExpr {
    rows: usize,
    terms: Vec<Term>,
    constant: DVector<f64>,
}

impl AffineExpr {
    pub fn zeros(rows: usize) -> Self {
        Self {
            rows,
            terms: Vec::new(),
            constant: DVector::zeros(rows),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn constant(&self) -> &DVector<f64> {
        &self.constant
    }

    /// Add `coeff * var[col]` to one row. Zero coefficients are dropped.
    pub fn push(&mut self, row: usize, var: VariableHandle, col: usize, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push(Term {
                row,
                var_id: var.id,
                col,
                coeff,
            });
        }
    }

    pub fn add_constant(&mut self, row: usize, value: f64) {
        self.constant[row] += value;
    }

    /// Evaluate at a primal point (one vector per variable, indexed by id).
    pub fn eval(&self, primal: &[DVector<f64>]) -> DVector<f64> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            out[t.row] += t.coeff * primal[t.var_id][t.col];
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeKind {
    /// expr == 0
    Zero,
    /// expr >= 0 elementwise
    NonNegative,
    /// expr[0] >= ||expr[1..]||_2
    SecondOrder,
}

#[derive(Debug, Clone)]
pub struct ConeConstraint {
    pub kind: ConeKind,
    pub expr: AffineExpr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

/// Result of a solve. Primal values are present iff the status is optimal.
#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub primal: Option<Vec<DVector<f64>>>,
    pub objective: Option<f64>,
    /// Raw backend status for diagnostics.
    pub diagnostics: String,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverTolerances {
    pub feasibility: f64,
    pub gap_abs: f64,
    pub gap_rel: f64,
    pub max_iterations: u32,
}

impl Default for SolverTolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-9,
            gap_abs: 1e-9,
            gap_rel: 1e-9,
            max_iterations: 200,
        }
    }
}

/// A constraint violation found by the independent feasibility checker.
#[derive(Debug, Clone)]
pub struct Violation {
    pub constraint: usize,
    pub amount: f64,
}

#[derive(Debug, Default)]
pub struct ConeProgram {
    var_lens: Vec<usize>,
    constraints: Vec<ConeConstraint>,
}

impl ConeProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_variable(&mut self, len: usize) -> Result<VariableHandle, ConicError> {
        if len == 0 {
            return Err(ConicError::ZeroLengthVariable);
        }
        let id = self.var_lens.len();
        self.var_lens.push(len);
        Ok(VariableHandle { id, len })
    }

    pub fn variable_count(&self) -> usize {
        self.var_lens.len()
    }

    pub fn total_scalar_variables(&self) -> usize {
        self.var_lens.iter().sum()
    }

    pub fn var_len(&self, handle: VariableHandle) -> usize {
        self.var_lens[handle.id]
    }

    fn validate_expr(&self, expr: &AffineExpr) -> Result<(), ConicError> {
        for t in &expr.terms {
            let len = *self
                .var_lens
                .get(t.var_id)
                .ok_or(ConicError::UnknownVariable { id: t.var_id })?;
            if t.col >= len {
                return Err(ConicError::ColumnOutOfRange {
                    id: t.var_id,
                    col: t.col,
                    len,
                });
            }
            if t.row >= expr.rows {
                return Err(ConicError::RowOutOfRange {
                    row: t.row,
                    rows: expr.rows,
                });
            }
        }
        Ok(())
    }

    pub fn add_constraint(&mut self, constraint: ConeConstraint) -> Result<(), ConicError> {
        self.validate_expr(&constraint.expr)?;
        if constraint.kind == ConeKind::SecondOrder && constraint.expr.rows < 2 {
            return Err(ConicError::SocTooShort {
                rows: constraint.expr.rows,
            });
        }
        self.constraints.push(constraint);
        Ok(())
    }

    pub fn constraints(&self) -> &[ConeConstraint] {
        &self.constraints
    }

    fn var_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.var_lens.len());
        let mut acc = 0;
        for &len in &self.var_lens {
            offsets.push(acc);
            acc += len;
        }
        offsets
    }

    /// Solve `min objective` subject to the stored constraints.
    pub fn solve(
        &self,
        objective: &AffineExpr,
        tol: &SolverTolerances,
    ) -> Result<Solution, ConicError> {
        if self.var_lens.is_empty() {
            return Err(ConicError::NoVariables);
        }
        if objective.rows != 1 {
            return Err(ConicError::NonScalarObjective {
                rows: objective.rows,
            });
        }
        self.validate_expr(objective)?;

        let offsets = self.var_offsets();
        let n = self.total_scalar_variables();
        let mut q = vec![0.0; n];
        for t in &objective.terms {
            q[offsets[t.var_id] + t.col] += t.coeff;
        }
        let objective_constant = objective.constant[0];

        if self.constraints.is_empty() {
            // Degenerate program: unbounded along any nonzero cost direction,
            // otherwise any point (zero) is optimal.
            return Ok(if q.iter().any(|&c| c != 0.0) {
                Solution {
                    status: SolveStatus::Unbounded,
                    primal: None,
                    objective: None,
                    diagnostics: "unconstrained program with nonzero cost".into(),
                }
            } else {
                Solution {
                    status: SolveStatus::Optimal,
                    primal: Some(self.var_lens.iter().map(|&l| DVector::zeros(l)).collect()),
                    objective: Some(objective_constant),
                    diagnostics: "unconstrained program with zero cost".into(),
                }
            });
        }

        // Assemble rows grouped by cone family: zeros, nonnegatives, SOCs.
        // Clarabel convention: A x + s = b with s in the cone, so expressions
        // enter as A = M, b = -c for the zero cone and A = -M, b = c for the
        // nonnegative and second-order cones (s = expr).
        let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
        let mut b: Vec<f64> = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut row_base = 0usize;

        let mut zero_rows = 0usize;
        for c in self.constraints.iter().filter(|c| c.kind == ConeKind::Zero) {
            zero_rows += c.expr.rows;
        }
        if zero_rows > 0 {
            cones.push(SupportedConeT::ZeroConeT(zero_rows));
        }
        for c in self.constraints.iter().filter(|c| c.kind == ConeKind::Zero) {
            for t in &c.expr.terms {
                triplets.push((row_base + t.row, offsets[t.var_id] + t.col, t.coeff));
            }
            for r in 0..c.expr.rows {
                b.push(-c.expr.constant[r]);
            }
            row_base += c.expr.rows;
        }

        let mut nonneg_rows = 0usize;
        for c in self
            .constraints
            .iter()
            .filter(|c| c.kind == ConeKind::NonNegative)
        {
            nonneg_rows += c.expr.rows;
        }
        if nonneg_rows > 0 {
            cones.push(SupportedConeT::NonnegativeConeT(nonneg_rows));
        }
        for c in self
            .constraints
            .iter()
            .filter(|c| c.kind == ConeKind::NonNegative)
        {
            for t in &c.expr.terms {
                triplets.push((row_base + t.row, offsets[t.var_id] + t.col, -t.coeff));
            }
            for r in 0..c.expr.rows {
                b.push(c.expr.constant[r]);
            }
            row_base += c.expr.rows;
        }

        for c in self
            .constraints
            .iter()
            .filter(|c| c.kind == ConeKind::SecondOrder)
        {
            cones.push(SupportedConeT::SecondOrderConeT(c.expr.rows));
            for t in &c.expr.terms {
                triplets.push((row_base + t.row, offsets[t.var_id] + t.col, -t.coeff));
            }
            for r in 0..c.expr.rows {
                b.push(c.expr.constant[r]);
            }
            row_base += c.expr.rows;
        }

        let a = csc_from_triplets(row_base, n, &mut triplets);
        let p = CscMatrix::<f64>::zeros((n, n));
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(tol.max_iterations)
            .tol_feas(tol.feasibility)
            .tol_gap_abs(tol.gap_abs)
            .tol_gap_rel(tol.gap_rel)
            .build()
            .expect("static solver settings");
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings);
        solver.solve();

        let raw_status = solver.solution.status;
        let diagnostics = format!("{raw_status:?}");
        let status = match raw_status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                SolveStatus::Unbounded
            }
            _ => SolveStatus::NumericalFailure,
        };
        if status != SolveStatus::Optimal {
            return Ok(Solution {
                status,
                primal: None,
                objective: None,
                diagnostics,
            });
        }
        let x = &solver.solution.x;
        let primal: Vec<DVector<f64>> = self
            .var_lens
            .iter()
            .zip(&offsets)
            .map(|(&len, &off)| DVector::from_column_slice(&x[off..off + len]))
            .collect();
        let objective_value =
            q.iter().zip(x.iter()).map(|(qi, xi)| qi * xi).sum::<f64>() + objective_constant;
        Ok(Solution {
            status,
            primal: Some(primal),
            objective: Some(objective_value),
            diagnostics,
        })
    }

    /// Re-check every stored constraint against a primal point; returns the
    /// violations exceeding `tol`. Independent of the solver backend.
    pub fn check_feasibility(&self, primal: &[DVector<f64>], tol: f64) -> Vec<Violation> {
        let mut out = Vec::new();
        for (idx, c) in self.constraints.iter().enumerate() {
            let v = c.expr.eval(primal);
            let amount = match c.kind {
                ConeKind::Zero => v.amax(),
                ConeKind::NonNegative => (-v.min()).max(0.0),
                ConeKind::SecondOrder => {
                    let norm = v.rows(1, v.len() - 1).norm();
                    (norm - v[0]).max(0.0)
                }
            };
            if amount > tol {
                out.push(Violation {
                    constraint: idx,
                    amount,
                });
            }
        }
        out
    }

    /// Dump the program in a sparse text format, one line per nonzero:
    /// `term <constraint> <variable> <row> <col> <value>` for coefficients,
    /// `const <constraint> - <row> - <value>` for constants, preceded by
    /// variable and cone declarations.
    pub fn dump<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (id, len) in self.var_lens.iter().enumerate() {
            writeln!(w, "var {id} {len}")?;
        }
        for (idx, c) in self.constraints.iter().enumerate() {
            let kind = match c.kind {
                ConeKind::Zero => "zero",
                ConeKind::NonNegative => "nonneg",
                ConeKind::SecondOrder => "soc",
            };
            writeln!(w, "cone {idx} {kind} {}", c.expr.rows)?;
            for t in &c.expr.terms {
                writeln!(
                    w,
                    "term {idx} {} {} {} {:.17e}",
                    t.var_id, t.row, t.col, t.coeff
                )?;
            }
            for r in 0..c.expr.rows {
                let v = c.expr.constant[r];
                if v != 0.0 {
                    writeln!(w, "const {idx} - {r} - {v:.17e}")?;
                }
            }
        }
        Ok(())
    }
}

/// Column-compressed matrix from (row, col, value) triplets, summing
/// duplicates.
fn csc_from_triplets(m: usize, n: usize, triplets: &mut [(usize, usize, f64)]) -> CscMatrix<f64> {
    triplets.sort_unstable_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval: Vec<usize> = Vec::with_capacity(triplets.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(triplets.len());
    for &(row, col, val) in triplets.iter() {
        if let (Some(&last_row), true) = (rowval.last(), !nzval.is_empty()) {
            let filled_cols = colptr[1..=n].iter().position(|_| false);
            let _ = filled_cols;
            // Merge duplicate (row, col) pairs.
            if last_row == row && colptr[col + 1] > 0 && is_current_col(&colptr, col, rowval.len())
            {
                *nzval.last_mut().expect("nonempty") += val;
                continue;
            }
        }
        rowval.push(row);
        nzval.push(val);
        colptr[col + 1] += 1;
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

fn is_current_col(colptr: &[usize], col: usize, filled: usize) -> bool {
    // During assembly colptr[col+1] holds the per-column count; the entry
    // being appended belongs to `col` iff all previous columns are complete.
    let before: usize = colptr[1..=col].iter().sum();
    filled == before + colptr[col + 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn solve_simple(
        build: impl FnOnce(&mut ConeProgram) -> (AffineExpr, Vec<VariableHandle>),
    ) -> (Solution, ConeProgram, Vec<VariableHandle>) {
        let mut p = ConeProgram::new();
        let (obj, vars) = build(&mut p);
        let sol = p.solve(&obj, &SolverTolerances::default()).unwrap();
        (sol, p, vars)
    }

    #[test]
    fn variable_registration() {
        let mut p = ConeProgram::new();
        let a = p.add_variable(3).unwrap();
        let b = p.add_variable(1).unwrap();
        assert_ne!(a.id(), b.id());
        assert_eq!(p.var_len(a), 3);
        assert!(matches!(
            p.add_variable(0),
            Err(ConicError::ZeroLengthVariable)
        ));
    }

    #[test]
    fn unknown_handle_rejected() {
        let mut p = ConeProgram::new();
        let mut other = ConeProgram::new();
        let _ = p.add_variable(2).unwrap();
        let foreign = other.add_variable(5).unwrap();
        let ghost_col = {
            let mut e = AffineExpr::zeros(1);
            e.push(0, foreign, 4, 1.0);
            e
        };
        assert!(matches!(
            p.add_constraint(ConeConstraint {
                kind: ConeKind::Zero,
                expr: ghost_col
            }),
            Err(ConicError::ColumnOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_cone_pins_value() {
        // x - 3 == 0, minimize x.
        let (sol, _, vars) = solve_simple(|p| {
            let x = p.add_variable(1).unwrap();
            let mut e = AffineExpr::zeros(1);
            e.push(0, x, 0, 1.0);
            e.add_constant(0, -3.0);
            p.add_constraint(ConeConstraint {
                kind: ConeKind::Zero,
                expr: e,
            })
            .unwrap();
            let mut obj = AffineExpr::zeros(1);
            obj.push(0, x, 0, 1.0);
            (obj, vec![x])
        });
        assert_eq!(sol.status, SolveStatus::Optimal);
        let x = &sol.primal.unwrap()[vars[0].id()];
        assert_abs_diff_eq!(x[0], 3.0, epsilon = 1e-8);
    }

    #[test]
    fn soc_unit_ball_support() {
        // ||x||_2 <= 1, maximize x_0.
        let (sol, _, vars) = solve_simple(|p| {
            let x = p.add_variable(3).unwrap();
            let mut e = AffineExpr::zeros(4);
            e.add_constant(0, 1.0);
            for i in 0..3 {
                e.push(1 + i, x, i, 1.0);
            }
            p.add_constraint(ConeConstraint {
                kind: ConeKind::SecondOrder,
                expr: e,
            })
            .unwrap();
            let mut obj = AffineExpr::zeros(1);
            obj.push(0, x, 0, -1.0);
            (obj, vec![x])
        });
        assert_eq!(sol.status, SolveStatus::Optimal);
        let x = &sol.primal.unwrap()[vars[0].id()];
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn contradictory_equalities_are_infeasible() {
        let (sol, _, _) = solve_simple(|p| {
            let x = p.add_variable(1).unwrap();
            for target in [1.0, 2.0] {
                let mut e = AffineExpr::zeros(1);
                e.push(0, x, 0, 1.0);
                e.add_constant(0, -target);
                p.add_constraint(ConeConstraint {
                    kind: ConeKind::Zero,
                    expr: e,
                })
                .unwrap();
            }
            let mut obj = AffineExpr::zeros(1);
            obj.push(0, x, 0, 1.0);
            (obj, vec![x])
        });
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn epigraph_projection_recovers_target() {
        // min t s.t. t >= ||v - a||: v = a at optimum, objective 0.
        let a = [1.0, -2.0, 0.5];
        let (sol, program, vars) = solve_simple(|p| {
            let v = p.add_variable(3).unwrap();
            let t = p.add_variable(1).unwrap();
            let mut e = AffineExpr::zeros(4);
            e.push(0, t, 0, 1.0);
            for i in 0..3 {
                e.push(1 + i, v, i, 1.0);
                e.add_constant(1 + i, -a[i]);
            }
            p.add_constraint(ConeConstraint {
                kind: ConeKind::SecondOrder,
                expr: e,
            })
            .unwrap();
            let mut obj = AffineExpr::zeros(1);
            obj.push(0, t, 0, 1.0);
            (obj, vec![v, t])
        });
        assert_eq!(sol.status, SolveStatus::Optimal);
        let primal = sol.primal.as_ref().unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(primal[vars[0].id()][i], a[i], epsilon = 1e-6);
        }
        assert!(sol.objective.unwrap().abs() <= 1e-6);
        assert!(program.check_feasibility(primal, 1e-8).is_empty());
    }

    #[test]
    fn norm_epigraph_of_fixed_product() {
        // min t s.t. t >= ||M z||, z fixed through zero cones.
        let m = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let z = DVector::from_vec(vec![0.7, -0.4]);
        let expected = (&m * &z).norm();
        let (sol, _, _) = solve_simple(|p| {
            let zval = p.add_variable(2).unwrap();
            let t = p.add_variable(1).unwrap();
            let mut pin = AffineExpr::zeros(2);
            for i in 0..2 {
                pin.push(i, zval, i, 1.0);
                pin.add_constant(i, -z[i]);
            }
            p.add_constraint(ConeConstraint {
                kind: ConeKind::Zero,
                expr: pin,
            })
            .unwrap();
            let mut e = AffineExpr::zeros(3);
            e.push(0, t, 0, 1.0);
            for r in 0..2 {
                for c in 0..2 {
                    e.push(1 + r, zval, c, m[(r, c)]);
                }
            }
            p.add_constraint(ConeConstraint {
                kind: ConeKind::SecondOrder,
                expr: e,
            })
            .unwrap();
            let mut obj = AffineExpr::zeros(1);
            obj.push(0, t, 0, 1.0);
            (obj, vec![zval, t])
        });
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_abs_diff_eq!(sol.objective.unwrap(), expected, epsilon = 1e-7);
    }

    #[test]
    fn unbounded_and_trivial_programs() {
        let mut p = ConeProgram::new();
        let x = p.add_variable(1).unwrap();
        let mut obj = AffineExpr::zeros(1);
        obj.push(0, x, 0, 1.0);
        let sol = p.solve(&obj, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);

        let zero_obj = AffineExpr::zeros(1);
        let sol = p.solve(&zero_obj, &SolverTolerances::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
    }

    #[test]
    fn round_trip_of_stored_constraints() {
        let mut p = ConeProgram::new();
        let x = p.add_variable(2).unwrap();
        let mut e = AffineExpr::zeros(2);
        e.push(0, x, 0, 1.25);
        e.push(1, x, 1, -0.5);
        e.add_constant(1, 2.0);
        let expr_copy = e.clone();
        p.add_constraint(ConeConstraint {
            kind: ConeKind::NonNegative,
            expr: e,
        })
        .unwrap();
        assert_eq!(p.constraints()[0].expr, expr_copy);
        assert_eq!(p.constraints()[0].kind, ConeKind::NonNegative);

        let mut dump = Vec::new();
        p.dump(&mut dump).unwrap();
        let text = String::from_utf8(dump).unwrap();
        assert!(text.contains("var 0 2"));
        assert!(text.contains("cone 0 nonneg 2"));
        assert!(text.contains("term 0 0 0 0"));
    }

    #[test]
    fn feasibility_checker_flags_violations() {
        let mut p = ConeProgram::new();
        let x = p.add_variable(1).unwrap();
        let mut e = AffineExpr::zeros(1);
        e.push(0, x, 0, 1.0);
        p.add_constraint(ConeConstraint {
            kind: ConeKind::NonNegative,
            expr: e,
        })
        .unwrap();
        let bad = vec![DVector::from_vec(vec![-0.5])];
        let violations = p.check_feasibility(&bad, 1e-8);
        assert_eq!(violations.len(), 1);
        assert_abs_diff_eq!(violations[0].amount, 0.5, epsilon = 1e-12);
    }
}
