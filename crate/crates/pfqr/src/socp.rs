//! Second-order cone reformulation of the penalized composite quantile fit.
//!
//! Positive/negative splits of the wavelet coefficients and residuals turn
//! the check loss and the l1 penalty into linear terms; one cone per
//! functional predictor links a head variable to the split coefficient block
//! for the group penalty. The module builds, verifies and exports the conic
//! problem; solving it is left to external conic solvers.
//!
//! Variable layout, in order:
//!   alpha (K) | gamma (q) | theta_pos (mN) | theta_neg (mN) | z (m)
//!   | res_pos (K*n) | res_neg (K*n)

use crate::model::{CoefficientSet, Design, PenaltySpec, QuantileLevels};
use crate::{Error, Result};
use ndarray::Array1;
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    fn token(self) -> &'static str {
        match self {
            Sense::Le => "<=",
            Sense::Eq => "==",
            Sense::Ge => ">=",
        }
    }

    fn parse(s: &str) -> Option<Sense> {
        match s {
            "<=" => Some(Sense::Le),
            "==" => Some(Sense::Eq),
            ">=" => Some(Sense::Ge),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Free,
    NonNeg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// An explicit conic program: linear objective and rows, second-order cones
/// given as index tuples headed by the cone variable.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProblem {
    pub num_vars: usize,
    pub objective_coeffs: Vec<(usize, f64)>,
    pub linear_constraints: Vec<LinearRow>,
    pub cones: Vec<Vec<usize>>,
    pub bounds: Vec<Bound>,
    pub var_names: Vec<String>,
    // Model dimensions, kept so lifted points can be laid out.
    pub k: usize,
    pub q: usize,
    pub m: usize,
    pub grid_len: usize,
    pub n: usize,
}

/// Verification outcome for a candidate point.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub max_violation: f64,
    pub objective: f64,
    /// Description of the worst violated condition, if any.
    pub worst: Option<String>,
}

impl ConicProblem {
    fn validate(&self) -> Result<()> {
        if self.bounds.len() != self.num_vars || self.var_names.len() != self.num_vars {
            return Err(Error::Dimension("bounds/names length != num_vars".into()));
        }
        let in_range = |idx: usize| idx < self.num_vars;
        if !self.objective_coeffs.iter().all(|(i, _)| in_range(*i)) {
            return Err(Error::Dimension("objective index out of range".into()));
        }
        for row in &self.linear_constraints {
            if !row.coeffs.iter().all(|(i, _)| in_range(*i)) {
                return Err(Error::Dimension("row index out of range".into()));
            }
        }
        for cone in &self.cones {
            if !cone.iter().all(|i| in_range(*i)) {
                return Err(Error::Dimension("cone index out of range".into()));
            }
            let mut seen = cone.clone();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != cone.len() {
                return Err(Error::InvalidArgument("duplicate index in cone".into()));
            }
        }
        Ok(())
    }

    pub fn idx_alpha(&self, kk: usize) -> usize {
        kk
    }

    pub fn idx_gamma(&self, j: usize) -> usize {
        self.k + j
    }

    pub fn idx_theta_pos(&self, l: usize, j: usize) -> usize {
        self.k + self.q + l * self.grid_len + j
    }

    pub fn idx_theta_neg(&self, l: usize, j: usize) -> usize {
        self.k + self.q + self.m * self.grid_len + l * self.grid_len + j
    }

    pub fn idx_z(&self, l: usize) -> usize {
        self.k + self.q + 2 * self.m * self.grid_len + l
    }

    pub fn idx_res_pos(&self, kk: usize, i: usize) -> usize {
        self.k + self.q + 2 * self.m * self.grid_len + self.m + kk * self.n + i
    }

    pub fn idx_res_neg(&self, kk: usize, i: usize) -> usize {
        self.idx_res_pos(kk, i) + self.k * self.n
    }

    pub fn objective_at(&self, point: &[f64]) -> f64 {
        self.objective_coeffs
            .iter()
            .map(|(i, c)| c * point[*i])
            .sum()
    }
}

/// Builds the conic reformulation for the given data and penalties.
pub fn build_socp(
    design: &Design,
    y: &Array1<f64>,
    taus: &QuantileLevels,
    pen: &PenaltySpec,
) -> Result<ConicProblem> {
    let n = design.n();
    if n == 0 {
        return Err(Error::Degenerate("empty dataset".into()));
    }
    if y.len() != n {
        return Err(Error::Dimension(format!(
            "{} responses for {} rows",
            y.len(),
            n
        )));
    }
    let k = taus.k();
    let q = design.q;
    let m = design.m;
    let nn = design.grid_len;
    let p = m * nn;
    let num_vars = k + q + 2 * p + m + 2 * k * n;

    let mut prob = ConicProblem {
        num_vars,
        objective_coeffs: vec![],
        linear_constraints: vec![],
        cones: vec![],
        bounds: vec![Bound::Free; num_vars],
        var_names: vec![String::new(); num_vars],
        k,
        q,
        m,
        grid_len: nn,
        n,
    };

    for kk in 0..k {
        let idx = prob.idx_alpha(kk);
        prob.var_names[idx] = format!("alpha[{kk}]");
    }
    for j in 0..q {
        let idx = prob.idx_gamma(j);
        prob.var_names[idx] = format!("gamma[{j}]");
    }
    for l in 0..m {
        for j in 0..nn {
            let ip = prob.idx_theta_pos(l, j);
            let im = prob.idx_theta_neg(l, j);
            prob.var_names[ip] = format!("theta_pos[{l}][{j}]");
            prob.var_names[im] = format!("theta_neg[{l}][{j}]");
            prob.bounds[ip] = Bound::NonNeg;
            prob.bounds[im] = Bound::NonNeg;
        }
        let iz = prob.idx_z(l);
        prob.var_names[iz] = format!("z[{l}]");
        prob.bounds[iz] = Bound::NonNeg;
    }
    for kk in 0..k {
        for i in 0..n {
            let ip = prob.idx_res_pos(kk, i);
            let im = prob.idx_res_neg(kk, i);
            prob.var_names[ip] = format!("res_pos[{kk}][{i}]");
            prob.var_names[im] = format!("res_neg[{kk}][{i}]");
            prob.bounds[ip] = Bound::NonNeg;
            prob.bounds[im] = Bound::NonNeg;
        }
    }

    // Objective: check loss weights on residual slacks, l1 on the splits,
    // group weight on the cone heads.
    for (kk, &tau) in taus.taus().iter().enumerate() {
        for i in 0..n {
            prob.objective_coeffs.push((prob.idx_res_pos(kk, i), tau));
            prob.objective_coeffs
                .push((prob.idx_res_neg(kk, i), 1.0 - tau));
        }
    }
    if pen.lambda1 != 0.0 {
        for l in 0..m {
            for j in 0..nn {
                prob.objective_coeffs
                    .push((prob.idx_theta_pos(l, j), pen.lambda1));
                prob.objective_coeffs
                    .push((prob.idx_theta_neg(l, j), pen.lambda1));
            }
        }
    }
    if pen.lambda2 != 0.0 {
        for l in 0..m {
            prob.objective_coeffs.push((prob.idx_z(l), pen.lambda2));
        }
    }

    // Two <= rows per (k, i):
    //   -(fitted) - res_pos <= -y_i   (res_pos >= residual)
    //    (fitted) - res_neg <=  y_i   (res_neg >= -residual)
    for kk in 0..k {
        for i in 0..n {
            let mut base: Vec<(usize, f64)> = Vec::with_capacity(2 * p + q + 2);
            base.push((prob.idx_alpha(kk), 1.0));
            for (j, uj) in design.u_row(i).iter().enumerate() {
                if *uj != 0.0 {
                    base.push((prob.idx_gamma(j), *uj));
                }
            }
            for (j, vj) in design.v_row(i).iter().enumerate() {
                if *vj != 0.0 {
                    let l = j / nn;
                    let jj = j % nn;
                    base.push((prob.idx_theta_pos(l, jj), *vj));
                    base.push((prob.idx_theta_neg(l, jj), -*vj));
                }
            }
            let mut upper = base.iter().map(|(i, c)| (*i, -c)).collect::<Vec<_>>();
            upper.push((prob.idx_res_pos(kk, i), -1.0));
            prob.linear_constraints.push(LinearRow {
                coeffs: upper,
                sense: Sense::Le,
                rhs: -y[i],
            });
            let mut lower = base;
            lower.push((prob.idx_res_neg(kk, i), -1.0));
            prob.linear_constraints.push(LinearRow {
                coeffs: lower,
                sense: Sense::Le,
                rhs: y[i],
            });
        }
    }

    // One cone per predictor: z_l >= ||(theta_pos_l, theta_neg_l)||_2.
    for l in 0..m {
        let mut cone = Vec::with_capacity(2 * nn + 1);
        cone.push(prob.idx_z(l));
        for j in 0..nn {
            cone.push(prob.idx_theta_pos(l, j));
        }
        for j in 0..nn {
            cone.push(prob.idx_theta_neg(l, j));
        }
        prob.cones.push(cone);
    }

    prob.validate()?;
    Ok(prob)
}

/// Lifts primal parameters to a feasible conic point with complementary
/// splits and tight residual slacks.
pub fn lift(
    params: &CoefficientSet,
    design: &Design,
    y: &Array1<f64>,
    taus: &QuantileLevels,
    prob: &ConicProblem,
) -> Result<Vec<f64>> {
    params.validate()?;
    crate::model::check_model_dims(params, design, y, taus)?;
    let mut x = vec![0.0; prob.num_vars];
    for (kk, a) in params.alpha.iter().enumerate() {
        x[prob.idx_alpha(kk)] = *a;
    }
    for (j, g) in params.gamma.iter().enumerate() {
        x[prob.idx_gamma(j)] = *g;
    }
    for l in 0..prob.m {
        let block = params.theta_block(l);
        let mut sq = 0.0;
        for (j, t) in block.iter().enumerate() {
            x[prob.idx_theta_pos(l, j)] = t.max(0.0);
            x[prob.idx_theta_neg(l, j)] = (-t).max(0.0);
            sq += t * t;
        }
        x[prob.idx_z(l)] = sq.sqrt();
    }
    for kk in 0..taus.k() {
        let fitted = crate::model::predict_quantile(params, design, kk)?;
        for i in 0..design.n() {
            let e = y[i] - fitted[i];
            x[prob.idx_res_pos(kk, i)] = e.max(0.0);
            x[prob.idx_res_neg(kk, i)] = (-e).max(0.0);
        }
    }
    Ok(x)
}

/// Checks rows, bounds and cone memberships within `tol`.
pub fn verify_feasible(
    prob: &ConicProblem,
    point: &[f64],
    tol: f64,
) -> Result<FeasibilityReport> {
    if point.len() != prob.num_vars {
        return Err(Error::Dimension(format!(
            "point length {} != num_vars {}",
            point.len(),
            prob.num_vars
        )));
    }
    let mut max_violation = 0.0f64;
    let mut worst = None;
    let mut note = |violation: f64, desc: String, max_violation: &mut f64| {
        if violation > *max_violation {
            *max_violation = violation;
            worst = Some(desc);
        }
    };
    for (idx, row) in prob.linear_constraints.iter().enumerate() {
        let lhs: f64 = row.coeffs.iter().map(|(i, c)| c * point[*i]).sum();
        let violation = match row.sense {
            Sense::Le => lhs - row.rhs,
            Sense::Ge => row.rhs - lhs,
            Sense::Eq => (lhs - row.rhs).abs(),
        }
        .max(0.0);
        note(violation, format!("row {idx}"), &mut max_violation);
    }
    for (i, b) in prob.bounds.iter().enumerate() {
        if *b == Bound::NonNeg {
            note(
                (-point[i]).max(0.0),
                format!("bound {}", prob.var_names[i]),
                &mut max_violation,
            );
        }
    }
    for (ci, cone) in prob.cones.iter().enumerate() {
        let head = point[cone[0]];
        let tail: f64 = cone[1..]
            .iter()
            .map(|i| point[*i] * point[*i])
            .sum::<f64>()
            .sqrt();
        note((tail - head).max(0.0), format!("cone {ci}"), &mut max_violation);
    }
    Ok(FeasibilityReport {
        feasible: max_violation <= tol,
        max_violation,
        objective: prob.objective_at(point),
        worst,
    })
}

/// Rewrites a feasible point so every coefficient split is complementary and
/// every cone head is tight; never increases the objective.
pub fn canonicalize_splitting(prob: &ConicProblem, point: &mut [f64]) {
    for l in 0..prob.m {
        let mut sq = 0.0;
        for j in 0..prob.grid_len {
            let ip = prob.idx_theta_pos(l, j);
            let im = prob.idx_theta_neg(l, j);
            let t = point[ip] - point[im];
            point[ip] = t.max(0.0);
            point[im] = (-t).max(0.0);
            sq += t * t;
        }
        point[prob.idx_z(l)] = sq.sqrt();
    }
}

const MAGIC: &str = "PFQR-SOCP v1";

/// Writes the problem in the line-oriented interchange format.
///
/// Grammar (one record per line, floats with 17 significant digits):
///   PFQR-SOCP v1
///   dims <num_vars> <K> <q> <m> <N> <n>
///   name <index> <identifier>        (num_vars lines, in index order)
///   bound <index> free|nonneg        (num_vars lines, in index order)
///   obj <index> <coeff>              (one per nonzero)
///   row <sense> <rhs> <nnz> <index>:<coeff> ...
///   cone <len> <index> ...
///   end
pub fn export(prob: &ConicProblem, sink: &mut dyn Write) -> Result<()> {
    prob.validate()?;
    writeln!(sink, "{MAGIC}")?;
    writeln!(
        sink,
        "dims {} {} {} {} {} {}",
        prob.num_vars, prob.k, prob.q, prob.m, prob.grid_len, prob.n
    )?;
    for (i, name) in prob.var_names.iter().enumerate() {
        writeln!(sink, "name {i} {name}")?;
    }
    for (i, b) in prob.bounds.iter().enumerate() {
        let tok = match b {
            Bound::Free => "free",
            Bound::NonNeg => "nonneg",
        };
        writeln!(sink, "bound {i} {tok}")?;
    }
    for (i, c) in &prob.objective_coeffs {
        writeln!(sink, "obj {i} {}", fmt_f64(*c))?;
    }
    for row in &prob.linear_constraints {
        let mut line = format!(
            "row {} {} {}",
            row.sense.token(),
            fmt_f64(row.rhs),
            row.coeffs.len()
        );
        for (i, c) in &row.coeffs {
            line.push_str(&format!(" {i}:{}", fmt_f64(*c)));
        }
        writeln!(sink, "{line}")?;
    }
    for cone in &prob.cones {
        let mut line = format!("cone {}", cone.len());
        for i in cone {
            line.push_str(&format!(" {i}"));
        }
        writeln!(sink, "{line}")?;
    }
    writeln!(sink, "end")?;
    Ok(())
}

pub fn export_to_path(prob: &ConicProblem, path: &std::path::Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    export(prob, &mut file)
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Reads a problem written by [`export`].
pub fn import(source: &mut dyn BufRead) -> Result<ConicProblem> {
    let mut lines = source.lines().enumerate();
    let perr = |line: usize, msg: &str| Error::Parse {
        line: line + 1,
        msg: msg.to_string(),
    };
    let next = |lines: &mut dyn Iterator<Item = (usize, std::io::Result<String>)>| -> Result<(usize, String)> {
        match lines.next() {
            Some((ln, Ok(s))) => Ok((ln, s)),
            Some((ln, Err(e))) => Err(Error::Parse { line: ln + 1, msg: e.to_string() }),
            None => Err(Error::Parse { line: 0, msg: "unexpected end of file".into() }),
        }
    };

    let (ln, magic) = next(&mut lines)?;
    if magic != MAGIC {
        return Err(perr(ln, "bad magic header"));
    }
    let (ln, dims) = next(&mut lines)?;
    let toks: Vec<&str> = dims.split_whitespace().collect();
    if toks.len() != 7 || toks[0] != "dims" {
        return Err(perr(ln, "expected dims record"));
    }
    let parse_usize = |tok: &str, ln: usize| -> Result<usize> {
        tok.parse().map_err(|_| perr(ln, "bad integer"))
    };
    let num_vars = parse_usize(toks[1], ln)?;
    let mut prob = ConicProblem {
        num_vars,
        objective_coeffs: vec![],
        linear_constraints: vec![],
        cones: vec![],
        bounds: vec![Bound::Free; num_vars],
        var_names: vec![String::new(); num_vars],
        k: parse_usize(toks[2], ln)?,
        q: parse_usize(toks[3], ln)?,
        m: parse_usize(toks[4], ln)?,
        grid_len: parse_usize(toks[5], ln)?,
        n: parse_usize(toks[6], ln)?,
    };

    loop {
        let (ln, line) = next(&mut lines)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        match toks[0] {
            "end" => break,
            "name" => {
                if toks.len() != 3 {
                    return Err(perr(ln, "name record needs index and identifier"));
                }
                let i = parse_usize(toks[1], ln)?;
                if i >= num_vars {
                    return Err(perr(ln, "name index out of range"));
                }
                prob.var_names[i] = toks[2].to_string();
            }
            "bound" => {
                if toks.len() != 3 {
                    return Err(perr(ln, "bound record needs index and kind"));
                }
                let i = parse_usize(toks[1], ln)?;
                if i >= num_vars {
                    return Err(perr(ln, "bound index out of range"));
                }
                prob.bounds[i] = match toks[2] {
                    "free" => Bound::Free,
                    "nonneg" => Bound::NonNeg,
                    _ => return Err(perr(ln, "unknown bound kind")),
                };
            }
            "obj" => {
                if toks.len() != 3 {
                    return Err(perr(ln, "obj record needs index and coeff"));
                }
                let i = parse_usize(toks[1], ln)?;
                let c: f64 = toks[2].parse().map_err(|_| perr(ln, "bad float"))?;
                prob.objective_coeffs.push((i, c));
            }
            "row" => {
                if toks.len() < 4 {
                    return Err(perr(ln, "row record too short"));
                }
                let sense =
                    Sense::parse(toks[1]).ok_or_else(|| perr(ln, "unknown sense"))?;
                let rhs: f64 = toks[2].parse().map_err(|_| perr(ln, "bad float"))?;
                let nnz = parse_usize(toks[3], ln)?;
                if toks.len() != 4 + nnz {
                    return Err(perr(ln, "row nnz does not match entries"));
                }
                let mut coeffs = Vec::with_capacity(nnz);
                for tok in &toks[4..] {
                    let (is, cs) = tok
                        .split_once(':')
                        .ok_or_else(|| perr(ln, "row entry must be index:coeff"))?;
                    let i = parse_usize(is, ln)?;
                    let c: f64 = cs.parse().map_err(|_| perr(ln, "bad float"))?;
                    coeffs.push((i, c));
                }
                prob.linear_constraints.push(LinearRow { coeffs, sense, rhs });
            }
            "cone" => {
                if toks.len() < 2 {
                    return Err(perr(ln, "cone record too short"));
                }
                let len = parse_usize(toks[1], ln)?;
                if toks.len() != 2 + len {
                    return Err(perr(ln, "cone length does not match entries"));
                }
                let mut cone = Vec::with_capacity(len);
                for tok in &toks[2..] {
                    cone.push(parse_usize(tok, ln)?);
                }
                prob.cones.push(cone);
            }
            _ => return Err(perr(ln, "unknown record")),
        }
    }
    prob.validate()?;
    Ok(prob)
}

pub fn import_from_path(path: &std::path::Path) -> Result<ConicProblem> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    import(&mut file)
}
