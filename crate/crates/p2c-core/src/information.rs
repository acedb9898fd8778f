//! Pointwise mutual information over object occurrence, the probability
//! identities behind fidelity and adequacy, and tabular mutual information.
//!
//! All logarithms are natural.

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum InfoError {
    #[error("joint probability is zero")]
    ZeroJoint,
    #[error("marginal probability must be in (0, 1]")]
    ZeroMarginal,
    #[error("invalid joint: need 0 <= p_xy <= min(p_x, p_y), got p_x={p_x}, p_y={p_y}, p_xy={p_xy}")]
    InvalidJoint { p_x: f64, p_y: f64, p_xy: f64 },
    #[error("joint table does not sum to 1 (sum = {0})")]
    NotNormalized(f64),
    #[error("joint table entries must be finite and nonnegative")]
    NegativeEntry,
}

/// Marginal and joint probabilities of an object appearing in images
/// (`p_x`), being mentioned by captions (`p_y`), and both (`p_xy`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointObjectDistribution {
    p_x: f64,
    p_y: f64,
    p_xy: f64,
}

impl JointObjectDistribution {
    pub fn new(p_x: f64, p_y: f64, p_xy: f64) -> Result<Self, InfoError> {
        if !(p_x > 0.0 && p_x <= 1.0) || !(p_y > 0.0 && p_y <= 1.0) {
            return Err(InfoError::ZeroMarginal);
        }
        if !(0.0..=1.0).contains(&p_xy) || p_xy > p_x.min(p_y) {
            return Err(InfoError::InvalidJoint { p_x, p_y, p_xy });
        }
        Ok(JointObjectDistribution { p_x, p_y, p_xy })
    }

    pub fn p_x(&self) -> f64 {
        self.p_x
    }

    pub fn p_y(&self) -> f64 {
        self.p_y
    }

    pub fn p_xy(&self) -> f64 {
        self.p_xy
    }
}

/// log(p_xy / (p_x * p_y)). A zero joint is an error rather than -inf;
/// callers must filter empty cells.
pub fn pmi(d: &JointObjectDistribution) -> Result<f64, InfoError> {
    if d.p_xy == 0.0 {
        return Err(InfoError::ZeroJoint);
    }
    Ok((d.p_xy / (d.p_x * d.p_y)).ln())
}

/// Fidelity = p(x|y) = p_xy/p_y, adequacy = p(y|x) = p_xy/p_x.
pub fn fidelity_adequacy_probs(d: &JointObjectDistribution) -> (f64, f64) {
    (d.p_xy / d.p_y, d.p_xy / d.p_x)
}

/// Mutual information of a finite joint table: sum of p(x,y) * pmi(x,y)
/// over cells with positive mass. Rows index x, columns index y.
pub fn mutual_information(joint: &[Vec<f64>]) -> Result<f64, InfoError> {
    let cols = joint.first().map(Vec::len).unwrap_or(0);
    if joint.iter().any(|row| row.len() != cols) || cols == 0 {
        return Err(InfoError::NotNormalized(0.0));
    }
    let mut total = 0.0;
    for row in joint {
        for &p in row {
            if !p.is_finite() || p < 0.0 {
                return Err(InfoError::NegativeEntry);
            }
            total += p;
        }
    }
    if (total - 1.0).abs() > 1e-9 {
        return Err(InfoError::NotNormalized(total));
    }

    let row_marginals: Vec<f64> = joint.iter().map(|row| row.iter().sum()).collect();
    let col_marginals: Vec<f64> = (0..cols)
        .map(|j| joint.iter().map(|row| row[j]).sum())
        .collect();

    let mut mi = 0.0;
    for (i, row) in joint.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (row_marginals[i] * col_marginals[j])).ln();
            }
        }
    }
    Ok(mi)
}
