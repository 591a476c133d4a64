use numcore::{Graph, Var};

use crate::error::Result;

pub const PROB_CLAMP: f64 = 1e-7;

/// Mean focal loss of probabilities `p` against 0/1 targets `y` (same shape).
pub fn focal_loss(g: &mut Graph, p: Var, y: Var, gamma: f64, alpha: f64) -> Result<Var> {
    let pc = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let q = g.affine(pc, -1.0, 1.0);
    let not_y = g.affine(y, -1.0, 1.0);

    let ln_p = g.ln(pc);
    let w_pos = g.powf(q, gamma);
    let pos = g.mul(w_pos, ln_p)?;
    let pos = g.mul(y, pos)?;
    let pos = g.affine(pos, -alpha, 0.0);

    let ln_q = g.ln(q);
    let w_neg = g.powf(pc, gamma);
    let neg = g.mul(w_neg, ln_q)?;
    let neg = g.mul(not_y, neg)?;
    let neg = g.affine(neg, -(1.0 - alpha), 0.0);

    let per_sample = g.add(pos, neg)?;
    Ok(g.mean(per_sample)?)
}

/// Plain scalar form of the same loss for one prediction.
pub fn focal_loss_scalar(p: f64, y: bool, gamma: f64, alpha: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if y {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}
