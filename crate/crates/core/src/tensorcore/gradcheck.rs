use super::{NumError, ParamId, ParamSet, Tape, Var};

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// `max |fd − ad| / max(1, |ad|)` over all checked coordinates.
    pub max_rel_error: f64,
    /// Coordinate where the maximum was attained.
    pub worst: Option<(ParamId, usize)>,
    pub coords_checked: usize,
}

/// Compares tape gradients of `f` against central differences with step
/// `h` on every learnable coordinate of `params`.
///
/// `f` must build the same scalar on every call; it is invoked once for the
/// analytic pass and twice per coordinate.
pub fn finite_diff_check<'a, F>(params: &ParamSet, h: f64, f: F) -> Result<GradCheck, NumError>
where
    F: Fn(&mut Tape<'a>, &ParamSet) -> Result<Var, NumError>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let analytic = {
        let mut tape = Tape::new();
        let root = f(&mut tape, params)?;
        tape.backward(root)
    };

    let eval = |set: &ParamSet| -> Result<f64, NumError> {
        let mut tape = Tape::new();
        let root = f(&mut tape, set)?;
        Ok(tape.scalar(root))
    };

    let mut work = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        if params.get(id).is_frozen() {
            continue;
        }
        let n = params.get(id).len();
        for k in 0..n {
            let orig = work.value(id)[k];
            work.value_mut(id)[k] = orig + h;
            let plus = eval(&work)?;
            work.value_mut(id)[k] = orig - h;
            let minus = eval(&work)?;
            work.value_mut(id)[k] = orig;

            let fd = (plus - minus) / (2.0 * h);
            let ad = analytic.get(id).map_or(0.0, |g| g[k]);
            let err = (fd - ad).abs() / ad.abs().max(1.0);
            if !err.is_finite() {
                return Err(NumError::NonFinite);
            }
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((id, k));
            }
            report.coords_checked += 1;
        }
    }
    Ok(report)
}
