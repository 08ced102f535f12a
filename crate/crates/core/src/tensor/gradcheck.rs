//! Central-difference verification of reverse-mode gradients.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamGroup, ParamId, ParamStore, Var};

/// Gradients smaller than this are compared in absolute rather than relative terms.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Worst relative error per parameter group among checked coordinates.
    pub by_group: BTreeMap<ParamGroup, f64>,
    pub checked: usize,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Picks `count` scalar coordinates, covering every group present in
/// `store` at least once before sampling the rest uniformly.
pub fn sample_coordinates(store: &ParamStore<f64>, count: usize, seed: u64) -> Vec<(ParamId, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    let mut picks = Vec::with_capacity(count);
    for group in ParamGroup::ALL {
        let in_group = store.ids_in_group(group);
        if let Some(&id) = in_group.choose(&mut rng) {
            let n = store.value(id).numel();
            picks.push((id, rng.gen_range(0..n)));
        }
    }
    while picks.len() < count && !ids.is_empty() {
        let id = *ids.choose(&mut rng).unwrap();
        let n = store.value(id).numel();
        picks.push((id, rng.gen_range(0..n)));
    }
    picks
}

/// Compares backward gradients against `(L(θ+h) − L(θ−h)) / 2h` at each
/// selected coordinate. `loss` must build a scalar loss on the given graph.
/// Selected parameters must be trainable. `store` is restored on return.
pub fn finite_difference_check<F>(
    store: &mut ParamStore<f64>,
    loss: F,
    h: f64,
    selection: &[(ParamId, usize)],
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(&*store);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };

    let mut report = GradCheckReport::default();
    for &(id, idx) in selection {
        let p = store.get(id);
        if !p.trainable {
            return Err(Error::State(format!("parameter '{}' is not trainable", p.name)));
        }
        let (name, group) = (p.name.clone(), p.group);
        let a = analytic.get(id).map_or(0.0, |g| g.data()[idx]);

        let orig = store.value(id).data()[idx];
        store.get_mut(id).tensor.data_mut()[idx] = orig + h;
        let plus = eval(store);
        store.get_mut(id).tensor.data_mut()[idx] = orig - h;
        let minus = eval(store);
        store.get_mut(id).tensor.data_mut()[idx] = orig;
        let numeric = (plus? - minus?) / (2.0 * h);

        let err = relative_error(a, numeric);
        report.checked += 1;
        let slot = report.by_group.entry(group).or_insert(0.0);
        *slot = slot.max(err);
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            if err >= report.max_rel_error {
                report.worst = Some((name, idx));
            }
        }
    }
    Ok(report)
}
