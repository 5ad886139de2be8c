use super::graph::{Bindings, Graph, NodeId};
use crate::error::GradError;

/// One compared gradient entry.
#[derive(Debug, Clone)]
pub struct GradEntry {
    pub input: NodeId,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradEntry>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradEntry> {
        self.entries.iter().filter(|e| e.rel_error >= self.tolerance)
    }
}

/// `|g - g_hat| / max(1e-8, |g| + |g_hat|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Compares reverse-mode gradients of every bound input against central
/// finite differences with the given step.
pub fn grad_check(
    graph: &mut Graph,
    bindings: &Bindings,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, GradError> {
    if !(step > 0.0) {
        return Err(GradError::InvalidArgument("finite-difference step must be positive"));
    }
    graph.forward(bindings)?;
    let grads = graph.backward()?;
    let mut probe = bindings.clone();
    let ids: Vec<NodeId> = bindings.ids().collect();
    let mut entries = Vec::new();
    for id in ids {
        let analytic = grads.wrt(id);
        let len = bindings.get(id).map(|t| t.len()).unwrap_or(0);
        for k in 0..len {
            let g = analytic.data[k];
            if !g.is_finite() {
                return Err(GradError::NonFiniteGradient { node: id.index(), index: k });
            }
            let base = bindings.get(id).expect("bound").data[k];
            probe.get_mut(id).expect("bound").data[k] = base + step;
            let up = graph.forward(&probe)?;
            probe.get_mut(id).expect("bound").data[k] = base - step;
            let down = graph.forward(&probe)?;
            probe.get_mut(id).expect("bound").data[k] = base;
            let numeric = (up - down) / (2.0 * step);
            entries.push(GradEntry {
                input: id,
                index: k,
                analytic: g,
                numeric,
                rel_error: relative_error(g, numeric),
            });
        }
    }
    // leave cached values consistent with the caller's bindings
    graph.forward(bindings)?;
    Ok(GradCheckReport { entries, tolerance })
}
