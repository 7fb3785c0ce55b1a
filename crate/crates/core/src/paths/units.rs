//! Which hidden units still reach the output.

use crate::net::Network;

/// Units of hidden layer `layer` (1-based) whose outgoing column in
/// `A_{layer+1}` has a non-zero entry.
pub fn active_units(net: &Network, layer: usize) -> Vec<usize> {
    let next = net.layer(layer + 1);
    (0..next.cols()).filter(|&u| !next.is_zero_column(u)).collect()
}

pub fn inactive_count(net: &Network, layer: usize) -> usize {
    net.width(layer) - active_units(net, layer).len()
}

pub(crate) fn active_flags(net: &Network, layer: usize) -> Vec<bool> {
    let next = net.layer(layer + 1);
    (0..next.cols()).map(|u| !next.is_zero_column(u)).collect()
}

/// Checks that every hidden layer has at least `⌈h_i/2⌉` units with zero
/// outgoing weights.
pub(crate) fn check_half_dropped(net: &Network, what: &str) -> crate::error::Result<()> {
    for (li, h) in net.hidden_widths().into_iter().enumerate() {
        let layer = li + 1;
        let zeroed = inactive_count(net, layer);
        let need = h.div_ceil(2);
        if zeroed < need {
            return crate::error::pre_err(format!(
                "{what}: hidden layer {layer} has {zeroed} zeroed units, needs at least {need} of {h}"
            ));
        }
    }
    Ok(())
}
