//! Bootstrapped n-step returns.

/// `G_t = r_t + g r_{t+1} + ... + g^{k-1} r_{t+k-1} + g^k V(s_{t+k})` with
/// `k = min(n, steps to the end of the segment or episode)`.
///
/// `values[t] = V(s_t)` for `t <= T`; `values[T]` bootstraps the state after
/// the segment. `done[t]` marks the episode ending at step `t`, after which
/// nothing is bootstrapped.
pub fn nstep_returns(rewards: &[f64], values: &[f64], done: &[bool], gamma: f64, n: usize) -> Vec<f64> {
    let len = rewards.len();
    assert_eq!(values.len(), len + 1, "one value per state plus the bootstrap");
    assert_eq!(done.len(), len);
    assert!(n >= 1);
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let mut g = 0.0;
        let mut discount = 1.0;
        let mut k = t;
        let mut terminal = false;
        while k < len && k < t + n {
            g += discount * rewards[k];
            discount *= gamma;
            if done[k] {
                terminal = true;
                break;
            }
            k += 1;
        }
        if !terminal {
            g += discount * values[k];
        }
        out.push(g);
    }
    out
}
