/// Linear decay from `start` to `end` over the first `fraction · total`
/// turns, constant afterwards.
pub fn epsilon(turn: u64, total: u64, fraction: f64, start: f64, end: f64) -> f64 {
    let horizon = fraction * total as f64;
    if horizon <= 0.0 || turn as f64 >= horizon {
        return end;
    }
    start + (end - start) * (turn as f64 / horizon)
}
