/// `lr0` halved once for every milestone at or below `iter`.
pub fn lr_at(lr0: f64, milestones: &[u64], iter: u64) -> f64 {
    let halvings = milestones.iter().filter(|&&m| m <= iter).count() as i32;
    lr0 * 0.5f64.powi(halvings)
}
