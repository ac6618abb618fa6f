use super::Polyline;
use crate::error::{Error, Result};
use crate::raster::point_segment_distance;

/// Ramer–Douglas–Peucker simplification with an explicit work stack.
///
/// Distances are measured to the chord as a closed segment, so closed
/// loops (first point equal to last) simplify sensibly. A point is kept
/// only when it lies strictly farther than `epsilon` from its chord.
pub fn rdp_simplify(line: &Polyline, epsilon: f64) -> Result<Polyline> {
    let pts = &line.points;
    if pts.len() < 2 {
        return Err(Error::InvalidInput(format!("RDP needs at least 2 points, got {}", pts.len())));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidInput(format!("RDP epsilon must be non-negative, got {epsilon}")));
    }
    let mut keep = vec![false; pts.len()];
    keep[0] = true;
    keep[pts.len() - 1] = true;
    let mut stack = vec![(0, pts.len() - 1)];
    while let Some((first, last)) = stack.pop() {
        if last <= first + 1 {
            continue;
        }
        let (mut best, mut best_d) = (first, -1.0);
        for (i, &p) in pts.iter().enumerate().take(last).skip(first + 1) {
            let d = point_segment_distance(p, pts[first], pts[last]);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d > epsilon {
            keep[best] = true;
            stack.push((first, best));
            stack.push((best, last));
        }
    }
    Ok(Polyline::new(pts.iter().zip(&keep).filter(|(_, &k)| k).map(|(&p, _)| p).collect()))
}
