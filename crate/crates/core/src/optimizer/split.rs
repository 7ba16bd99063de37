use crate::geometry::PlanePrimitive;

/// Axis whose cut line the split runs along.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitAxis {
    /// Cut parallel to `v_y`; children lie side by side along `v_x`.
    AlongY,
    /// Cut parallel to `v_x`; children lie side by side along `v_y`.
    AlongX,
}

/// Cut a rectangle through its center into two children that tile it.
pub fn split_primitive(parent: &PlanePrimitive, axis: SplitAxis, first_id: u64) -> [PlanePrimitive; 2] {
    let f = parent.frame();
    let [xp, xn, yp, yn] = parent.radii;
    let (a, b) = match axis {
        SplitAxis::AlongY => (
            (parent.center + f.x_axis * (xp / 2.0), [xp / 2.0, xp / 2.0, yp, yn]),
            (parent.center - f.x_axis * (xn / 2.0), [xn / 2.0, xn / 2.0, yp, yn]),
        ),
        SplitAxis::AlongX => (
            (parent.center + f.y_axis * (yp / 2.0), [xp, xn, yp / 2.0, yp / 2.0]),
            (parent.center - f.y_axis * (yn / 2.0), [xp, xn, yn / 2.0, yn / 2.0]),
        ),
    };
    [
        PlanePrimitive::new(first_id, a.0, parent.rotation, a.1),
        PlanePrimitive::new(first_id + 1, b.0, parent.rotation, b.1),
    ]
}

/// Split decision from the running radii-gradient means, if any.
pub fn split_decision(mean_x: f64, mean_y: f64, threshold: f64) -> Option<SplitAxis> {
    match (mean_x > threshold, mean_y > threshold) {
        (false, false) => None,
        (true, false) => Some(SplitAxis::AlongY),
        (false, true) => Some(SplitAxis::AlongX),
        (true, true) if mean_x >= mean_y => Some(SplitAxis::AlongY),
        (true, true) => Some(SplitAxis::AlongX),
    }
}
