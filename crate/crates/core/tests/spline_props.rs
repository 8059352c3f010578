mod common;

use lanerisk::lanegen::cubic_lane_change;
use lanerisk::Error;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn cubic_profile_properties(
        x0 in -100.0f64..100.0,
        len in 1.0f64..200.0,
        y0 in -10.0f64..10.0,
        yt in -10.0f64..10.0,
        u in 0.0f64..1.0,
    ) {
        let xt = x0 + len;
        let y = |x: f64| cubic_lane_change(x, x0, xt, y0, yt).unwrap();
        prop_assert!((y(x0) - y0).abs() <= 1e-9);
        prop_assert!((y(xt) - yt).abs() <= 1e-9);
        prop_assert!((y(x0 + 0.5 * len) - 0.5 * (y0 + yt)).abs() <= 1e-9);
        // Point symmetry about the midpoint.
        prop_assert!((y(x0 + u * len) + y(xt - u * len) - (y0 + yt)).abs() <= 1e-9);
        // End slopes from the interpolating cubic through four samples.
        let c = common::cubic_coefficients([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0].map(|s| y(x0 + s * len)));
        let start_slope = c[1] / len;
        let end_slope = (c[1] + 2.0 * c[2] + 3.0 * c[3]) / len;
        prop_assert!(start_slope.abs() <= 1e-9, "start slope {start_slope:e}");
        prop_assert!(end_slope.abs() <= 1e-9, "end slope {end_slope:e}");
        // Monotone between the lanes.
        let mid = y(x0 + u * len);
        prop_assert!(mid >= y0.min(yt) - 1e-9 && mid <= y0.max(yt) + 1e-9);
    }

    #[test]
    fn outside_interval_is_rejected(x0 in -10.0f64..10.0, len in 0.5f64..50.0, d in 1e-6f64..10.0) {
        let xt = x0 + len;
        for x in [x0 - d, xt + d] {
            let is_outside = matches!(cubic_lane_change(x, x0, xt, 0.0, 1.0), Err(Error::OutsideInterval { .. }));
            prop_assert!(is_outside);
        }
    }
}
