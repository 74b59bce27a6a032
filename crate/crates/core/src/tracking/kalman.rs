//! Constant-velocity Kalman filter over `(cx, cy, area, aspect)` box states.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::geometry::BBox;

pub type State = SVector<f64, 7>;
pub type Covariance = SMatrix<f64, 7, 7>;
type Measurement = SVector<f64, 4>;

/// Smallest area a prediction may reach, in px².
pub const MIN_AREA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxFilter {
    pub mean: State,
    pub covariance: Covariance,
}

fn transition() -> Covariance {
    let mut f = Covariance::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn observation() -> SMatrix<f64, 4, 7> {
    SMatrix::<f64, 4, 7>::identity()
}

fn process_noise() -> Covariance {
    Covariance::from_diagonal(&State::from_column_slice(&[1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 0.0001]))
}

fn measurement_noise() -> SMatrix<f64, 4, 4> {
    SMatrix::<f64, 4, 4>::from_diagonal(&Measurement::new(1.0, 1.0, 10.0, 10.0))
}

pub fn bbox_to_measurement(b: &BBox) -> Measurement {
    let c = b.center();
    Measurement::new(c.x, c.y, b.area(), b.width() / b.height())
}

impl BoxFilter {
    pub fn new(b: &BBox) -> Self {
        let z = bbox_to_measurement(b);
        let mut mean = State::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let covariance =
            Covariance::from_diagonal(&State::from_column_slice(&[10.0, 10.0, 100.0, 100.0, 1e4, 1e4, 1e4]));
        Self { mean, covariance }
    }

    /// Propagate one frame. Area velocity is zeroed if it would drive the area
    /// non-positive, and the area itself is floored at [`MIN_AREA`].
    pub fn predict(&mut self) {
        if self.mean[2] + self.mean[6] <= 0.0 {
            self.mean[6] = 0.0;
        }
        let f = transition();
        self.mean = f * self.mean;
        self.mean[2] = self.mean[2].max(MIN_AREA);
        self.covariance = f * self.covariance * f.transpose() + process_noise();
    }

    pub fn update(&mut self, b: &BBox) {
        let h = observation();
        let z = bbox_to_measurement(b);
        let innovation = z - h * self.mean;
        let s = h * self.covariance * h.transpose() + measurement_noise();
        let s_inv = s.try_inverse().expect("innovation covariance is positive definite");
        let gain = self.covariance * h.transpose() * s_inv;
        self.mean += gain * innovation;
        // Joseph form keeps the covariance symmetric positive semi-definite.
        let i_kh = Covariance::identity() - gain * h;
        self.covariance = i_kh * self.covariance * i_kh.transpose() + gain * measurement_noise() * gain.transpose();
    }

    pub fn bbox(&self) -> BBox {
        let aspect = self.mean[3].max(1e-6);
        BBox::from_center_area_aspect(self.mean[0], self.mean[1], self.mean[2].max(MIN_AREA), aspect)
    }

    pub fn center_velocity(&self) -> (f64, f64) {
        (self.mean[4], self.mean[5])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(cx: f64, cy: f64) -> BBox {
        BBox::new(cx - 10.0, cy - 20.0, cx + 10.0, cy + 20.0)
    }

    #[test]
    fn zero_velocity_is_a_fixed_point() {
        let mut f = BoxFilter::new(&bx(100.0, 100.0));
        f.predict();
        let b = f.bbox();
        let e = bx(100.0, 100.0);
        assert!((b.x1 - e.x1).abs() < 1e-9 && (b.y2 - e.y2).abs() < 1e-9);
    }

    #[test]
    fn linear_propagation() {
        let mut f = BoxFilter::new(&bx(100.0, 100.0));
        f.mean[4] = 2.0;
        f.predict();
        let c = f.bbox().center();
        assert!((c.x - 102.0).abs() < 1e-12 && (c.y - 100.0).abs() < 1e-12);
    }

    #[test]
    fn three_steps_of_unit_velocity() {
        // F^3 applied to (100,100,...,1,1,0) by hand: center + 3·(1,1).
        let mut f = BoxFilter::new(&bx(100.0, 100.0));
        f.mean[4] = 1.0;
        f.mean[5] = 1.0;
        for _ in 0..3 {
            f.predict();
        }
        let c = f.bbox().center();
        assert!((c.x - 103.0).abs() < 1e-12 && (c.y - 103.0).abs() < 1e-12);
    }

    #[test]
    fn area_is_floored() {
        let mut f = BoxFilter::new(&bx(0.0, 0.0));
        f.mean[2] = 0.5;
        f.mean[6] = -1.0;
        f.predict();
        assert!(f.mean[2] >= MIN_AREA);
        assert_eq!(f.mean[6], 0.0);
    }

    #[test]
    fn covariance_grows_on_predict_and_stays_symmetric() {
        let mut f = BoxFilter::new(&bx(0.0, 0.0));
        let before = f.covariance.trace();
        f.predict();
        assert!(f.covariance.trace() > before);
        f.update(&bx(1.0, 0.0));
        let asym = (f.covariance - f.covariance.transpose()).abs().max();
        assert!(asym < 1e-9);
    }
}
