use nalgebra::RealField;

/// Floating-point width used by the learners.
///
/// All state is generic over this trait so the same update loop can run in
/// single or double precision.
pub trait Real: RealField + Copy + Default + std::fmt::Debug + std::fmt::Display + 'static {
    /// Human-readable width tag recorded in trace metadata.
    const WIDTH: &'static str;

    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;

    fn eps() -> Self {
        Self::default_epsilon()
    }
}

impl Real for f64 {
    const WIDTH: &'static str = "f64";

    #[inline]
    fn of(x: f64) -> Self {
        x
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

impl Real for f32 {
    const WIDTH: &'static str = "f32";

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}
