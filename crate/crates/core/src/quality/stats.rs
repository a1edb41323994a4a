use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::QualityError;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestVariant {
    /// Pooled variance, equal-variance assumption.
    Student,
    /// Unequal variances, Welch–Satterthwaite degrees of freedom.
    Welch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TTest<T> {
    pub t: T,
    pub df: T,
    /// Two-sided p-value.
    pub p: T,
}

/// Two-sided tail probability of Student's t distribution.
pub fn student_t_two_sided_p<T: Scalar>(t: T, df: T) -> T {
    if !t.is_finite() {
        return T::zero();
    }
    let Ok(dist) = StudentsT::new(0.0, 1.0, df.as_f64()) else {
        return T::nan();
    };
    T::of(2.0 * dist.sf(t.as_f64().abs())).max(T::zero()).min(T::one())
}

fn mean_var<T: Scalar>(xs: &[T]) -> (T, T) {
    let n = T::of_usize(xs.len());
    let mean = xs.iter().copied().sum::<T>() / n;
    let ss = xs.iter().map(|x| (*x - mean) * (*x - mean)).sum::<T>();
    (mean, ss / (n - T::one()))
}

/// Two-sample t-test with a two-sided p-value.
pub fn t_test<T: Scalar>(a: &[T], b: &[T], variant: TTestVariant) -> Result<TTest<T>, QualityError> {
    for s in [a, b] {
        if s.len() < 2 {
            return Err(QualityError::SampleTooSmall(s.len()));
        }
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (T::of_usize(a.len()), T::of_usize(b.len()));
    let one = T::one();
    let (se, df) = match variant {
        TTestVariant::Student => {
            let df = na + nb - T::of(2.0);
            let pooled = ((na - one) * va + (nb - one) * vb) / df;
            ((pooled * (one / na + one / nb)).sqrt(), df)
        }
        TTestVariant::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let se2 = qa + qb;
            let df = se2 * se2 / (qa * qa / (na - one) + qb * qb / (nb - one));
            (se2.sqrt(), df)
        }
    };
    if !(se > T::zero()) {
        return Err(QualityError::DegenerateVariance);
    }
    let t = (ma - mb) / se;
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided_p(t, df),
    })
}
