use crate::autodiff::ParamStore;
use crate::error::Result;

/// The teacher's weights. The optimiser never sees them; they move only
/// through [`TeacherState::ema_update`].
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherState {
    params: ParamStore,
}

impl TeacherState {
    /// Starts as an exact copy of the student.
    pub fn from_student(student: &ParamStore) -> Self {
        Self {
            params: student.clone(),
        }
    }

    pub fn from_params(params: ParamStore) -> Self {
        Self { params }
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// `teacher = alpha * teacher + (1 - alpha) * student`, elementwise over
    /// every tensor. Frozen rows are left as they are.
    pub fn ema_update(&mut self, student: &ParamStore, alpha: f64) -> Result<()> {
        self.params.check_compatible(student)?;
        let ids: Vec<_> = student.ids().collect();
        for id in ids {
            let cols = student.get(id).cols();
            let frozen = self.params.frozen_row(id).map(|r| r * cols..(r + 1) * cols);
            let src = student.get(id).data();
            let dst = self.params.get_mut(id).data_mut();
            for (i, (t, s)) in dst.iter_mut().zip(src).enumerate() {
                if frozen.as_ref().is_some_and(|f| f.contains(&i)) {
                    continue;
                }
                *t = alpha * *t + (1.0 - alpha) * s;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store(v: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", Tensor::matrix(1, 2, vec![v, -v]).unwrap());
        s
    }

    #[test]
    fn degenerate_alphas() {
        let student = store(4.0);
        let mut t = TeacherState::from_params(store(2.0));
        t.ema_update(&student, 1.0).unwrap();
        assert_eq!(t.params().get(crate::autodiff::ParamId(0)).data(), &[2.0, -2.0]);
        t.ema_update(&student, 0.0).unwrap();
        assert_eq!(t.params(), &student);
    }

    #[test]
    fn half_blend() {
        let mut t = TeacherState::from_params(store(2.0));
        t.ema_update(&store(4.0), 0.5).unwrap();
        assert_eq!(t.params().get(crate::autodiff::ParamId(0)).data(), &[3.0, -3.0]);
    }

    #[test]
    fn frozen_row_untouched_and_mismatch_rejected() {
        let mut a = ParamStore::new();
        a.add_with_frozen_row("emb", Tensor::matrix(2, 2, vec![9.0; 4]).unwrap(), 0);
        let mut b = a.clone();
        b.get_mut(crate::autodiff::ParamId(0)).data_mut().iter_mut().for_each(|x| *x = 1.0);
        let mut t = TeacherState::from_student(&a);
        t.ema_update(&b, 0.0).unwrap();
        assert_eq!(t.params().get(crate::autodiff::ParamId(0)).data(), &[0.0, 0.0, 1.0, 1.0]);

        let mut t = TeacherState::from_params(store(1.0));
        let mut other = ParamStore::new();
        other.add("w", Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
        assert!(t.ema_update(&other, 0.5).is_err());
    }
}
