//! Greedy per-view update budgets.

use crate::error::{Error, Result};
use crate::real::Real;

/// Budgets assigned to views whose loss is above and not above the mean.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SchedulePolicy {
    pub above_average_budget: usize,
    pub default_budget: usize,
    /// Overrides both budgets and disables the below-average early exit.
    pub fixed_budget: Option<usize>,
}

impl Default for SchedulePolicy {
    fn default() -> Self {
        Self {
            above_average_budget: 20,
            default_budget: 5,
            fixed_budget: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchedulePlan<T> {
    /// Views in visiting order, largest previous loss first.
    pub view_order: Vec<usize>,
    /// Maximum updates per view, indexed by view id.
    pub per_view_budget: Vec<usize>,
    /// Views that stop as soon as their loss drops below `avg_loss`.
    pub exit_below_average: Vec<bool>,
    pub avg_loss: T,
}

pub fn schedule_views<T: Real>(prev_losses: &[T]) -> Result<SchedulePlan<T>> {
    schedule_views_with(prev_losses, &SchedulePolicy::default())
}

pub fn schedule_views_with<T: Real>(prev_losses: &[T], policy: &SchedulePolicy) -> Result<SchedulePlan<T>> {
    if prev_losses.is_empty() {
        return Err(Error::invalid("cannot schedule an empty view list"));
    }
    let avg = prev_losses.iter().fold(T::zero(), |a, &b| a + b) / T::from_usize_lossy(prev_losses.len());
    let above: Vec<bool> = prev_losses.iter().map(|&l| l > avg).collect();
    let per_view_budget = match policy.fixed_budget {
        Some(b) => vec![b; prev_losses.len()],
        None => above
            .iter()
            .map(|&a| if a { policy.above_average_budget } else { policy.default_budget })
            .collect(),
    };
    let exit_below_average = if policy.fixed_budget.is_some() {
        vec![false; prev_losses.len()]
    } else {
        above
    };
    let mut view_order: Vec<usize> = (0..prev_losses.len()).collect();
    view_order.sort_by(|&a, &b| {
        prev_losses[b]
            .partial_cmp(&prev_losses[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(SchedulePlan {
        view_order,
        per_view_budget,
        exit_below_average,
        avg_loss: avg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_losses_get_default_budget() {
        let plan = schedule_views(&[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(plan.per_view_budget, vec![5, 5, 5]);
        assert_eq!(plan.view_order, vec![0, 1, 2]);
    }

    #[test]
    fn large_loss_gets_twenty_updates() {
        let plan = schedule_views(&[10.0, 1.0, 1.0]).unwrap();
        assert_eq!(plan.per_view_budget, vec![20, 5, 5]);
        assert_eq!(plan.avg_loss, 4.0);
        assert_eq!(plan.exit_below_average, vec![true, false, false]);
        assert_eq!(plan.view_order[0], 0);
    }

    #[test]
    fn single_view_and_empty_input() {
        assert_eq!(schedule_views(&[3.0]).unwrap().per_view_budget, vec![5]);
        assert!(schedule_views::<f64>(&[]).is_err());
    }

    #[test]
    fn fixed_budget_overrides() {
        let policy = SchedulePolicy {
            fixed_budget: Some(1),
            ..Default::default()
        };
        let plan = schedule_views_with(&[10.0, 1.0], &policy).unwrap();
        assert_eq!(plan.per_view_budget, vec![1, 1]);
        assert_eq!(plan.exit_below_average, vec![false, false]);
    }
}
