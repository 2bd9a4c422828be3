//! Bi-directional window planning.
//!
//! A volume of Z slices is covered by overlapping windows of n slices. The
//! first window sits at the start fraction p; windows then propagate toward
//! the bottom (DOWN) and back up from the first window toward the top (UP),
//! each advancing by n−h so that h slices overlap the already-generated
//! region and get pinned during sampling. Terminal windows are clamped to
//! the volume bounds, pinning everything already generated inside them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Down,
    Up,
}

/// One window job. `pinned` holds global slice indices that must be
/// inpainted from already-generated content; `informed_from` is the global
/// index of the generated boundary slice that conditions this job (None for
/// the first job, which uses the externally supplied informed slice).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanJob {
    pub start: usize,
    pub direction: Option<Direction>,
    pub pinned: Vec<usize>,
    pub informed_from: Option<usize>,
}

impl PlanJob {
    /// Global indices this job generates (window minus pins).
    pub fn generated(&self, n: usize) -> Vec<usize> {
        (self.start..self.start + n)
            .filter(|i| !self.pinned.contains(i))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub z: usize,
    pub n: usize,
    pub h: usize,
    pub jobs: Vec<PlanJob>,
}

impl WindowPlan {
    /// Check the structural invariants: every slice generated exactly once,
    /// windows in bounds, and every non-first job pinned to previously
    /// generated content.
    pub fn validate(&self) -> Result<()> {
        let mut generated = vec![false; self.z];
        for (i, job) in self.jobs.iter().enumerate() {
            if job.start + self.n > self.z {
                return Err(Error::validation("plan", format!("job {i} exceeds volume bounds")));
            }
            for &p in &job.pinned {
                if p < job.start || p >= job.start + self.n {
                    return Err(Error::validation("plan", format!("job {i} pin {p} outside its window")));
                }
                if !generated[p] {
                    return Err(Error::validation("plan", format!("job {i} pins ungenerated slice {p}")));
                }
            }
            if i > 0 && job.pinned.is_empty() {
                return Err(Error::validation("plan", format!("job {i} has no pins")));
            }
            for g in job.generated(self.n) {
                if generated[g] {
                    return Err(Error::validation("plan", format!("slice {g} generated twice")));
                }
                generated[g] = true;
            }
        }
        if let Some(missing) = generated.iter().position(|g| !g) {
            return Err(Error::validation("plan", format!("slice {missing} never generated")));
        }
        Ok(())
    }
}

/// Plan the window jobs for a Z-slice volume with window length n, overlap
/// h, and start fraction p. DOWN jobs run before UP jobs.
pub fn window_plan(p: f64, n: usize, h: usize, z: usize) -> Result<WindowPlan> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::validation("p", format!("start fraction must lie in [0,1], got {p}")));
    }
    if h < 1 || h >= n {
        return Err(Error::validation("overlap", format!("need 1 <= h < n, got h={h}, n={n}")));
    }
    if z < n {
        return Err(Error::validation("volume", format!("volume shorter than window: Z={z} < n={n}")));
    }
    let first = ((p * z as f64).floor() as usize).min(z - n);
    let mut jobs = vec![PlanJob {
        start: first,
        direction: None,
        pinned: Vec::new(),
        informed_from: None,
    }];

    // DOWN: advance by n−h pinning the leftmost h slices of each window;
    // the final window is clamped to end at Z with all previously generated
    // in-window slices pinned.
    let mut cur = first;
    loop {
        let next = cur + (n - h);
        if next + n <= z {
            jobs.push(PlanJob {
                start: next,
                direction: Some(Direction::Down),
                pinned: (next..next + h).collect(),
                informed_from: Some(next + h - 1),
            });
            cur = next;
        } else {
            if cur + n < z {
                let start = z - n;
                let pinned: Vec<usize> = (start..cur + n).collect();
                jobs.push(PlanJob {
                    start,
                    direction: Some(Direction::Down),
                    informed_from: pinned.last().copied(),
                    pinned,
                });
            }
            break;
        }
    }

    // UP: retreat by n−h from the first window pinning the rightmost h
    // slices; the final window is clamped to start at 0.
    cur = first;
    loop {
        if cur == 0 {
            break;
        }
        if let Some(next) = cur.checked_sub(n - h) {
            jobs.push(PlanJob {
                start: next,
                direction: Some(Direction::Up),
                pinned: (cur..cur + h).collect(),
                informed_from: Some(cur),
            });
            cur = next;
        } else {
            let pinned: Vec<usize> = (cur..n).collect();
            jobs.push(PlanJob {
                start: 0,
                direction: Some(Direction::Up),
                informed_from: pinned.first().copied(),
                pinned,
            });
            break;
        }
    }

    let plan = WindowPlan { z, n, h, jobs };
    plan.validate()?;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn worked_example_matches_hand_enumeration() {
        // Z=32, n=8, h=1, p=0.5.
        let plan = window_plan(0.5, 8, 1, 32).unwrap();
        let j = &plan.jobs;
        assert_eq!(j[0], PlanJob { start: 16, direction: None, pinned: vec![], informed_from: None });
        assert_eq!(
            j[1],
            PlanJob { start: 23, direction: Some(Direction::Down), pinned: vec![23], informed_from: Some(23) }
        );
        assert_eq!(
            j[2],
            PlanJob {
                start: 24,
                direction: Some(Direction::Down),
                pinned: (24..31).collect(),
                informed_from: Some(30),
            }
        );
        assert_eq!(j[2].generated(8), vec![31]);
        assert_eq!(
            j[3],
            PlanJob { start: 9, direction: Some(Direction::Up), pinned: vec![16], informed_from: Some(16) }
        );
        assert_eq!(
            j[4],
            PlanJob { start: 2, direction: Some(Direction::Up), pinned: vec![9], informed_from: Some(9) }
        );
        assert_eq!(
            j[5],
            PlanJob { start: 0, direction: Some(Direction::Up), pinned: (2..8).collect(), informed_from: Some(2) }
        );
        assert_eq!(j[5].generated(8), vec![0, 1]);
        assert_eq!(j.len(), 6);
    }

    #[test]
    fn start_fraction_zero_has_no_up_jobs() {
        let plan = window_plan(0.0, 8, 1, 32).unwrap();
        assert!(plan.jobs.iter().all(|j| j.direction != Some(Direction::Up)));
        assert_eq!(plan.jobs[0].start, 0);
    }

    #[test]
    fn volume_equal_to_window_is_a_single_job() {
        let plan = window_plan(0.7, 8, 1, 8).unwrap();
        assert_eq!(plan.jobs.len(), 1);
        assert_eq!(plan.jobs[0].start, 0);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(window_plan(0.5, 8, 1, 7).is_err()); // Z < n
        assert!(window_plan(0.5, 8, 0, 32).is_err()); // h < 1
        assert!(window_plan(0.5, 8, 8, 32).is_err()); // h >= n
        assert!(window_plan(1.5, 8, 1, 32).is_err()); // p out of range
    }

    #[test]
    fn start_fraction_one_clamps_to_last_window() {
        let plan = window_plan(1.0, 8, 1, 32).unwrap();
        assert_eq!(plan.jobs[0].start, 24);
        assert!(plan.jobs.iter().all(|j| j.direction != Some(Direction::Down)));
    }

    proptest! {
        #[test]
        fn invariants_hold_for_arbitrary_geometry(
            z in 2usize..200,
            n in 2usize..13,
            h in 1usize..12,
            p in 0.0f64..=1.0,
        ) {
            prop_assume!(h < n);
            prop_assume!(z >= n);
            let plan = window_plan(p, n, h, z).unwrap();
            // validate() checks coverage, uniqueness, bounds, pin ancestry.
            plan.validate().unwrap();
            prop_assert!(plan.jobs[0].pinned.is_empty());
            // Every non-first job's informed slice is one of its pins.
            for job in &plan.jobs[1..] {
                let inf = job.informed_from.unwrap();
                prop_assert!(job.pinned.contains(&inf));
                match job.direction.unwrap() {
                    Direction::Down => prop_assert_eq!(inf, *job.pinned.iter().max().unwrap()),
                    Direction::Up => prop_assert_eq!(inf, *job.pinned.iter().min().unwrap()),
                }
            }
        }
    }
}
