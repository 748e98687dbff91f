use serde::{Deserialize, Serialize};

use super::PhaseModel;
use crate::data::{N_CLASSES, PUNCTURE, TRANSITION};
use crate::error::{Error, Result};
use crate::features::OperationRecord;

/// When and how merged inference hands over from speech to image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwitchConfig {
    pub trigger_phase: usize,
    /// Consecutive seconds of `trigger_phase` needed to switch.
    pub consecutive_s: usize,
    pub speech_phases: Vec<usize>,
    pub image_phases: Vec<usize>,
}

impl Default for SwitchConfig {
    fn default() -> Self {
        SwitchConfig {
            trigger_phase: PUNCTURE,
            consecutive_s: 30,
            speech_phases: vec![1, 2],
            image_phases: (3..N_CLASSES).collect(),
        }
    }
}

impl SwitchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.consecutive_s == 0 {
            return Err(Error::InvalidArgument("consecutive_s must be at least 1".into()));
        }
        if !self.speech_phases.contains(&self.trigger_phase) {
            return Err(Error::InvalidArgument(format!(
                "trigger phase {} is not a speech phase",
                self.trigger_phase
            )));
        }
        let mut all: Vec<usize> = self.speech_phases.iter().chain(&self.image_phases).copied().collect();
        all.sort_unstable();
        if all != (1..N_CLASSES).collect::<Vec<_>>() {
            return Err(Error::InvalidArgument(
                "speech and image phases must partition the surgical phases".into(),
            ));
        }
        Ok(())
    }
}

/// Second at which the first run of `consecutive_s` trigger predictions
/// completes, if any.
pub fn switch_time(speech_labels: &[usize], sw: &SwitchConfig) -> Option<usize> {
    let mut run = 0;
    for (t, &l) in speech_labels.iter().enumerate() {
        run = if l == sw.trigger_phase { run + 1 } else { 0 };
        if run >= sw.consecutive_s {
            return Some(t);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergedOutput {
    pub labels: Vec<usize>,
    pub switch_s: Option<usize>,
    pub speech_labels: Vec<usize>,
}

/// Speech labels up to and including the switch second, image labels after
/// it. After the switch the image model may predict transition, the trigger
/// phase (which is still running when the switch fires) and the image
/// phases. Without a switch the speech labels cover the operation.
pub fn merged_infer(
    op: &OperationRecord,
    speech: &PhaseModel,
    image: &PhaseModel,
    sw: &SwitchConfig,
) -> Result<MergedOutput> {
    sw.validate()?;
    let speech_labels = speech.infer(op, None)?;
    let switch_s = switch_time(&speech_labels, sw);
    let mut labels = speech_labels.clone();
    if let Some(ts) = switch_s {
        let allowed: Vec<usize> = [TRANSITION, sw.trigger_phase]
            .into_iter()
            .chain(sw.image_phases.iter().copied())
            .collect();
        let image_labels = image.infer(op, Some(&allowed))?;
        labels[ts + 1..].copy_from_slice(&image_labels[ts + 1..]);
    }
    Ok(MergedOutput {
        labels,
        switch_s,
        speech_labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switch_at_end_of_first_full_run() {
        let sw = SwitchConfig::default();
        let mut l = vec![1; 100];
        l.extend(vec![2; 200]);
        assert_eq!(switch_time(&l, &sw), Some(129));
        // a broken run does not count
        let mut l = vec![2; 29];
        l.push(1);
        l.extend(vec![2; 30]);
        assert_eq!(switch_time(&l, &sw), Some(59));
        assert_eq!(switch_time(&[2; 29], &sw), None);
    }

    #[test]
    fn rejects_overlapping_phase_sets() {
        let sw = SwitchConfig {
            image_phases: (2..N_CLASSES).collect(),
            ..Default::default()
        };
        assert!(sw.validate().is_err());
        assert!(SwitchConfig::default().validate().is_ok());
    }
}
