use crate::signal::{ControlTrack, PromptLabel};

/// Everything the model is conditioned on apart from the acoustic features:
/// the prompt, the control track in its temporally-global role, and the same
/// track re-timed to the latent frame rate for frame-wise conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    pub prompt: PromptLabel,
    pub control: ControlTrack,
    pub sync: ControlTrack,
}

impl ConditionBundle {
    pub fn new(prompt: PromptLabel, control: ControlTrack, latent_frames: usize) -> Self {
        let sync = control.regulated(latent_frames);
        Self {
            prompt,
            control,
            sync,
        }
    }

    /// The null condition with the same shapes.
    pub fn null(&self) -> Self {
        Self {
            prompt: PromptLabel::NULL,
            control: self.control.zeroed(),
            sync: self.sync.zeroed(),
        }
    }

    pub fn is_null(&self) -> bool {
        self.prompt.is_null()
            && self.control.frames.iter().all(|&v| v == 0.0)
            && self.sync.frames.iter().all(|&v| v == 0.0)
    }

    pub fn latent_frames(&self) -> usize {
        self.sync.n_frames()
    }
}
