//! Bounded tool-use loop for meta- and base-agent sessions.

pub mod prompt;
pub mod sandbox;
pub mod session;
pub mod tools;
pub mod transcript;

pub use prompt::{base_bindings, meta_bindings, render_prompt, strip_skill_guidance, template_for};
pub use sandbox::{landlock_available, Confinement, SandboxEnv};
pub use session::{run_session, AgentSession, SessionLimits, SessionOutcome, Termination};
pub use tools::{tool_definitions, ToolContext, ToolErrorCode, ToolResult, TOOL_NAMES};
pub use transcript::{calls_have_results, read_transcript, replay_script, Clock, StepClock, SystemClock, TranscriptEvent};
