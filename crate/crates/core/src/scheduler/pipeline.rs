use std::sync::Arc;

use super::{internal_error, AssessError, Assessor, SubmissionRecord};
use crate::feedback::FeedbackTree;
use crate::judge::{build_judge_metadata, invoke_judge, InvokeOptions, JudgeRegistry};
use crate::repo::{Activity, ActivityRegistry};
use crate::sandbox::{ExecutionBackend, ProvisionRequest};

/// The assessment pipeline: resolve configuration, provision a workspace,
/// build the metadata document and run the judge.
pub struct JudgePipeline {
    pub activities: Arc<ActivityRegistry>,
    pub judges: Arc<JudgeRegistry>,
    pub backend: Arc<dyn ExecutionBackend>,
    pub options: InvokeOptions,
}

impl JudgePipeline {
    pub fn assess_activity(
        &self,
        activity: &Activity,
        submission: &SubmissionRecord,
    ) -> Result<FeedbackTree, AssessError> {
        let Some(config) = &activity.config else {
            return Ok(internal_error(&format!("activity {} has no assessment configuration", activity.id.0)));
        };
        let Some(bundle) = self.judges.get(&config.judge) else {
            return Ok(internal_error(&format!("judge '{}' is not installed", config.judge)));
        };
        let request = ProvisionRequest {
            image: &config.image,
            submission: &submission.code,
            judge_dir: &bundle.root_path,
            resources_dir: Some(&activity.resources_dir),
        };
        let workspace = match self.backend.provision(&request) {
            Ok(ws) => ws,
            Err(e) if e.is_infrastructure() => return Err(AssessError::Infrastructure(e.to_string())),
            Err(e) => return Ok(internal_error(&format!("provisioning failed: {e}"))),
        };
        let metadata = build_judge_metadata(submission, config, workspace.sandbox_paths());
        let options = InvokeOptions {
            network_allowed: config.network_allowed,
            ..self.options
        };
        invoke_judge(bundle, &metadata, self.backend.as_ref(), &workspace, &options)
            .map_err(|e| AssessError::Infrastructure(e.to_string()))
    }
}

impl Assessor for JudgePipeline {
    fn assess(&self, submission: &SubmissionRecord) -> Result<FeedbackTree, AssessError> {
        match self.activities.get(&submission.activity_id) {
            Some(activity) => self.assess_activity(&activity, submission),
            None => Ok(internal_error(&format!(
                "activity {} no longer exists",
                submission.activity_id.0
            ))),
        }
    }
}
