//! Remote provider adapters: thin JSON-over-HTTP clients implementing the
//! engine's provider contracts. Endpoints come from environment variables
//! (never from task files):
//!
//! - `REVERIE_VIDEO_URL`    image+text -> video generation service
//! - `REVERIE_VERIFIER_URL` vision-language rubric verifier
//! - `REVERIE_SEG_URL`      segmentation tracker
//! - `REVERIE_DEPTH_URL`    depth completion
//! - `REVERIE_HAND_URL`     hand keypoints
//! - `REVERIE_VLM_URL`      keyframe/contact questions
//! - `REVERIE_LLM_URL`      optional prompt rewriter (template fallback)
//!
//! Images travel as base64 PPM; masks and depth as base64 of the engine's
//! raster formats.

use serde_json::json;

use reverie_core::geometry::{DepthMap, ObjectId, SegMask};
use reverie_core::imagination::{
    parse_score_reply, rubric_prompt, template_prompt, ImaginationError, VideoGenerator,
    VideoSample, VideoScore, VideoVerifier,
};
use reverie_core::perception::{
    DepthProvider, HandProvider, InteractionProvider, MaskTrack, PerceptionError,
    SegmentationProvider,
};
use reverie_core::render::FrameObservation;
use reverie_core::sim::SceneConfig;

use crate::formats::parse_ppm;
use crate::http::{base64_decode, base64_encode, HttpClient, HttpError};
use crate::pipeline::PipelineError;

#[derive(Clone, Debug)]
pub struct RemoteEndpoints {
    pub video_url: String,
    pub verifier_url: String,
    pub seg_url: String,
    pub depth_url: String,
    pub hand_url: String,
    pub vlm_url: String,
    pub llm_url: Option<String>,
}

impl RemoteEndpoints {
    pub fn from_env() -> Result<Self, PipelineError> {
        let need = |var: &str| {
            std::env::var(var).map_err(|_| {
                PipelineError::Config(format!(
                    "remote provider selected but {var} is not set"
                ))
            })
        };
        Ok(RemoteEndpoints {
            video_url: need("REVERIE_VIDEO_URL")?,
            verifier_url: need("REVERIE_VERIFIER_URL")?,
            seg_url: need("REVERIE_SEG_URL")?,
            depth_url: need("REVERIE_DEPTH_URL")?,
            hand_url: need("REVERIE_HAND_URL")?,
            vlm_url: need("REVERIE_VLM_URL")?,
            llm_url: std::env::var("REVERIE_LLM_URL").ok(),
        })
    }
}

pub struct RemoteProvider {
    pub endpoints: RemoteEndpoints,
    pub client: HttpClient,
    /// Poll interval and cap for asynchronous video jobs.
    pub poll_limit: usize,
}

impl RemoteProvider {
    pub fn new(endpoints: RemoteEndpoints) -> Self {
        RemoteProvider {
            endpoints,
            client: HttpClient::default(),
            poll_limit: 600,
        }
    }

    fn transport(e: HttpError) -> ImaginationError {
        ImaginationError::Transport {
            message: e.message,
            retries: e.retries,
        }
    }

    fn transport_p(e: HttpError) -> PerceptionError {
        PerceptionError::Transport(e.to_string())
    }

    fn frames_payload(sample: &VideoSample) -> Vec<String> {
        sample
            .frames
            .iter()
            .map(|f| base64_encode(&f.to_ppm()))
            .collect()
    }
}

impl VideoGenerator for RemoteProvider {
    fn rewrite_prompt(
        &self,
        description: &str,
        scene: &SceneConfig,
    ) -> Result<String, ImaginationError> {
        if description.trim().is_empty() {
            return Err(ImaginationError::Validation("empty task description"));
        }
        match &self.endpoints.llm_url {
            None => template_prompt(description, scene),
            Some(url) => {
                let objects: Vec<String> =
                    scene.objects.iter().map(|o| o.name.clone()).collect();
                let req = json!({
                    "description": description,
                    "actuator": scene.actuator().name,
                    "target": scene.target().name,
                    "objects": objects,
                });
                let reply = self
                    .client
                    .request_json(url, Some(&req))
                    .map_err(Self::transport)?;
                reply["prompt"]
                    .as_str()
                    .map(str::to_string)
                    .ok_or_else(|| ImaginationError::Protocol {
                        raw: reply.to_string(),
                    })
            }
        }
    }

    fn generate(
        &self,
        prompt: &str,
        initial: &FrameObservation,
        n: usize,
        seed: u64,
    ) -> Result<Vec<VideoSample>, ImaginationError> {
        let image = initial
            .color
            .as_ref()
            .map(|c| base64_encode(&c.to_ppm()))
            .unwrap_or_default();
        let req = json!({
            "prompt": prompt,
            "initial_frame": image,
            "num_samples": n,
            "seed": seed,
        });
        let reply = self
            .client
            .request_json(&self.endpoints.video_url, Some(&req))
            .map_err(Self::transport)?;
        let job_id = reply["job_id"]
            .as_str()
            .ok_or_else(|| ImaginationError::Protocol {
                raw: reply.to_string(),
            })?
            .to_string();
        // poll until every candidate is ready
        for _ in 0..self.poll_limit {
            let poll_url = format!(
                "{}/{}",
                self.endpoints.video_url.trim_end_matches('/'),
                job_id
            );
            let status = self
                .client
                .request_json(&poll_url, None)
                .map_err(Self::transport)?;
            match status["status"].as_str() {
                Some("pending") => {
                    std::thread::sleep(std::time::Duration::from_millis(250));
                }
                Some("done") => {
                    let samples_json = status["samples"].as_array().ok_or_else(|| {
                        ImaginationError::Protocol {
                            raw: status.to_string(),
                        }
                    })?;
                    let mut out = Vec::with_capacity(samples_json.len());
                    for (i, s) in samples_json.iter().enumerate() {
                        let frames_json =
                            s["frames"].as_array().ok_or_else(|| {
                                ImaginationError::Protocol {
                                    raw: s.to_string(),
                                }
                            })?;
                        let mut frames = Vec::with_capacity(frames_json.len());
                        for f in frames_json {
                            let b64 = f.as_str().ok_or_else(|| ImaginationError::Protocol {
                                raw: f.to_string(),
                            })?;
                            let bytes = base64_decode(b64).map_err(|e| {
                                ImaginationError::Protocol { raw: e }
                            })?;
                            frames.push(parse_ppm(&bytes).map_err(|e| {
                                ImaginationError::Protocol { raw: e }
                            })?);
                        }
                        let sample_seed =
                            s["seed"].as_u64().unwrap_or(seed.wrapping_add(i as u64));
                        out.push(VideoSample::new(
                            frames,
                            prompt.to_string(),
                            "remote".to_string(),
                            sample_seed,
                        )?);
                    }
                    return Ok(out);
                }
                other => {
                    return Err(ImaginationError::Protocol {
                        raw: format!("unexpected job status {other:?}"),
                    })
                }
            }
        }
        Err(ImaginationError::Transport {
            message: "video job never completed".into(),
            retries: self.poll_limit as u32,
        })
    }
}

impl VideoVerifier for RemoteProvider {
    fn verify(
        &self,
        sample: &VideoSample,
        description: &str,
    ) -> Result<VideoScore, ImaginationError> {
        let req = json!({
            "frames": Self::frames_payload(sample),
            "rubric_prompt": rubric_prompt(description),
            "description": description,
        });
        let reply = self
            .client
            .request_json(&self.endpoints.verifier_url, Some(&req))
            .map_err(Self::transport)?;
        let text = reply["reply"]
            .as_str()
            .or_else(|| reply.as_str())
            .ok_or_else(|| ImaginationError::Protocol {
                raw: reply.to_string(),
            })?;
        let total = parse_score_reply(text)?;
        // an explicit new-object flag (when the service reports one) forces
        // the minimum regardless of the parsed total
        if reply["new_object"].as_bool() == Some(true) {
            return VideoScore::new(0, 0, 0, true);
        }
        VideoScore::from_total(total)
    }
}

impl SegmentationProvider for RemoteProvider {
    fn track_object(
        &self,
        video: &VideoSample,
        object: ObjectId,
        seed_points: &[(u32, u32)],
        initial: &FrameObservation,
    ) -> Result<MaskTrack, PerceptionError> {
        let req = json!({
            "frames": Self::frames_payload(video),
            "object": object.0,
            "seed_points": seed_points.iter().map(|(x, y)| json!([x, y])).collect::<Vec<_>>(),
            "initial_mask": base64_encode(&initial.seg.encode()),
        });
        let reply = self
            .client
            .request_json(&self.endpoints.seg_url, Some(&req))
            .map_err(Self::transport_p)?;
        let masks_json = reply["masks"]
            .as_array()
            .ok_or_else(|| PerceptionError::Protocol(reply.to_string()))?;
        let mut frames = Vec::with_capacity(masks_json.len());
        for m in masks_json {
            let b64 = m
                .as_str()
                .ok_or_else(|| PerceptionError::Protocol(m.to_string()))?;
            let bytes = base64_decode(b64).map_err(PerceptionError::Protocol)?;
            frames.push(
                SegMask::decode(&bytes)
                    .map_err(|e| PerceptionError::Protocol(e.to_string()))?,
            );
        }
        Ok(MaskTrack { object, frames })
    }
}

impl DepthProvider for RemoteProvider {
    fn complete(
        &self,
        video: &VideoSample,
        masks: &[MaskTrack],
        initial: &FrameObservation,
    ) -> Result<Vec<DepthMap>, PerceptionError> {
        let mask_payload: Vec<serde_json::Value> = masks
            .iter()
            .map(|t| {
                json!({
                    "object": t.object.0,
                    "frames": t.frames.iter().map(|m| base64_encode(&m.encode())).collect::<Vec<_>>(),
                })
            })
            .collect();
        let req = json!({
            "frames": Self::frames_payload(video),
            "masks": mask_payload,
            "initial_depth": base64_encode(&initial.depth.encode()),
        });
        let reply = self
            .client
            .request_json(&self.endpoints.depth_url, Some(&req))
            .map_err(Self::transport_p)?;
        let depth_json = reply["depths"]
            .as_array()
            .ok_or_else(|| PerceptionError::Protocol(reply.to_string()))?;
        let mut out = Vec::with_capacity(depth_json.len());
        for d in depth_json {
            let b64 = d
                .as_str()
                .ok_or_else(|| PerceptionError::Protocol(d.to_string()))?;
            let bytes = base64_decode(b64).map_err(PerceptionError::Protocol)?;
            out.push(
                DepthMap::decode(&bytes)
                    .map_err(|e| PerceptionError::Protocol(e.to_string()))?,
            );
        }
        Ok(out)
    }
}

impl HandProvider for RemoteProvider {
    fn fingertips(
        &self,
        video: &VideoSample,
        frame: usize,
    ) -> Result<Vec<(u32, u32)>, PerceptionError> {
        let req = json!({
            "frame": base64_encode(&video.frames[frame].to_ppm()),
            "frame_index": frame,
        });
        let reply = self
            .client
            .request_json(&self.endpoints.hand_url, Some(&req))
            .map_err(Self::transport_p)?;
        let tips = reply["fingertips"]
            .as_array()
            .ok_or_else(|| PerceptionError::Protocol(reply.to_string()))?;
        tips.iter()
            .map(|t| {
                let x = t[0].as_u64();
                let y = t[1].as_u64();
                match (x, y) {
                    (Some(x), Some(y)) => Ok((x as u32, y as u32)),
                    _ => Err(PerceptionError::Protocol(t.to_string())),
                }
            })
            .collect()
    }
}

impl InteractionProvider for RemoteProvider {
    fn start_end(
        &self,
        video: &VideoSample,
        keyframes: &[usize],
    ) -> Result<(usize, usize), PerceptionError> {
        let frames: Vec<String> = keyframes
            .iter()
            .map(|k| base64_encode(&video.frames[*k].to_ppm()))
            .collect();
        let req = json!({
            "question": "start_end",
            "keyframes": keyframes,
            "frames": frames,
        });
        let reply = self
            .client
            .request_json(&self.endpoints.vlm_url, Some(&req))
            .map_err(Self::transport_p)?;
        match (reply["start"].as_u64(), reply["end"].as_u64()) {
            (Some(s), Some(e)) => Ok((s as usize, e as usize)),
            _ => Err(PerceptionError::Protocol(reply.to_string())),
        }
    }

    fn contacts_at(
        &self,
        video: &VideoSample,
        frame: usize,
        pairs: &[(ObjectId, ObjectId)],
    ) -> Result<Vec<bool>, PerceptionError> {
        let req = json!({
            "question": "contacts",
            "frame": base64_encode(&video.frames[frame].to_ppm()),
            "frame_index": frame,
            "pairs": pairs.iter().map(|(f, t)| json!([f.0, t.0])).collect::<Vec<_>>(),
        });
        let reply = self
            .client
            .request_json(&self.endpoints.vlm_url, Some(&req))
            .map_err(Self::transport_p)?;
        let answers = reply["contacts"]
            .as_array()
            .ok_or_else(|| PerceptionError::Protocol(reply.to_string()))?;
        if answers.len() != pairs.len() {
            return Err(PerceptionError::Protocol(format!(
                "expected {} answers, got {}",
                pairs.len(),
                answers.len()
            )));
        }
        answers
            .iter()
            .map(|a| {
                a.as_bool()
                    .ok_or_else(|| PerceptionError::Protocol(a.to_string()))
            })
            .collect()
    }
}
