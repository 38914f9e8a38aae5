"""Reference trackers and prompt-head training."""

from .detect import Detection, NoiseConfig, detect_oracle
from .embed import PromptEmbedding, embed_prompt, embed_token, tag_feature, tokenize
from .greedy import greedy_track_scene, run_greedy_baseline
from .pairs import (PairSubmission, evaluate_pairs, gt_frames, gt_submission, referred_box_count,
                    run_query_tracker, submissions_from_outputs)
from .query import FrameOutput, Query, TrackerConfig, TrackerState, TrackState, decode, track_scene, track_step
from .reasoning import (PassAllHead, PastParams, PromptHead, future_reason, past_reason, prompt_reason,
                        prompt_reason_many)
from .train import (DegenerateTrainingWarning, TrainConfig, TrainHistory, TrainingPair, batch_loss,
                    build_training_pairs, head_separation, label_queries, load_head, save_head,
                    train_prompt_head)
