"""Request/response models for the HTTP service."""
from __future__ import annotations

from pydantic import BaseModel, Field


class IngestRequest(BaseModel):
    manifest_path: str
    catalog_dir: str
    behavior: str
    dataset: str = "default"


class IngestResponse(BaseModel):
    bag_id: str
    behavior: str
    behavior_created: bool
    frames: int
    channels: list[str]
    rate_hz: float


class SegmentRequest(BaseModel):
    catalog_dir: str
    bag_id: str
    behavior: str
    config_path: str | None = None
    seed: int | None = None


class SegmentResponse(BaseModel):
    bag_id: str
    behavior: str
    used_states: int
    frame_counts: dict[str, int]
    segmentation_csv: str
    log_joint: float
    samples_kept: int
    instances: int


class UnifyRequest(BaseModel):
    catalog_dir: str
    behavior: str
    config_path: str | None = None


class UnifyResponse(BaseModel):
    behavior: str
    bags: int
    primitives_before: int
    primitives_after: int
    scenarios: int
    scenario_instances: int


class QueryRequest(BaseModel):
    catalog_dir: str
    scenario: str
    channels: list[str] = Field(min_length=1)
    out_dir: str | None = None


class WindowInfo(BaseModel):
    bag_id: str
    scenario_id: int
    start_frame: int
    end_frame: int
    file: str | None


class QueryResponse(BaseModel):
    count: int
    windows: list[WindowInfo]


class SynthRequest(BaseModel):
    states: int = 5
    dims: int = 4
    frames: int = 1180
    seed: int = 0
    out_dir: str


class SynthResponse(BaseModel):
    bag_id: str
    manifest: str
    truth: str
    files: list[str]
    frames: int
    rate_hz: float
    regimes: int


class BehaviorRequest(BaseModel):
    catalog_dir: str
    name: str
    channels: list[str] = Field(min_length=1)
    target_rate_hz: float


class BehaviorResponse(BaseModel):
    behavior_id: int
    name: str
    channels: list[str]
    target_rate_hz: float


class ErrorBody(BaseModel):
    error: str
    message: str
