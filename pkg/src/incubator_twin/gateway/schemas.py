"""Request/response models for the gateway API."""

from __future__ import annotations

from typing import Literal, Optional, Union

from pydantic import BaseModel, Field, model_validator


class DisturbancePayload(BaseModel):
    kind: Literal["lid_open", "cold_object", "none"]
    magnitude: float = 1.0
    duration: float = 60.0


class CalibratePayload(BaseModel):
    model: Literal["a", "b"] = "b"
    from_ts: float
    to_ts: float
    theta0: Optional[Union[dict, list]] = None
    id: Optional[str] = None

    @model_validator(mode="after")
    def _window(self):
        if self.to_ts < self.from_ts:
            raise ValueError(f"reversed window: {self.from_ts} > {self.to_ts}")
        return self


class ControllerConfigPayload(BaseModel):
    ll: float
    ul: float
    h: float = Field(gt=0)
    c: float = Field(ge=0)

    @model_validator(mode="after")
    def _band(self):
        if not self.ll < self.ul:
            raise ValueError(f"need ll < ul, got ll={self.ll} ul={self.ul}")
        return self


class OrchestratorModePayload(BaseModel):
    set_mode: Optional[Literal["propose", "auto"]] = None
    confirm: Optional[bool] = None

    @model_validator(mode="after")
    def _one_of(self):
        if self.set_mode is None and not self.confirm:
            raise ValueError("need set_mode or confirm")
        return self


class WhatifPayload(BaseModel):
    scenario: Optional[dict] = None
    grid: Optional[dict] = None
    id: Optional[str] = None

    @model_validator(mode="after")
    def _one_of(self):
        if (self.scenario is None) == (self.grid is None):
            raise ValueError("need exactly one of 'scenario' or 'grid'")
        return self


COMMAND_TYPES = ("disturbance", "calibrate", "whatif", "controller_config",
                 "orchestrator_mode")


class CommandAccepted(BaseModel):
    status: Literal["accepted"] = "accepted"
    topic: str


class HistoryResponse(BaseModel):
    topic: str
    count: int
    messages: list[dict]
