"""Request and response bodies for the prediction service."""

from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field


class Health(BaseModel):
    status: str = "ok"
    version: str


class ModelInfo(BaseModel):
    input_shape: List[int]
    num_classes: int
    n_parameters: int
    defense: Dict[str, object]
    default_budget: int


class SessionCreate(BaseModel):
    model_config = ConfigDict(extra="forbid")

    budget: Optional[int] = Field(None, ge=1)


class SessionInfo(BaseModel):
    session_id: str
    budget: int
    used: int
    remaining: int


class PredictRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    session_id: str
    # a batch of inputs, each nested to the model's input shape
    inputs: List[object] = Field(..., min_length=1)


class PredictResponse(BaseModel):
    probabilities: List[List[float]]
    labels: List[int]
    used: int
    remaining: int
