"""Request/response models for the HTTP API.

Binary artifacts (FBNK banks, BLWT weights, FDBE encrypted updates) travel
as base64 strings so every route works over a real network boundary, not
just against server-local paths.
"""

from __future__ import annotations

import base64

from pydantic import BaseModel, ConfigDict, Field, field_validator


class ApiModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


def b64encode(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def b64decode(payload: str) -> bytes:
    return base64.b64decode(payload.encode("ascii"), validate=True)


class StatusResponse(ApiModel):
    status: str
    version: str


class SyntheticRequest(ApiModel):
    seed: int = 0
    clients: int = Field(ge=1)
    dim: int = Field(ge=1)
    classes: int = Field(ge=2)
    sizes: list[int]
    separation: float = Field(ge=0.0)
    test_size: int | None = None


class BankPayload(ApiModel):
    client_id: str
    fbnk_b64: str


class SyntheticResponse(ApiModel):
    banks: list[BankPayload]
    test_bank: str


class SolveRequest(ApiModel):
    bank_b64: str
    lam: float = Field(default=1e-6, gt=0, alias="lambda")
    normalization_mode: str = "l2"

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class SolveResponse(ApiModel):
    client_id: str
    num_samples: int
    upload_bytes: int
    blwt_b64: str
    warning: str | None = None


class FederateRequest(ApiModel):
    banks_b64: list[str]
    lam: float = Field(default=1e-6, gt=0, alias="lambda")
    normalization_mode: str = "l2"
    personalize_mix: float | None = Field(default=None, ge=0.0, le=1.0)
    skip_failed: bool = False
    encrypted: bool = False
    key_bits: int = Field(default=2048, ge=64)
    key_seed: int | None = None
    frac_bits: int = Field(default=32, ge=2)
    baseline_bytes: int | None = Field(default=None, ge=1)
    baseline_rounds: int | None = Field(default=None, ge=1)

    @field_validator("banks_b64")
    @classmethod
    def non_empty(cls, v):
        if not v:
            raise ValueError("need at least one bank")
        return v


class ClientUploadInfo(ApiModel):
    client_id: str
    num_samples: int
    upload_bytes: int
    blwt_b64: str


class PersonalizedWeights(ApiModel):
    client_id: str
    blwt_b64: str


class EncryptionInfo(ApiModel):
    key_bits: int
    key_fingerprint: str
    ciphertext_blocks: int
    encrypted_upload_bytes_per_client: int


class FederateResponse(ApiModel):
    global_blwt_b64: str
    total_samples: int
    rounds: int
    clients: list[ClientUploadInfo]
    overhead: dict
    personalized: list[PersonalizedWeights] | None = None
    encryption: EncryptionInfo | None = None


class EvalRequest(ApiModel):
    weights_b64: str
    bank_b64: str
    include_micro: bool = False


class OverheadRequest(ApiModel):
    dim: int = Field(ge=1)
    classes: int = Field(ge=1)
    elem_bytes: int = Field(default=8, ge=1)
    header_bytes: int = Field(default=0, ge=0)
    baseline_bytes: int | None = Field(default=None, ge=1)
    baseline_rounds: int | None = Field(default=None, ge=1)


class SweepRequest(ApiModel):
    banks_b64: list[str] | None = None
    synthetic: SyntheticRequest | None = None
    config: dict = Field(default_factory=dict)


class ScalingRequest(SweepRequest):
    factors: list[int] = Field(default=[1, 5, 10, 15, 20])


class KeygenRequest(ApiModel):
    bits: int = Field(default=2048, ge=64)
    seed: int | None = None


class PublicKeyModel(ApiModel):
    n: str  # decimal; far beyond JSON number precision
    key_bits: int
    fingerprint: str


class SecretKeyModel(ApiModel):
    lam: str
    mu: str


class KeygenResponse(ApiModel):
    public: PublicKeyModel
    secret: SecretKeyModel


class EncryptWeightsRequest(ApiModel):
    weights_b64: str
    public_key: PublicKeyModel
    client_id: str
    num_samples: int = Field(ge=1)
    frac_bits: int = Field(default=32, ge=2)
    int_bits: int = Field(default=16, ge=1)
    max_total_samples: int = Field(ge=1)


class EncryptWeightsResponse(ApiModel):
    fdbe_b64: str
    ciphertext_blocks: int
    payload_bytes: int
