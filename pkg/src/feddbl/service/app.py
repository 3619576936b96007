"""FastAPI application exposing the federation toolkit.

Clients (the CLI, or remote callers) upload banks and weights as base64
payloads; routes delegate to the core package and return JSON. Nothing is
kept between requests: the service is a stateless protocol engine.
"""

from __future__ import annotations

import binascii

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, Response

from .. import __version__
from ..bank_io import bank_from_bytes, bank_to_bytes
from ..exceptions import FeddblError
from ..federation import (
    client_update,
    ensure_normalized,
    overhead_ratio,
    personalize,
    run_feddbl,
    weight_bytes,
)
from ..harness import ExperimentConfig, run_client_scaling, run_sweep
from ..jsonfmt import dumps_fixed
from ..metrics import confusion, evaluate, micro_f1
from ..paillier import PublicKey, keygen
from ..secure import (
    FixedPointCodec,
    decrypt_aggregate,
    encrypt_update,
    encrypted_aggregate,
    update_to_bytes,
)
from ..solver import predict, weights_from_bytes, weights_to_bytes
from ..synthetic import gen_synthetic_federation
from . import schemas as s


def _decode_banks(payloads: list[str]):
    return [bank_from_bytes(s.b64decode(p)) for p in payloads]


def _fixed_json(obj) -> Response:
    return Response(content=dumps_fixed(obj), media_type="application/json")


def _synthetic(req: s.SyntheticRequest):
    return gen_synthetic_federation(
        seed=req.seed,
        num_clients=req.clients,
        dim=req.dim,
        num_classes=req.classes,
        sizes=list(req.sizes),
        separation=req.separation,
        test_size=req.test_size,
    )


def _resolve_banks(req: s.SweepRequest):
    if (req.banks_b64 is None) == (req.synthetic is None):
        raise FeddblError("provide exactly one of banks_b64 or synthetic")
    if req.banks_b64 is not None:
        return _decode_banks(req.banks_b64)
    return _synthetic(req.synthetic)[0]


def create_app() -> FastAPI:
    app = FastAPI(
        title="feddbl",
        version=__version__,
        description="One-round federated broad-learning service",
    )

    @app.exception_handler(FeddblError)
    async def domain_error(_: Request, exc: FeddblError) -> JSONResponse:
        return JSONResponse(
            status_code=400, content={"error": type(exc).__name__, "detail": str(exc)}
        )

    @app.exception_handler(binascii.Error)
    async def base64_error(_: Request, exc: binascii.Error) -> JSONResponse:
        return JSONResponse(
            status_code=400, content={"error": "Base64Error", "detail": str(exc)}
        )

    @app.get("/", response_model=s.StatusResponse)
    def status() -> s.StatusResponse:
        return s.StatusResponse(status="ready", version=__version__)

    @app.post("/v1/banks/synthetic", response_model=s.SyntheticResponse)
    def synthetic(req: s.SyntheticRequest) -> s.SyntheticResponse:
        banks, test_bank = _synthetic(req)
        return s.SyntheticResponse(
            banks=[
                s.BankPayload(client_id=b.client_id, fbnk_b64=s.b64encode(bank_to_bytes(b)))
                for b in banks
            ],
            test_bank=s.b64encode(bank_to_bytes(test_bank)),
        )

    @app.post("/v1/solve", response_model=s.SolveResponse)
    def solve(req: s.SolveRequest) -> s.SolveResponse:
        bank = bank_from_bytes(s.b64decode(req.bank_b64))
        update = client_update(bank, req.lam, req.normalization_mode)
        return s.SolveResponse(
            client_id=update.client_id,
            num_samples=update.num_samples,
            upload_bytes=update.upload_bytes,
            blwt_b64=s.b64encode(weights_to_bytes(update.weights)),
            warning=update.weights.warning,
        )

    @app.post("/v1/federate", response_model=s.FederateResponse)
    def federate(req: s.FederateRequest) -> s.FederateResponse:
        banks = _decode_banks(req.banks_b64)
        model, updates, report = run_feddbl(
            banks,
            req.lam,
            req.normalization_mode,
            skip_failed=req.skip_failed,
            comparison_baseline_bytes=(
                req.baseline_bytes * (req.baseline_rounds or 1) if req.baseline_bytes else None
            ),
        )
        global_weights = model.weights
        encryption = None
        if req.encrypted:
            keys = keygen(req.key_bits, seed=req.key_seed)
            codec = FixedPointCodec.for_max_samples(model.total_samples, frac_bits=req.frac_bits)
            encrypted = [
                encrypt_update(u.weights, keys.public, codec, u.client_id, u.num_samples)
                for u in updates
            ]
            cts, total = encrypted_aggregate(encrypted, keys.public)
            global_weights = decrypt_aggregate(
                keys.secret, cts, encrypted[0].layout, total, encrypted[0].weights_meta
            )
            payload = max(len(update_to_bytes(e)) for e in encrypted)
            encryption = s.EncryptionInfo(
                key_bits=req.key_bits,
                key_fingerprint=keys.public.fingerprint,
                ciphertext_blocks=encrypted[0].layout.num_blocks,
                encrypted_upload_bytes_per_client=payload,
            )

        personalized = None
        if req.personalize_mix is not None:
            personalized = [
                s.PersonalizedWeights(
                    client_id=u.client_id,
                    blwt_b64=s.b64encode(
                        weights_to_bytes(
                            personalize(u.weights, global_weights, req.personalize_mix)
                        )
                    ),
                )
                for u in updates
            ]
        return s.FederateResponse(
            global_blwt_b64=s.b64encode(weights_to_bytes(global_weights)),
            total_samples=model.total_samples,
            rounds=model.rounds,
            clients=[
                s.ClientUploadInfo(
                    client_id=u.client_id,
                    num_samples=u.num_samples,
                    upload_bytes=u.upload_bytes,
                    blwt_b64=s.b64encode(weights_to_bytes(u.weights)),
                )
                for u in updates
            ],
            overhead=report.to_dict(),
            personalized=personalized,
            encryption=encryption,
        )

    @app.post("/v1/eval")
    def eval_weights(req: s.EvalRequest) -> Response:
        weights = weights_from_bytes(s.b64decode(req.weights_b64))
        bank = bank_from_bytes(s.b64decode(req.bank_b64))
        bank = ensure_normalized(bank, weights.normalization_mode)
        pred = predict(bank.features, weights)
        out = {"schema_version": 1, "kind": "eval-report"}
        out.update(evaluate(bank.labels, pred.labels, bank.num_classes))
        if req.include_micro:
            out["micro_f1"] = micro_f1(confusion(bank.labels, pred.labels, bank.num_classes))
        return _fixed_json(out)

    @app.post("/v1/overhead")
    def overhead(req: s.OverheadRequest) -> Response:
        payload = weight_bytes(req.dim, req.classes, req.elem_bytes, req.header_bytes)
        out = {
            "schema_version": 1,
            "kind": "overhead-report",
            "dim": req.dim,
            "classes": req.classes,
            "elem_bytes": req.elem_bytes,
            "header_bytes": req.header_bytes,
            "payload_bytes": payload,
            "payload_kb": payload / 1000.0,
            "rounds": 1,
        }
        if req.baseline_bytes is not None:
            rounds = req.baseline_rounds or 1
            out["baseline_bytes"] = req.baseline_bytes
            out["baseline_rounds"] = rounds
            out["baseline_total_bytes"] = req.baseline_bytes * rounds
            out["reduction_ratio"] = overhead_ratio(req.baseline_bytes, rounds, payload)
        return _fixed_json(out)

    @app.post("/v1/sweep")
    def sweep(req: s.SweepRequest) -> Response:
        banks = _resolve_banks(req)
        cfg = ExperimentConfig.from_dict(req.config)
        return _fixed_json(run_sweep(banks, cfg))

    @app.post("/v1/scaling")
    def scaling(req: s.ScalingRequest) -> Response:
        banks = _resolve_banks(req)
        cfg = ExperimentConfig.from_dict(req.config)
        return _fixed_json(run_client_scaling(banks, cfg, factors=tuple(req.factors)))

    @app.post("/v1/keygen", response_model=s.KeygenResponse)
    def keygen_route(req: s.KeygenRequest) -> s.KeygenResponse:
        keys = keygen(req.bits, seed=req.seed)
        return s.KeygenResponse(
            public=s.PublicKeyModel(
                n=str(keys.public.n),
                key_bits=keys.public.key_bits,
                fingerprint=keys.public.fingerprint,
            ),
            secret=s.SecretKeyModel(lam=str(keys.secret.lam), mu=str(keys.secret.mu)),
        )

    @app.post("/v1/encrypt-weights", response_model=s.EncryptWeightsResponse)
    def encrypt_weights(req: s.EncryptWeightsRequest) -> s.EncryptWeightsResponse:
        weights = weights_from_bytes(s.b64decode(req.weights_b64))
        pk = PublicKey(n=int(req.public_key.n), key_bits=req.public_key.key_bits)
        codec = FixedPointCodec.for_max_samples(
            req.max_total_samples, frac_bits=req.frac_bits, int_bits=req.int_bits
        )
        update = encrypt_update(weights, pk, codec, req.client_id, req.num_samples)
        raw = update_to_bytes(update)
        return s.EncryptWeightsResponse(
            fdbe_b64=s.b64encode(raw),
            ciphertext_blocks=len(update.ciphertexts),
            payload_bytes=len(raw),
        )

    return app


app = create_app()
