"""`feddbl` command-line interface.

Every subcommand is a thin client of the HTTP service: it marshals local
files into request payloads, posts them to a route, and writes the results
back to disk. By default the service runs in-process; pass --server to
talk to a remote instance instead.
"""

from __future__ import annotations

import asyncio
import base64
import json
import sys
from pathlib import Path

import click
import httpx

from . import __version__
from .jsonfmt import dumps_fixed


def _b64_file(path: str) -> str:
    return base64.b64encode(Path(path).read_bytes()).decode("ascii")


def _write_b64(path: Path, payload: str) -> None:
    path.write_bytes(base64.b64decode(payload))


class ServiceClient:
    """POSTs to a remote server when given a URL, otherwise to the
    in-process ASGI app."""

    def __init__(self, server: str | None):
        self.server = server

    def post(self, route: str, payload: dict) -> tuple[int, bytes]:
        async def _go() -> tuple[int, bytes]:
            if self.server is None:
                from .service.app import app

                transport = httpx.ASGITransport(app=app)
                async with httpx.AsyncClient(
                    transport=transport, base_url="http://feddbl.local", timeout=None
                ) as client:
                    resp = await client.post(route, json=payload)
            else:
                async with httpx.AsyncClient(base_url=self.server, timeout=None) as client:
                    resp = await client.post(route, json=payload)
            return resp.status_code, resp.content

        return asyncio.run(_go())

    def post_json(self, route: str, payload: dict) -> dict:
        status, body = self.post(route, payload)
        if status != 200:
            try:
                detail = json.loads(body)
            except json.JSONDecodeError:
                detail = body.decode(errors="replace")
            raise click.ClickException(f"{route} failed ({status}): {detail}")
        return json.loads(body)

    def post_raw(self, route: str, payload: dict) -> bytes:
        status, body = self.post(route, payload)
        if status != 200:
            raise click.ClickException(f"{route} failed ({status}): {body.decode(errors='replace')}")
        return body


def _emit(text: str, output: str | None) -> None:
    if output:
        text = text if text.endswith("\n") else text + "\n"
        Path(output).write_text(text)
    else:
        click.echo(text)


@click.group()
@click.option("--server", default=None, metavar="URL", help="Remote service URL (default: in-process).")
@click.version_option(__version__)
@click.pass_context
def main(ctx, server):
    ctx.obj = ServiceClient(server)


@main.command()
@click.option("--seed", default=0, show_default=True)
@click.option("--clients", "-k", default=3, show_default=True)
@click.option("--dim", "-d", default=16, show_default=True)
@click.option("--classes", "-c", default=4, show_default=True)
@click.option("--sizes", default=None, help="Comma-separated per-client sample counts.")
@click.option("--separation", default=6.0, show_default=True)
@click.option("--test-size", default=None, type=int)
@click.option("--out-dir", default=".", show_default=True)
@click.pass_obj
def gen(client, seed, clients, dim, classes, sizes, separation, test_size, out_dir):
    """Generate a synthetic federation as FBNK files."""
    size_list = [int(s) for s in sizes.split(",")] if sizes else [100] * clients
    resp = client.post_json(
        "/v1/banks/synthetic",
        {
            "seed": seed,
            "clients": clients,
            "dim": dim,
            "classes": classes,
            "sizes": size_list,
            "separation": separation,
            "test_size": test_size,
        },
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for entry in resp["banks"]:
        path = out / f"{entry['client_id']}.fbnk"
        _write_b64(path, entry["fbnk_b64"])
        click.echo(f"wrote {path}")
    test_path = out / "test.fbnk"
    _write_b64(test_path, resp["test_bank"])
    click.echo(f"wrote {test_path}")


@main.command("solve-local")
@click.argument("bank", type=click.Path(exists=True, dir_okay=False))
@click.option("--lambda", "lam", default=1e-6, show_default=True)
@click.option("--norm", default="l2", show_default=True)
@click.option("--output", "-o", default=None, help="BLWT output path (default: <bank>.blwt).")
@click.pass_obj
def solve_local(client, bank, lam, norm, output):
    """Solve one client's classifier and write its BLWT weight file."""
    resp = client.post_json(
        "/v1/solve", {"bank_b64": _b64_file(bank), "lambda": lam, "normalization_mode": norm}
    )
    out = Path(output) if output else Path(bank).with_suffix(".blwt")
    _write_b64(out, resp["blwt_b64"])
    if resp.get("warning"):
        click.echo(f"warning: {resp['warning']}", err=True)
    click.echo(
        f"wrote {out} ({resp['upload_bytes']} bytes, client {resp['client_id']}, "
        f"n={resp['num_samples']})"
    )


@main.command()
@click.argument("banks", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--lambda", "lam", default=1e-6, show_default=True)
@click.option("--norm", default="l2", show_default=True)
@click.option("--personalize", "mix", default=None, type=float, help="Personalization mix in [0,1].")
@click.option("--encrypted", is_flag=True, help="Aggregate through the encrypted path.")
@click.option("--key-bits", default=2048, show_default=True)
@click.option("--key-seed", default=None, type=int, help="Deterministic (test-only) key seed.")
@click.option("--baseline-bytes", default=None, type=int)
@click.option("--baseline-rounds", default=None, type=int)
@click.option("--out-dir", default=".", show_default=True)
@click.pass_obj
def federate(client, banks, lam, norm, mix, encrypted, key_bits, key_seed, baseline_bytes, baseline_rounds, out_dir):
    """Run the one-round protocol over bank files; write global and
    per-client BLWT files plus a JSON overhead report."""
    resp = client.post_json(
        "/v1/federate",
        {
            "banks_b64": [_b64_file(b) for b in banks],
            "lambda": lam,
            "normalization_mode": norm,
            "personalize_mix": mix,
            "encrypted": encrypted,
            "key_bits": key_bits,
            "key_seed": key_seed,
            "baseline_bytes": baseline_bytes,
            "baseline_rounds": baseline_rounds,
        },
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_b64(out / "global.blwt", resp["global_blwt_b64"])
    click.echo(f"wrote {out / 'global.blwt'}")
    for entry in resp["clients"]:
        _write_b64(out / f"{entry['client_id']}.blwt", entry["blwt_b64"])
    for entry in resp.get("personalized") or []:
        _write_b64(out / f"{entry['client_id']}.personalized.blwt", entry["blwt_b64"])
    report = {
        "schema_version": 1,
        "kind": "federate-report",
        "rounds": resp["rounds"],
        "total_samples": resp["total_samples"],
        "clients": [
            {k: e[k] for k in ("client_id", "num_samples", "upload_bytes")}
            for e in resp["clients"]
        ],
        "overhead": resp["overhead"],
    }
    if resp.get("encryption"):
        report["encryption"] = resp["encryption"]
    report_path = out / "overhead.json"
    report_path.write_text(dumps_fixed(report) + "\n")
    click.echo(f"wrote {report_path}")


@main.command("eval")
@click.argument("weights", type=click.Path(exists=True, dir_okay=False))
@click.argument("test_bank", type=click.Path(exists=True, dir_okay=False))
@click.option("--micro", is_flag=True, help="Also report micro-averaged F1.")
@click.option("--output", "-o", default=None, help="Write the JSON report here instead of stdout.")
@click.pass_obj
def eval_cmd(client, weights, test_bank, micro, output):
    """Score a BLWT weight file against a test bank; emits JSON metrics."""
    body = client.post_raw(
        "/v1/eval",
        {
            "weights_b64": _b64_file(weights),
            "bank_b64": _b64_file(test_bank),
            "include_micro": micro,
        },
    )
    _emit(body.decode(), output)


@main.command()
@click.option("--d", "dim", required=True, type=int, help="Feature dimension.")
@click.option("--classes", required=True, type=int)
@click.option("--elem-bytes", default=8, show_default=True)
@click.option("--header-bytes", default=0, show_default=True)
@click.option("--baseline-bytes", default=None, type=int)
@click.option("--baseline-rounds", default=None, type=int)
@click.option("--output", "-o", default=None)
@click.pass_obj
def overhead(client, dim, classes, elem_bytes, header_bytes, baseline_bytes, baseline_rounds, output):
    """Byte accounting for a weight upload, optionally vs a deep baseline."""
    body = client.post_raw(
        "/v1/overhead",
        {
            "dim": dim,
            "classes": classes,
            "elem_bytes": elem_bytes,
            "header_bytes": header_bytes,
            "baseline_bytes": baseline_bytes,
            "baseline_rounds": baseline_rounds,
        },
    )
    _emit(body.decode(), output)


def _sweep_payload(banks, config, synthetic):
    cfg = json.loads(Path(config).read_text()) if config else {}
    payload = {"config": cfg}
    if synthetic:
        payload["synthetic"] = json.loads(Path(synthetic).read_text())
    elif banks:
        payload["banks_b64"] = [_b64_file(b) for b in banks]
    else:
        raise click.UsageError("give bank files or --synthetic spec")
    return payload


@main.command()
@click.argument("banks", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", default=None, type=click.Path(exists=True, dir_okay=False), help="ExperimentConfig JSON file.")
@click.option("--synthetic", default=None, type=click.Path(exists=True, dir_okay=False), help="Synthetic federation spec JSON file.")
@click.option("--proportions", default=None, help="Comma-separated overrides, e.g. 0.01,0.1,1.0.")
@click.option("--folds", default=None, type=int)
@click.option("--personalize", "mix", default=None, type=float)
@click.option("--encrypted", is_flag=True)
@click.option("--output", "-o", default=None)
@click.pass_obj
def sweep(client, banks, config, synthetic, proportions, folds, mix, encrypted, output):
    """Data-efficiency protocol: per-fold splits, proportion subsets,
    global/local/personalized scoring. Exit code 2 if some folds failed."""
    payload = _sweep_payload(banks, config, synthetic)
    overrides = payload["config"]
    if proportions:
        overrides["proportions"] = [float(p) for p in proportions.split(",")]
    if folds is not None:
        overrides["folds"] = folds
    if mix is not None:
        overrides["personalize_mix"] = mix
    if encrypted:
        overrides["encrypted"] = True
    body = client.post_raw("/v1/sweep", payload)
    _emit(body.decode(), output)
    report = json.loads(body)
    if any(f["status"] != "ok" for f in report["folds"]):
        sys.exit(2)


@main.command()
@click.argument("banks", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--config", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--synthetic", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--factors", default="1,5,10,15,20", show_default=True)
@click.option("--proportions", default=None, help="Comma-separated; defaults to 0.1,0.5,1.0 (child banks are too small for the 1% sweep default).")
@click.option("--folds", default=None, type=int)
@click.option("--output", "-o", default=None)
@click.pass_obj
def scale(client, banks, config, synthetic, factors, proportions, folds, output):
    """Client-scaling experiment: repartition each bank into child clients."""
    payload = _sweep_payload(banks, config, synthetic)
    payload["factors"] = [int(f) for f in factors.split(",")]
    overrides = payload["config"]
    if proportions:
        overrides["proportions"] = [float(p) for p in proportions.split(",")]
    elif "proportions" not in overrides:
        overrides["proportions"] = [0.1, 0.5, 1.0]
    if folds is not None:
        overrides["folds"] = folds
    body = client.post_raw("/v1/scaling", payload)
    _emit(body.decode(), output)
    report = json.loads(body)
    if any(f["status"] != "ok" for f in report["folds"]):
        sys.exit(2)


@main.command()
@click.option("--bits", default=2048, show_default=True)
@click.option("--seed", default=None, type=int, help="Deterministic (test-only) key seed.")
@click.option("--out-prefix", default="feddbl-key", show_default=True)
@click.pass_obj
def keygen(client, bits, seed, out_prefix):
    """Generate an aggregation key pair as two JSON files."""
    resp = client.post_json("/v1/keygen", {"bits": bits, "seed": seed})
    pub = Path(f"{out_prefix}.pub.json")
    sec = Path(f"{out_prefix}.sec.json")
    pub.write_text(json.dumps(resp["public"], indent=2) + "\n")
    sec.write_text(json.dumps({**resp["public"], **resp["secret"]}, indent=2) + "\n")
    click.echo(f"wrote {pub} and {sec} (keep the .sec file private)")


@main.command("encrypt-weights")
@click.argument("weights", type=click.Path(exists=True, dir_okay=False))
@click.option("--public-key", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--client-id", required=True)
@click.option("--samples", "-n", required=True, type=int, help="This client's sample count.")
@click.option("--max-total-samples", required=True, type=int, help="Guard-bit sizing: upper bound on the federation's total samples.")
@click.option("--frac-bits", default=32, show_default=True)
@click.option("--output", "-o", default=None, help="FDBE output path (default: <weights>.fdbe).")
@click.pass_obj
def encrypt_weights(client, weights, public_key, client_id, samples, max_total_samples, frac_bits, output):
    """Encrypt a BLWT file into an FDBE upload under a public key."""
    pub = json.loads(Path(public_key).read_text())
    resp = client.post_json(
        "/v1/encrypt-weights",
        {
            "weights_b64": _b64_file(weights),
            "public_key": {k: pub[k] for k in ("n", "key_bits", "fingerprint")},
            "client_id": client_id,
            "num_samples": samples,
            "max_total_samples": max_total_samples,
            "frac_bits": frac_bits,
        },
    )
    out = Path(output) if output else Path(weights).with_suffix(".fdbe")
    _write_b64(out, resp["fdbe_b64"])
    click.echo(
        f"wrote {out} ({resp['payload_bytes']} bytes, {resp['ciphertext_blocks']} blocks)"
    )


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    uvicorn.run("feddbl.service.app:app", host=host, port=port)


if __name__ == "__main__":
    main()
