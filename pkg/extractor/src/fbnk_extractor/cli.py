from __future__ import annotations

import json
import logging
from pathlib import Path

import click

from . import __version__
from .config import ExtractorConfig
from .extract import extract


@click.command()
@click.option("--input-root", "-i", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--output", "-o", "output_path", type=click.Path(dir_okay=False), default=None)
@click.option("--client-id", default=None)
@click.option("--backbone", default="resnet18", show_default=True)
@click.option("--weights", type=click.Choice(["pretrained", "random"]), default="pretrained", show_default=True)
@click.option("--seed", default=0, show_default=True, help="Init seed for --weights random.")
@click.option("--stages", default="1,2,3,4", show_default=True)
@click.option("--stage-dims", default=None, help="Comma-separated declaration, checked against the backbone.")
@click.option("--batch-size", default=16, show_default=True)
@click.option("--device", default="cpu", show_default=True)
@click.option("--image-size", default=224, show_default=True)
@click.option("--on-error", type=click.Choice(["abort", "skip"]), default="abort", show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON file with the same keys; explicit flags override it.")
@click.version_option(__version__)
@click.pass_context
def main(ctx, config_path, **flags):
    """Extract pooled multi-stage backbone features from a class-per-subfolder
    image tree into an FBNK feature-bank file."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    file_cfg = json.loads(Path(config_path).read_text()) if config_path else {}

    merged = {}
    for name, value in flags.items():
        explicit = ctx.get_parameter_source(name) == click.core.ParameterSource.COMMANDLINE
        merged[name] = value if explicit or name not in file_cfg else file_cfg[name]

    missing = [k for k in ("input_root", "output_path", "client_id") if not merged[k]]
    if missing:
        raise click.UsageError(f"missing required settings: {', '.join(missing)}")
    if isinstance(merged["stages"], str):
        merged["stages"] = tuple(int(s) for s in merged["stages"].split(","))
    else:
        merged["stages"] = tuple(int(s) for s in merged["stages"])
    if merged["stage_dims"] is not None:
        dims = merged["stage_dims"]
        merged["stage_dims"] = tuple(
            int(s) for s in (dims.split(",") if isinstance(dims, str) else dims)
        )
    path = extract(ExtractorConfig(**merged))
    click.echo(f"wrote {path}")


if __name__ == "__main__":
    main()
