"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/model error.
"""

from __future__ import annotations

import sys

import click


@click.command()
@click.option("--volume", "volume_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--resize", type=int, default=640, show_default=True)
@click.option("--dtype", type=click.Choice(["f32", "f16"]), default="f32",
              show_default=True)
@click.option("--batch", type=int, default=16, show_default=True)
@click.option("--checkpoint", type=click.Path(), default=None,
              help="Pretrained weights; omitted = seeded deterministic init.")
@click.option("--device", default="cpu", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def extract(volume_path, out_dir, resize, dtype, batch, checkpoint, device,
            seed):
    """Export per-axis FSTK feature stacks for a volume."""
    from .extract import ExtractorConfig, extract_all

    cfg = ExtractorConfig(resize_target=resize, dtype=dtype,
                          batch_size=batch, checkpoint=checkpoint,
                          device=device, seed=seed)
    written = extract_all(volume_path, out_dir, cfg)
    for p in written:
        click.echo(f"wrote {p}")


def main(argv=None) -> int:
    from tfseg.errors import DataError

    from .extract import DinoxError, InvalidConfig

    try:
        extract.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.ClickException as e:
        e.show(file=sys.stderr)
        return 1
    except InvalidConfig as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (DinoxError, DataError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
