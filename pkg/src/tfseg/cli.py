"""Batch command-line interface binding the pipeline end to end.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
"""

from __future__ import annotations

import json
import os
import sys


def _cap_threads(n: int | None) -> None:
    if n is None:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(n)


import click


@click.group()
@click.option("--threads", type=int, default=None,
              help="Cap internal parallelism (BLAS/OpenMP threads).")
def cli(threads):
    """Annotation-driven volume segmentation toolkit."""
    _cap_threads(threads)


@cli.command()
@click.argument("shape",
                type=click.Choice(["sphere", "torus", "phantom", "edge"]))
@click.option("--dim", type=int, default=64, show_default=True)
@click.option("--radius", type=float, default=20.0, show_default=True,
              help="Sphere radius.")
@click.option("--major", type=float, default=20.0, show_default=True,
              help="Torus major radius.")
@click.option("--minor", type=float, default=8.0, show_default=True,
              help="Torus minor radius.")
@click.option("--inside", type=float, default=0.8, show_default=True)
@click.option("--outside", type=float, default=0.1, show_default=True)
@click.option("--smooth", type=float, default=0.0, show_default=True)
@click.option("--spec", type=click.Path(exists=True), default=None,
              help="Phantom shape-list JSON.")
@click.option("--axis", type=int, default=0, show_default=True)
@click.option("--position", type=float, default=None)
@click.option("--noise", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(),
              help="Output basename (writes <out>.json/.raw and labels).")
def synth(shape, dim, radius, major, minor, inside, outside, smooth, spec,
          axis, position, noise, seed, out):
    """Generate a synthetic volume plus ground-truth labels."""
    from . import synthgen, volgrid

    labels = None
    if shape == "sphere":
        vol, labels = synthgen.gen_sphere(
            dim, radius=radius, inside_val=inside, outside_val=outside,
            smooth_voxels=smooth)
    elif shape == "torus":
        vol, labels = synthgen.gen_torus(
            dim, major_R=major, minor_r=minor, inside_val=inside,
            outside_val=outside, smooth_voxels=smooth)
    elif shape == "phantom":
        if not spec:
            raise click.UsageError("phantom requires --spec")
        entries = json.loads(open(spec).read())
        vol, labels = synthgen.gen_phantom(dim, entries)
    else:
        vol = synthgen.gen_step_edge(dim, axis=axis, position=position,
                                     noise_sigma=noise, seed=seed)
    volgrid.save_volume(vol, out)
    if labels is not None:
        volgrid.save_label_volume(labels.labels, f"{out}.labels")
    click.echo(f"wrote {out} dims={vol.dims}")


@cli.command("extract-toy")
@click.option("--volume", "volume_path", required=True, type=click.Path())
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--resize", type=int, default=640, show_default=True)
@click.option("--patch", type=int, default=8, show_default=True)
def extract_toy(volume_path, out_dir, resize, patch):
    """Run the deterministic toy extractor along all three axes."""
    from pathlib import Path

    from . import featpipe, volgrid

    v = volgrid.load_volume(volume_path)
    plan = featpipe.plan_for(v, resize_target=resize, patch=patch,
                             feature_dim=featpipe.TOY_FEATURE_DIM)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stacks = featpipe.toy_extract(v, plan)
    for stack, suffix in zip(stacks, ("x", "y", "z")):
        volgrid.save_feature_stack(stack, out / f"{v.name}.{suffix}.fstk")
    (out / "plan.json").write_text(plan.to_json())
    click.echo(f"wrote 3 stacks + plan to {out_dir}")


@cli.command()
@click.option("--stacks", "stack_dir", required=True, type=click.Path())
@click.option("--name", default=None, help="Stack basename (default: infer).")
@click.option("--out", required=True, type=click.Path())
def merge(stack_dir, name, out):
    """Merge the three per-axis stacks into a feature volume."""
    from pathlib import Path

    from . import featpipe, volgrid
    from .errors import DataError

    d = Path(stack_dir)
    if name is None:
        candidates = sorted(d.glob("*.x.fstk"))
        if not candidates:
            raise DataError(f"no *.x.fstk in {stack_dir}")
        name = candidates[0].name[:-len(".x.fstk")]
    stacks = [volgrid.load_feature_stack(d / f"{name}.{s}.fstk")
              for s in ("x", "y", "z")]
    plan = featpipe.ExtractionPlan.from_json((d / "plan.json").read_text())
    fv = featpipe.merge_stacks(*stacks, plan.target_feature_dims)
    volgrid.save_feature_volume(fv, out)
    click.echo(f"wrote {out} dims={fv.dims} fdim={fv.feature_dim}")


def _load_annotation_classes(path):
    from .errors import DataError

    doc = json.loads(open(path).read())
    classes = doc.get("classes", [])
    if not classes:
        raise DataError(f"{path}: no classes with annotations")
    for c in classes:
        if not c.get("points"):
            raise DataError(f"{path}: class {c.get('id')} has no points")
    return classes


@cli.command()
@click.option("--features", required=True, type=click.Path())
@click.option("--annotations", "ann_path", required=True, type=click.Path())
@click.option("--class-id", type=int, default=None,
              help="Restrict to one class id.")
@click.option("--out", required=True, type=click.Path(),
              help="Output SVOL path (multi-class: one file per class, "
                   "suffixed .class<id>).")
def sim(features, ann_path, class_id, out):
    """Compute proximity-scaled similarity maps from an annotation file."""
    from dataclasses import replace as dc_replace
    from pathlib import Path

    from . import simquery, volgrid

    fv = volgrid.load_feature_volume(features)
    classes = _load_annotation_classes(ann_path)
    if class_id is not None:
        classes = [c for c in classes if int(c["id"]) == class_id]
    multi = len(classes) > 1
    for c in classes:
        cid = int(c["id"])
        aset = simquery.AnnotationSet(class_id=cid)
        aset = simquery.add_annotations(aset, c["points"], fv)
        sv = simquery.scaled_similarity(aset, fv,
                                        float(c.get("proximity", 0.0)))
        path = Path(out)
        if multi:
            path = path.with_name(f"{path.stem}.class{cid}{path.suffix}")
        volgrid.save_similarity_volume(dc_replace(sv, class_id=cid), path)
        click.echo(f"wrote {path}")


@cli.command()
@click.option("--similarity", required=True, type=click.Path())
@click.option("--volume", "volume_path", required=True, type=click.Path())
@click.option("--out", required=True, type=click.Path())
@click.option("--config", type=click.Path(exists=True), default=None,
              help="RefineConfig JSON.")
@click.option("--resolution", type=int, default=None,
              help="Override target resolution cap.")
def refine(similarity, volume_path, out, config, resolution):
    """Refine a low-resolution similarity map against the raw volume."""
    from . import bls3d, volgrid

    sv = volgrid.load_similarity_volume(similarity)
    v = volgrid.load_volume(volume_path)
    cfg = bls3d.RefineConfig.from_dict(json.loads(open(config).read())) \
        if config else bls3d.RefineConfig()
    if resolution:
        from dataclasses import replace as dc_replace
        cfg = dc_replace(cfg, target_resolution=resolution)
    refined = bls3d.refine(sv, v, cfg)
    volgrid.save_similarity_volume(refined, out)
    click.echo(f"wrote {out} dims={refined.dims}")


@cli.command()
@click.option("--similarity", "sim_paths", required=True, multiple=True,
              type=click.Path(), help="One per class, repeatable.")
@click.option("--annotations", "ann_path", required=True, type=click.Path(),
              help="Annotation JSON (for iso-values and class ids).")
@click.option("--out", required=True, type=click.Path())
def label(sim_paths, ann_path, out):
    """Argmax-label a set of per-class similarity maps."""
    from . import simquery, volgrid
    from .errors import DataError

    classes = _load_annotation_classes(ann_path)
    if len(sim_paths) != len(classes):
        raise DataError(
            f"{len(sim_paths)} similarity files for {len(classes)} classes"
        )
    pairs = []
    for c, path in zip(classes, sim_paths):
        sv = volgrid.load_similarity_volume(path)
        cdef = simquery.ClassDef(id=int(c["id"]),
                                 iso_value=float(c.get("iso", 0.5)))
        pairs.append((cdef, sv))
    labels = simquery.label_volume(pairs)
    volgrid.save_label_volume(labels, out)
    click.echo(f"wrote {out}")


@cli.command("eval")
@click.option("--pred", required=True, type=click.Path())
@click.option("--gt", required=True, type=click.Path())
@click.option("--format", "fmt",
              type=click.Choice(["json", "csv", "markdown"]),
              default="json", show_default=True)
@click.option("--out", type=click.Path(), default=None,
              help="Write the report here instead of stdout.")
def eval_cmd(pred, gt, fmt, out):
    """Compare a predicted label volume against ground truth."""
    from . import evalseg, volgrid

    pred_labels = volgrid.load_label_volume(pred)
    gt_labels = volgrid.load_label_volume(gt)
    lv = evalseg.LabelVolume(dims=gt_labels.shape, labels=gt_labels)
    report = evalseg.evaluate(pred_labels, lv)
    text = evalseg.report_to_table(report, fmt)
    if out:
        open(out, "w").write(text)
        click.echo(f"wrote {out}")
    else:
        click.echo(text)


@cli.command()
@click.option("--similarity", "sim_paths", required=True, multiple=True,
              type=click.Path())
@click.option("--cam", "cam_path", required=True, type=click.Path(),
              help="Camera JSON file.")
@click.option("--iso", type=float, default=0.5, show_default=True)
@click.option("--out", required=True, type=click.Path())
def render(sim_paths, cam_path, iso, out):
    """Render similarity maps as shaded iso-surfaces to a PNG."""
    from . import isoray, simquery, volgrid

    try:
        cam = isoray.Camera.from_dict(json.loads(open(cam_path).read()))
    except (json.JSONDecodeError, KeyError, TypeError) as e:
        raise click.UsageError(f"bad camera JSON {cam_path}: {e}")
    palette = [(0.9, 0.3, 0.2), (0.2, 0.7, 0.9), (0.3, 0.9, 0.3),
               (0.9, 0.9, 0.2)]
    classes = []
    for i, p in enumerate(sim_paths):
        sv = volgrid.load_similarity_volume(p)
        classes.append((simquery.ClassDef(
            id=i + 1, iso_value=iso, color=palette[i % len(palette)]), sv))
    img = isoray.render(classes, cam)
    isoray.save_png(img, out)
    click.echo(f"wrote {out}")


@cli.command()
@click.option("--volume", "volume_path", required=True, type=click.Path())
@click.option("--features", required=True, type=click.Path())
@click.option("--volume-id", default="default", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(volume_path, features, volume_id, host, port):
    """Start the interactive session service."""
    import uvicorn

    from . import volgrid
    from .serve import VolumeStore, create_app

    store = VolumeStore()
    store.register(volume_id, volgrid.load_volume(volume_path),
                   volgrid.load_feature_volume(features))
    uvicorn.run(create_app(store), host=host, port=port)


def main(argv=None) -> int:
    """Entry point with the documented exit-code mapping."""
    from .errors import DataError, NumericalError

    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as e:
        return e.exit_code
    except click.exceptions.Abort:
        return 1
    except click.ClickException as e:
        e.show(file=sys.stderr)
        return 1
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
