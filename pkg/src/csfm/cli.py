"""Command-line interface.

Exit codes: 0 ok, 2 validation error, 3 numeric failure, 4 disconnected
graph.  ``--seed`` is mandatory wherever randomized estimation runs (synth,
pairwise, pipeline) so every run is reproducible.
"""
from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .averaging import (
    IrlsOptions,
    average_similarities,
    load_transforms,
    save_transforms,
)
from .community import (
    absorb_small,
    build_community_graph,
    detection_backend,
    load_partition,
    modularity,
    recursive_partition,
    save_partition,
)
from .errors import CsfmError
from .graph import degree_histogram, load_graph
from .measurements import MeasurementGraph, load_measurements, save_measurements
from .merging import (
    evaluate_against_truth,
    export_ply,
    joint_refine,
    load_merged,
    merge_reconstructions,
    save_merged,
)
from .pipeline import PipelineConfig, measure_pairs, run_pipeline
from .reconstruction import load_reconstruction, save_reconstruction
from .synth import WorldSpec, fracture, generate_world, load_world, save_world
from .community import Partition
from .graph import save_graph

log = logging.getLogger("csfm")


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except CsfmError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(exc.exit_code)

    return wrapper


def load_recs_dir(recs_dir: str) -> list:
    paths = sorted(Path(recs_dir).glob("rec_*.json"))
    if not paths:
        raise click.ClickException(f"no rec_*.json files in {recs_dir}")
    return [load_reconstruction(p) for p in paths]


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True, help="-v for info, -vv for per-iteration residuals.")
def main(verbose: int):
    """Partition an image-match graph into communities, align the
    per-community reconstructions, and merge them into one global frame."""
    level = logging.WARNING
    if verbose == 1:
        level = logging.INFO
    elif verbose >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True), help="World spec JSON.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", required=True, type=int)
@handle_errors
def synth(spec_path, out_dir, seed):
    """Generate a synthetic world: world.json, eg.json, truth-labels.json,
    and one rec_k.json per planted community."""
    if spec_path:
        with open(spec_path) as fh:
            spec = WorldSpec.from_json({**json.load(fh), "seed": seed})
    else:
        spec = WorldSpec(seed=seed)
    world = generate_world(spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_world(world, out / "world.json")
    save_graph(world.graph, out / "eg.json")
    with open(out / "truth-labels.json", "w") as fh:
        json.dump({"labels": [int(v) for v in world.labels]}, fh, sort_keys=True)
        fh.write("\n")
    planted = Partition(assignment=world.labels, community_count=int(world.labels.max()) + 1)
    fr = fracture(world, planted)
    for rec in fr.reconstructions:
        save_reconstruction(rec, out / f"rec_{rec.community_id}.json")
    click.echo(
        f"world: {world.camera_centers.shape[0]} cameras, {world.points.shape[0]} points, "
        f"{world.graph.edge_count} match edges, {spec.cluster_count} planted communities"
    )


@main.command()
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--q-threshold", default=0.3, show_default=True, type=float)
@click.option("--min-size", default=20, show_default=True, type=int)
@click.option("-o", "--output", required=True, type=click.Path())
@handle_errors
def detect(graph_path, q_threshold, min_size, output):
    """Partition the match graph into communities."""
    g = load_graph(graph_path)
    click.echo(f"graph: {g.node_count} nodes, {g.edge_count} edges")
    log.info("degree histogram: %s", degree_histogram(g))
    log.info("detection kernel: %s", detection_backend())
    part = recursive_partition(g, q_threshold)
    part, flagged = absorb_small(g, part, min_size)
    q_max = modularity(g, part) if g.edge_count and part.community_count > 1 else 0.0
    save_partition(output, part, q_max, flagged)
    click.echo(
        f"{part.community_count} communities, q_max={q_max:.4f}, "
        f"{len(flagged)} flagged isolated"
    )


@main.command()
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--partition", "partition_path", required=True, type=click.Path(exists=True))
@click.option("--recs", "recs_dir", required=True, type=click.Path(exists=True))
@click.option("--seed", required=True, type=int)
@click.option("--threshold", type=float, default=None, help="RANSAC inlier distance (default: 1% of scene extent).")
@click.option("--iterations", default=1024, show_default=True, type=int)
@click.option("--workers", default=4, show_default=True, type=int)
@click.option("-o", "--output", required=True, type=click.Path())
@handle_errors
def pairwise(graph_path, partition_path, recs_dir, seed, threshold, iterations, workers, output):
    """Estimate a similarity measurement for every linked community pair."""
    g = load_graph(graph_path)
    part, _, _ = load_partition(partition_path, node_count=g.node_count)
    recs = load_recs_dir(recs_dir)
    cg = build_community_graph(g, part)
    meas = measure_pairs(
        recs, sorted(cg.cross_edges), seed=seed,
        inlier_threshold=threshold, max_iterations=iterations, workers=workers,
    )
    mg = MeasurementGraph(community_count=len(recs), measurements=tuple(meas))
    mg.require_connected("pairwise measurement")
    save_measurements(mg, output)
    click.echo(f"{len(meas)} measurements over {part.community_count} communities")


@main.command()
@click.option("--measurements", "meas_path", required=True, type=click.Path(exists=True))
@click.option("--recs", "recs_dir", required=True, type=click.Path(exists=True))
@click.option("--epsilon", default=IrlsOptions.epsilon, show_default=True, type=float)
@click.option("--max-iterations", default=IrlsOptions.max_iterations, show_default=True, type=int)
@click.option("-o", "--output", required=True, type=click.Path())
@handle_errors
def average(meas_path, recs_dir, epsilon, max_iterations, output):
    """Solve the three global L1 averaging problems."""
    recs = {r.community_id: r for r in load_recs_dir(recs_dir)}
    mg = load_measurements(meas_path, community_count=len(recs))
    opts = IrlsOptions(epsilon=epsilon, max_iterations=max_iterations)
    transforms, _ = average_similarities(recs, mg, opts)
    save_transforms(transforms, output)
    click.echo(f"averaged {len(transforms)} community transforms")


@main.command()
@click.option("--recs", "recs_dir", required=True, type=click.Path(exists=True))
@click.option("--transforms", "transforms_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@handle_errors
def merge(recs_dir, transforms_path, output):
    """Apply the community transforms and fuse duplicate tracks."""
    recs = load_recs_dir(recs_dir)
    transforms = load_transforms(transforms_path)
    model = merge_reconstructions(recs, transforms)
    save_merged(model, output)
    click.echo(f"merged {model.camera_count} cameras, {model.track_ids.size} tracks")


@main.command()
@click.option("--recs", "recs_dir", required=True, type=click.Path(exists=True))
@click.option("--transforms", "transforms_path", required=True, type=click.Path(exists=True))
@click.option("--huber-delta", type=float, default=None)
@click.option("-o", "--output", required=True, type=click.Path(), help="Refined transforms JSON.")
@click.option("--merged-out", type=click.Path(), default=None, help="Also write the re-merged model.")
@handle_errors
def refine(recs_dir, transforms_path, huber_delta, output, merged_out):
    """Jointly polish the community transforms over co-visible tracks."""
    recs = load_recs_dir(recs_dir)
    transforms = load_transforms(transforms_path)
    refined, model, info = joint_refine(recs, transforms, huber_delta=huber_delta)
    save_transforms(refined, output)
    if merged_out:
        save_merged(model, merged_out)
    if info["skipped"]:
        click.echo("refinement skipped: no co-visible tracks")
    else:
        click.echo(
            f"refined in {info['iterations']} iterations, "
            f"cost {info['initial_cost']:.6g} -> {info['final_cost']:.6g}"
        )


@main.command(name="eval")
@click.option("--merged", "merged_path", required=True, type=click.Path(exists=True))
@click.option("--world", "world_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@handle_errors
def eval_cmd(merged_path, world_path, output):
    """Compare a merged model against the synthetic ground truth."""
    model = load_merged(merged_path)
    world = load_world(world_path)
    metrics = evaluate_against_truth(model, world.truth_reconstruction())
    with open(output, "w") as fh:
        json.dump(metrics, fh, indent=1, sort_keys=True)
        fh.write("\n")
    click.echo(
        f"median center error {metrics['median_center_error']:.6g}, "
        f"rmse {metrics['rmse_center_error']:.6g} over {metrics['n_cameras']} cameras"
    )


@main.command(name="export-ply")
@click.option("--merged", "merged_path", required=True, type=click.Path(exists=True))
@click.option("--color-by-community", is_flag=True, default=False)
@click.option("-o", "--output", required=True, type=click.Path())
@handle_errors
def export_ply_cmd(merged_path, color_by_community, output):
    """Write the merged point cloud as ASCII PLY."""
    model = load_merged(merged_path)
    export_ply(model, output, color_by_community=color_by_community)
    click.echo(f"wrote {model.track_ids.size} vertices to {output}")


@main.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True), help="World spec JSON (synthesizes first).")
@click.option("--world", "world_path", type=click.Path(exists=True), help="Existing world.json.")
@click.option("--recs", "recs_dir", type=click.Path(exists=True), help="Existing per-community reconstructions.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", required=True, type=int)
@click.option("--q-threshold", default=0.3, show_default=True, type=float)
@click.option("--min-size", default=20, show_default=True, type=int)
@click.option("--threshold", type=float, default=None, help="RANSAC inlier distance.")
@click.option("--iterations", default=1024, show_default=True, type=int)
@click.option("--workers", default=4, show_default=True, type=int)
@click.option("--refine/--no-refine", "do_refine", default=True, show_default=True)
@click.option("--eval/--no-eval", "do_eval", default=True, show_default=True)
@handle_errors
def pipeline(spec_path, world_path, recs_dir, out_dir, seed, q_threshold, min_size,
             threshold, iterations, workers, do_refine, do_eval):
    """Run every stage: detect, fracture, pairwise, average, merge, eval."""
    spec = None
    world = None
    recs = None
    if spec_path:
        with open(spec_path) as fh:
            spec = WorldSpec.from_json({**json.load(fh), "seed": seed})
    elif world_path:
        world = load_world(world_path)
    elif recs_dir:
        recs = tuple(load_recs_dir(recs_dir))
    else:
        raise click.UsageError("provide one of --spec, --world, or --recs")
    config = PipelineConfig(
        out_dir=out_dir,
        seed=seed,
        spec=spec,
        world=world,
        reconstructions=recs,
        q_threshold=q_threshold,
        min_community_size=min_size,
        ransac_threshold=threshold,
        ransac_iterations=iterations,
        refine=do_refine,
        evaluate=do_eval,
        workers=workers,
    )
    result = run_pipeline(config)
    for stage in result.report["stages"]:
        click.echo(f"  {stage['name']:<22s} {stage['seconds']*1e3:9.1f} ms  {stage['stats']}")
    if result.evaluation is not None:
        merged = result.evaluation["merged"]
        click.echo(
            f"median center error: {merged['median_center_error']:.6g} "
            f"({merged['n_cameras']} cameras)"
        )
    click.echo(f"artifacts in {out_dir}")


if __name__ == "__main__":
    main()
